"""Throughput of the compiled event kernel against the pure-Python fallback.

Both backends run the same replica (same seeds) and must produce
identical trade records; the script reports trades and events per second.

    python3 benchmarks/bench_kernel.py --trades 20000
"""
import argparse
import time

import numpy as np

from latentlob.config import ExperimentConfig
from latentlob.engine import Simulation
from latentlob.kernel import CKernel


def run(model, backend, trades, seed):
    sim = Simulation(model, seed, 0, backend=backend)
    sim.warmup(0.05 / model.nu)
    events0 = sum(sim.event_counts().values())
    t0 = time.perf_counter()
    batch = sim.run_trades(trades)
    elapsed = time.perf_counter() - t0
    events = sum(sim.event_counts().values()) - events0
    return batch, elapsed, events


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--trades", type=int, default=20_000)
    p.add_argument("--nu", type=float, default=1e-4)
    p.add_argument("--policy", default="zeta", choices=["zeta", "unit", "greedy", "psi"])
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args(argv)
    model = ExperimentConfig(nu=args.nu, policy=args.policy, psi=0.5 if args.policy == "psi" else None)
    backends = ["python"] + (["cython"] if CKernel is not None else [])
    results = {}
    print(f"{'backend':8s} {'trades':>8s} {'seconds':>9s} {'trades/s':>11s} {'events/s':>11s}")
    for b in backends:
        batch, dt, ev = run(model, b, args.trades, args.seed)
        results[b] = batch
        print(f"{b:8s} {len(batch):8d} {dt:9.3f} {len(batch) / dt:11.0f} {ev / dt:11.0f}")
    if len(results) == 2:
        a, c = results["python"], results["cython"]
        same = all(np.array_equal(a[f], c[f]) for f in a.rec)
        print("identical records:", same)
    else:
        print("compiled kernel not built; only the Python backend was timed")


if __name__ == "__main__":
    main()
