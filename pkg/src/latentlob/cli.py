"""Command-line experiment runner.

    latentlob simulate     --config run.ini --out results/
    latentlob sweep        --config sweep.ini --out phase/ --svg
    latentlob impact       --config meta.ini --out impact/ --replicas 3000
    latentlob propagator   --config prop.ini --out prop/
    latentlob markov-check --config meta.ini --out markov/

Every run writes ``manifest.json`` (config snapshot, seeds, version,
timing and SHA-256 digests of the outputs) next to its CSV files.
Passing a manifest as ``--config`` re-runs the recorded experiment.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, FullConfig, MetaStyle, dump_config, load_config, parse_config
from .engine import replica_seeds
from .experiments import (profile_table, run_background, run_impact, run_markov, sweep,
                          thread_count)
from .kernel import BACKEND
from .measure import (best_volume_tail, decay_curve, hurst_fit, impact_fit, markov_check,
                      phase_statistic, power_law_fit, write_bestvol, write_csv, write_impact,
                      write_markov, write_profile, write_variogram)
from .propagator import PropagatorSpec, propagator_table

log = logging.getLogger("latentlob")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MAX_LISTED_SEEDS = 1000


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serialisable: {type(x)}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# -- configuration -----------------------------------------------------------

def load_run(path):
    """Config from an INI file or a previous run's manifest.

    Returns ``(config, seed_or_None, command_or_None)``.
    """
    if str(path).endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                man = json.load(fh)
            return parse_config(man["config"]), int(man["master_seed"]), man.get("command")
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from None
    return load_config(path), None, None


def resolve(args):
    cfg, seed, _ = load_run(args.config)
    if args.seed is not None:
        seed = args.seed
    if seed is None:
        seed = cfg.run.seed
    if not 0 <= int(seed) < 2 ** 64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    replicas = args.replicas if args.replicas is not None else cfg.run.replicas
    if replicas < 1:
        raise ConfigError("replicas: must be >= 1")
    threads = thread_count(args.threads) if (args.threads or os.environ.get("LATENTLOB_THREADS")) \
        else max(1, cfg.run.threads)
    cfg.run.seed, cfg.run.replicas = int(seed), int(replicas)
    return cfg, int(seed), int(replicas), threads


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(cfg, seed, replicas, threads, out):
    res = run_background(cfg, seed, replicas, threads, profile=True)
    write_variogram(out / "variogram.csv", res.variogram)
    write_bestvol(out / "bestvol.csv", res.bestvol)
    rows, devs, d, ps = profile_table(res, cfg.model)
    write_profile(out / "profile.csv", rows)
    m = cfg.measure
    summary = dict(trades=res.trades, diffusion=d, p_star_ticks=ps,
                   hurst=hurst_fit(res.variogram, m.hurst_range).as_dict(),
                   best_volume_tail=best_volume_tail(res.bestvol, cfg.model.depth).as_dict(),
                   profile_deviation={f"{k[0]}_{k[1]}_{k[2]}": v for k, v in devs.items()})
    try:
        summary["S"], summary["S_stderr"] = phase_statistic(res.variogram)
    except (KeyError, ValueError):
        summary["S"] = summary["S_stderr"] = None
    write_json(out / "summary.json", summary)
    return ["variogram.csv", "bestvol.csv", "profile.csv", "summary.json"], \
        dict(variogram=res.variogram.signature())


def cmd_sweep(cfg, seed, replicas, threads, out):
    m = cfg.measure
    rows = sweep(cfg, seed, replicas, threads)
    write_csv(out / "phase.csv", ("param1", "param2", "S", "stderr"), rows)
    return ["phase.csv"], dict(rows=rows, names=(m.sweep_param1, m.sweep_param2))


def _markov_cfg(cfg):
    if cfg.meta is None or cfg.meta.style == MetaStyle.MARKET:
        return cfg
    return FullConfig(cfg.model, cfg.meta.replace(style=MetaStyle.MARKET), cfg.measure, cfg.run)


def _markov_summary(rep):
    out = {}
    for key in ("resid_impact", "resid_ac", "resid_pi_avg", "resid_s_sym", "resid_cond"):
        z = np.abs(rep[key] / rep[key + "_stderr"])
        z = z[np.isfinite(z)]
        out[key] = dict(max_abs_z=float(z.max()) if z.size else None,
                        lags_beyond_3sigma=int((z > 3).sum()))
    return out


def cmd_impact(cfg, seed, replicas, threads, out):
    if cfg.meta is None:
        raise ConfigError("impact: the config needs a [meta] section")
    m = cfg.measure
    acc = run_impact(cfg, seed, replicas, threads)
    write_impact(out / "impact.csv", acc)
    delta = impact_fit(acc, m.q_fit_range)
    summary = dict(delta=delta.as_dict(), incomplete=acc.incomplete.tolist())
    if cfg.meta.post_horizon > 0:
        rows, theta = decay_curve(acc, early=(1, m.decay_early))
        summary["theta"] = theta.as_dict()
    else:
        rows = []
        summary["theta"] = None
    write_csv(out / "decay.csv", ("t", "I_mean", "I_stderr"), rows)
    rep = markov_check(run_markov(_markov_cfg(cfg), seed, replicas, m.markov_episodes, threads))
    write_markov(out / "markov.csv", rep)
    summary["markov"] = _markov_summary(rep)
    write_json(out / "summary.json", summary)
    return ["impact.csv", "decay.csv", "markov.csv", "summary.json"], \
        dict(table=acc.table(), delta=delta)


def cmd_markov(cfg, seed, replicas, threads, out):
    m = cfg.measure
    rep = markov_check(run_markov(_markov_cfg(cfg), seed, replicas, m.markov_episodes, threads))
    write_markov(out / "markov.csv", rep)
    write_json(out / "summary.json", dict(participation=float(cfg.meta.participation)
                                          if cfg.meta else 0.0, **_markov_summary(rep)))
    return ["markov.csv", "summary.json"], dict(report=rep)


def propagator_spec(cfg):
    m, model = cfg.measure, cfg.model
    beta = m.prop_beta if m.prop_beta is not None else (1.0 - model.gamma) / 2.0
    phi = cfg.meta.participation if cfg.meta is not None else 0.0
    horizon = int(max(m.prop_t_points))
    return PropagatorSpec.build(horizon, g0=m.prop_g0, beta=beta, t0=m.prop_t0, phi=phi,
                                signs=m.prop_signs, gamma=model.gamma)


def cmd_propagator(cfg, seed, replicas, threads, out):
    m = cfg.measure
    spec = propagator_spec(cfg)
    rows = propagator_table(spec, sorted(set(int(t) for t in m.prop_t_points)), m.prop_paths, seed)
    write_csv(out / "propagator.csv", ("t", "impact", "impact_linear", "impact_transient",
                                       "variance_analytic", "variance_mc", "mc_stderr"), rows)
    t = np.array([r[0] for r in rows], dtype=float)
    imp = np.array([r[1] for r in rows])
    var_t = np.array([r[4] for r in rows]) / t
    summary = dict(beta=float((1.0 - cfg.model.gamma) / 2.0 if m.prop_beta is None else m.prop_beta),
                   phi=spec.phi,
                   impact_exponent=power_law_fit(t, imp, None, (100, 1000)).as_dict()
                   if spec.phi > 0 else None,
                   variance_per_trade_spread=float(var_t.max() / var_t.min() - 1.0))
    write_json(out / "summary.json", summary)
    return ["propagator.csv", "summary.json"], dict(rows=rows)


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "impact": cmd_impact,
    "propagator": cmd_propagator,
    "markov-check": cmd_markov,
}


# -- optional charts -----------------------------------------------------------

def write_svg(command, data, out):
    """Presentation only: never touches the CSV files."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping --svg")
        return []
    fig, ax = plt.subplots(figsize=(5, 4))
    if command == "simulate":
        t, d = zip(*[(r[0], r[2]) for r in data["variogram"]])
        ax.loglog(t, d, "o-", ms=3)
        ax.set_xlabel("lag (trades)")
        ax.set_ylabel("D(t) / t")
    elif command == "sweep":
        rows = np.array(data["rows"], dtype=float)
        x, y = np.unique(rows[:, 0]), np.unique(rows[:, 1])
        grid = np.full((len(y), len(x)), np.nan)
        for v1, v2, s, _ in rows:
            grid[np.searchsorted(y, v2), np.searchsorted(x, v1)] = s
        lim = np.nanmax(np.abs(grid)) or 1.0
        im = ax.pcolormesh(x, y, grid, cmap="RdBu_r", vmin=-lim, vmax=lim, shading="nearest")
        if len(x) > 1 and len(y) > 1 and np.nanmin(grid) < 0 < np.nanmax(grid):
            ax.contour(x, y, grid, levels=[0.0], colors="k")
        fig.colorbar(im, ax=ax, label="S")
        ax.set_xlabel(data["names"][0])
        ax.set_ylabel(data["names"][1])
    elif command == "impact":
        q, i, e, _ = zip(*data["table"])
        ax.errorbar(q, i, yerr=e, fmt="o")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("Q")
        ax.set_ylabel("impact")
    elif command == "propagator":
        rows = np.array(data["rows"], dtype=float)
        ax.semilogx(rows[:, 0], rows[:, 4] / rows[:, 0], "o-", label="analytic")
        ax.semilogx(rows[:, 0], rows[:, 5] / rows[:, 0], "x", label="Monte Carlo")
        ax.set_xlabel("t")
        ax.set_ylabel("variance / t")
        ax.legend()
    else:
        rep = data["report"]
        ax.plot(rep["t"], rep["trend"], label="<pi> + phi <s>")
        ax.plot(rep["t"], rep["dl_mean"], label="<dl>")
        ax.set_xlabel("t")
        ax.legend()
    fig.tight_layout()
    name = f"{command}.svg"
    fig.savefig(out / name)
    plt.close(fig)
    return [name]


# -- entry point -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="latentlob", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="INI config or a previous manifest.json")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--replicas", type=int, help="override [run] replicas")
        s.add_argument("--threads", type=int,
                       help="worker threads (default: $LATENTLOB_THREADS, then [run] threads)")
        s.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        s.add_argument("--svg", action="store_true", help="also draw an SVG chart")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def manifest(command, cfg, seed, replicas, threads, elapsed, out, files):
    n = replicas * (len(cfg.measure.q_grid) if command == "impact" else 1)
    if command == "sweep":
        n = replicas * len(cfg.measure.sweep_values1) * len(cfg.measure.sweep_values2)
    seeds = [[int(ss.generate_state(1, np.uint64)[0]) for ss in replica_seeds(seed, i)]
             for i in range(min(n, MAX_LISTED_SEEDS))]
    return dict(
        command=command,
        config=dump_config(cfg),
        master_seed=seed,
        replicas=replicas,
        threads=threads,
        seed_rule="replica i stream k: SeedSequence(master_seed, spawn_key=(i, k)); "
                  "k = 0 events, 1 signs, 2 initial book",
        replica_seeds=seeds,
        replica_count=n,
        version=__version__,
        backend=BACKEND,
        numpy=np.__version__,
        python=sys.version.split()[0],
        wall_seconds=elapsed,
        outputs={f: sha256(out / f) for f in files},
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg, seed, replicas, threads = resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        log.info("%s: seed %d, %d replicas, %d threads, backend %s",
                 args.command, seed, replicas, threads, BACKEND)
        files, data = COMMANDS[args.command](cfg, seed, replicas, threads, out)
        (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
        files.append("config.ini")
        elapsed = time.perf_counter() - start
        write_json(out / "manifest.json",
                   manifest(args.command, cfg, seed, replicas, threads, elapsed, out, files))
        if args.svg:
            write_svg(args.command, data, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 3
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{args.command}: wrote {', '.join(files)} to {out} ({elapsed:.1f}s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
