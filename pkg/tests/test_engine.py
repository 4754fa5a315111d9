import math

import numpy as np
import pytest

from latentlob.config import ExperimentConfig, MetaOrderSpec
from latentlob.engine import (Simulation, half_width_for, mean_field_profile, p_star_ticks,
                              replica_seeds, run_biased, run_meta_limit, run_meta_market)
from latentlob.kernel import CKernel

FAST = ExperimentConfig(nu=1e-3)

needs_c = pytest.mark.skipif(CKernel is None, reason="compiled kernel not built")


def sim_for(model=FAST, seed=7, replica=0, backend=None, warm=True):
    sim = Simulation(model, seed, replica, backend=backend)
    if warm:
        sim.warmup(0.05 / model.nu)
    return sim


@needs_c
@pytest.mark.parametrize("model", [
    FAST,
    FAST.replace(sign_mode="iid", policy="greedy"),
    FAST.replace(policy="psi", psi=0.6, alpha=0.85),
    FAST.replace(policy="unit", gamma=0.8),
])
def test_backends_bit_identical(model):
    a = sim_for(model, backend="python")
    c = sim_for(model, backend="cython")
    ba, bc = a.run_trades(3000), c.run_trades(3000)
    for name in ba.rec:
        assert np.array_equal(ba[name], bc[name]), name
    for x, y in zip(a.snapshot(), c.snapshot()):
        assert np.array_equal(x, y)
    assert a.tau == c.tau and a.event_counts() == c.event_counts()


@needs_c
@pytest.mark.parametrize("spec", [
    MetaOrderSpec(q=60, post_horizon=20),
    MetaOrderSpec(style="limit", q=15, fraction=0.5, post_horizon=20),
])
def test_backends_agree_on_meta_orders(spec):
    out = []
    for backend in ("python", "cython"):
        sim = sim_for(backend=backend)
        run = run_meta_market if spec.style.value == "market" else run_meta_limit
        tr = run(sim, spec, milestones=[5, 10], keep_trades=True)
        out.append((tr, sim.snapshot()))
    (ta, sa), (tc, sc) = out
    assert ta.impact == tc.impact and ta.executed == tc.executed
    assert np.array_equal(ta.post_mid, tc.post_mid)
    for x, y in zip(sa, sc):
        assert np.array_equal(x, y)


def test_same_seed_same_run_and_replicas_differ():
    a = sim_for().run_trades(2000)
    b = sim_for().run_trades(2000)
    c = sim_for(replica=1).run_trades(2000)
    assert all(np.array_equal(a[k], b[k]) for k in a.rec)
    assert not np.array_equal(a["tau"], c["tau"])


def test_replica_seed_rule():
    ss = replica_seeds(99, 4)
    assert [s.spawn_key for s in ss] == [(4, 0), (4, 1), (4, 2)]
    assert all(s.entropy == 99 for s in ss)


def test_event_type_frequencies():
    # conditional on not cancelling, a trade happens with probability mu / (mu + lambda_w W)
    model = ExperimentConfig(nu=1e-7, half_width=32)
    sim = sim_for(model)
    before = sim.event_counts()
    sim.run_trades(30000)
    after = sim.event_counts()
    trades = after["trade"] - before["trade"]
    deposits = after["deposit"] - before["deposit"]
    n = trades + deposits
    p = model.mu / (model.mu + model.lambda_w * 64)
    assert abs(trades - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_clock_and_trade_count():
    sim = sim_for()
    t0 = sim.trades
    batch = sim.run_trades(5000)
    assert sim.trades - t0 == len(batch) == 5000
    assert np.all(np.diff(batch["tau"]) >= 0)
    sim.kernel.check()


def test_step_returns_events():
    sim = sim_for(warm=False)
    kinds = set()
    for _ in range(3000):
        ev = sim.step()
        kinds.add(ev.kind)
        if ev.kind == "trade":
            assert ev.trade is not None and ev.trade.executed_volume >= 1
    assert {"trade", "deposit", "cancel"} <= kinds


def test_time_per_trade_and_participation():
    phi = 0.316
    sim = sim_for()
    batch = run_biased(sim, MetaOrderSpec(phi=phi, trader_policy="unit"), 20000)
    n = len(batch)
    mean_dt = (batch["tau"][-1] - batch["tau"][0]) / (n - 1)
    expected = 1.0 / (FAST.mu * (1 + phi))
    assert abs(mean_dt - expected) <= 3 * expected / math.sqrt(n)
    share = phi / (1 + phi)
    frac = batch["meta"].mean()
    assert abs(frac - share) <= 3 * math.sqrt(share * (1 - share) / n)


def test_zero_volume_meta_order():
    sim = sim_for()
    tr = run_meta_market(sim, MetaOrderSpec(q=0, post_horizon=5))
    assert tr.impact == 0 and tr.executed == 0 and tr.complete
    tr = run_meta_limit(sim, MetaOrderSpec(style="limit", q=0))
    assert tr.impact == 0 and tr.executed == 0


@pytest.mark.parametrize("replica", range(5))
def test_fixed_q_executes_exactly_q(replica):
    sim = sim_for(replica=replica)
    tr = run_meta_market(sim, MetaOrderSpec(q=137, trader_zeta=0.5))
    assert tr.complete and tr.executed == 137


def test_limit_order_without_sellers_never_fills():
    sim = sim_for()
    sim.kernel.trend_sign = 1
    sim.kernel.trend_left = 10**12
    tr = run_meta_limit(sim, MetaOrderSpec(style="limit", q=5, max_trades=3000), keep_trades=True)
    assert tr.executed == 0 and not tr.complete
    assert np.all(tr.during["sign"] == 1)
    # the withdrawn units leave no flagged volume behind
    assert sim.snapshot()[3].sum() == 0


def test_limit_execution_counts_flagged_fills():
    sim = sim_for(replica=3)
    tr = run_meta_limit(sim, MetaOrderSpec(style="limit", q=10, max_trades=200000))
    assert tr.complete and tr.executed >= 10


def test_meta_flags_never_cancelled():
    # trades are negligible, so flagged units could only leave through cancellation
    model = ExperimentConfig(mu=1e-6, nu=1e-3, half_width=32)
    sim = Simulation(model, 5, 0)
    sim.warmup(5 / model.nu)
    # a tiny fraction makes every meta deposit a single unit
    sim.start_meta(MetaOrderSpec(style="limit", phi=1e5, q=10**9, fraction=1e-9), target=10**9)
    flagged = []
    for _ in range(40):
        sim.advance(100.0)
        flagged.append(int(sim.snapshot()[3].sum()))
    assert sim.trades == 0 and flagged[-1] > 0
    assert all(b >= a for a, b in zip(flagged, flagged[1:]))
    assert sim.kernel.n_cancel_ev > 100
    assert sim.stop_meta() == flagged[-1]


@pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_c)])
def test_geometric_meta_deposits_overflow_loudly(backend):
    # fraction 1 doubles the best bid at every deposit when nothing consumes it
    model = ExperimentConfig(mu=1e-6, nu=1e-3, half_width=32)
    sim = Simulation(model, 5, 0, backend=backend)
    sim.start_meta(MetaOrderSpec(style="limit", phi=1e5, q=10**9, fraction=1.0), target=10**9)
    with pytest.raises(OverflowError):
        sim.advance(1000.0)


def test_mean_field_seeding_values():
    assert mean_field_profile(0.0, 500.0, 3.0) == 0.0
    assert mean_field_profile(3.0, 500.0, 3.0) == pytest.approx(500 * (1 - math.exp(-1)))
    assert mean_field_profile(-3.0, 1.0, 3.0) == pytest.approx(0.632, abs=1e-3)


def test_window_sizes():
    assert p_star_ticks(ExperimentConfig(nu=1e-4)) == pytest.approx(math.sqrt(0.1 / 2e-4))
    assert half_width_for(ExperimentConfig(nu=1e-4)) == max(32, math.ceil(4 * math.sqrt(500)))
    assert half_width_for(ExperimentConfig(nu=1e-2)) >= 128 / 0.5
    assert half_width_for(ExperimentConfig(half_width=10)) == 10


def test_no_trade_occupancy_is_poisson():
    # deposition lambda_w per level and per-unit cancellation nu give Poisson(lambda_w / nu)
    model = ExperimentConfig(mu=1e-9, lambda_w=0.5, nu=0.01, half_width=32)
    sim = Simulation(model, 3, 0)
    sim.advance(5 / model.nu)
    samples = []
    for _ in range(300):
        sim.advance(2 / model.nu)
        levels, vol, _, _ = sim.snapshot()
        far = np.abs(levels - 0.5) > 6
        samples.append(vol[far])
    x = np.concatenate(samples).astype(float)
    lam = model.depth
    n = x.size
    assert n >= 10**4
    assert abs(x.mean() - lam) <= 3 * math.sqrt(lam / n)
    assert abs(x.var() - lam) <= 3 * math.sqrt((2 * lam**2 + lam) / n)
