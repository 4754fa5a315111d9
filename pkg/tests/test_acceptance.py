"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run directly (``python3 tests/test_acceptance.py``) or through pytest; the
PASS/FAIL lines are repeated in pytest's terminal summary. Tolerances are
the stated ones; results that miss them fail rather than being relaxed.
Expect roughly a quarter of an hour on one core.
"""
from __future__ import annotations

import functools
import math
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from latentlob.config import (ExperimentConfig, FullConfig, MeasureConfig, MetaOrderSpec,
                              RunConfig)
from latentlob.experiments import profile_table, run_background, run_impact, run_markov, sweep
from latentlob.flow import SignMode, SignStream
from latentlob.measure import (VariogramAcc, best_volume_tail, confined_fit, decay_curve,
                               hurst_fit, impact_fit, markov_check, phase_statistic,
                               power_law_fit, sign_autocorrelation, sign_exponent_fit)
from latentlob.propagator import (PropagatorSpec, mc_moments, prop_impact, prop_variance,
                                  propagator_table, simulate_paths)

pytestmark = pytest.mark.slow

DESK_NU = 1e-4
SEED = 20240601
RESULTS = {}


def record(number, title, ok, detail):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line, flush=True)
    return ok


def z_ok(resid, se, k=3.0):
    return np.abs(resid) <= k * se


def background(model, replicas, trades, max_lag=10_000, profile=False, seed=SEED):
    cfg = FullConfig(model, None, MeasureConfig(trades=trades, max_lag=max_lag), RunConfig())
    return run_background(cfg, seed, replicas, profile=profile)


def impact(model, meta, replicas=3000, seed=SEED):
    cfg = FullConfig(model, meta, MeasureConfig(), RunConfig())
    return run_impact(cfg, seed, replicas)


# -- 1 ----------------------------------------------------------------------

def check_sign_exponents():
    parts, ok = [], True
    for i, gamma in enumerate((0.4, 0.5, 0.8)):
        stream = SignStream(SignMode.LMF, gamma, seed=SEED + i)
        stream.stationary_start()
        acf = sign_autocorrelation(stream.generate(10**7), 1000)
        fit = sign_exponent_fit(acf, (10, 1000))
        ok &= abs(fit.estimate - gamma) <= 0.1
        parts.append(f"gamma={gamma}: {fit.estimate:.3f}")
    return record(1, "sign autocorrelation exponent within 0.1", ok, ", ".join(parts))


# -- 2 ----------------------------------------------------------------------

def check_phase_statistic():
    lags = np.array([1, 10, 100, 1000])
    s_diff, _ = phase_statistic(VariogramAcc.from_values(lags, 0.37 * lags))
    s_ball, _ = phase_statistic(VariogramAcc.from_values(lags, 0.37 * lags ** 2.0))
    s_conf, _ = phase_statistic(VariogramAcc.from_values(lags, np.full(4, 0.37)))
    ballistic = VariogramAcc(lags)
    ballistic.add_series(np.arange(5000, dtype=float))
    s_series, _ = phase_statistic(ballistic)
    ln100 = math.log(100.0)
    ok = (s_diff == 0.0 and abs(s_ball - ln100) < 1e-12 and abs(s_conf + ln100) < 1e-12
          and abs(s_series - ln100) < 1e-12)
    return record(2, "S calibration", ok,
                  f"diffusive {s_diff:.3g}, ballistic {s_ball:.6f} (series {s_series:.6f}), "
                  f"confined {s_conf:.6f}, ln100 = {ln100:.6f}")


# -- 3 ----------------------------------------------------------------------

def check_confined():
    model = ExperimentConfig(nu=1e-7, policy="unit", sign_mode="iid", half_width=32)
    res = background(model, 16, 1_000_000)
    fit = confined_fit(res.variogram, (100, 10_000))
    r2 = fit.extra["r2"]
    return record(3, "confined law fit R^2 >= 0.95", r2 >= 0.95,
                  f"R^2 = {r2:.4f}, sigma2_inf = {fit.estimate:.4g} +- {fit.stderr:.2g}, "
                  f"c = {fit.extra['c']:.3g}")


# -- 4 ----------------------------------------------------------------------

def check_greedy_hurst():
    model = ExperimentConfig(nu=DESK_NU, policy="greedy", gamma=0.5)
    res = background(model, 16, 1_000_000)
    h = hurst_fit(res.variogram, (100, 10_000))
    return record(4, "greedy H = 0.75 +- 0.05", abs(h.estimate - 0.75) <= 0.05,
                  f"H = {h.estimate:.3f} +- {h.stderr:.3f} over t in [1e2, 1e4]")


# -- 5 ----------------------------------------------------------------------

def check_psi_monotone():
    gamma = 0.4
    hs = []
    for psi in (0.0, 0.25, 0.5, 0.75, 1.0):
        model = ExperimentConfig(nu=DESK_NU, policy="psi", psi=psi, gamma=gamma)
        hs.append(hurst_fit(background(model, 16, 500_000).variogram, (100, 10_000)))
    est = np.array([h.estimate for h in hs])
    se = np.array([h.stderr for h in hs])
    steps = np.diff(est) >= -3.0 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
    target = min(1.0 - gamma / 2.0, 0.5)
    end_ok = abs(est[-1] - target) <= 0.05
    return record(5, "H(psi) nondecreasing, H(1) near min(1 - gamma/2, 1/2)",
                  bool(steps.all()) and end_ok,
                  "H = " + ", ".join(f"{e:.3f}+-{s:.3f}" for e, s in zip(est, se))
                  + f"; monotone {bool(steps.all())}; H(1) - {target} = {est[-1] - target:+.3f}")


# -- 6 ----------------------------------------------------------------------

def check_best_volume_tail():
    # nu = 1e-6 keeps the fit range [10, 0.1 lambda/nu] non-empty
    fits = {}
    for zeta, gamma in ((0.95, 0.5), (0.5, 0.5), (0.95, 0.8)):
        model = ExperimentConfig(nu=1e-6, zeta=zeta, gamma=gamma)
        res = background(model, 8, 200_000, max_lag=1000)
        fits[(zeta, gamma)] = best_volume_tail(res.bestvol, model.depth)
    base = fits[(0.95, 0.5)]
    ok = abs(base.estimate + 1.5) <= 0.2

    def overlap(a, b):
        return abs(a.estimate - b.estimate) <= 3.0 * math.hypot(a.stderr, b.stderr)

    stable = overlap(base, fits[(0.5, 0.5)]) and overlap(base, fits[(0.95, 0.8)])
    return record(6, "best-volume tail -1.5 +- 0.2, stable in zeta and gamma", ok and stable,
                  ", ".join(f"zeta={z} gamma={g}: {f.estimate:.3f}+-{f.stderr:.3f}"
                            for (z, g), f in fits.items()) + f"; stable {stable}")


# -- 7 ----------------------------------------------------------------------

def check_profile():
    model = ExperimentConfig(nu=DESK_NU)
    res = background(model, 8, 200_000, profile=True)
    _, devs, d, ps = profile_table(res, model)
    worst = max(abs(v) for v in devs.values())
    return record(7, "mean profile vs mean field within 20% on [0.5p*, 3p*]", worst <= 0.2,
                  f"p* = {ps:.1f} ticks, worst band deviation {worst:.3f}")


# -- 8 and 11 share one run -----------------------------------------------

@functools.lru_cache(maxsize=None)
def market_impact(trader="zeta"):
    model = ExperimentConfig(nu=DESK_NU, gamma=0.5, zeta=0.95)
    meta = MetaOrderSpec(phi=0.316, trader_policy=trader, trader_zeta=0.95, post_horizon=1000)
    return impact(model, meta)


def check_impact_concavity():
    fit = impact_fit(market_impact(), (1, 100))
    return record(8, "delta in [0.45, 0.65]", 0.45 <= fit.estimate <= 0.65,
                  f"delta = {fit.estimate:.3f} +- {fit.stderr:.3f}")


def check_execution_styles():
    zeta = impact_fit(market_impact(), (1, 100))
    unit = impact_fit(market_impact("unit"), (1, 100))
    larger = unit.estimate - zeta.estimate > 3.0 * math.hypot(unit.stderr, zeta.stderr)
    model = ExperimentConfig(nu=DESK_NU, gamma=0.5, zeta=0.95)
    acc = impact(model, MetaOrderSpec(style="limit", phi=0.316, fraction=0.5))
    lim = impact_fit(acc, (1, 100))
    q, m, se, _ = map(np.array, zip(*acc.table()))
    monotone = bool((np.diff(m) >= -3.0 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)).all())
    ok = larger and lim.estimate < 0.8 and monotone
    return record(9, "unit delta > zeta' delta; limit delta < 0.8 with monotone curve", ok,
                  f"unit {unit.estimate:.3f}+-{unit.stderr:.3f} vs zeta' {zeta.estimate:.3f}"
                  f"+-{zeta.stderr:.3f}; limit delta {lim.estimate:.3f}+-{lim.stderr:.3f}, "
                  f"monotone within 3 sigma {monotone}, incomplete {int(acc.incomplete.sum())}")


# -- 10 ---------------------------------------------------------------------

def check_refill():
    model = ExperimentConfig(nu=DESK_NU, gamma=0.5, zeta=0.4, alpha=0.85)
    meta = MetaOrderSpec(phi=0.316, trader_zeta=0.4)
    fit = impact_fit(impact(model, meta), (1, 100))
    alphas = (0.0, 0.25, 0.5, 0.75, 0.95)
    measure = MeasureConfig(trades=500_000, max_lag=1000, sweep_param1="gamma",
                            sweep_values1=(0.5,), sweep_param2="alpha", sweep_values2=alphas)
    rows = sweep(FullConfig(model.replace(alpha=0.0), None, measure, RunConfig()), SEED, 16)
    s = np.array([r[2] for r in rows])
    se = np.array([r[3] for r in rows])
    crossing = s[0] - 3 * se[0] > 0 and s[-1] + 3 * se[-1] < 0
    ok = 0.35 <= fit.estimate <= 0.55 and crossing
    return record(10, "refill delta in [0.35, 0.55]; S crosses 0 in alpha", ok,
                  f"delta = {fit.estimate:.3f}+-{fit.stderr:.3f}; S(alpha) = "
                  + ", ".join(f"{a}:{v:+.2f}+-{e:.2f}" for a, v, e in zip(alphas, s, se)))


# -- 11 ---------------------------------------------------------------------

def check_decay():
    _, fit = decay_curve(market_impact(), early=(1, 30))
    plat, plat_se = fit.extra["plateau"], fit.extra["plateau_stderr"]
    ok = fit.estimate < 1.0 and abs(plat) > 3.0 * plat_se
    return record(11, "early decay exponent theta < 1, plateau nonzero at 3 sigma", ok,
                  f"theta = {fit.estimate:.3f}+-{fit.stderr:.3f}, plateau = {plat:.4f}"
                  f"+-{plat_se:.4f}")


# -- 12 ---------------------------------------------------------------------

def check_markov():
    model = ExperimentConfig(nu=DESK_NU, gamma=0.5, zeta=0.95)
    measure = MeasureConfig(markov_lags=50)
    meta = MetaOrderSpec(phi=0.316, trader_zeta=0.95)
    rep = markov_check(run_markov(FullConfig(model, meta, measure, RunConfig()), SEED, 8, 300))
    flat = markov_check(run_markov(FullConfig(model, None, measure, RunConfig()), SEED, 8, 300))
    parts, ok = [], True
    for key in ("resid_impact", "resid_ac", "resid_pi_avg", "resid_s_sym", "resid_cond"):
        good = z_ok(rep[key], rep[key + "_stderr"])
        ok &= bool(good.all())
        parts.append(f"{key} {int((~good).sum())}/{good.size} lags beyond 3 sigma")
    zero = z_ok(flat["pi_uncond"], flat["pi_stderr"])
    ok &= bool(zero.all())
    parts.append(f"<pi_t> at zero participation: {int((~zero).sum())}/{zero.size} beyond 3 sigma")
    return record(12, "Markovian book identities", ok, "; ".join(parts))


# -- 13 ---------------------------------------------------------------------

def check_propagator():
    gamma = 0.5
    spec = PropagatorSpec.build(1000, beta=(1 - gamma) / 2, signs="lmf", gamma=gamma, phi=0.24)
    rows = propagator_table(spec, [10, 100, 300, 1000], n_paths=10_000, seed=SEED)
    samples = simulate_paths(spec, [10, 100, 300, 1000], 10_000, seed=SEED + 1)
    mean, mean_se, _, _ = mc_moments(samples)
    imp = np.array([prop_impact(spec, t)[0] for t in (10, 100, 300, 1000)])
    mc_ok = bool(z_ok(mean - imp, mean_se).all()) and all(
        abs(r[5] - r[4]) <= 3 * r[6] for r in rows)
    t = np.array([100, 200, 500, 1000])
    v = np.array([prop_variance(spec, int(x)) for x in t]) / t
    spread = v.max() / v.min() - 1.0
    tt = np.unique(np.round(np.logspace(2, 3, 11)).astype(int))
    fit = power_law_fit(tt, np.array([prop_impact(spec, int(x))[0] for x in tt]), None, (100, 1000))
    ok = mc_ok and spread <= 0.05 and abs(fit.estimate - 0.75) <= 0.02
    return record(13, "propagator: MC agrees, variance/t flat to 5%, impact exponent 0.75", ok,
                  f"MC within 3 sigma {mc_ok}; variance/t spread {spread:.3%}; "
                  f"impact exponent {fit.estimate:.3f}")


# -- 14 ---------------------------------------------------------------------

CLI_CONFIG = """\
[model]
mu = 0.1
lambda_w = 5e-3
nu = 1e-4
[measure]
trades = 20000
max_lag = 1000
hurst_range = 10 1000
[run]
replicas = 8
"""


def check_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "run.ini").write_text(CLI_CONFIG)
        for threads in (1, 8):
            subprocess.run([sys.executable, "-m", "latentlob.cli", "simulate", "--config",
                            str(tmp / "run.ini"), "--out", str(tmp / f"t{threads}"),
                            "--threads", str(threads), "--seed", str(SEED)],
                           check=True, capture_output=True)
        names = ("variogram.csv", "bestvol.csv", "profile.csv")
        same = [(tmp / "t1" / n).read_bytes() == (tmp / "t8" / n).read_bytes() for n in names]
    return record(14, "byte-identical CSVs for 1 and 8 threads", all(same),
                  ", ".join(f"{n} {'identical' if s else 'DIFFERENT'}" for n, s in zip(names, same)))


CHECKS = [check_sign_exponents, check_phase_statistic, check_confined, check_greedy_hurst,
          check_psi_monotone, check_best_volume_tail, check_profile, check_impact_concavity,
          check_execution_styles, check_refill, check_decay, check_markov, check_propagator,
          check_determinism]


@pytest.mark.parametrize("check", CHECKS, ids=[c.__name__[len("check_"):] for c in CHECKS])
def test_criterion(check):
    assert check(), RESULTS[CHECKS.index(check) + 1]


if __name__ == "__main__":
    for check in CHECKS:
        check()
    print()
    for n in sorted(RESULTS):
        print(RESULTS[n])
