"""Replica-level experiments and their deterministic parallel merge.

Every experiment is a function of (config, master seed, replica index);
replicas run on a thread pool (the compiled kernel releases the GIL) and
their accumulators are merged in replica order, so results do not depend
on the number of threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .config import FullConfig, MetaStyle, RunConfig
from .engine import Simulation, mean_field_profile, p_star_ticks, run_biased, run_meta
from .measure import (BestVolumeHist, ImpactAcc, MarkovAcc, ProfileAcc, VariogramAcc,
                      log_lags, phase_statistic, profile_compare)


def thread_count(requested=None):
    if requested:
        return max(1, int(requested))
    env = os.environ.get("LATENTLOB_THREADS")
    return max(1, int(env)) if env else 1


def map_replicas(fn, n, threads=1):
    """``[fn(0), ..., fn(n - 1)]``, computed on up to ``threads`` workers."""
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def merge_all(accs):
    return reduce(lambda a, b: a.merge(b), accs)


# -- background runs -------------------------------------------------------

def diffusion_lag(model):
    """Trade lag ``L = mu / (2 nu)`` over which the diffusion constant is read."""
    return max(1, int(round(model.mu / (2.0 * model.nu))))


def variogram_lags(measure, model=None):
    lags = log_lags(measure.max_lag)
    extra = [10, 1000]
    if model is not None:
        extra.append(diffusion_lag(model))
    return np.union1d(lags, [x for x in extra if x <= measure.max_lag])


@dataclass
class BackgroundResult:
    variogram: VariogramAcc
    bestvol: BestVolumeHist
    profile: ProfileAcc | None
    trades: int

    def merge(self, other):
        prof = self.profile.merge(other.profile) if self.profile is not None else None
        return BackgroundResult(self.variogram.merge(other.variogram),
                                self.bestvol.merge(other.bestvol), prof,
                                self.trades + other.trades)


def background_replica(cfg: FullConfig, seed, index, profile=True, backend=None):
    model, measure, run = cfg.model, cfg.measure, cfg.run
    sim = Simulation(model, seed, index, stationary=run.stationary_seed, backend=backend)
    sim.warmup(run.warmup_for(model))
    var = VariogramAcc(variogram_lags(measure, model))
    hist = BestVolumeHist()
    max_off = min(measure.profile_max_offset, sim.half_width - 2)
    prof = ProfileAcc(max_off) if profile else None
    every = max(1, measure.profile_every) if profile else 65536
    mids = []
    done = 0
    while done < measure.trades:
        batch = sim.run_trades(min(every, measure.trades - done))
        done += len(batch)
        mids.append(batch.mid)
        hist.add(batch.best_volumes())
        if prof is not None:
            levels, vol, _, _ = sim.snapshot()
            prof.add_snapshot(levels, vol, sim.kernel.bid, sim.kernel.ask)
        if len(batch) == 0:
            break
    var.add_series(np.concatenate(mids))
    return BackgroundResult(var, hist, prof, done)


def run_background(cfg, seed, replicas, threads=1, profile=True, backend=None):
    parts = map_replicas(lambda i: background_replica(cfg, seed, i, profile, backend),
                         replicas, threads)
    return merge_all(parts)


def measured_diffusion(var, model):
    """Diffusion constant (price^2/s) from the variogram at lag ``mu / 2 nu``."""
    lag = diffusion_lag(model)
    recorded = var.lags[var.n > 0]
    if lag not in recorded:
        lag = int(recorded[recorded <= lag].max()) if (recorded <= lag).any() else int(recorded.min())
    d, _ = var.value(lag)
    return d / lag * model.mu


def profile_table(result, model):
    """Profile rows against the mean field with ``p*`` from the measured D."""
    d = measured_diffusion(result.variogram, model)
    ps = p_star_ticks(model, d)
    rows, devs = profile_compare(result.profile, min(model.depth, model.max_depth), ps)
    return rows, devs, d, ps


# -- phase diagram -----------------------------------------------------------

def _point_model(model, name, value):
    changes = {name: value}
    if name == "zeta":
        changes["policy"] = "zeta"
    elif name == "psi":
        changes["policy"] = "psi"
    return model.replace(**changes)


def sweep(cfg, seed, replicas, threads=1, backend=None):
    """S statistic over the two-parameter grid of ``cfg.measure``."""
    m = cfg.measure
    rows = []
    for i, v1 in enumerate(m.sweep_values1):
        for j, v2 in enumerate(m.sweep_values2):
            model = _point_model(_point_model(cfg.model, m.sweep_param1, v1), m.sweep_param2, v2)
            sub = FullConfig(model, None, m, cfg.run)
            point_seed = int(np.random.SeedSequence(int(seed), spawn_key=(1000 + i, j))
                             .generate_state(1)[0])
            res = run_background(sub, point_seed, replicas, threads, profile=False,
                                 backend=backend)
            s, se = phase_statistic(res.variogram)
            rows.append((v1, v2, s, se))
    return rows


# -- meta-orders -------------------------------------------------------------

def impact_job(cfg, seed, q, index, post_horizon, keep_trades=False, backend=None):
    model, run = cfg.model, cfg.run
    spec = cfg.meta.replace(q=int(q), post_horizon=int(post_horizon))
    sim = Simulation(model, seed, index, stationary=run.stationary_seed, backend=backend)
    sim.warmup(run.warmup_for(model))
    return run_meta(sim, spec, keep_trades=keep_trades)


def run_impact(cfg, seed, replicas, threads=1, q_grid=None, backend=None):
    """Independent meta-orders for every ``Q`` of the grid. The relaxation
    path is recorded only for the largest ``Q``."""
    q_grid = sorted({int(q) for q in (q_grid or cfg.measure.q_grid)})
    qmax = q_grid[-1]
    post = cfg.meta.post_horizon
    acc = ImpactAcc(q_grid, post)
    for qi, q in enumerate(q_grid):
        base = qi * replicas
        trajs = map_replicas(
            lambda r: impact_job(cfg, seed, q, base + r, post if q == qmax else 0,
                                 backend=backend), replicas, threads)
        for tr in trajs:
            if q != qmax and post:
                tr.post_mid = np.zeros(0)
            _add(acc, q, tr, q == qmax)
    return acc


def _add(acc, q, tr, with_post):
    if with_post or not acc.post_horizon:
        acc.add(q, tr)
        return
    i = acc._index(q)
    if not tr.complete:
        acc.incomplete[i] += 1
        return
    acc.n[i] += 1
    acc.s1[i] += tr.impact
    acc.s2[i] += tr.impact ** 2


def markov_replica(cfg, seed, index, episodes, gap_time=None, backend=None):
    model, run, measure = cfg.model, cfg.run, cfg.measure
    k = measure.markov_lags
    spec = cfg.meta
    phi = spec.participation if spec is not None else 0.0
    acc = MarkovAcc(k, phi)
    sim = Simulation(model, seed, index, stationary=run.stationary_seed, backend=backend)
    sim.warmup(run.warmup_for(model))
    # episodes several book lifetimes apart are close to independent
    gap = gap_time if gap_time is not None else 3.0 / model.nu
    for _ in range(episodes):
        batch = run_biased(sim, spec, k + 1) if spec is not None else sim.run_trades(k + 1)
        acc.add_episode(batch)
        sim.advance(gap)
    return acc


def run_markov(cfg, seed, replicas, episodes, threads=1, gap_time=None, backend=None):
    if cfg.meta is not None and cfg.meta.style != MetaStyle.MARKET:
        raise ValueError("the Markov check uses market-order meta execution")
    parts = map_replicas(lambda i: markov_replica(cfg, seed, i, episodes, gap_time, backend),
                         replicas, threads)
    return merge_all(parts)


def mean_field_curve(model, p_star, offsets):
    return mean_field_profile(offsets, min(model.depth, model.max_depth), p_star)
