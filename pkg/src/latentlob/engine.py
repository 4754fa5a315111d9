"""Simulation driver: stationary initialisation, warm-up, background runs
and meta-order execution on top of the event kernel.

Prices inside the kernel are integer tick indices; everything returned
here is converted to currency units with the configured tick size.

Seeding rule: replica ``i`` of master seed ``m`` draws its three streams
(events, signs, initial book) from ``SeedSequence(m, spawn_key=(i, k))``
for ``k = 0, 1, 2``, each feeding a PCG64 generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .book import OrderBook, TradeRecord
from .config import ExperimentConfig, MetaOrderSpec, MetaStyle, Termination
from .flow import BUY, SELL, PolicyKind, SignMode, SignStream, trend_table
from .kernel import (EVENT_NAMES, META_LIMIT, META_MARKET, STOP_EVENTS, STOP_META, STOP_TIME,
                     get_kernel_class, new_records)

MIN_HALF_WIDTH = 32


def replica_seeds(master_seed, index):
    """The three seed sequences (events, signs, initial book) of a replica."""
    return [np.random.SeedSequence(int(master_seed), spawn_key=(int(index), k)) for k in range(3)]


def p_star_ticks(model, diffusion=None):
    """Liquidity-hole width ``sqrt(D / 2 nu)`` in ticks.

    ``diffusion`` is in price^2/s; without it one tick^2 per trade is assumed.
    """
    d = diffusion if diffusion is not None else model.diffusion
    if d is None:
        d = model.mu * model.tick ** 2
    return math.sqrt(d / (2.0 * model.nu)) / model.tick


def half_width_for(model, diffusion=None):
    """Four hole widths, and enough levels to hold ~128 units in a sparse book."""
    if model.half_width is not None:
        return int(model.half_width)
    sparse = min(1 << 16, math.ceil(128.0 / min(model.depth, model.max_depth)))
    return max(MIN_HALF_WIDTH, int(math.ceil(4.0 * p_star_ticks(model, diffusion))), sparse)


def mean_field_profile(offset, depth, p_star):
    """Stationary mean volume ``depth * (1 - exp(-|offset| / p_star))``."""
    return depth * (1.0 - np.exp(-np.abs(np.asarray(offset, dtype=float)) / p_star))


def kernel_params(model):
    return dict(mu=model.mu, lam_w=model.lambda_w, nu=model.nu, alpha=model.alpha,
                bg_kind=model.policy_kind, bg_param=model.policy_param,
                sign_mode=model.sign_kind, gamma=model.gamma,
                seed_mean=min(model.depth, model.max_depth))


@dataclass
class TradeBatch:
    """Column view of consecutive trades; prices in ticks."""

    rec: dict
    tick: float

    def __len__(self):
        return int(self.rec["tau"].shape[0])

    def __getitem__(self, name):
        return self.rec[name]

    @property
    def mid_ticks(self):
        """Mid-price just before each trade, in ticks."""
        return 0.5 * (self.rec["bid"] + self.rec["ask"])

    @property
    def mid(self):
        return self.mid_ticks * self.tick

    def best_volumes(self):
        """Volume at the best level each trade hit."""
        return np.where(self.rec["sign"] > 0, self.rec["ask_vol"], self.rec["bid_vol"])

    def records(self, first_index=0):
        r = self.rec
        for i in range(len(self)):
            yield TradeRecord(first_index + i, float(r["tau"][i]), int(r["sign"][i]),
                              int(r["volume"][i]), int(r["level"][i]), int(r["bid"][i]),
                              int(r["ask"][i]), bool(r["meta"][i]))

    @staticmethod
    def concat(batches, tick):
        if not batches:
            return TradeBatch(new_records(0), tick)
        return TradeBatch({k: np.concatenate([b.rec[k] for b in batches]) for k in batches[0].rec}, tick)


@dataclass(frozen=True)
class Event:
    kind: str
    tau: float
    trade: TradeRecord | None = None


class Simulation:
    """One replica: a kernel plus the bookkeeping to drive it.

    ``stationary=True`` seeds each level with a Poisson draw around the
    mean-field profile; otherwise every level starts at ``lambda_w / nu``.
    """

    def __init__(self, model: ExperimentConfig, master_seed=0, replica=0, *, stationary=True,
                 diffusion=None, backend=None):
        self.model = model
        self.tick = model.tick
        self.stationary = stationary
        ev, sg, init = replica_seeds(master_seed, replica)
        h = half_width_for(model, diffusion)
        self.half_width = h
        lo = -h + 1
        levels = np.arange(lo, lo + 2 * h)
        offset = np.abs(levels - 0.5)
        depth = min(model.depth, model.max_depth)
        if stationary:
            means = mean_field_profile(offset, depth, p_star_ticks(model, diffusion))
        else:
            means = np.full(levels.shape, depth)
        init_rng = np.random.Generator(np.random.PCG64(init))
        vol = init_rng.poisson(means).astype(np.int64)
        sides = np.where(levels <= 0, BUY, SELL).astype(np.int8)
        cdf = trend_table(model.gamma)[0] if model.sign_kind == SignMode.LMF else None
        cls = get_kernel_class(backend)
        self.kernel = cls(lo, vol, sides, kernel_params(model), np.random.PCG64(ev),
                          np.random.PCG64(sg), cdf)
        self._scratch = new_records(4096)
        if model.sign_kind == SignMode.LMF:
            # start the sign process at a random time of its stationary regime
            stream = SignStream(SignMode.LMF, model.gamma, rng=init_rng)
            stream.stationary_start()
            self.kernel.trend_left = stream.remaining
            self.kernel.trend_sign = stream.trend_sign

    # -- state -----------------------------------------------------------
    @property
    def tau(self):
        return self.kernel.tau

    @property
    def trades(self):
        return self.kernel.trades

    @property
    def mid_ticks(self):
        return 0.5 * (self.kernel.bid + self.kernel.ask)

    @property
    def mid(self):
        return self.mid_ticks * self.tick

    def snapshot(self):
        return self.kernel.snapshot()

    def order_book(self):
        """Detached :class:`OrderBook` copy of the current state."""
        levels, vol, side, flag = self.kernel.snapshot()
        return OrderBook(int(levels[0]), vol, side, tick_size=self.tick,
                         seed_mean=min(self.model.depth, self.model.max_depth), flagged=flag)

    # -- background evolution ---------------------------------------------
    def advance(self, duration):
        """Evolve for ``duration`` seconds, discarding the trades."""
        end = self.kernel.tau + duration
        buf = self._scratch
        while True:
            reason, _ = self.kernel.run(buf, 0, buf["tau"].shape[0], end)
            if reason == STOP_TIME:
                return

    def warmup(self, duration=None):
        if duration is None:
            duration = (0.2 if self.stationary else 5.0) / self.model.nu
        self.advance(duration)

    def run_trades(self, n, max_time=math.inf):
        """Next ``n`` trades (fewer if ``max_time`` is reached first)."""
        rec = new_records(n)
        got = 0
        while got < n:
            reason, k = self.kernel.run(rec, got, n - got, max_time)
            got += k
            if reason == STOP_TIME:
                break
        if got < n:
            rec = {name: a[:got].copy() for name, a in rec.items()}
        return TradeBatch(rec, self.tick)

    def step(self):
        """Process exactly one event."""
        buf = self._scratch
        before = self.kernel.trades
        self.kernel.run(buf, 0, 1, math.inf, 1)
        kind = EVENT_NAMES[self.kernel.last_event]
        trade = None
        if self.kernel.trades > before:
            trade = next(TradeBatch({k: v[:1] for k, v in buf.items()}, self.tick)
                         .records(before))
        return Event(kind, self.kernel.tau, trade)

    def event_counts(self):
        k = self.kernel
        return dict(trade=k.n_trade_ev, meta_trade=k.n_meta_trade_ev,
                    meta_deposit=k.n_meta_deposit_ev, deposit=k.n_deposit_ev,
                    cancel=k.n_cancel_ev)

    # -- meta-orders -----------------------------------------------------
    def start_meta(self, spec: MetaOrderSpec, target=0):
        if spec.style == MetaStyle.MARKET:
            self.kernel.set_meta(META_MARKET, spec.phi, spec.trader_kind, spec.trader_param, target)
        else:
            self.kernel.set_meta(META_LIMIT, spec.phi, PolicyKind.UNIT, 1.0, target, spec.fraction)

    def stop_meta(self):
        self.kernel.clear_meta()
        return self.kernel.withdraw_flagged()


@dataclass
class ImpactTrajectory:
    """Mid-price path of one meta-order execution (currency units)."""

    p0: float
    p_end: float
    q_target: int
    executed: int
    duration: float
    n_trades: int
    n_meta_trades: int
    complete: bool
    milestones: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    milestone_mid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    post_mid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    during: TradeBatch | None = None

    @property
    def impact(self):
        return self.p_end - self.p0

    @property
    def milestone_impact(self):
        return self.milestone_mid - self.p0

    @property
    def post_impact(self):
        """``I_{T+t} = p(T+t) - p0`` for ``t = 0 .. post_horizon`` trades."""
        return self.post_mid - self.p0


def _post_path(sim, p_end, horizon):
    if horizon <= 0:
        return np.array([p_end])
    batch = sim.run_trades(horizon + 1)
    return np.concatenate([[p_end], batch.mid[1:]])


def _milestone_mids(batch, p_end, milestones, meta_volume_fn):
    """Mid right after the trade that makes cumulative volume reach each milestone."""
    cum = np.cumsum(meta_volume_fn(batch))
    after = np.append(batch.mid[1:], p_end)
    idx = np.searchsorted(cum, milestones, side="left")
    out = np.full(len(milestones), np.nan)
    ok = idx < len(cum)
    out[ok] = after[idx[ok]]
    return out


def run_meta_market(sim: Simulation, spec: MetaOrderSpec, milestones=None, keep_trades=False):
    """Buy with market orders at rate ``mu * phi`` until the target volume
    (FIXED_Q) or duration (FIXED_T) is reached. A UNIT trader may set both
    and stops at whichever comes first. The last child of a FIXED_Q order
    is clipped so that the executed volume equals ``q`` exactly."""
    if spec.style != MetaStyle.MARKET:
        raise ValueError("run_meta_market needs a MARKET spec")
    kernel = sim.kernel
    p0 = sim.mid
    tau0 = kernel.tau
    fixed_q = spec.termination == Termination.FIXED_Q
    if fixed_q and spec.q == 0:
        post = _post_path(sim, p0, spec.post_horizon)
        return ImpactTrajectory(p0, p0, 0, 0, 0.0, 0, 0, True, post_mid=post)
    max_time = math.inf
    if spec.duration is not None and (not fixed_q or spec.trader_kind == PolicyKind.UNIT):
        max_time = tau0 + spec.duration
    sim.start_meta(spec, target=spec.q if fixed_q else 0)
    cap = spec.max_trades
    rec = new_records(cap)
    n = 0
    reason = None
    while n < cap:
        reason, k = kernel.run(rec, n, cap - n, max_time)
        n += k
        if reason in (STOP_META, STOP_TIME):
            break
    executed = int(kernel.meta_executed)
    if fixed_q:
        complete = reason == STOP_META or (reason == STOP_TIME and spec.duration is not None)
    else:
        complete = reason == STOP_TIME
    sim.stop_meta()
    batch = TradeBatch({k: v[:n] for k, v in rec.items()}, sim.tick)
    p_end = sim.mid
    duration = kernel.tau - tau0
    ms = np.asarray(milestones if milestones is not None else [], dtype=np.int64)
    mids = _milestone_mids(batch, p_end, ms, lambda b: np.where(b["meta"] == 1, b["volume"], 0))
    post = _post_path(sim, p_end, spec.post_horizon)
    return ImpactTrajectory(p0, p_end, spec.q if fixed_q else executed, executed, duration, n,
                            int(batch["meta"].sum()), bool(complete), ms, mids, post,
                            batch if keep_trades else None)


def run_meta_limit(sim: Simulation, spec: MetaOrderSpec, milestones=None, keep_trades=False):
    """Buy by depositing non-cancellable units at the best bid at rate
    ``mu * phi`` until sell market orders have executed ``q`` of them.
    Remaining deposited units are withdrawn at completion."""
    if spec.style != MetaStyle.LIMIT:
        raise ValueError("run_meta_limit needs a LIMIT spec")
    kernel = sim.kernel
    p0 = sim.mid
    tau0 = kernel.tau
    if spec.q == 0:
        post = _post_path(sim, p0, spec.post_horizon)
        return ImpactTrajectory(p0, p0, 0, 0, 0.0, 0, 0, True, post_mid=post)
    ms = np.unique(np.asarray(milestones if milestones is not None else [], dtype=np.int64))
    ms = ms[(ms > 0) & (ms < spec.q)]
    cap = spec.max_trades
    rec = new_records(cap)
    n = 0
    executed = 0
    mids = []
    complete = False
    for target in list(ms) + [spec.q]:
        if executed >= target:
            mids.append(sim.mid)
            continue
        sim.start_meta(spec, target=target - executed)
        reason = None
        while n < cap:
            reason, k = kernel.run(rec, n, cap - n)
            n += k
            if reason == STOP_META:
                break
        executed += int(kernel.meta_executed)
        if reason != STOP_META:
            break
        mids.append(sim.mid)
        complete = target == spec.q
    sim.stop_meta()
    p_end = sim.mid
    duration = kernel.tau - tau0
    mids = np.array(mids[:len(ms)] + [np.nan] * (len(ms) - len(mids[:len(ms)])))
    batch = TradeBatch({k: v[:n] for k, v in rec.items()}, sim.tick)
    post = _post_path(sim, p_end, spec.post_horizon)
    return ImpactTrajectory(p0, p_end, spec.q, executed, duration, n, 0, complete, ms, mids,
                            post, batch if keep_trades else None)


def run_meta(sim, spec, milestones=None, keep_trades=False):
    if spec.style == MetaStyle.MARKET:
        return run_meta_market(sim, spec, milestones, keep_trades)
    return run_meta_limit(sim, spec, milestones, keep_trades)


def run_biased(sim: Simulation, spec: MetaOrderSpec, n_trades):
    """``n_trades`` trades with a never-ending meta-order active (constant bias)."""
    sim.start_meta(spec, target=0)
    batch = sim.run_trades(n_trades)
    sim.stop_meta()
    return batch
