"""Pure-Python event loop; reference for the compiled kernel.

Both kernels expose the same class interface and consume the two
bit-generator streams identically, so a given seed yields the same
events, trades and final book regardless of the backend.
"""
import math

import numpy as np

from .book import OrderBook
from .flow import BUY, SELL, PolicyKind, SignMode, draw_volume, trend_length_from_uniform

STOP_TRADES = 0
STOP_TIME = 1
STOP_META = 2
STOP_EVENTS = 3

EV_TRADE = 0
EV_META_TRADE = 1
EV_META_DEPOSIT = 2
EV_DEPOSIT = 3
EV_CANCEL = 4
EVENT_NAMES = ("trade", "meta_trade", "meta_deposit", "deposit", "cancel")

# a level this large can only come from geometric meta-order deposits
LEVEL_VOLUME_LIMIT = 2**53

META_NONE = 0
META_MARKET = 1
META_LIMIT = 2

RECORD_FIELDS = (
    ("tau", np.float64), ("sign", np.int8), ("volume", np.int64), ("level", np.int64),
    ("bid", np.int64), ("ask", np.int64), ("bid_vol", np.int64), ("ask_vol", np.int64),
    ("meta", np.int8),
)


def new_records(capacity):
    return {name: np.zeros(capacity, dtype=dt) for name, dt in RECORD_FIELDS}


class PyKernel:
    backend = "python"

    def __init__(self, lo, volumes, sides, params, event_bitgen, sign_bitgen, trend_cdf=None):
        self.p = dict(params)
        self.rng = np.random.Generator(event_bitgen)
        self.sign_rng = np.random.Generator(sign_bitgen)
        self.book = OrderBook(lo, volumes, sides, seed_mean=self.p["seed_mean"])
        self.trend_cdf = trend_cdf
        self.tau = 0.0
        self.trades = 0
        self.last_sign = 0
        self.trend_sign = 0
        self.trend_left = 0
        self.n_events = 0
        self.last_event = -1
        self.n_trade_ev = self.n_meta_trade_ev = self.n_meta_deposit_ev = 0
        self.n_deposit_ev = self.n_cancel_ev = 0
        self.clear_meta()

    # -- meta-order control ----------------------------------------------
    def set_meta(self, style, phi, kind=PolicyKind.UNIT, param=1.0, target=0, fraction=0.5):
        self.meta_style = int(style)
        self.meta_phi = float(phi)
        self.meta_kind = int(kind)
        self.meta_param = float(param)
        self.meta_target = int(target)
        self.meta_fraction = float(fraction)
        self.meta_executed = 0

    def clear_meta(self):
        self.meta_style = META_NONE
        self.meta_phi = 0.0
        self.meta_kind = PolicyKind.UNIT
        self.meta_param = 1.0
        self.meta_target = 0
        self.meta_fraction = 0.5
        self.meta_executed = 0

    def withdraw_flagged(self):
        return self.book.remove_flagged(self.rng)

    # -- state -----------------------------------------------------------
    def snapshot(self):
        return self.book.snapshot()

    @property
    def bid(self):
        return self.book.bid

    @property
    def ask(self):
        return self.book.ask

    @property
    def total_volume(self):
        return self.book.total_volume

    def check(self):
        self.book.check_invariants()

    def next_sign(self):
        u = self.sign_rng.random
        if self.p["sign_mode"] == SignMode.IID:
            return 1 if u() < 0.5 else -1
        if self.trend_left == 0:
            self.trend_left = trend_length_from_uniform(u(), self.trend_cdf, self.p["gamma"])
            self.trend_sign = 1 if u() < 0.5 else -1
        self.trend_left -= 1
        return self.trend_sign

    def _record(self, rec, n, tr, bid_vol, ask_vol):
        rec["tau"][n] = self.tau
        rec["sign"][n] = tr.sign
        rec["volume"][n] = tr.executed_volume
        rec["level"][n] = tr.exec_level
        rec["bid"][n] = tr.pre_trade_bid
        rec["ask"][n] = tr.pre_trade_ask
        rec["bid_vol"][n] = bid_vol
        rec["ask_vol"][n] = ask_vol
        rec["meta"][n] = tr.meta

    # -- main loop -------------------------------------------------------
    def run(self, rec, start, max_trades, max_time=math.inf, max_events=-1):
        """Simulate until ``max_trades`` trades are written into ``rec`` from
        index ``start``, real time reaches ``max_time``, ``max_events`` events
        have been processed (if nonnegative) or the meta-order completes.
        Returns ``(stop_reason, n_written)``."""
        p = self.p
        book = self.book
        rng = self.rng
        u = rng.random
        mu = p["mu"]
        lam_w = p["lam_w"]
        nu = p["nu"]
        alpha = p["alpha"]
        bg_kind = p["bg_kind"]
        bg_param = p["bg_param"]
        dep_rate = lam_w * book.width
        n = start
        end = start + max_trades
        if end > rec["tau"].shape[0]:
            raise ValueError("record buffer too small")
        if n >= end:
            return STOP_TRADES, 0
        done = 0
        while True:
            if 0 <= max_events <= done:
                return STOP_EVENTS, n - start
            done += 1
            self.n_events += 1
            meta_rate = mu * self.meta_phi if self.meta_style else 0.0
            can_rate = nu * book.cancellable_volume
            total = mu + meta_rate + dep_rate + can_rate
            dt = -math.log(1.0 - u()) / total
            if self.tau + dt >= max_time:
                self.tau = max_time
                return STOP_TIME, n - start
            self.tau += dt
            x = u() * total
            if x < mu:
                self.last_event = EV_TRADE
                self.n_trade_ev += 1
                sign = self.next_sign()
                bid_vol = book.volume_at(book.bid)
                ask_vol = book.volume_at(book.ask)
                v_best = ask_vol if sign > 0 else bid_vol
                vol = draw_volume(bg_kind, bg_param, v_best, u)
                tr = book.execute_market(sign, vol, rng, meta=False)
                self._record(rec, n, tr, bid_vol, ask_vol)
                n += 1
                self.trades += 1
                self.last_sign = sign
                if tr.flagged_executed and self.meta_style == META_LIMIT:
                    self.meta_executed += tr.flagged_executed
                    if self.meta_executed >= self.meta_target:
                        self.meta_style = META_NONE
                        return STOP_META, n - start
                if n >= end:
                    return STOP_TRADES, n - start
            elif x < mu + meta_rate:
                if self.meta_style == META_MARKET:
                    self.last_event = EV_META_TRADE
                    self.n_meta_trade_ev += 1
                    bid_vol = book.volume_at(book.bid)
                    ask_vol = book.volume_at(book.ask)
                    vol = draw_volume(self.meta_kind, self.meta_param, ask_vol, u)
                    if self.meta_target > 0 and vol > self.meta_target - self.meta_executed:
                        vol = self.meta_target - self.meta_executed
                    tr = book.execute_market(1, vol, rng, meta=True)
                    self._record(rec, n, tr, bid_vol, ask_vol)
                    n += 1
                    self.trades += 1
                    self.last_sign = 1
                    self.meta_executed += vol
                    if self.meta_target > 0 and self.meta_executed >= self.meta_target:
                        self.meta_style = META_NONE
                        return STOP_META, n - start
                    if n >= end:
                        return STOP_TRADES, n - start
                else:
                    self.last_event = EV_META_DEPOSIT
                    self.n_meta_deposit_ev += 1
                    v_bid = book.volume_at(book.bid)
                    vol = math.floor(self.meta_fraction * v_bid)
                    if vol < 1:
                        vol = 1
                    if v_bid + vol >= LEVEL_VOLUME_LIMIT:
                        raise OverflowError("meta-order deposits overflowed the best-bid volume")
                    book.add_units(book.bid, BUY, vol, flagged=True)
            elif x < mu + meta_rate + dep_rate:
                self.last_event = EV_DEPOSIT
                self.n_deposit_ev += 1
                side = SELL if u() < 0.5 * (1.0 + alpha * self.last_sign) else BUY
                book.deposit(side, rng)
            else:
                self.last_event = EV_CANCEL
                self.n_cancel_ev += 1
                book.cancel(rng)
