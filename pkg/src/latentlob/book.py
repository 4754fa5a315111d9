"""Latent order book on a sliding window of price levels.

Levels are absolute integer tick indices. The window ``[lo, lo + width)``
is kept centred on the mid-price; levels entering the window are seeded
at the no-trade stationary occupancy (Poisson with mean ``seed_mean``) and
levels leaving it are forgotten. Slot ``level % width`` of a ring buffer
holds each level, and a Fenwick tree over cancellable units gives
O(log width) uniform unit selection.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .fenwick import FenwickTree
from .flow import BUY, SELL, poisson_from

EMPTY = 0


class WindowExhausted(RuntimeError):
    """The window holds no admissible level for the requested operation."""


class NothingToCancel(RuntimeError):
    pass


@dataclass(frozen=True)
class TradeRecord:
    trade_index: int
    real_time: float
    sign: int
    executed_volume: int
    exec_level: int
    pre_trade_bid: int
    pre_trade_ask: int
    meta: bool = False
    flagged_executed: int = 0


class OrderBook:
    """Integer unit-order volumes with BUY/SELL/EMPTY side labels."""

    def __init__(self, lo, volumes, sides, tick_size=0.01, seed_mean=50.0,
                 flagged=None, auto_recentre=True):
        width = len(volumes)
        if width < 4 or width % 2:
            raise ValueError("window width must be even and >= 4")
        self.tick_size = tick_size
        self.seed_mean = float(seed_mean)
        self.width = width
        self.half_width = width // 2
        self.lo = int(lo)
        self.auto_recentre = auto_recentre
        self.vol = [0] * width
        self.side = [EMPTY] * width
        self.flag = [0] * width
        flagged = np.zeros(width, dtype=np.int64) if flagged is None else flagged
        for i in range(width):
            level = self.lo + i
            s = level % width
            v = int(volumes[i])
            self.vol[s] = v
            self.side[s] = int(sides[i]) if v > 0 else EMPTY
            self.flag[s] = int(flagged[i])
        self.total_volume = sum(self.vol)
        self._fen = FenwickTree.from_weights([v - f for v, f in zip(self.vol, self.flag)])
        self.bid = self._scan_bid(self.lo + width - 1)
        self.ask = self._scan_ask(self.lo)
        if self.bid is None or self.ask is None:
            raise WindowExhausted("initial book needs both sides populated")
        self.check_invariants()

    # -- queries ---------------------------------------------------------
    @property
    def hi(self):
        return self.lo + self.width - 1

    @property
    def cancellable_volume(self):
        return self._fen.total

    def in_window(self, level):
        return self.lo <= level <= self.hi

    def volume_at(self, level):
        return self.vol[level % self.width] if self.in_window(level) else 0

    def side_at(self, level):
        return self.side[level % self.width] if self.in_window(level) else EMPTY

    def flagged_at(self, level):
        return self.flag[level % self.width] if self.in_window(level) else 0

    @property
    def mid(self):
        return 0.5 * (self.bid + self.ask)

    def _scan_ask(self, start):
        for level in range(max(start, self.lo), self.hi + 1):
            s = level % self.width
            if self.side[s] == SELL and self.vol[s] > 0:
                return level
        return None

    def _scan_bid(self, start):
        for level in range(min(start, self.hi), self.lo - 1, -1):
            s = level % self.width
            if self.side[s] == BUY and self.vol[s] > 0:
                return level
        return None

    # -- window management ----------------------------------------------
    def _shift(self, direction, rng):
        """Move the window one level up (+1) or down (-1)."""
        w = self.width
        if direction > 0:
            gone, new, new_side = self.lo, self.lo + w, SELL
        else:
            gone, new, new_side = self.lo + w - 1, self.lo - 1, BUY
        if gone == self.bid or gone == self.ask:
            raise WindowExhausted("window shift would trim a best quote")
        s = gone % w
        self._fen.add(s, -(self.vol[s] - self.flag[s]))
        self.total_volume -= self.vol[s]
        v = poisson_from(rng.random, self.seed_mean)
        self.vol[s] = v
        self.flag[s] = 0
        self.side[s] = new_side if v > 0 else EMPTY
        self._fen.add(s, v)
        self.total_volume += v
        self.lo += direction
        return new

    def extend_window(self, direction, n_levels, rng):
        """Slide the window ``n_levels`` towards ``direction`` (+1 up, -1 down)."""
        for _ in range(n_levels):
            self._shift(1 if direction > 0 else -1, rng)

    def recentre(self, rng):
        target = (self.bid + self.ask) // 2 - self.half_width + 1
        while self.lo < target:
            self._shift(1, rng)
        while self.lo > target:
            self._shift(-1, rng)

    def _refresh_ask(self, start, rng):
        level = self._scan_ask(start)
        tries = 0
        while level is None:
            new = self._shift(1, rng)
            if self.side[new % self.width] == SELL:
                level = new
            tries += 1
            if tries > self.width:
                raise WindowExhausted("no ask liquidity within reach")
        self.ask = level

    def _refresh_bid(self, start, rng):
        level = self._scan_bid(start)
        tries = 0
        while level is None:
            new = self._shift(-1, rng)
            if self.side[new % self.width] == BUY:
                level = new
            tries += 1
            if tries > self.width:
                raise WindowExhausted("no bid liquidity within reach")
        self.bid = level

    def _after_quote_change(self, rng):
        if self.auto_recentre:
            self.recentre(rng)

    # -- events ----------------------------------------------------------
    def deposit(self, side, rng):
        """Add one unit at a uniformly drawn admissible level for ``side``."""
        if side == BUY:
            n = self.ask - self.lo
            if n <= 0:
                raise WindowExhausted("no admissible BUY level")
            level = self.lo + int(rng.random() * n)
        else:
            n = self.hi - self.bid
            if n <= 0:
                raise WindowExhausted("no admissible SELL level")
            level = self.bid + 1 + int(rng.random() * n)
        self.add_units(level, side, 1)
        if side == BUY and level > self.bid:
            self.bid = level
            self._after_quote_change(rng)
        elif side == SELL and level < self.ask:
            self.ask = level
            self._after_quote_change(rng)
        return level

    def add_units(self, level, side, volume, flagged=False):
        s = level % self.width
        if self.side[s] not in (EMPTY, side):
            raise ValueError(f"level {level} already holds the other side")
        self.vol[s] += volume
        self.side[s] = side
        self.total_volume += volume
        if flagged:
            self.flag[s] += volume
        else:
            self._fen.add(s, volume)

    def cancel(self, rng):
        """Remove one cancellable unit chosen uniformly among all of them."""
        vc = self._fen.total
        if vc <= 0:
            raise NothingToCancel("nothing to cancel")
        k = int(rng.random() * vc)
        s = self._fen.find(k)
        level = self.lo + (s - self.lo) % self.width
        self._fen.add(s, -1)
        self.vol[s] -= 1
        self.total_volume -= 1
        if self.vol[s] == 0:
            self.side[s] = EMPTY
            if level == self.ask:
                self._refresh_ask(level + 1, rng)
                self._after_quote_change(rng)
            elif level == self.bid:
                self._refresh_bid(level - 1, rng)
                self._after_quote_change(rng)
        return level

    def execute_market(self, sign, volume, rng=None, trade_index=0, real_time=0.0, meta=False):
        """Consume ``volume`` units at the opposite best; no trade-through."""
        level = self.ask if sign > 0 else self.bid
        s = level % self.width
        available = self.vol[s]
        if not 1 <= volume <= available:
            raise ValueError(f"market volume {volume} outside [1, {available}]")
        pre_bid, pre_ask = self.bid, self.ask
        fc = 0
        f = self.flag[s]
        if f:
            # which units are hit is uniform within the level (no priority)
            remaining = available
            for _ in range(volume):
                if rng.random() * remaining < f:
                    f -= 1
                    fc += 1
                remaining -= 1
            self.flag[s] = f
        self.vol[s] -= volume
        self.total_volume -= volume
        self._fen.add(s, -(volume - fc))
        if self.vol[s] == 0:
            self.side[s] = EMPTY
            if sign > 0:
                self._refresh_ask(level + 1, rng)
            else:
                self._refresh_bid(level - 1, rng)
            self._after_quote_change(rng)
        return TradeRecord(trade_index, real_time, int(sign), int(volume), level,
                           pre_bid, pre_ask, bool(meta), fc)

    def remove_flagged(self, rng):
        """Withdraw every non-cancellable unit; returns the number removed."""
        removed = 0
        moved = False
        for i in range(self.width):
            level = self.lo + i
            s = level % self.width
            f = self.flag[s]
            if not f:
                continue
            self.vol[s] -= f
            self.flag[s] = 0
            self.total_volume -= f
            removed += f
            if self.vol[s] == 0:
                self.side[s] = EMPTY
                if level == self.bid or level == self.ask:
                    moved = True
        if moved:
            if self.side_at(self.bid) == EMPTY:
                self._refresh_bid(self.bid - 1, rng)
            if self.side_at(self.ask) == EMPTY:
                self._refresh_ask(self.ask + 1, rng)
            self._after_quote_change(rng)
        return removed

    # -- inspection ------------------------------------------------------
    def snapshot(self):
        """Window contents in level order: (levels, volumes, sides, flagged)."""
        levels = np.arange(self.lo, self.lo + self.width, dtype=np.int64)
        slots = levels % self.width
        vol = np.array(self.vol, dtype=np.int64)[slots]
        side = np.array(self.side, dtype=np.int8)[slots]
        flag = np.array(self.flag, dtype=np.int64)[slots]
        return levels, vol, side, flag

    def check_invariants(self):
        levels, vol, side, flag = self.snapshot()
        assert self.total_volume == int(vol.sum())
        assert self._fen.total == int((vol - flag).sum())
        assert np.all((vol == 0) == (side == EMPTY))
        buys = levels[side == BUY]
        sells = levels[side == SELL]
        assert buys.size and sells.size
        assert buys.max() < sells.min()
        assert self.bid == buys.max() and self.ask == sells.min()
        assert self.bid < self.ask

    def to_csv(self, fh=None):
        """Nonempty levels as CSV rows ``level_price, side, volume``."""
        out = fh if fh is not None else io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["level_price", "side", "volume"])
        levels, vol, side, _ = self.snapshot()
        for level, v, sd in zip(levels, vol, side):
            if v:
                writer.writerow([repr(round(int(level) * self.tick_size, 10)),
                                 "BUY" if sd == BUY else "SELL", int(v)])
        return out.getvalue() if fh is None else None
