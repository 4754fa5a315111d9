# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loop. Mirrors ``_pykernel`` operation for operation."""
import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log, exp, sqrt, floor, fabs, pow, INFINITY
from numpy.random cimport bitgen_t

from .book import WindowExhausted
from .flow import logfact_table, PolicyKind

cnp.import_array()


cdef enum:
    SELL = 1
    BUY = -1
    EMPTY = 0
    K_UNIT = 0
    K_GREEDY = 1
    K_ZETA = 2
    K_PSI = 3
    STOP_TRADES = 0
    STOP_TIME = 1
    STOP_META = 2
    STOP_EVENTS = 3
    ERR_WINDOW = -1
    ERR_OVERFLOW = -2
    EV_TRADE = 0
    EV_META_TRADE = 1
    EV_META_DEPOSIT = 2
    EV_DEPOSIT = 3
    EV_CANCEL = 4
    META_NONE = 0
    META_MARKET = 1
    META_LIMIT = 2


ctypedef long long i64

cdef i64 NONE_HI = 4611686018427387904
cdef i64 LEVEL_VOLUME_LIMIT = 9007199254740992  # 2**53
cdef i64 NONE_LO = -4611686018427387904


cdef inline i64 pmod(i64 a, i64 b) nogil:
    cdef i64 r = a % b
    if r < 0:
        r += b
    return r


cdef inline i64 pfloordiv(i64 a, i64 b) nogil:
    cdef i64 q = a / b
    if (a % b != 0) and ((a < 0) != (b < 0)):
        q -= 1
    return q


cdef inline double next_u(bitgen_t *bg) nogil:
    return bg.next_double(bg.state)


cdef class CKernel:
    cdef bitgen_t *bg
    cdef bitgen_t *sbg
    cdef object _bg_ref, _sbg_ref
    cdef i64[::1] vol, flag, fen
    cdef signed char[::1] side
    cdef const double[::1] cdf
    cdef const double[::1] logfact
    cdef i64 width, half, lo, fen_top, n_cdf
    cdef public i64 bid, ask, total_volume, trades, meta_executed, meta_target
    cdef public i64 last_sign, trend_sign, trend_left
    cdef public double tau
    cdef public i64 n_events, last_event
    cdef public i64 n_trade_ev, n_meta_trade_ev, n_meta_deposit_ev, n_deposit_ev, n_cancel_ev
    cdef i64 fen_total
    cdef double mu, lam_w, nu, alpha, bg_param, gamma, seed_mean
    cdef int bg_kind, sign_mode
    cdef public int meta_style, meta_kind
    cdef public double meta_phi, meta_param, meta_fraction

    backend = "cython"

    def __init__(self, lo, volumes, sides, params, event_bitgen, sign_bitgen, trend_cdf=None):
        cdef i64 i, level, s, w
        w = len(volumes)
        if w < 4 or w % 2:
            raise ValueError("window width must be even and >= 4")
        self._bg_ref = event_bitgen
        self._sbg_ref = sign_bitgen
        self.bg = <bitgen_t *> PyCapsule_GetPointer(event_bitgen.capsule, "BitGenerator")
        self.sbg = <bitgen_t *> PyCapsule_GetPointer(sign_bitgen.capsule, "BitGenerator")
        self.mu = params["mu"]
        self.lam_w = params["lam_w"]
        self.nu = params["nu"]
        self.alpha = params["alpha"]
        self.bg_kind = int(params["bg_kind"])
        self.bg_param = params["bg_param"]
        self.sign_mode = int(params["sign_mode"])
        self.gamma = params["gamma"]
        self.seed_mean = params["seed_mean"]
        if trend_cdf is None:
            trend_cdf = np.ones(1)
        self.cdf = np.ascontiguousarray(trend_cdf, dtype=np.float64)
        self.n_cdf = self.cdf.shape[0]
        self.logfact = np.ascontiguousarray(logfact_table(), dtype=np.float64)
        self.width = w
        self.half = w // 2
        self.lo = lo
        self.vol = np.zeros(w, dtype=np.int64)
        self.flag = np.zeros(w, dtype=np.int64)
        self.side = np.zeros(w, dtype=np.int8)
        self.fen = np.zeros(w + 1, dtype=np.int64)
        self.fen_top = 1
        while self.fen_top * 2 <= w:
            self.fen_top *= 2
        self.fen_total = 0
        self.total_volume = 0
        for i in range(w):
            level = lo + i
            s = pmod(level, w)
            self.vol[s] = int(volumes[i])
            self.side[s] = int(sides[i]) if volumes[i] > 0 else EMPTY
            self.total_volume += self.vol[s]
            self.fen_add(s, self.vol[s])
        self.bid = self.scan_bid(lo + w - 1)
        self.ask = self.scan_ask(lo)
        if self.bid == NONE_LO or self.ask == NONE_HI:
            raise WindowExhausted("initial book needs both sides populated")
        self.tau = 0.0
        self.trades = 0
        self.n_events = 0
        self.last_event = -1
        self.last_sign = 0
        self.trend_sign = 0
        self.trend_left = 0
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
        self.meta_kind = K_UNIT
        self.meta_param = 1.0
        self.meta_target = 0
        self.meta_fraction = 0.5
        self.meta_executed = 0

    def withdraw_flagged(self):
        cdef i64 removed
        with nogil:
            removed = self.remove_flagged()
        if removed < 0:
            raise WindowExhausted("window exhausted while withdrawing orders")
        return removed

    # -- state -----------------------------------------------------------
    def snapshot(self):
        levels = np.arange(self.lo, self.lo + self.width, dtype=np.int64)
        slots = levels % self.width
        return (levels, np.asarray(self.vol)[slots].copy(), np.asarray(self.side)[slots].copy(),
                np.asarray(self.flag)[slots].copy())

    @property
    def cancellable_volume(self):
        return self.fen_total

    def check(self):
        levels, vol, side, flag = self.snapshot()
        assert self.total_volume == int(vol.sum())
        assert self.fen_total == int((vol - flag).sum())
        for s in range(self.width):
            assert self.fen_prefix(s) == int((np.asarray(self.vol)[:s + 1] - np.asarray(self.flag)[:s + 1]).sum())
        assert np.all((vol == 0) == (side == EMPTY))
        buys = levels[side == BUY]
        sells = levels[side == SELL]
        assert buys.max() < sells.min()
        assert self.bid == buys.max() and self.ask == sells.min()

    # -- Fenwick ---------------------------------------------------------
    cdef inline void fen_add(self, i64 slot, i64 delta) noexcept nogil:
        cdef i64 j = slot + 1
        while j <= self.width:
            self.fen[j] += delta
            j += j & -j
        self.fen_total += delta

    cdef i64 fen_prefix(self, i64 slot) noexcept nogil:
        cdef i64 j = slot + 1, s = 0
        while j > 0:
            s += self.fen[j]
            j -= j & -j
        return s

    cdef inline i64 fen_find(self, i64 k) noexcept nogil:
        cdef i64 pos = 0, step = self.fen_top, nxt
        while step:
            nxt = pos + step
            if nxt <= self.width and self.fen[nxt] <= k:
                pos = nxt
                k -= self.fen[nxt]
            step >>= 1
        return pos

    # -- samplers --------------------------------------------------------
    cdef double log_factorial(self, i64 k) noexcept nogil:
        cdef double x
        if k < self.logfact.shape[0]:
            return self.logfact[k]
        x = k + 1.0
        return (x - 0.5) * log(x) - x + 0.91893853320467274178 + (
            1.0 / 12.0 - (1.0 / 360.0 - 1.0 / (1260.0 * x * x)) / (x * x)) / x

    cdef i64 poisson(self, double lam) noexcept nogil:
        cdef double limit, prod, slam, loglam, b, a, invalpha, vr, u, v, us
        cdef i64 k
        if lam <= 0.0:
            return 0
        if lam < 10.0:
            limit = exp(-lam)
            k = 0
            prod = next_u(self.bg)
            while prod > limit:
                k += 1
                prod *= next_u(self.bg)
            return k
        slam = sqrt(lam)
        loglam = log(lam)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        invalpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2.0)
        while True:
            u = next_u(self.bg) - 0.5
            v = next_u(self.bg)
            us = 0.5 - fabs(u)
            k = <i64> floor((2.0 * a / us + b) * u + lam + 0.43)
            if us >= 0.07 and v <= vr:
                return k
            if k < 0 or (us < 0.013 and v > us):
                continue
            if (log(v) + log(invalpha) - log(a / (us * us) + b)
                    <= -lam + k * loglam - self.log_factorial(k)):
                return k

    cdef i64 trend_length(self, double u) noexcept nogil:
        cdef i64 n = self.n_cdf, lo = 0, hi = n - 1, mid
        cdef double v, length
        if u < self.cdf[n - 1]:
            while lo < hi:
                mid = (lo + hi) >> 1
                if self.cdf[mid] > u:
                    hi = mid
                else:
                    lo = mid + 1
            return lo + 1
        v = (1.0 - u) / (1.0 - self.cdf[n - 1])
        if v <= 0.0:
            v = 1e-300
        length = floor((n + 0.5) * pow(v, -1.0 / (self.gamma + 1.0)) + 0.5)
        if length < n + 1:
            length = n + 1
        if length > 4.611686018427388e18:
            length = 4.611686018427388e18
        return <i64> length

    cdef i64 next_sign(self) noexcept nogil:
        if self.sign_mode == 0:
            return 1 if next_u(self.sbg) < 0.5 else -1
        if self.trend_left == 0:
            self.trend_left = self.trend_length(next_u(self.sbg))
            self.trend_sign = 1 if next_u(self.sbg) < 0.5 else -1
        self.trend_left -= 1
        return self.trend_sign

    cdef i64 draw_volume(self, int kind, double param, i64 v_best) noexcept nogil:
        cdef double u, f, v
        if kind == K_UNIT:
            return 1
        if kind == K_GREEDY:
            return v_best
        if kind == K_ZETA:
            u = next_u(self.bg)
            f = 1.0 - pow(1.0 - u, 1.0 / param)
            v = floor(f * v_best)
        else:
            v = floor(pow(<double> v_best, param))
        if v < 1:
            return 1
        return <i64> v if v < v_best else v_best

    # -- book ------------------------------------------------------------
    cdef i64 scan_ask(self, i64 start) noexcept nogil:
        cdef i64 level, s
        if start < self.lo:
            start = self.lo
        for level in range(start, self.lo + self.width):
            s = pmod(level, self.width)
            if self.side[s] == SELL and self.vol[s] > 0:
                return level
        return NONE_HI

    cdef i64 scan_bid(self, i64 start) noexcept nogil:
        cdef i64 level, s
        if start > self.lo + self.width - 1:
            start = self.lo + self.width - 1
        level = start
        while level >= self.lo:
            s = pmod(level, self.width)
            if self.side[s] == BUY and self.vol[s] > 0:
                return level
            level -= 1
        return NONE_LO

    cdef i64 shift(self, int direction) noexcept nogil:
        """Returns the new level, or a sentinel below ``lo - width`` on error."""
        cdef i64 gone, new, s, v
        cdef signed char new_side
        if direction > 0:
            gone = self.lo
            new = self.lo + self.width
            new_side = SELL
        else:
            gone = self.lo + self.width - 1
            new = self.lo - 1
            new_side = BUY
        if gone == self.bid or gone == self.ask:
            return NONE_LO
        s = pmod(gone, self.width)
        self.fen_add(s, -(self.vol[s] - self.flag[s]))
        self.total_volume -= self.vol[s]
        v = self.poisson(self.seed_mean)
        self.vol[s] = v
        self.flag[s] = 0
        self.side[s] = new_side if v > 0 else EMPTY
        self.fen_add(s, v)
        self.total_volume += v
        self.lo += direction
        return new

    cdef int recentre(self) noexcept nogil:
        cdef i64 target = pfloordiv(self.bid + self.ask, 2) - self.half + 1
        while self.lo < target:
            if self.shift(1) == NONE_LO:
                return ERR_WINDOW
        while self.lo > target:
            if self.shift(-1) == NONE_LO:
                return ERR_WINDOW
        return 0

    cdef int refresh_ask(self, i64 start) noexcept nogil:
        cdef i64 level = self.scan_ask(start), new, tries = 0
        while level == NONE_HI:
            new = self.shift(1)
            if new == NONE_LO:
                return ERR_WINDOW
            if self.side[pmod(new, self.width)] == SELL:
                level = new
            tries += 1
            if tries > self.width:
                return ERR_WINDOW
        self.ask = level
        return 0

    cdef int refresh_bid(self, i64 start) noexcept nogil:
        cdef i64 level = self.scan_bid(start), new, tries = 0
        while level == NONE_LO:
            new = self.shift(-1)
            if new == NONE_LO:
                return ERR_WINDOW
            if self.side[pmod(new, self.width)] == BUY:
                level = new
            tries += 1
            if tries > self.width:
                return ERR_WINDOW
        self.bid = level
        return 0

    cdef int deposit(self, int side) noexcept nogil:
        cdef i64 n, level, s
        if side == BUY:
            n = self.ask - self.lo
            if n <= 0:
                return ERR_WINDOW
            level = self.lo + <i64> (next_u(self.bg) * n)
        else:
            n = self.lo + self.width - 1 - self.bid
            if n <= 0:
                return ERR_WINDOW
            level = self.bid + 1 + <i64> (next_u(self.bg) * n)
        s = pmod(level, self.width)
        self.vol[s] += 1
        self.side[s] = side
        self.total_volume += 1
        self.fen_add(s, 1)
        if side == BUY and level > self.bid:
            self.bid = level
            return self.recentre()
        elif side == SELL and level < self.ask:
            self.ask = level
            return self.recentre()
        return 0

    cdef int cancel(self) noexcept nogil:
        cdef i64 k, s, level
        cdef int err
        if self.fen_total <= 0:
            return ERR_WINDOW
        k = <i64> (next_u(self.bg) * self.fen_total)
        s = self.fen_find(k)
        level = self.lo + pmod(s - self.lo, self.width)
        self.fen_add(s, -1)
        self.vol[s] -= 1
        self.total_volume -= 1
        if self.vol[s] == 0:
            self.side[s] = EMPTY
            if level == self.ask:
                err = self.refresh_ask(level + 1)
                if err:
                    return err
                return self.recentre()
            elif level == self.bid:
                err = self.refresh_bid(level - 1)
                if err:
                    return err
                return self.recentre()
        return 0

    cdef i64 execute(self, i64 sign, i64 volume, i64 *level_out) noexcept nogil:
        """Consume ``volume`` at the opposite best. Returns flagged units hit,
        or a negative error code."""
        cdef i64 level = self.ask if sign > 0 else self.bid
        cdef i64 s = pmod(level, self.width)
        cdef i64 available = self.vol[s], f = self.flag[s], fc = 0, remaining, j
        cdef int err
        level_out[0] = level
        if f:
            remaining = available
            for j in range(volume):
                if next_u(self.bg) * remaining < f:
                    f -= 1
                    fc += 1
                remaining -= 1
            self.flag[s] = f
        self.vol[s] -= volume
        self.total_volume -= volume
        self.fen_add(s, -(volume - fc))
        if self.vol[s] == 0:
            self.side[s] = EMPTY
            if sign > 0:
                err = self.refresh_ask(level + 1)
            else:
                err = self.refresh_bid(level - 1)
            if err:
                return err
            err = self.recentre()
            if err:
                return err
        return fc

    cdef i64 remove_flagged(self) noexcept nogil:
        cdef i64 i, level, s, f, removed = 0
        cdef bint moved = False
        for i in range(self.width):
            level = self.lo + i
            s = pmod(level, self.width)
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
            if self.side[pmod(self.bid, self.width)] == EMPTY or self.vol[pmod(self.bid, self.width)] == 0:
                if self.refresh_bid(self.bid - 1):
                    return ERR_WINDOW
            if self.side[pmod(self.ask, self.width)] == EMPTY or self.vol[pmod(self.ask, self.width)] == 0:
                if self.refresh_ask(self.ask + 1):
                    return ERR_WINDOW
            if self.recentre():
                return ERR_WINDOW
        return removed

    # -- main loop -------------------------------------------------------
    def run(self, rec, Py_ssize_t start, Py_ssize_t max_trades, double max_time=INFINITY,
            i64 max_events=-1):
        cdef double[::1] r_tau = rec["tau"]
        cdef signed char[::1] r_sign = rec["sign"]
        cdef i64[::1] r_vol = rec["volume"]
        cdef i64[::1] r_level = rec["level"]
        cdef i64[::1] r_bid = rec["bid"]
        cdef i64[::1] r_ask = rec["ask"]
        cdef i64[::1] r_bvol = rec["bid_vol"]
        cdef i64[::1] r_avol = rec["ask_vol"]
        cdef signed char[::1] r_meta = rec["meta"]
        cdef Py_ssize_t n = start, end = start + max_trades
        cdef int status
        if end > r_tau.shape[0]:
            raise ValueError("record buffer too small")
        if n >= end:
            return STOP_TRADES, 0
        with nogil:
            status = self._loop(r_tau, r_sign, r_vol, r_level, r_bid, r_ask, r_bvol, r_avol,
                                r_meta, &n, end, max_time, max_events)
        if status == ERR_WINDOW:
            raise WindowExhausted("order book window exhausted")
        if status == ERR_OVERFLOW:
            raise OverflowError("meta-order deposits overflowed the best-bid volume")
        return status, n - start

    cdef int _loop(self, double[::1] r_tau, signed char[::1] r_sign, i64[::1] r_vol,
                   i64[::1] r_level, i64[::1] r_bid, i64[::1] r_ask, i64[::1] r_bvol,
                   i64[::1] r_avol, signed char[::1] r_meta, Py_ssize_t *np_,
                   Py_ssize_t end, double max_time, i64 max_events) noexcept nogil:
        cdef double mu = self.mu, alpha = self.alpha
        cdef double dep_rate = self.lam_w * self.width
        cdef double meta_rate, can_rate, total, dt, x
        cdef i64 sign, bid_vol, ask_vol, v_best, vol, fc, level, pre_bid, pre_ask, v_bid
        cdef Py_ssize_t n = np_[0]
        cdef int err, side
        cdef i64 done = 0
        while True:
            if max_events >= 0 and done >= max_events:
                np_[0] = n
                return STOP_EVENTS
            done += 1
            self.n_events += 1
            meta_rate = mu * self.meta_phi if self.meta_style else 0.0
            can_rate = self.nu * self.fen_total
            total = mu + meta_rate + dep_rate + can_rate
            dt = -log(1.0 - next_u(self.bg)) / total
            if self.tau + dt >= max_time:
                self.tau = max_time
                np_[0] = n
                return STOP_TIME
            self.tau += dt
            x = next_u(self.bg) * total
            if x < mu:
                self.last_event = EV_TRADE
                self.n_trade_ev += 1
                sign = self.next_sign()
                bid_vol = self.vol[pmod(self.bid, self.width)]
                ask_vol = self.vol[pmod(self.ask, self.width)]
                v_best = ask_vol if sign > 0 else bid_vol
                vol = self.draw_volume(self.bg_kind, self.bg_param, v_best)
                pre_bid = self.bid
                pre_ask = self.ask
                fc = self.execute(sign, vol, &level)
                if fc < 0:
                    np_[0] = n
                    return ERR_WINDOW
                r_tau[n] = self.tau
                r_sign[n] = <signed char> sign
                r_vol[n] = vol
                r_level[n] = level
                r_bid[n] = pre_bid
                r_ask[n] = pre_ask
                r_bvol[n] = bid_vol
                r_avol[n] = ask_vol
                r_meta[n] = 0
                n += 1
                self.trades += 1
                self.last_sign = sign
                if fc and self.meta_style == META_LIMIT:
                    self.meta_executed += fc
                    if self.meta_executed >= self.meta_target:
                        self.meta_style = META_NONE
                        np_[0] = n
                        return STOP_META
                if n >= end:
                    np_[0] = n
                    return STOP_TRADES
            elif x < mu + meta_rate:
                if self.meta_style == META_MARKET:
                    self.last_event = EV_META_TRADE
                    self.n_meta_trade_ev += 1
                    bid_vol = self.vol[pmod(self.bid, self.width)]
                    ask_vol = self.vol[pmod(self.ask, self.width)]
                    vol = self.draw_volume(self.meta_kind, self.meta_param, ask_vol)
                    if self.meta_target > 0 and vol > self.meta_target - self.meta_executed:
                        vol = self.meta_target - self.meta_executed
                    pre_bid = self.bid
                    pre_ask = self.ask
                    fc = self.execute(1, vol, &level)
                    if fc < 0:
                        np_[0] = n
                        return ERR_WINDOW
                    r_tau[n] = self.tau
                    r_sign[n] = 1
                    r_vol[n] = vol
                    r_level[n] = level
                    r_bid[n] = pre_bid
                    r_ask[n] = pre_ask
                    r_bvol[n] = bid_vol
                    r_avol[n] = ask_vol
                    r_meta[n] = 1
                    n += 1
                    self.trades += 1
                    self.last_sign = 1
                    self.meta_executed += vol
                    if self.meta_target > 0 and self.meta_executed >= self.meta_target:
                        self.meta_style = META_NONE
                        np_[0] = n
                        return STOP_META
                    if n >= end:
                        np_[0] = n
                        return STOP_TRADES
                else:
                    self.last_event = EV_META_DEPOSIT
                    self.n_meta_deposit_ev += 1
                    v_bid = self.vol[pmod(self.bid, self.width)]
                    vol = <i64> floor(self.meta_fraction * v_bid)
                    if vol < 1:
                        vol = 1
                    if v_bid + vol >= LEVEL_VOLUME_LIMIT:
                        np_[0] = n
                        return ERR_OVERFLOW
                    self.vol[pmod(self.bid, self.width)] += vol
                    self.flag[pmod(self.bid, self.width)] += vol
                    self.total_volume += vol
            elif x < mu + meta_rate + dep_rate:
                self.last_event = EV_DEPOSIT
                self.n_deposit_ev += 1
                side = SELL if next_u(self.bg) < 0.5 * (1.0 + alpha * self.last_sign) else BUY
                err = self.deposit(side)
                if err:
                    np_[0] = n
                    return ERR_WINDOW
            else:
                self.last_event = EV_CANCEL
                self.n_cancel_ev += 1
                err = self.cancel()
                if err:
                    np_[0] = n
                    return ERR_WINDOW
