"""Stochastic input streams: market-order signs, market-order volumes and
the limit-order side chooser.

Every sampler here draws doubles with ``rng.random()`` one at a time and
transforms them with plain arithmetic. The compiled kernel performs the
same transformations on the same bit-generator stream, so both backends
produce identical sequences for identical seeds.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

BUY = -1
SELL = 1

TREND_TABLE_SIZE = 10**6


class ConfigError(ValueError):
    """Invalid model parameter."""


class SignMode(enum.IntEnum):
    IID = 0
    LMF = 1


class PolicyKind(enum.IntEnum):
    UNIT = 0
    GREEDY = 1
    ZETA = 2
    PSI = 3


@lru_cache(maxsize=16)
def trend_table(gamma, size=TREND_TABLE_SIZE):
    """Cumulative distribution of trend lengths ``L = 1 .. size``.

    ``P(L) ∝ L**-(gamma + 2)``, so that ``P(L >= x) ~ x**-(gamma + 1)`` and the
    sign autocorrelation decays as ``t**-gamma``. The mass beyond ``size`` is
    approximated by the integral of the continuous tail and returned as
    ``tail``; ``cdf[-1] + tail == 1``.
    """
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    a = gamma + 2.0
    lengths = np.arange(1, size + 1, dtype=np.float64)
    weights = lengths ** -a
    tail_w = (size + 0.5) ** (1.0 - a) / (a - 1.0)
    z = weights.sum() + tail_w
    cdf = np.cumsum(weights) / z
    cdf.setflags(write=False)
    return cdf, tail_w / z


def trend_pmf(gamma, lengths):
    """Exact probabilities of the given trend lengths (all ``<= table size``)."""
    cdf, _ = trend_table(gamma)
    lengths = np.asarray(lengths, dtype=np.int64)
    lo = np.where(lengths > 1, cdf[np.maximum(lengths - 2, 0)], 0.0)
    return cdf[lengths - 1] - lo


def trend_length_from_uniform(u, cdf, gamma):
    """Inverse-CDF lookup, with a Pareto tail beyond the table."""
    n = cdf.shape[0]
    if u < cdf[n - 1]:
        lo, hi = 0, n - 1
        while lo < hi:
            mid = (lo + hi) >> 1
            if cdf[mid] > u:
                hi = mid
            else:
                lo = mid + 1
        return lo + 1
    v = (1.0 - u) / (1.0 - cdf[n - 1])
    if v <= 0.0:
        v = 1e-300
    length = math.floor((n + 0.5) * v ** (-1.0 / (gamma + 1.0)) + 0.5)
    return int(min(max(length, n + 1), 2**62))


@lru_cache(maxsize=16)
def _residual_table(gamma):
    """Cumulative law of the remaining trend length seen from a random time.

    In the stationary regime the number of signs left in the current trend,
    counting the present one, is ``R`` with ``P(R = m) = P(L >= m) / E[L]``.
    Returns ``(cdf over m = 1 .. size, mean trend length)``.
    """
    cdf, tail = trend_table(gamma)
    surv = np.empty(cdf.shape[0])
    surv[0] = 1.0
    surv[1:] = 1.0 - cdf[:-1]
    n = cdf.shape[0]
    # continuous tail beyond the table: P(L >= x) ~ tail * ((n + 0.5) / x)**(gamma + 1)
    tail_sum = tail * (n + 0.5) / gamma
    mean_len = surv.sum() + tail_sum
    rcdf = np.cumsum(surv) / mean_len
    rcdf.setflags(write=False)
    return rcdf, mean_len


def lmf_autocorrelation(gamma, max_lag):
    """Exact sign autocorrelation ``g_k = P(R > k)`` of the stationary stream."""
    rcdf, _ = _residual_table(gamma)
    k = np.arange(max_lag + 1)
    g = np.ones(max_lag + 1)
    g[1:] = 1.0 - rcdf[np.minimum(k[1:] - 1, rcdf.shape[0] - 1)]
    return g


class SignStream:
    """Market-order sign generator.

    LMF mode emits trends of a random sign whose lengths follow a discrete
    power law; IID mode is a fair coin. The stream owns its generator.
    """

    def __init__(self, mode=SignMode.LMF, gamma=0.5, rng=None, seed=None):
        self.mode = SignMode(mode)
        self.gamma = float(gamma)
        if self.mode == SignMode.LMF:
            self._cdf, _ = trend_table(self.gamma)
        else:
            self._cdf = None
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.trend_sign = 0
        self.remaining = 0
        # uniforms drawn ahead by generate(), consumed before the generator
        self._ahead = np.empty(0)
        self._ahead_pos = 0

    def _uniform(self):
        if self._ahead_pos < self._ahead.shape[0]:
            u = float(self._ahead[self._ahead_pos])
            self._ahead_pos += 1
            return u
        return self.rng.random()

    def _uniforms(self, n):
        have = self._ahead.shape[0] - self._ahead_pos
        if have >= n:
            u = self._ahead[self._ahead_pos:self._ahead_pos + n]
            self._ahead_pos += n
            return u
        u = np.concatenate([self._ahead[self._ahead_pos:], self.rng.random(n - have)])
        self._ahead = np.empty(0)
        self._ahead_pos = 0
        return u

    def next_sign(self):
        if self.mode == SignMode.IID:
            return 1 if self._uniform() < 0.5 else -1
        if self.remaining == 0:
            self.remaining = trend_length_from_uniform(self._uniform(), self._cdf, self.gamma)
            self.trend_sign = 1 if self._uniform() < 0.5 else -1
        self.remaining -= 1
        return self.trend_sign

    def stationary_start(self):
        """Place the stream at a random time of a stationary LMF process,
        so that the autocorrelation is :func:`lmf_autocorrelation` from the
        first sign on."""
        if self.mode != SignMode.LMF:
            return
        rcdf, _ = _residual_table(self.gamma)
        u = self._uniform()
        n = rcdf.shape[0]
        if u < rcdf[-1]:
            self.remaining = int(np.searchsorted(rcdf, u, side="right")) + 1
        else:
            v = max((1.0 - u) / (1.0 - rcdf[-1]), 1e-300)
            self.remaining = int(min(math.floor(n * v ** (-1.0 / self.gamma)) + 1, 2**62))
        self.trend_sign = 1 if self._uniform() < 0.5 else -1

    def generate(self, n):
        """Vectorised equivalent of ``n`` calls to :meth:`next_sign`."""
        if self.mode == SignMode.IID:
            return np.where(self._uniforms(n) < 0.5, 1, -1).astype(np.int8)
        out = np.empty(n, dtype=np.int8)
        filled = min(self.remaining, n)
        out[:filled] = self.trend_sign
        self.remaining -= filled
        cdf = self._cdf
        while filled < n:
            block = max(64, (n - filled) // 4)
            u = self._uniforms(2 * block).reshape(block, 2)
            lengths = np.searchsorted(cdf, u[:, 0], side="right").astype(np.int64) + 1
            for i in np.flatnonzero(u[:, 0] >= cdf[-1]):
                lengths[i] = trend_length_from_uniform(u[i, 0], cdf, self.gamma)
            signs = np.where(u[:, 1] < 0.5, 1, -1).astype(np.int8)
            ends = filled + np.cumsum(lengths)
            take = min(int(np.searchsorted(ends, n, side="left")) + 1, block)
            seg = lengths[:take].copy()
            over = max(int(ends[take - 1]) - n, 0)
            seg[-1] -= over
            total = int(seg.sum())
            out[filled:filled + total] = np.repeat(signs[:take], seg)
            filled += total
            self.remaining = over
            self.trend_sign = int(signs[take - 1])
            if take < block:
                self._ahead = u[take:].ravel().copy()
                self._ahead_pos = 0
        return out


@dataclass(frozen=True)
class VolumePolicy:
    """Market-order size rule relative to the volume at the opposite best."""

    kind: PolicyKind = PolicyKind.ZETA
    zeta: float = 1.0
    psi: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind == PolicyKind.ZETA and not self.zeta > 0:
            raise ConfigError(f"zeta must be > 0, got {self.zeta}")
        if self.kind == PolicyKind.PSI and not 0.0 <= self.psi <= 1.0:
            raise ConfigError(f"psi must lie in [0, 1], got {self.psi}")

    @property
    def param(self):
        return self.zeta if self.kind == PolicyKind.ZETA else self.psi

    def draw(self, v_best, rng):
        return draw_volume(self.kind, self.param, v_best, rng.random if self.kind == PolicyKind.ZETA else None)


def draw_volume(kind, param, v_best, uniform=None):
    """Volume of one market order hitting a best level of ``v_best`` units."""
    if kind == PolicyKind.UNIT:
        return 1
    if kind == PolicyKind.GREEDY:
        return v_best
    if kind == PolicyKind.ZETA:
        u = uniform()
        f = 1.0 - (1.0 - u) ** (1.0 / param)
        v = math.floor(f * v_best)
    else:
        v = math.floor(float(v_best) ** param)
    if v < 1:
        return 1
    return v if v < v_best else v_best


@dataclass
class RefillPolicy:
    """Limit-order side chooser biased by the last market-order sign."""

    alpha: float = 0.0
    last_market_sign: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")

    def p_sell(self):
        return 0.5 * (1.0 + self.alpha * self.last_market_sign)

    def side(self, rng):
        return SELL if rng.random() < self.p_sell() else BUY


# -- samplers shared with the kernels -------------------------------------

LOGFACT_TABLE_SIZE = 256
_LOGFACT = np.array([math.lgamma(k + 1.0) for k in range(LOGFACT_TABLE_SIZE)])
_LOGFACT.setflags(write=False)


def logfact_table():
    return _LOGFACT


def log_factorial(k):
    if k < LOGFACT_TABLE_SIZE:
        return float(_LOGFACT[k])
    x = k + 1.0
    # Stirling series for lgamma(x), accurate to ~1e-15 for x > 256
    return (x - 0.5) * math.log(x) - x + 0.91893853320467274178 + (
        1.0 / 12.0 - (1.0 / 360.0 - 1.0 / (1260.0 * x * x)) / (x * x)) / x


def poisson_from(uniform, lam):
    """Poisson variate from a stream of uniforms (Knuth below 10, PTRS above)."""
    if lam <= 0.0:
        return 0
    if lam < 10.0:
        limit = math.exp(-lam)
        k = 0
        prod = uniform()
        while prod > limit:
            k += 1
            prod *= uniform()
        return k
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = uniform() - 0.5
        v = uniform()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return k
        if k < 0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - log_factorial(k)):
            return k
