"""Statistical observables of simulated price and order-flow series.

Accumulators collect sums per replica and merge by addition, so the
merged result does not depend on how replicas were grouped. Fits return
a :class:`FitResult` carrying the estimate with its standard error, the
range used and the number of points.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class FitResult:
    estimate: float
    stderr: float
    range: tuple
    n: int
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def within(self, lo, hi):
        return lo <= self.estimate <= hi

    def as_dict(self):
        d = dict(estimate=self.estimate, stderr=self.stderr, range=list(self.range), n=self.n,
                 flags=list(self.flags))
        d.update(self.extra)
        return d


def weighted_linear_fit(x, y, sigma=None):
    """Least squares ``y = a + b x``; returns (a, b, se_a, se_b, r2).

    With ``sigma`` the fit is weighted by ``1/sigma**2`` and parameter
    errors come from the weighted normal equations scaled by the reduced
    chi-square (so they reflect the actual scatter).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2
    A = np.column_stack([np.ones_like(x), x])
    aw = A * w[:, None]
    cov = np.linalg.inv(A.T @ aw)
    coef = cov @ (aw.T @ y)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    chi2 = float((w * resid ** 2).sum())
    cov = cov * (chi2 / dof)
    ybar = float((w * y).sum() / w.sum())
    ss_tot = float((w * (y - ybar) ** 2).sum())
    r2 = 1.0 - chi2 / ss_tot if ss_tot > 0 else 1.0
    return coef[0], coef[1], math.sqrt(max(cov[0, 0], 0)), math.sqrt(max(cov[1, 1], 0)), r2


def power_law_fit(x, y, yerr=None, x_range=None, min_points=2):
    """Fit ``y = A x**b`` on a log-log scale; estimate is ``b``.

    Points with nonpositive ``y`` are dropped and flagged.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = np.isfinite(y) & (x > 0)
    if x_range is not None:
        sel &= (x >= x_range[0]) & (x <= x_range[1])
    flags = []
    pos = sel & (y > 0)
    if (sel & ~pos).any():
        flags.append(f"excluded {int((sel & ~pos).sum())} nonpositive points")
    rng = tuple(x_range) if x_range is not None else (float(x.min()), float(x.max()))
    if pos.sum() < max(min_points, 2):
        return FitResult(math.nan, math.nan, rng, int(pos.sum()), flags + ["too few points"])
    sig = None
    if yerr is not None:
        e = np.asarray(yerr, dtype=float)[pos] / y[pos]
        if np.all(e > 0) and np.all(np.isfinite(e)):
            sig = e
    a, b, se_a, se_b, r2 = weighted_linear_fit(np.log(x[pos]), np.log(y[pos]), sig)
    return FitResult(float(b), float(se_b), rng, int(pos.sum()), flags,
                     dict(prefactor=float(math.exp(a)), r2=float(r2)))


def log_lags(max_lag, per_decade=10):
    """Integer lags 1..max_lag, log-spaced, always including powers of ten."""
    n = int(math.ceil(math.log10(max_lag) * per_decade)) + 1
    lags = np.unique(np.round(np.logspace(0, math.log10(max_lag), n)).astype(np.int64))
    tens = 10 ** np.arange(0, int(math.log10(max_lag)) + 1)
    return np.union1d(lags, tens[tens <= max_lag])


# -- variogram / signature plot --------------------------------------------

class VariogramAcc:
    """Sums of squared price changes over trade-time lags.

    Each added series contributes every overlapping window. The standard
    error of ``D(t)`` is the spread of the per-series estimates when at
    least four series were added; with fewer it falls back to
    ``sqrt(Var(d^2) * t / n)``, i.e. counting ``n / t`` independent windows.
    """

    def __init__(self, lags):
        self.lags = np.asarray(lags, dtype=np.int64)
        k = len(self.lags)
        self.s1 = np.zeros(k)
        self.s2 = np.zeros(k)
        self.n = np.zeros(k, dtype=np.int64)
        self.b1 = np.zeros(k)
        self.b2 = np.zeros(k)
        self.nb = np.zeros(k, dtype=np.int64)
        self.parts = []     # per-series (sum d^2, count) for leave-one-out errors

    @classmethod
    def from_values(cls, lags, d, count=1):
        """Accumulator holding exactly ``D(lags) = d`` (analytic test input)."""
        acc = cls(lags)
        acc.n[:] = count
        acc.s1[:] = np.asarray(d, dtype=float) * count
        acc.s2[:] = acc.s1 ** 2 / count
        return acc

    def add_series(self, p):
        p = np.asarray(p, dtype=float)
        ps1 = np.zeros(len(self.lags))
        pn = np.zeros(len(self.lags), dtype=np.int64)
        for i, lag in enumerate(self.lags):
            if lag >= len(p):
                continue
            d2 = (p[lag:] - p[:-lag]) ** 2
            m = float(d2.mean())
            ps1[i] = d2.sum()
            pn[i] = d2.size
            self.s1[i] += d2.sum()
            self.s2[i] += (d2 * d2).sum()
            self.n[i] += d2.size
            self.b1[i] += m
            self.b2[i] += m * m
            self.nb[i] += 1
        self.parts.append((ps1, pn))

    def merge(self, other):
        if not np.array_equal(self.lags, other.lags):
            raise ValueError("lag grids differ")
        out = VariogramAcc(self.lags)
        for name in ("s1", "s2", "n", "b1", "b2", "nb"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.parts = self.parts + other.parts
        return out

    def leave_one_out(self):
        """Pooled ``D`` per lag with each series removed in turn."""
        for ps1, pn in self.parts:
            n = self.n - pn
            with np.errstate(invalid="ignore", divide="ignore"):
                yield np.where(n > 0, (self.s1 - ps1) / np.maximum(n, 1), np.nan)

    def _stats(self):
        ok = self.n > 0
        d = np.full(len(self.lags), np.nan)
        se = np.full(len(self.lags), np.nan)
        d[ok] = self.s1[ok] / self.n[ok]
        var = np.zeros(len(self.lags))
        var[ok] = np.maximum(self.s2[ok] / self.n[ok] - d[ok] ** 2, 0.0)
        se[ok] = np.sqrt(var[ok] * np.minimum(self.lags[ok], self.n[ok]) / self.n[ok])
        many = self.nb >= 4
        if many.any():
            bm = self.b1[many] / self.nb[many]
            bv = np.maximum(self.b2[many] / self.nb[many] - bm ** 2, 0.0)
            se[many] = np.sqrt(bv / (self.nb[many] - 1))
        return ok, d, se

    def signature(self):
        """Rows ``(t, D, sigma2, stderr, n)`` for lags with data."""
        ok, d, se = self._stats()
        return [(int(t), float(d[i]), float(d[i] / t), float(se[i]), int(self.n[i]))
                for i, t in enumerate(self.lags) if ok[i]]

    def value(self, lag):
        ok, d, se = self._stats()
        idx = np.flatnonzero(self.lags == lag)
        if not idx.size or not ok[idx[0]]:
            raise KeyError(f"lag {lag} not recorded")
        return float(d[idx[0]]), float(se[idx[0]])


def signature(acc):
    return acc.signature()


def phase_statistic(acc, short=10, long=1000):
    """``S = ln(D(long) / (long/short * D(short)))``; 0 for diffusion.

    Returns ``(S, stderr)`` with the two lags treated as independent.
    """
    d1, e1 = acc.value(short)
    d3, e3 = acc.value(long)
    if d1 <= 0 or d3 <= 0:
        raise ValueError("nonpositive variogram value")
    s = math.log(d3 / (d1 * long / short))
    return s, math.sqrt((e1 / d1) ** 2 + (e3 / d3) ** 2)


def hurst_fit(acc, t_range):
    rows = [r for r in acc.signature() if t_range[0] <= r[0] <= t_range[1]]
    if len(rows) < 8:
        return FitResult(math.nan, math.nan, tuple(t_range), len(rows), ["fewer than 8 lags"])
    t, d, _, se, _ = map(np.array, zip(*rows))
    fit = power_law_fit(t, d, se, t_range)
    h, h_se = fit.estimate / 2.0, fit.stderr / 2.0
    extra = dict(fit.extra, fit_stderr=h_se)
    if len(acc.parts) >= 4:
        # neighbouring lags are strongly correlated, so the scatter about the
        # line understates the error; use the replica jackknife when possible
        lag_idx = np.searchsorted(acc.lags, t)
        est = np.array([power_law_fit(t, dj[lag_idx], se, t_range).estimate / 2.0
                        for dj in acc.leave_one_out()])
        k = len(est)
        jk = math.sqrt((k - 1) / k * ((est - est.mean()) ** 2).sum())
        extra["jackknife_stderr"] = jk
        h_se = max(h_se, jk)
    return FitResult(h, h_se, fit.range, fit.n, fit.flags, extra)


def confined_fit(acc, t_range):
    """Fit the saturating variance ``D(t) = sigma2_inf - c / sqrt(t)``;
    estimate is ``sigma2_inf``, ``extra['r2']`` the goodness of fit."""
    rows = [r for r in acc.signature() if t_range[0] <= r[0] <= t_range[1]]
    if len(rows) < 3:
        return FitResult(math.nan, math.nan, tuple(t_range), len(rows), ["too few lags"])
    t, d, s2, se, _ = map(np.array, zip(*rows))
    sig = se if np.all(se > 0) else None
    a, b, se_a, se_b, r2 = weighted_linear_fit(1.0 / np.sqrt(t), d, sig)
    return FitResult(float(a), float(se_a), tuple(t_range), len(rows), [],
                     dict(c=float(-b), c_stderr=float(se_b), r2=float(r2)))


# -- sign autocorrelation --------------------------------------------------

def sign_autocorrelation(signs, max_lag):
    """Connected autocorrelation ``C(k)`` for ``k = 0 .. max_lag`` (FFT)."""
    x = np.asarray(signs, dtype=float)
    x = x - x.mean()
    n = len(x)
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:max_lag + 1]
    return acf / (n - np.arange(max_lag + 1))


def sign_exponent_fit(acf, lag_range=(10, 1000), n_series=1, n_total=None):
    """Fit ``C(k) ~ k**-gamma`` on log-spaced lags; estimate is ``gamma``."""
    lags = log_lags(len(acf) - 1, 20)
    lags = lags[(lags >= lag_range[0]) & (lags <= lag_range[1])]
    fit = power_law_fit(lags, acf[lags], None, lag_range)
    return FitResult(-fit.estimate, fit.stderr, fit.range, fit.n, fit.flags, fit.extra)


# -- impact ----------------------------------------------------------------

class ImpactAcc:
    """Impact statistics per target volume ``Q`` plus the relaxation path
    after completion (``post_horizon`` trades). Incomplete trajectories are
    counted but excluded from the averages."""

    def __init__(self, q_grid, post_horizon=0, plateau_window=None):
        self.q_grid = np.asarray(q_grid, dtype=np.int64)
        k = len(self.q_grid)
        self.post_horizon = int(post_horizon)
        h = self.post_horizon + 1
        self.plateau_window = plateau_window or max(1, self.post_horizon // 5)
        self.n = np.zeros(k, dtype=np.int64)
        self.incomplete = np.zeros(k, dtype=np.int64)
        self.s1 = np.zeros(k)
        self.s2 = np.zeros(k)
        self.post1 = np.zeros((k, h))
        self.post2 = np.zeros((k, h))
        self.drop1 = np.zeros((k, h))
        self.drop2 = np.zeros((k, h))
        self.plat1 = np.zeros(k)
        self.plat2 = np.zeros(k)

    def _index(self, q):
        idx = np.flatnonzero(self.q_grid == q)
        if not idx.size:
            raise KeyError(f"Q={q} not in grid")
        return idx[0]

    def add(self, q, traj):
        i = self._index(q)
        if not traj.complete:
            self.incomplete[i] += 1
            return
        imp = traj.impact
        self.n[i] += 1
        self.s1[i] += imp
        self.s2[i] += imp * imp
        if self.post_horizon:
            path = traj.post_impact[:self.post_horizon + 1]
            drop = imp - path
            self.post1[i] += path
            self.post2[i] += path * path
            self.drop1[i] += drop
            self.drop2[i] += drop * drop
            plat = float(path[-self.plateau_window:].mean())
            self.plat1[i] += plat
            self.plat2[i] += plat * plat

    def merge(self, other):
        out = ImpactAcc(self.q_grid, self.post_horizon, self.plateau_window)
        for name in ("n", "incomplete", "s1", "s2", "post1", "post2", "drop1", "drop2",
                     "plat1", "plat2"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        return out

    @staticmethod
    def _mean_se(s1, s2, n):
        n = np.asarray(n, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = s1 / n
            var = np.maximum(s2 / n - m * m, 0.0) * n / np.maximum(n - 1, 1)
            return m, np.sqrt(var / n)

    def table(self):
        """Rows ``(Q, I_mean, I_stderr, n)``."""
        m, se = self._mean_se(self.s1, self.s2, self.n)
        return [(int(q), float(m[i]), float(se[i]), int(self.n[i]))
                for i, q in enumerate(self.q_grid)]

    def decay(self, q=None):
        """``(t, mean I_{T+t}, stderr, mean drop I_T - I_{T+t}, drop stderr)``."""
        i = self._index(q if q is not None else self.q_grid[-1])
        n = self.n[i]
        m, se = self._mean_se(self.post1[i], self.post2[i], n)
        dm, dse = self._mean_se(self.drop1[i], self.drop2[i], n)
        t = np.arange(self.post_horizon + 1)
        return t, m, se, dm, dse

    def plateau(self, q=None):
        i = self._index(q if q is not None else self.q_grid[-1])
        m, se = self._mean_se(self.plat1[i], self.plat2[i], self.n[i])
        return float(m), float(se)


def impact_fit(acc, q_range, min_bins=6, min_samples=100):
    rows = [r for r in acc.table() if q_range[0] <= r[0] <= q_range[1]]
    flags = []
    good = [r for r in rows if r[3] >= min_samples]
    if len(good) < len(rows):
        flags.append(f"{len(rows) - len(good)} bins below {min_samples} samples")
    if len(good) < min_bins:
        flags.append(f"fewer than {min_bins} usable bins")
        good = [r for r in rows if r[3] >= 2]
    if len(good) < 2:
        return FitResult(math.nan, math.nan, tuple(q_range), len(good), flags)
    q, m, se, _ = map(np.array, zip(*good))
    fit = power_law_fit(q, m, se, q_range)
    fit.flags = flags + fit.flags
    return fit


def decay_curve(acc, q=None, early=(1, 30)):
    """Mean relaxation path with an early-time fit of the drop
    ``I_T - I_{T+t} ~ t**theta`` and the long-time plateau."""
    t, m, se, dm, dse = acc.decay(q)
    fit = power_law_fit(t, dm, dse, early)
    plat, plat_se = acc.plateau(q)
    fit.extra.update(plateau=plat, plateau_stderr=plat_se)
    rows = [(int(ti), float(mi), float(si)) for ti, mi, si in zip(t, m, se)]
    return rows, fit


# -- book profile ----------------------------------------------------------

class ProfileAcc:
    """Mean latent volume versus distance from the mid-price.

    Offsets are kept in half ticks, ``2 * level - (bid + ask)``; positive
    offsets are the ask side.
    """

    def __init__(self, max_offset_ticks):
        self.m = int(max_offset_ticks) * 2
        self.ask1 = np.zeros(self.m + 1)
        self.ask2 = np.zeros(self.m + 1)
        self.bid1 = np.zeros(self.m + 1)
        self.bid2 = np.zeros(self.m + 1)
        self.ask_n = np.zeros(self.m + 1, dtype=np.int64)
        self.bid_n = np.zeros(self.m + 1, dtype=np.int64)
        self.count = 0

    def add_snapshot(self, levels, volumes, bid, ask):
        key = 2 * np.asarray(levels, dtype=np.int64) - (bid + ask)
        vol = np.asarray(volumes, dtype=float)
        up = (key > 0) & (key <= self.m)
        dn = (key < 0) & (key >= -self.m)
        self.ask1[key[up]] += vol[up]
        self.ask2[key[up]] += vol[up] ** 2
        self.ask_n[key[up]] += 1
        self.bid1[-key[dn]] += vol[dn]
        self.bid2[-key[dn]] += vol[dn] ** 2
        self.bid_n[-key[dn]] += 1
        self.count += 1

    def merge(self, other):
        out = ProfileAcc(self.m // 2)
        for name in ("ask1", "ask2", "bid1", "bid2", "ask_n", "bid_n", "count"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        return out

    def side(self, which):
        s1, s2, n = ((self.ask1, self.ask2, self.ask_n) if which == "ask"
                     else (self.bid1, self.bid2, self.bid_n))
        k = np.flatnonzero(n > 0)
        mean = s1[k] / n[k]
        var = np.maximum(s2[k] / n[k] - mean ** 2, 0.0)
        return k / 2.0, mean, np.sqrt(var / n[k])


def profile_compare(acc, depth, p_star, bands=((0.5, 1.0), (1.0, 2.0), (2.0, 3.0))):
    """Measured mean profile against ``depth * (1 - exp(-p / p_star))``.

    ``p_star`` is in ticks. Returns the table rows ``(offset_ticks, side,
    mean_volume, mf_volume)`` and per-band relative deviations of the
    band-averaged volumes, ``{(side, lo, hi): deviation}``.
    """
    rows = []
    devs = {}
    for which in ("bid", "ask"):
        off, mean, _ = acc.side(which)
        mf = depth * (1.0 - np.exp(-off / p_star))
        sign = -1 if which == "bid" else 1
        rows.extend((float(sign * o), which.upper(), float(v), float(f))
                    for o, v, f in zip(off, mean, mf))
        for lo, hi in bands:
            sel = (off >= lo * p_star) & (off <= hi * p_star)
            if sel.any():
                devs[(which, lo, hi)] = float(mean[sel].mean() / mf[sel].mean() - 1.0)
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows, devs


# -- best-volume histogram -------------------------------------------------

class BestVolumeHist:
    """Log-binned histogram of the volume at the best quote hit by each trade."""

    def __init__(self, max_volume=10**8, per_decade=10):
        edges = np.unique(np.floor(np.logspace(0, math.log10(max_volume),
                                               int(math.log10(max_volume) * per_decade) + 1)))
        self.edges = edges.astype(np.int64)
        self.counts = np.zeros(len(self.edges) - 1, dtype=np.int64)
        self.overflow = 0

    def add(self, volumes):
        v = np.asarray(volumes, dtype=np.int64)
        idx = np.searchsorted(self.edges, v, side="right") - 1
        ok = (idx >= 0) & (idx < len(self.counts))
        self.counts += np.bincount(idx[ok], minlength=len(self.counts))
        self.overflow += int((~ok).sum())

    def merge(self, other):
        out = BestVolumeHist.__new__(BestVolumeHist)
        out.edges = self.edges
        out.counts = self.counts + other.counts
        out.overflow = self.overflow + other.overflow
        out.parts = self._leaves() + other._leaves()
        return out

    def _leaves(self):
        # replica histograms that went into a merge, for leave-one-out errors
        return getattr(self, "parts", None) or [self.counts.copy()]

    def _replace_counts(self, counts):
        out = BestVolumeHist.__new__(BestVolumeHist)
        out.edges, out.counts, out.overflow = self.edges, counts, 0
        return out

    def rows(self):
        """``(volume_bin_lo, volume_bin_hi, count)``; bins are ``[lo, hi)``."""
        return [(int(lo), int(hi), int(c))
                for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]

    def density(self):
        width = np.diff(self.edges).astype(float)
        total = max(int(self.counts.sum()), 1)
        centre = np.sqrt(self.edges[:-1] * (self.edges[1:] - 1.0).clip(min=1.0))
        return centre, self.counts / (width * total), np.sqrt(self.counts) / (width * total)


def best_volume_tail(hist, depth, v_range=None, min_count=10):
    """Tail exponent of the best-volume density over ``[10, 0.1 depth]``
    and the location of the large-volume peak (mode of the log-binned
    counts above ``0.1 depth``)."""
    lo, hi = v_range or (10.0, 0.1 * depth)
    x, dens, err = hist.density()
    inside = (hist.edges[:-1] >= lo) & (hist.edges[1:] - 1 <= hi) & (hist.counts >= min_count)
    flags = []
    if inside.sum() < 3:
        fit = FitResult(math.nan, math.nan, (lo, hi), int(inside.sum()),
                        ["insufficient tail samples; fit omitted"])
    else:
        fit = power_law_fit(x[inside], dens[inside], err[inside])
        fit.range = (lo, hi)
        leaves = hist._leaves()
        if len(leaves) >= 4:
            est = []
            for part in leaves:
                sub = hist._replace_counts(hist.counts - part)
                xs, ds, es = sub.density()
                est.append(power_law_fit(xs[inside], ds[inside], es[inside]).estimate)
            est = np.array(est)
            k = len(est)
            jk = math.sqrt((k - 1) / k * ((est - est.mean()) ** 2).sum())
            fit.extra["fit_stderr"] = fit.stderr
            fit.extra["jackknife_stderr"] = jk
            fit.stderr = max(fit.stderr, jk)
    high = hist.edges[:-1] >= 0.1 * depth
    if high.any() and hist.counts[high].sum() > 0:
        i = np.flatnonzero(high)[np.argmax(hist.counts[high])]
        fit.extra["peak"] = float(x[i])
    else:
        fit.extra["peak"] = math.nan
        flags.append("no large-volume samples")
    fit.flags += flags
    return fit


# -- Markovian book identities --------------------------------------------

class MarkovAcc:
    """Conditional averages in the frame of the last execution price.

    For trades ``0 .. K`` of an episode, with ``l_t`` the execution level of
    trade ``t`` and ``a_t, b_t`` the quotes just before trade ``t + 1``:
    ``pi_t = (a_t + b_t)/2 - l_t``, ``s_t = (a_t - b_t)/2``,
    ``dl_t = l_{t+1} - l_t`` and ``e_t`` the sign of trade ``t + 1``.
    Conditioning is on ``e_0``, the sign of the trade producing ``dl_0``.
    All values are in ticks.
    """

    FIELDS = ("pi", "s", "dl", "e", "r", "dl_dl0", "e_e0")

    def __init__(self, n_lags, phi_tilde):
        self.n_lags = int(n_lags)
        self.phi = float(phi_tilde)
        shape = (3, self.n_lags)  # unconditional, e0=+1, e0=-1
        self.n = np.zeros(shape, dtype=np.int64)
        self.s1 = {f: np.zeros(shape) for f in self.FIELDS}
        self.s2 = {f: np.zeros(shape) for f in self.FIELDS}
        # cross sums needed for the stderr of identity (iii-c)
        self.cross = np.zeros(shape)

    @staticmethod
    def episode_series(batch):
        lvl = batch["level"].astype(float)
        a = batch["ask"][1:].astype(float)
        b = batch["bid"][1:].astype(float)
        pi = 0.5 * (a + b) - lvl[:-1]
        s = 0.5 * (a - b)
        dl = np.diff(lvl)
        e = batch["sign"][1:].astype(float)
        return pi, s, dl, e

    def add_episode(self, batch):
        pi, s, dl, e = self.episode_series(batch)
        k = min(self.n_lags, len(pi))
        if k == 0:
            return
        vals = dict(pi=pi[:k], s=s[:k], dl=dl[:k], e=e[:k],
                    r=(dl - pi - self.phi * s)[:k], dl_dl0=(dl * dl[0])[:k], e_e0=(e * e[0])[:k])
        rows = (0, 1 if e[0] > 0 else 2)
        for row in rows:
            self.n[row, :k] += 1
            for f, v in vals.items():
                self.s1[f][row, :k] += v
                self.s2[f][row, :k] += v * v
            self.cross[row, :k] += vals["pi"] * vals["s"]

    def add_series(self, batch, episode_len, stride=None):
        """Cut a long record into episodes starting every ``stride`` trades."""
        stride = stride or episode_len
        n = len(batch)
        for start in range(0, n - episode_len, stride):
            sub = type(batch)({f: v[start:start + episode_len + 1] for f, v in batch.rec.items()},
                              batch.tick)
            self.add_episode(sub)

    def merge(self, other):
        out = MarkovAcc(self.n_lags, self.phi)
        out.n = self.n + other.n
        out.s1 = {f: self.s1[f] + other.s1[f] for f in self.FIELDS}
        out.s2 = {f: self.s2[f] + other.s2[f] for f in self.FIELDS}
        out.cross = self.cross + other.cross
        return out

    def mean(self, f, row=0):
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.s1[f][row] / self.n[row]

    def stderr(self, f, row=0):
        n = self.n[row].astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = self.s1[f][row] / n
            var = np.maximum(self.s2[f][row] / n - m * m, 0.0) * n / np.maximum(n - 1, 1)
            return np.sqrt(var / n)


def markov_check(acc):
    """Per-lag residuals of the Markovian book relations.

    (i)   <dl_t> - <pi_t> - phi <s_t>
    (ii)  connected <dl_t dl_0> minus
          s0 (1 - phi^2) (pi+ - pi-)/2 + s0 (1 - phi)^2 (s+ + s-)/2 g_t,
          with g_t measured from the same episodes and s0 = <s_0>
    (iii) a: <pi_t> - (pi+ + pi-)/2;  b: s+ - s-;
          c: (<pi_t> - pi+) + (<s_t> - s+)   [the e0 = +1 case]
    Returns a dict of arrays keyed by column name; lags with an empty
    conditional class are dropped.
    """
    phi = acc.phi
    ok = (acc.n[1] > 0) & (acc.n[2] > 0)
    t = np.arange(acc.n_lags)[ok]
    m = {f: [acc.mean(f, r)[ok] for r in range(3)] for f in acc.FIELDS}
    se = {f: [acc.stderr(f, r)[ok] for r in range(3)] for f in acc.FIELDS}
    pi, pip, pim = m["pi"]
    s, sp, sm = m["s"]
    dl = m["dl"][0]
    n = acc.n[0][ok].astype(float)
    s0 = float(acc.mean("s", 0)[0])
    dl0 = float(acc.mean("dl", 0)[0])
    e0 = float(acc.mean("e", 0)[0])
    g = (m["e_e0"][0] - m["e"][0] * e0) / (1.0 - phi) ** 2
    ac = m["dl_dl0"][0] - dl * dl0
    rhs = s0 * (1 - phi ** 2) * 0.5 * (pip - pim) + s0 * (1 - phi) ** 2 * 0.5 * (sp + sm) * g
    g_se = se["e_e0"][0] / (1.0 - phi) ** 2
    rhs_se = np.sqrt((s0 * (1 - phi ** 2) * 0.5) ** 2 * (se["pi"][1] ** 2 + se["pi"][2] ** 2)
                     + (s0 * (1 - phi) ** 2 * 0.5) ** 2
                     * ((se["s"][1] ** 2 + se["s"][2] ** 2) * g ** 2 + (sp + sm) ** 2 * g_se ** 2))
    ac_se = se["dl_dl0"][0]
    # (iii-a) and (iii-c) are linear in the two conditional classes:
    # <pi> - (pi+ + pi-)/2 = (f - 1/2)(pi+ - pi-) and
    # (<pi> - pi+) + (<s> - s+) = (1 - f)((pi- + s-) - (pi+ + s+)), f = n+/n
    frac = acc.n[1][ok] / n
    sum_se = []
    for row in (1, 2):
        nr = acc.n[row][ok].astype(float)
        mean = m["pi"][row] + m["s"][row]
        sq = (acc.s2["pi"][row] + acc.s2["s"][row] + 2 * acc.cross[row])[ok] / nr
        var = np.maximum(sq - mean ** 2, 0.0) * nr / np.maximum(nr - 1, 1)
        sum_se.append(np.sqrt(var / nr))
    c_plus = (pi - pip) + (s - sp)
    c_se = (1 - frac) * np.sqrt(sum_se[0] ** 2 + sum_se[1] ** 2)
    a_res = pi - 0.5 * (pip + pim)
    a_se = np.sqrt((frac - 0.5) ** 2 * (se["pi"][1] ** 2 + se["pi"][2] ** 2)
                   + (pip - pim) ** 2 * frac * (1 - frac) / n)
    return dict(
        t=t, n=n, pi_uncond=pi, pi_plus=pip, pi_minus=pim, s_uncond=s, s_plus=sp, s_minus=sm,
        dl_mean=dl, dl_stderr=se["dl"][0], pi_stderr=se["pi"][0], s_stderr=se["s"][0],
        resid_impact=m["r"][0], resid_impact_stderr=se["r"][0],
        ac_measured=ac, ac_predicted=rhs, resid_ac=ac - rhs,
        resid_ac_stderr=np.sqrt(ac_se ** 2 + rhs_se ** 2), g=g,
        resid_pi_avg=a_res, resid_pi_avg_stderr=a_se,
        resid_s_sym=sp - sm, resid_s_sym_stderr=np.sqrt(se["s"][1] ** 2 + se["s"][2] ** 2),
        resid_cond=c_plus, resid_cond_stderr=c_se,
        trend=pi + phi * s,
    )


# -- CSV -------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_variogram(path, acc):
    write_csv(path, ("t", "D", "sigma2", "stderr", "n"), acc.signature())


def write_impact(path, acc):
    write_csv(path, ("Q", "I_mean", "I_stderr", "n"), acc.table())


def write_profile(path, rows):
    write_csv(path, ("offset_ticks", "side", "mean_volume", "mf_volume"), rows)


def write_bestvol(path, hist):
    write_csv(path, ("volume_bin_lo", "volume_bin_hi", "count"), hist.rows())


MARKOV_COLUMNS = ("t", "pi_uncond", "pi_plus", "pi_minus", "s_uncond", "dl_mean",
                  "resid_impact", "resid_ac", "pi_stderr", "s_stderr", "dl_stderr",
                  "resid_impact_stderr", "resid_ac_stderr", "s_plus", "s_minus",
                  "resid_pi_avg", "resid_pi_avg_stderr", "resid_s_sym", "resid_s_sym_stderr",
                  "resid_cond", "resid_cond_stderr", "g", "n")


def write_markov(path, report):
    cols = [report[c] for c in MARKOV_COLUMNS]
    rows = [tuple(int(c[i]) if name in ("t", "n") else float(c[i])
                  for name, c in zip(MARKOV_COLUMNS, cols)) for i in range(len(report["t"]))]
    write_csv(path, MARKOV_COLUMNS, rows)
