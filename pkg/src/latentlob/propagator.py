"""Linear propagator model of price formation.

The price after trade ``t`` is ``p_t = sum_{t' < t} G_{t - t'} eps_{t'}``,
with signs of mean ``phi`` and connected covariance ``(1 - phi)^2 g``.
The sign flow is a meta-order of participation ``phi`` (always +1)
superposed on a background stream whose autocorrelation is ``g``. For
that flow the lag-0 covariance is ``1 - phi^2``, so the effective
``g_0`` is ``(1 + phi) / (1 - phi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flow import SignMode, SignStream, lmf_autocorrelation


@dataclass(frozen=True)
class PropagatorSpec:
    """Kernel ``G`` and sign correlation ``g`` tabulated on lags ``0 .. horizon``."""

    kernel: np.ndarray
    g: np.ndarray
    phi: float = 0.0
    g_inf: float = 0.0
    signs: str = "custom"   # generator behind g: "iid", "lmf" or "custom"
    gamma: float | None = None

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if k.ndim != 1 or g.shape != k.shape:
            raise ValueError("kernel and g must be 1-d arrays of equal length")
        if not 0.0 <= self.phi < 1.0:
            raise ValueError("phi must lie in [0, 1)")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "g", g)

    @property
    def horizon(self):
        return len(self.kernel) - 1

    @classmethod
    def build(cls, horizon, *, g0=1.0, beta=0.0, t0=1.0, kernel=None, g_inf=None, phi=0.0,
              signs="iid", gamma=0.5, g=None):
        """Parametric ``G_t = g0 (t0 + t)**-beta`` unless ``kernel`` is given;
        ``signs`` picks the background correlation: "iid", "lmf" (exact
        autocorrelation of the trend generator) or "power" (``|t|**-gamma``)."""
        if not 0.0 <= phi < 1.0:
            raise ValueError("phi must lie in [0, 1)")
        if kernel is None:
            kernel = g0 * (t0 + np.arange(horizon + 1, dtype=float)) ** -beta
            if g_inf is None:
                g_inf = g0 if beta == 0 else 0.0
        kernel = np.asarray(kernel, dtype=float)[:horizon + 1]
        if g is None:
            if signs == "iid":
                g = np.zeros(horizon + 1)
                g[0] = 1.0
            elif signs == "lmf":
                g = lmf_autocorrelation(gamma, horizon)
            elif signs == "power":
                g = np.ones(horizon + 1)
                g[1:] = np.arange(1, horizon + 1, dtype=float) ** -gamma
            else:
                raise ValueError(f"unknown sign model {signs!r}")
        g = np.array(g, dtype=float)[:horizon + 1]
        g[0] = (1.0 + phi) / (1.0 - phi)
        return cls(kernel, g, phi, float(g_inf or 0.0), signs, gamma)


def prop_impact(spec, t):
    """Mean price change after ``t`` trades, split into the permanent part
    ``phi G_inf t`` and the transient remainder. Returns (total, linear, transient)."""
    if t > spec.horizon:
        raise ValueError("t beyond the kernel horizon")
    g = spec.kernel[1:t + 1]
    total = spec.phi * g.sum()
    linear = spec.phi * spec.g_inf * t
    transient = spec.phi * (g - spec.g_inf).sum()
    return float(total), float(linear), float(transient)


def prop_variance(spec, t):
    """``(1 - phi)^2 sum_{i, j = 1..t} G_i G_j g_{|i - j|}`` by direct summation."""
    if t > spec.horizon:
        raise ValueError("t beyond the kernel horizon")
    if t == 0:
        return 0.0
    gk = spec.kernel[1:t + 1]
    idx = np.abs(np.subtract.outer(np.arange(t), np.arange(t)))
    return float((1.0 - spec.phi) ** 2 * gk @ spec.g[idx] @ gk)


def simulate_paths(spec, t_points, n_paths, seed=0, chunk=1000):
    """Monte Carlo price changes ``p_t - p_0`` at each ``t`` in ``t_points``.

    Each sign is the meta-order's +1 with probability ``phi`` and otherwise
    the current value of a background stream (IID, or LMF started in its
    stationary state). Returns an array of shape ``(n_paths, len(t_points))``.
    """
    if spec.signs not in ("iid", "lmf"):
        raise ValueError("Monte Carlo needs an 'iid' or 'lmf' sign model")
    t_points = np.asarray(t_points, dtype=np.int64)
    tmax = int(t_points.max())
    ss = np.random.SeedSequence(seed)
    meta_rng = np.random.default_rng(ss.spawn(1)[0])
    mode = SignMode.LMF if spec.signs == "lmf" else SignMode.IID
    # weights[j, k]: contribution of the sign at time j to p at t_points[k]
    j = np.arange(tmax)[:, None]
    lag = t_points[None, :] - j
    weights = np.where(lag >= 1, spec.kernel[np.clip(lag, 0, spec.horizon)], 0.0)
    out = np.empty((n_paths, len(t_points)))
    children = ss.spawn(n_paths)
    for start in range(0, n_paths, chunk):
        stop = min(start + chunk, n_paths)
        eps = np.empty((stop - start, tmax))
        for r in range(start, stop):
            stream = SignStream(mode, spec.gamma or 0.5, rng=np.random.default_rng(children[r]))
            stream.stationary_start()
            eps[r - start] = stream.generate(tmax)
        meta = meta_rng.random(eps.shape) < spec.phi
        eps[meta] = 1.0
        out[start:stop] = eps @ weights
    return out


def mc_moments(samples):
    """Column means and variances with their standard errors."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    c = samples - mean
    var = (c ** 2).sum(axis=0) / (n - 1)
    m4 = (c ** 4).mean(axis=0)
    return mean, np.sqrt(var / n), var, np.sqrt(np.maximum(m4 - var ** 2, 0.0) / n)


def propagator_table(spec, t_points, n_paths=10_000, seed=0):
    """Rows ``(t, impact, impact_linear, impact_transient, variance_analytic,
    variance_mc, mc_stderr)``; ``mc_stderr`` refers to the variance."""
    samples = simulate_paths(spec, t_points, n_paths, seed) if n_paths else None
    rows = []
    if samples is not None:
        _, _, var, var_se = mc_moments(samples)
    for k, t in enumerate(t_points):
        tot, lin, tr = prop_impact(spec, int(t))
        va = prop_variance(spec, int(t))
        vm = float(var[k]) if samples is not None else math.nan
        vs = float(var_se[k]) if samples is not None else math.nan
        rows.append((int(t), tot, lin, tr, va, vm, vs))
    return rows
