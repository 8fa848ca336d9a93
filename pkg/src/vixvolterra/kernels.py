"""Volterra kernels and the exact law of the log forward-variance vector.

The volatility model is driven by a square-integrable kernel g through
X_t = int_0^t g(t, s)' dW_s.  Everything downstream needs three things from
the kernel: pointwise evaluation, the integrated energy
G(t) = int_0^t |g(s)|^2 ds, and the covariance/mean of the Gaussian vector
Z_i = log of the stochastic exponential observed at the grid dates.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import NumericalError, UnsupportedOperationError, ValidationError
from .quadrature import graded_rule

__all__ = [
    "Kernel",
    "PowerLawKernel",
    "ZeroKernel",
    "CallableKernel",
    "CovarianceSpec",
    "cumulative_energy",
    "covariance_matrix",
    "covariance_matrix_hypergeometric",
    "hyp2f1",
]


class Kernel:
    """Base class for one-dimensional Volterra kernels g(t, s).

    Subclasses provide ``evaluate(t, s)``; time-homogeneous kernels
    additionally provide ``value(tau)`` with g(t, s) = value(t - s).
    """

    dimension: int = 1
    time_homogeneous: bool = False
    #: True when value(tau) diverges as tau -> 0 (e.g. rough kernels).
    singular_at_zero: bool = False

    def evaluate(self, t, s):
        raise NotImplementedError

    def value(self, tau):
        raise UnsupportedOperationError(
            f"{type(self).__name__} is not time-homogeneous")

    def energy(self, t):
        """Integrated squared norm G(t) = int_0^t |g(s)|^2 ds."""
        raise UnsupportedOperationError(
            f"cumulative energy is undefined for {type(self).__name__}")

    def primitive(self, t):
        """int_0^t g(s) ds for a time-homogeneous kernel."""
        raise UnsupportedOperationError(
            f"kernel primitive is undefined for {type(self).__name__}")

    def _check_square_integrable(self):
        for horizon in (0.25, 1.0, 4.0):
            g_val = self.energy(horizon)
            if not np.isfinite(g_val) or g_val < 0.0:
                raise ValidationError(
                    f"kernel fails square-integrability probe at t={horizon}")


@dataclass(frozen=True)
class PowerLawKernel(Kernel):
    """Rough-Bergomi kernel g(t, s) = alpha * (t - s)^(H - 1/2)."""

    alpha: float
    hurst: float
    time_homogeneous: bool = field(default=True, init=False)

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValidationError("alpha must be positive")
        if not 0.0 < self.hurst < 1.0:
            raise ValidationError("hurst must lie in (0, 1)")
        object.__setattr__(self, "singular_at_zero", self.hurst < 0.5)

    @classmethod
    def from_vol_of_vol(cls, nu: float, hurst: float) -> "PowerLawKernel":
        """Construct from the vol-of-vol parametrisation
        alpha = 2 nu sqrt(Gamma(3/2 - H) / (Gamma(H + 1) Gamma(2 - 2H)))."""
        if not nu > 0.0:
            raise ValidationError("nu must be positive")
        g = math.gamma
        alpha = 2.0 * nu * math.sqrt(
            g(1.5 - hurst) / (g(hurst + 1.0) * g(2.0 - 2.0 * hurst)))
        return cls(alpha=alpha, hurst=hurst)

    def value(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau <= 0.0):
            raise ValidationError("power-law kernel requires tau > 0")
        return self.alpha * tau ** (self.hurst - 0.5)

    def evaluate(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        if np.any(s >= t):
            raise ValidationError("kernel g(t, s) requires s < t")
        return self.alpha * (t - s) ** (self.hurst - 0.5)

    def energy(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0):
            raise ValidationError("energy requires t >= 0")
        two_h = 2.0 * self.hurst
        return self.alpha ** 2 * t ** two_h / two_h

    def primitive(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0):
            raise ValidationError("primitive requires t >= 0")
        p = self.hurst + 0.5
        return self.alpha * t ** p / p


@dataclass(frozen=True)
class ZeroKernel(Kernel):
    """Degenerate kernel g = 0: forward variances are deterministic."""

    time_homogeneous: bool = field(default=True, init=False)

    def value(self, tau):
        return np.zeros_like(np.asarray(tau, dtype=float))

    def evaluate(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        return np.zeros(np.broadcast(t, s).shape)

    def energy(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def primitive(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))


class CallableKernel(Kernel):
    """Time-homogeneous kernel defined by a vectorised callable value(tau).

    The callable must be bounded near tau = 0 unless ``singular_at_zero``
    is set, in which case the singularity must be square integrable.
    """

    time_homogeneous = True

    def __init__(self, fn, singular_at_zero: bool = False):
        self._fn = fn
        self.singular_at_zero = singular_at_zero
        self._check_square_integrable()

    def value(self, tau):
        return np.asarray(self._fn(np.asarray(tau, dtype=float)), dtype=float)

    def evaluate(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        if np.any(s >= t):
            raise ValidationError("kernel g(t, s) requires s < t")
        return self.value(t - s)

    def energy(self, t):
        return self._cumulative(t, square=True)

    def primitive(self, t):
        return self._cumulative(t, square=False)

    def _cumulative(self, t, square: bool):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        end = "left" if self.singular_at_zero else "none"
        out = np.empty(t.shape)
        for i, ti in enumerate(t):
            if ti == 0.0:
                out[i] = 0.0
                continue
            nodes, weights = graded_rule(0.0, float(ti), end)
            vals = self.value(nodes)
            out[i] = float(np.dot(weights, vals ** 2 if square else vals))
        return out[0] if scalar else out


def cumulative_energy(kernel: Kernel, t):
    """G(t) = int_0^t |g(s)|^2 ds for a time-homogeneous kernel.

    Closed form for the power-law kernel, graded quadrature otherwise.
    Raises UnsupportedOperationError for non-time-homogeneous kernels.
    """
    if not kernel.time_homogeneous:
        raise UnsupportedOperationError(
            "cumulative energy requires a time-homogeneous kernel")
    return kernel.energy(t)


@dataclass(frozen=True)
class CovarianceSpec:
    """Dates entering the law of the log stochastic exponentials.

    ``valuation_time`` t <= ``horizon`` T <= every grid date; the Gaussian
    vector collects Z_i = log E_{t,T}(u_i) at the (strictly increasing)
    grid dates u_i.
    """

    valuation_time: float
    horizon: float
    grid_dates: tuple

    def __post_init__(self):
        dates = np.asarray(self.grid_dates, dtype=float)
        if dates.ndim != 1 or dates.size == 0:
            raise ValidationError("grid_dates must be a non-empty 1-d sequence")
        if np.any(np.diff(dates) <= 0.0):
            raise ValidationError("grid dates must be strictly increasing")
        if not self.valuation_time <= self.horizon <= dates[0]:
            raise ValidationError(
                "need valuation_time <= horizon <= first grid date, got "
                f"t={self.valuation_time}, T={self.horizon}, u0={dates[0]}")
        object.__setattr__(self, "grid_dates", tuple(float(d) for d in dates))

    @property
    def dates(self):
        return np.asarray(self.grid_dates, dtype=float)


def covariance_matrix(kernel: Kernel, spec: CovarianceSpec):
    """Covariance C_ij = 4 int_t^T g(u_i,s)' g(u_j,s) ds and means m_i.

    Off-diagonal entries come from a Gauss-Legendre mesh graded toward
    s = T (where rough kernels blow up when u_0 = T); the diagonal uses
    C_ii = 4 (G(u_i - t) - G(u_i - T)) which is exact for built-in kernels.
    Means are m_i = -C_ii / 2 so that each stochastic exponential has unit
    expectation.

    Returns
    -------
    (cov, mean) : pair of ndarray, shapes (k, k) and (k,)
    """
    dates = spec.dates
    t, horizon = spec.valuation_time, spec.horizon
    k = dates.size
    if horizon == t:
        return np.zeros((k, k)), np.zeros(k)

    nodes, weights = graded_rule(t, horizon, "right", order=32, levels=48)
    g_mat = np.asarray(kernel.evaluate(dates[:, None], nodes[None, :]))
    if not np.all(np.isfinite(g_mat)):
        raise NumericalError("kernel evaluation produced non-finite values "
                             "on the covariance quadrature mesh")
    cov = 4.0 * (g_mat * weights) @ g_mat.T

    if kernel.time_homogeneous:
        diag = 4.0 * (np.asarray(kernel.energy(dates - t))
                      - np.asarray(kernel.energy(dates - horizon)))
        np.fill_diagonal(cov, diag)
    else:
        diag = np.diagonal(cov).copy()
    mean = -0.5 * diag
    return cov, mean


def covariance_matrix_hypergeometric(kernel: PowerLawKernel,
                                     spec: CovarianceSpec):
    """Closed-form covariance for the power-law kernel via Gauss 2F1.

    For i < j:
        C_ij = 4 a^2 / (H + 1/2) * (u_j - u_i)^(H - 1/2)
               * [ (u_i - t)^(H + 1/2) 2F1(1/2-H, 1/2+H; 3/2+H; -(u_i-t)/(u_j-u_i))
                 - (u_i - T)^(H + 1/2) 2F1(..., -(u_i-T)/(u_j-u_i)) ]
    Serves as the independent cross-check of the quadrature route.
    """
    if not isinstance(kernel, PowerLawKernel):
        raise UnsupportedOperationError(
            "hypergeometric covariance is specific to the power-law kernel")
    dates = spec.dates
    t, horizon = spec.valuation_time, spec.horizon
    k = dates.size
    h = kernel.hurst
    cov = np.zeros((k, k))
    diag = 4.0 * (kernel.energy(dates - t) - kernel.energy(dates - horizon))
    if k == 1 or horizon == t:
        np.fill_diagonal(cov, diag if horizon != t else 0.0)
        return cov

    iu, ju = np.triu_indices(k, k=1)
    ti, tj = dates[iu], dates[ju]
    gap = tj - ti
    if abs(h - 0.5) < 1e-12:
        off = np.full(iu.shape, 4.0 * kernel.alpha ** 2 * (horizon - t))
    else:
        pref = 4.0 * kernel.alpha ** 2 / (h + 0.5) * gap ** (h - 0.5)

        def upper_term(lower):
            d = ti - lower
            out = np.zeros_like(d)
            pos = d > 0.0
            if np.any(pos):
                out[pos] = d[pos] ** (h + 0.5) * hyp2f1(
                    0.5 - h, 0.5 + h, 1.5 + h, -d[pos] / gap[pos])
            return out

        off = pref * (upper_term(t) - upper_term(horizon))
    cov[iu, ju] = off
    cov[ju, iu] = off
    np.fill_diagonal(cov, diag)
    return cov


# ---------------------------------------------------------------------------
# Gauss hypergeometric function on the negative real axis
# ---------------------------------------------------------------------------

_SERIES_MAX_TERMS = 6000


def _gauss_series(a, b, c, z):
    """Direct Gauss series sum_k (a)_k (b)_k / ((c)_k k!) z^k for |z| < 1."""
    z = np.asarray(z, dtype=float)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(_SERIES_MAX_TERMS):
        term = term * ((a + k) * (b + k)) / ((c + k) * (1.0 + k)) * z
        total += term
        if k % 8 == 7 and np.all(np.abs(term) <= 1e-17 * (np.abs(total) + 1.0)):
            return total
    raise NumericalError(
        "hypergeometric series did not converge",
        achieved_tolerance=float(np.max(np.abs(term))))


def hyp2f1(a: float, b: float, c: float, x):
    """Gauss hypergeometric 2F1(a, b; c; x) for x <= 0 with c > b > 0.

    Moderate arguments are summed after the Pfaff transformation
    z = x / (x - 1) in [0, 1); x < -9 uses the 1/(1-x) connection formula,
    which requires a - b not to be an integer.  Absolute error <= 1e-12.
    """
    if not c > b > 0.0:
        raise ValidationError("hyp2f1 requires c > b > 0")
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr).astype(float)
    if np.any(x_arr > 0.0):
        raise ValidationError("hyp2f1 is implemented for x <= 0 only")

    out = np.ones_like(x_arr)
    near = (x_arr < 0.0) & (x_arr >= -9.0)
    deep = x_arr < -9.0
    if np.any(near):
        xn = x_arr[near]
        z = xn / (xn - 1.0)
        out[near] = (1.0 - xn) ** (-b) * _gauss_series(c - a, b, c, z)
    if np.any(deep):
        d = a - b
        if abs(d - round(d)) < 1e-8:
            raise NumericalError(
                "1/(1-x) connection formula degenerates for integer a - b")
        xd = x_arr[deep]
        w = 1.0 / (1.0 - xd)
        gam = special.gamma
        coef1 = gam(c) * gam(b - a) / (gam(b) * gam(c - a))
        coef2 = gam(c) * gam(a - b) / (gam(a) * gam(c - b))
        out[deep] = (coef1 * (1.0 - xd) ** (-a) * _gauss_series(a, c - b, a - b + 1.0, w)
                     + coef2 * (1.0 - xd) ** (-b) * _gauss_series(b, c - a, b - a + 1.0, w))
    return float(out[0]) if scalar else out
