"""Options on forward variance in lognormal Gaussian-Volterra models.

Covers the closed-form price of an option on the instantaneous forward
variance (a Black-Scholes identity), and the Monte Carlo machinery for VIX
options: power discretisation grids, the exact Gaussian law of the log
stochastic exponentials, rectangle/trapezoid payoff functionals, and the
geometric-average control variate with its exact discretised expectation.
"""

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from . import parallel
from .black import black_implied_vol, lognormal_option_from_moments  # noqa: F401 (re-export)
from .curves import ForwardVarianceCurve
from .errors import SingularCovarianceError, ValidationError
from .kernels import CovarianceSpec, Kernel, covariance_matrix
from .quadrature import graded_rule

__all__ = [
    "ToyModel",
    "ToyCallPrice",
    "toy_call_price",
    "toy_hedge_ratio",
    "DiscretizationGrid",
    "GaussianLaw",
    "build_law",
    "VixPayoff",
    "McConfig",
    "McPrice",
    "VixSamples",
    "scheme_weights",
    "sample_vix_squared",
    "price_from_samples",
    "price_vix_option_mc",
    "control_variate_price",
    "black_implied_vol",
]


# ---------------------------------------------------------------------------
# Toy model: option on the instantaneous forward variance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyModel:
    """Lognormal forward variance driven by a Gaussian martingale.

    Parameters
    ----------
    forward_variance : float
        Current level xi_t of the instantaneous forward variance.
    conditional_variance : callable
        The nondecreasing function c(t) = Var E[X_T | F_t] characterising
        the conditional-expectation martingale.
    """

    forward_variance: float
    conditional_variance: Callable[[float], float]
    probe_horizon: float = 2.0

    def __post_init__(self):
        if not self.forward_variance > 0.0:
            raise ValidationError("forward variance must be positive")
        probes = np.linspace(0.0, self.probe_horizon, 65)
        values = np.array([self.conditional_variance(p) for p in probes])
        if not np.all(np.isfinite(values)):
            raise ValidationError("conditional variance must be finite")
        if np.any(np.diff(values) < -1e-12):
            raise ValidationError("conditional variance must be nondecreasing")


@dataclass(frozen=True)
class ToyCallPrice:
    price: float
    d1: float
    d2: float


def toy_call_price(model: ToyModel, strike: float, t: float,
                   expiry: float) -> ToyCallPrice:
    """Closed-form call on xi_{T0}: xi N(d1) - K N(d2) with
    d^{1,2} = (log(xi/K)/2 +- (c(T0) - c(t))) / sqrt(c(T0) - c(t))."""
    if strike <= 0.0:
        raise ValidationError("strike must be positive")
    var = model.conditional_variance(expiry) - model.conditional_variance(t)
    if var < -1e-14:
        raise ValidationError(
            f"c({expiry}) < c({t}): conditional variance decreased")
    xi = model.forward_variance
    if var <= 0.0:
        sign = math.inf if xi > strike else -math.inf
        return ToyCallPrice(max(xi - strike, 0.0), sign, sign)
    root = math.sqrt(var)
    half_log = 0.5 * math.log(xi / strike)
    d1 = (half_log + var) / root
    d2 = (half_log - var) / root
    return ToyCallPrice(xi * ndtr(d1) - strike * ndtr(d2), d1, d2)


def toy_hedge_ratio(model: ToyModel, strike: float, t: float,
                    expiry: float) -> float:
    """Perfect-hedge position N(d1) in the instantaneous variance swap."""
    d1 = toy_call_price(model, strike, t, expiry).d1
    return float(ndtr(d1)) if math.isfinite(d1) else (1.0 if d1 > 0 else 0.0)


# ---------------------------------------------------------------------------
# Discretisation grid and Gaussian law
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscretizationGrid:
    """Power grid t_i = T + Theta (i/n)^kappa, i = 0..n."""

    maturity: float
    window: float
    n: int
    kappa: float = 1.0

    def __post_init__(self):
        if self.maturity < 0.0:
            raise ValidationError("maturity must be nonnegative")
        if self.window <= 0.0:
            raise ValidationError("window must be positive")
        if self.n < 1:
            raise ValidationError("grid needs n >= 1")
        if self.kappa <= 0.0:
            raise ValidationError("kappa must be positive")

    @property
    def dates(self) -> np.ndarray:
        i = np.arange(self.n + 1, dtype=float)
        return self.maturity + self.window * (i / self.n) ** self.kappa


@dataclass(frozen=True)
class GaussianLaw:
    """Mean, covariance and cached Cholesky factor of the log-exponential
    vector (Z_i)."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray

    @classmethod
    def from_moments(cls, mean, cov, context: str = "covariance"):
        chol = cholesky_with_jitter(cov, context)
        return cls(np.asarray(mean, float), np.asarray(cov, float), chol)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + rng.standard_normal((size, self.dim)) @ self.chol.T


def cholesky_with_jitter(cov, context: str = "covariance") -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter 1e-14..1e-12 * trace."""
    cov = np.asarray(cov, dtype=float)
    trace = float(np.trace(cov))
    if trace == 0.0 and not cov.any():
        return np.zeros_like(cov)
    for scale in (0.0, 1e-14, 1e-13, 1e-12):
        try:
            return np.linalg.cholesky(cov + scale * trace * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise SingularCovarianceError(
        f"Cholesky failed after jitter escalation for {context}")


def build_law(kernel: Kernel, grid: DiscretizationGrid,
              valuation_time: float = 0.0,
              horizon: Optional[float] = None) -> GaussianLaw:
    """Exact law of (Z_i) at the grid dates, conditionally on time t."""
    horizon = grid.maturity if horizon is None else horizon
    spec = CovarianceSpec(valuation_time, horizon, tuple(grid.dates))
    cov, mean = covariance_matrix(kernel, spec)
    try:
        return GaussianLaw.from_moments(mean, cov)
    except SingularCovarianceError as exc:
        raise SingularCovarianceError(
            f"{exc} (grid T={grid.maturity}, n={grid.n}, kappa={grid.kappa})"
        ) from exc


# ---------------------------------------------------------------------------
# Payoffs and Monte Carlo configuration
# ---------------------------------------------------------------------------

_DERIVATIVE_FLOOR = 1e-10


@dataclass(frozen=True)
class VixPayoff:
    """Payoff f applied to the (approximate) squared VIX.

    Kinds: "call" f(x) = (sqrt(x) - K)^+, "put" the mirror image,
    "future" f(x) = sqrt(x), "identity" f(x) = x (variance-swap leg).
    """

    kind: str
    strike: float = 0.0

    def __post_init__(self):
        if self.kind not in ("call", "put", "future", "identity"):
            raise ValidationError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("call", "put") and self.strike < 0.0:
            raise ValidationError("strike must be nonnegative")

    @classmethod
    def call(cls, strike: float) -> "VixPayoff":
        return cls("call", strike)

    @classmethod
    def put(cls, strike: float) -> "VixPayoff":
        return cls("put", strike)

    @classmethod
    def future(cls) -> "VixPayoff":
        return cls("future")

    def value(self, vix_squared):
        x = np.asarray(vix_squared, dtype=float)
        if self.kind == "identity":
            return x
        root = np.sqrt(x)
        if self.kind == "future":
            return root
        if self.kind == "call":
            return np.maximum(root - self.strike, 0.0)
        return np.maximum(self.strike - root, 0.0)

    def derivative(self, vix_squared):
        """Pathwise derivative f'(x); the 1/(2 sqrt x) factor is floored
        because the squared VIX is almost surely positive."""
        x = np.asarray(vix_squared, dtype=float)
        if self.kind == "identity":
            return np.ones_like(x)
        root = np.sqrt(np.maximum(x, _DERIVATIVE_FLOOR))
        if self.kind == "future":
            return 0.5 / root
        if self.kind == "call":
            return np.where(root > self.strike, 0.5 / root, 0.0)
        return np.where(root < self.strike, -0.5 / root, 0.0)

    def lognormal_expectation(self, mean_log, var_log):
        """E[f(e^Y)] for Y ~ N(mean_log, var_log), in closed form.

        Vectorised over the moment arguments (per-path conditional moments
        in the modulated model)."""
        if self.kind == "identity":
            out = np.exp(np.asarray(mean_log, float)
                         + 0.5 * np.asarray(var_log, float))
            return out if out.ndim else float(out)
        return lognormal_option_from_moments(
            0.5 * np.asarray(mean_log, float),
            0.25 * np.asarray(var_log, float), self.strike, self.kind)


@dataclass(frozen=True)
class McConfig:
    paths: int = 50_000
    seed: int = 0
    use_control_variate: bool = True
    scheme: str = "trapezoid"
    chunk_size: int = 8192
    workers: int = 1

    def __post_init__(self):
        if self.paths < 2:
            raise ValidationError("need at least 2 paths")
        if self.scheme not in ("rectangle", "trapezoid"):
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        if self.chunk_size < 1 or self.workers < 1:
            raise ValidationError("chunk_size and workers must be >= 1")


@dataclass(frozen=True)
class McPrice:
    estimate: float
    std_error: float
    control_variate_offset: float
    n: int
    scheme: str
    seed: int
    paths: int


def scheme_weights(grid: DiscretizationGrid, curve: ForwardVarianceCurve,
                   scheme: str):
    """Weights turning the vector e^{Z_i} into the discretised squared VIX.

    Returns (w_exp, w_log, log_curve_avg): the squared VIX approximation is
    sum_i w_exp[i] e^{Z_i}; the log control variate is
    log_curve_avg + sum_i w_log[i] Z_i with sum(w_log) = 1.
    """
    dates = grid.dates
    theta = grid.window
    steps = np.diff(dates)
    k = dates.size
    w_exp = np.zeros(k)
    w_log = np.zeros(k)
    cell = np.array([curve.integral(a, b) for a, b in zip(dates[:-1], dates[1:])])
    if scheme == "rectangle":
        w_exp[:-1] = cell / theta
        w_log[:-1] = steps / theta
    elif scheme == "trapezoid":
        moment = np.array([curve.first_moment(a, b)
                           for a, b in zip(dates[:-1], dates[1:])])
        left = (dates[1:] * cell - moment) / steps
        right = (moment - dates[:-1] * cell) / steps
        w_exp[:-1] += left / theta
        w_exp[1:] += right / theta
        w_log[:-1] += steps / (2.0 * theta)
        w_log[1:] += steps / (2.0 * theta)
    else:
        raise ValidationError(f"unknown scheme {scheme!r}")
    log_curve_avg = curve.log_integral(dates[0], dates[0] + theta) / theta
    return w_exp, w_log, log_curve_avg


@dataclass(frozen=True)
class VixSamples:
    """Per-path squared-VIX samples with the matching control variate.

    The control-variate log moments are scalars under the Gaussian model
    and per-path arrays (conditional on the modulator) otherwise.
    """

    vix_squared: np.ndarray
    cv_log: Optional[np.ndarray]
    cv_mean_log: object
    cv_var_log: object
    n: int
    scheme: str
    seed: int

    @property
    def paths(self) -> int:
        return self.vix_squared.size


@dataclass(frozen=True)
class _GaussianChunkSimulator:
    mean: np.ndarray
    chol: np.ndarray
    w_exp: np.ndarray
    w_log: Optional[np.ndarray]
    log_curve_avg: float
    seed: int

    def simulate_chunk(self, chunk_idx: int, count: int):
        rng = parallel.chunk_rng(self.seed, parallel.STREAM_GAUSSIAN, chunk_idx)
        z = self.mean + rng.standard_normal((count, self.mean.size)) @ self.chol.T
        vix2 = np.exp(z) @ self.w_exp
        cv = self.log_curve_avg + z @ self.w_log if self.w_log is not None else None
        return vix2, cv


def sample_vix_squared(kernel: Kernel, curve: ForwardVarianceCurve,
                       grid: DiscretizationGrid, config: McConfig,
                       valuation_time: float = 0.0) -> VixSamples:
    """Simulate the discretised squared VIX under the Gaussian Volterra model.

    Strikes enter only through the payoff, so one sample set prices a whole
    ladder with common random numbers.
    """
    law = build_law(kernel, grid, valuation_time)
    w_exp, w_log, log_curve_avg = scheme_weights(grid, curve, config.scheme)
    use_cv = config.use_control_variate
    sim = _GaussianChunkSimulator(
        mean=law.mean, chol=law.chol, w_exp=w_exp,
        w_log=w_log if use_cv else None, log_curve_avg=log_curve_avg,
        seed=config.seed)
    results = parallel.run_chunks(sim, config.paths, config.chunk_size,
                                  config.workers)
    vix2 = np.concatenate([r[0] for r in results])
    cv = np.concatenate([r[1] for r in results]) if use_cv else None
    cv_mean = cv_var = None
    if use_cv:
        cv_mean = log_curve_avg + float(w_log @ law.mean)
        cv_var = float(w_log @ law.cov @ w_log)
    return VixSamples(vix2, cv, cv_mean, cv_var, grid.n, config.scheme,
                      config.seed)


def price_from_samples(samples: VixSamples, payoff: VixPayoff) -> McPrice:
    """Monte Carlo price (and standard error) from simulated samples.

    ``cv_mean_log``/``cv_var_log`` may be scalars (Gaussian model) or
    per-path arrays (conditional moments in the modulated model)."""
    values = payoff.value(samples.vix_squared)
    if samples.cv_log is not None:
        cv_values = payoff.value(np.exp(samples.cv_log))
        cv_expect = payoff.lognormal_expectation(
            samples.cv_mean_log, samples.cv_var_log)
        per_path = values - cv_values + cv_expect
        offset = float(np.mean(cv_expect) - np.mean(cv_values))
    else:
        per_path = values
        offset = 0.0
    estimate = float(np.mean(per_path))
    std_error = float(np.std(per_path, ddof=1) / math.sqrt(per_path.size))
    return McPrice(estimate, std_error, offset, samples.n, samples.scheme,
                   samples.seed, per_path.size)


def price_vix_option_mc(kernel: Kernel, curve: ForwardVarianceCurve,
                        grid: DiscretizationGrid, config: McConfig,
                        payoff: VixPayoff,
                        valuation_time: float = 0.0) -> McPrice:
    """Unbiased Monte Carlo price of f(VIX_T^2) under the Volterra model.

    The rectangle scheme weights exp(Z_i) by the exact curve mass of each
    cell; the trapezoid scheme blends adjacent exponentials.  With the
    control variate enabled, the discretised geometric average is subtracted
    and its exact discretised expectation added back, which leaves the
    estimator unbiased.
    """
    samples = sample_vix_squared(kernel, curve, grid, config, valuation_time)
    return price_from_samples(samples, payoff)


# ---------------------------------------------------------------------------
# Convergence studies with common random numbers across n
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    price: float
    std_error: float
    abs_error: float
    error_std_error: float
    used_in_fit: bool

    @property
    def error_ci(self):
        half = 3.0 * self.error_std_error
        return self.abs_error - half, self.abs_error + half


@dataclass(frozen=True)
class ConvergenceResult:
    scheme: str
    kappa: float
    reference_n: int
    reference_price: float
    reference_std_error: float
    rows: tuple
    slope: Optional[float]


@dataclass(frozen=True)
class _LadderChunkSimulator:
    mean: np.ndarray
    chol: np.ndarray
    w_exp_levels: tuple
    w_log_levels: tuple
    log_curve_avg: float
    seed: int

    def simulate_chunk(self, chunk_idx: int, count: int):
        rng = parallel.chunk_rng(self.seed, parallel.STREAM_GAUSSIAN, chunk_idx)
        z = self.mean + rng.standard_normal((count, self.mean.size)) @ self.chol.T
        e = np.exp(z)
        vix2 = np.stack([e @ w for w in self.w_exp_levels])
        if self.w_log_levels is not None:
            cv = np.stack([self.log_curve_avg + z @ w for w in self.w_log_levels])
        else:
            cv = None
        return vix2, cv


def _nested_index_map(coarse: DiscretizationGrid, fine: DiscretizationGrid):
    """Indices of the coarse grid dates inside the fine grid, or None."""
    if coarse.kappa != fine.kappa or fine.n % coarse.n != 0:
        return None
    step = fine.n // coarse.n
    return np.arange(coarse.n + 1) * step


def convergence_study(kernel: Kernel, curve: ForwardVarianceCurve,
                      maturity: float, window: float, n_list, reference_n: int,
                      scheme: str, kappa: float, config: McConfig,
                      payoff: VixPayoff, reference_kappa: float = 2.0,
                      valuation_time: float = 0.0) -> ConvergenceResult:
    """Discretisation error of the MC schemes against a fine reference.

    The reference is the trapezoid scheme on the kappa=2 power grid at
    ``reference_n``.  Ladder levels whose grids nest inside the reference
    grid reuse its paths (common random numbers), so their error estimates
    carry only the tiny per-path difference noise; non-nested levels run
    standalone with the same seed.  The log-log slope is fitted over the
    levels whose error exceeds three standard errors.
    """
    n_list = sorted(int(n) for n in n_list)
    if reference_n <= max(n_list):
        raise ValidationError("reference_n must exceed every ladder n")
    ref_grid = DiscretizationGrid(maturity, window, reference_n, reference_kappa)
    ladder = [DiscretizationGrid(maturity, window, n, kappa) for n in n_list]
    maps = [_nested_index_map(g, ref_grid) for g in ladder]

    nested = [(g, m) for g, m in zip(ladder, maps) if m is not None]
    law = build_law(kernel, ref_grid, valuation_time)
    size = ref_grid.n + 1
    w_exp_levels, w_log_levels = [], []
    for g, idx in nested + [(ref_grid, np.arange(size))]:
        w_exp, w_log, log_curve_avg = scheme_weights(
            g, curve, "trapezoid" if g is ref_grid else scheme)
        full_exp = np.zeros(size)
        full_log = np.zeros(size)
        full_exp[idx] = w_exp
        full_log[idx] = w_log
        w_exp_levels.append(full_exp)
        w_log_levels.append(full_log)
    sim = _LadderChunkSimulator(
        mean=law.mean, chol=law.chol,
        w_exp_levels=tuple(w_exp_levels),
        w_log_levels=tuple(w_log_levels) if config.use_control_variate else None,
        log_curve_avg=log_curve_avg, seed=config.seed)
    chunks = parallel.run_chunks(sim, config.paths, config.chunk_size,
                                 config.workers)
    vix2 = np.concatenate([c[0] for c in chunks], axis=1)
    cv_log = (np.concatenate([c[1] for c in chunks], axis=1)
              if config.use_control_variate else None)

    def level_values(pos):
        h = payoff.value(vix2[pos])
        if cv_log is None:
            return h
        w_full = w_log_levels[pos]
        m_d = log_curve_avg + float(w_full @ law.mean)
        s_d = float(w_full @ law.cov @ w_full)
        return h - payoff.value(np.exp(cv_log[pos])) \
            + payoff.lognormal_expectation(m_d, s_d)

    ref_vals = level_values(len(nested))
    ref_price = float(np.mean(ref_vals))
    ref_se = float(np.std(ref_vals, ddof=1) / math.sqrt(ref_vals.size))

    rows = []
    nested_pos = 0
    for g, idx in zip(ladder, maps):
        if idx is not None:
            vals = level_values(nested_pos)
            nested_pos += 1
            diff = vals - ref_vals
            price = float(np.mean(vals))
            se = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
            err = abs(float(np.mean(diff)))
            err_se = float(np.std(diff, ddof=1) / math.sqrt(diff.size))
        else:
            mc = price_vix_option_mc(kernel, curve, g,
                                     replace(config, scheme=scheme), payoff,
                                     valuation_time)
            price, se = mc.estimate, mc.std_error
            err = abs(price - ref_price)
            err_se = math.hypot(se, ref_se)
        rows.append(ConvergenceRow(g.n, price, se, err, err_se,
                                   used_in_fit=err > 3.0 * err_se))

    kept = [r for r in rows if r.used_in_fit]
    slope = None
    if len(kept) >= 2:
        slope = float(np.polyfit(np.log([r.n for r in kept]),
                                 np.log([r.abs_error for r in kept]), 1)[0])
    return ConvergenceResult(scheme, kappa, reference_n, ref_price, ref_se,
                             tuple(rows), slope)


# ---------------------------------------------------------------------------
# Closed-form approximate price (continuous-time control variate)
# ---------------------------------------------------------------------------

def control_variate_moments(kernel: Kernel, curve: ForwardVarianceCurve,
                            valuation_time: float, maturity: float,
                            window: float):
    """Mean and variance of Y = log of the geometric-average squared VIX.

    m_Y averages log x(u) - 2 int_t^T |g(u,s)|^2 ds over the window;
    sigma_Y^2 double-integrates the cross-covariances.  Both u-axes use a
    mesh graded toward u = T where the kernel terms lose smoothness.
    """
    t, T, theta = valuation_time, maturity, window
    u_nodes, u_weights = graded_rule(T, T + theta, "left", order=16, levels=40)
    if kernel.time_homogeneous:
        energy_term = (np.asarray(kernel.energy(u_nodes - t))
                       - np.asarray(kernel.energy(u_nodes - T)))
    else:
        raise ValidationError("control variate moments need a "
                              "time-homogeneous kernel")
    mean_log = (curve.log_integral(T, T + theta)
                - 2.0 * float(u_weights @ energy_term)) / theta
    if T == t:
        return mean_log, 0.0
    s_nodes, s_weights = graded_rule(t, T, "right", order=32, levels=48)
    g_mat = np.asarray(kernel.evaluate(u_nodes[:, None], s_nodes[None, :]))
    cross = 4.0 * (g_mat * s_weights) @ g_mat.T
    var_log = float(u_weights @ cross @ u_weights) / theta ** 2
    return mean_log, var_log


def control_variate_price(kernel: Kernel, curve: ForwardVarianceCurve,
                          valuation_time: float, maturity: float,
                          window: float, strike: float,
                          payoff_kind: str = "call") -> float:
    """Closed-form lognormal approximation of the VIX option price,
    E[(e^{Y/2} - K)^+] with Y the geometric log-average."""
    mean_log, var_log = control_variate_moments(
        kernel, curve, valuation_time, maturity, window)
    payoff = VixPayoff(payoff_kind, strike)
    return payoff.lognormal_expectation(mean_log, var_log)
