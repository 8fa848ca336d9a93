"""Calibration of the jump-modulated model to VIX option quotes, and
model-implied smiles.

Fits are least squares in price space with a box-constrained quasi-Newton
(L-BFGS-B) and Latin-hypercube multi-start; parameter identifiability is
not claimed, the exit criterion is the price-space RMSE per maturity.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .black import black_implied_vol
from .curves import ForwardVarianceCurve
from .errors import (ArbitrageError, CalibrationError, ContourError,
                     FeasibilityError, NumericalError, ValidationError)
from .kernels import Kernel, PowerLawKernel
from .lognormal import (DiscretizationGrid, McConfig, VixPayoff,
                        price_from_samples, sample_vix_squared)
from .marketdata import MarketConventions
from .modulated import (LevyOuModulator, ModulatedModel,
                        approximate_price_fourier,
                        sample_vix_squared_modulated)

__all__ = [
    "CalibrationProblem",
    "CalibrationResult",
    "calibrate",
    "SmilePoint",
    "implied_smile",
]

_SLICE_PARAMS = ("lambda", "Lambda", "a", "gamma0", "xi0")
_PENALTY = 1e8


@dataclass(frozen=True)
class CalibrationProblem:
    """Quotes plus the search configuration.

    mode: "per_slice" fits each maturity separately including its flat
    forward variance xi0; "per_slice_fixed_curve" takes the curve as given
    and drops xi0 from the free set; "joint" shares one parameter set over
    all maturities with the curve fixed.
    """

    quotes: dict
    mode: str = "per_slice"
    free_params: tuple = _SLICE_PARAMS
    bounds: dict = field(default_factory=dict)
    pricing_engine: str = "fourier"
    kernel: Kernel = field(
        default_factory=lambda: PowerLawKernel(alpha=0.2, hurst=0.1))
    curve: Optional[ForwardVarianceCurve] = None
    conventions: MarketConventions = field(default_factory=MarketConventions)
    start: dict = field(default_factory=dict)
    multistart: int = 5
    seed: int = 0
    objective_weight: float = 1.0
    vega_weighted: bool = False
    mc_config: McConfig = field(
        default_factory=lambda: McConfig(paths=20_000, seed=0))
    mc_grid_n: int = 90

    def __post_init__(self):
        if self.mode not in ("per_slice", "per_slice_fixed_curve", "joint"):
            raise ValidationError(f"unknown calibration mode {self.mode!r}")
        if self.pricing_engine not in ("fourier", "mc"):
            raise ValidationError(
                f"unknown pricing engine {self.pricing_engine!r}")
        if not self.quotes:
            raise ValidationError("no quotes to calibrate")
        for maturity, quotes in self.quotes.items():
            if len(quotes) < 3:
                raise ValidationError(
                    f"maturity {maturity}: need at least 3 quotes per slice")
        if self.mode != "per_slice" and self.curve is None:
            raise ValidationError(
                f"mode {self.mode!r} needs a pre-specified curve")
        unknown = set(self.free_params) - set(_SLICE_PARAMS)
        if unknown:
            raise ValidationError(f"unknown free parameters {sorted(unknown)}")
        if self.objective_weight <= 0.0:
            raise ValidationError("objective weight must be positive")

    def effective_free(self):
        free = tuple(p for p in self.free_params)
        if self.mode != "per_slice":
            free = tuple(p for p in free if p != "xi0")
        return free

    def effective_bounds(self, horizon: float):
        # the Levy contour needs a > 2 G over the pricing horizon
        a_floor = 2.0 * float(self.kernel.energy(horizon)) * 1.05
        defaults = {
            "lambda": (1e-4, 5.0),
            "Lambda": (1e-4, 25.0),
            "a": (max(0.5, a_floor), 80.0),
            "gamma0": (0.0, 2.0),
            "xi0": (1e-4, 0.25),
        }
        out = {}
        for name in self.effective_free():
            lo, hi = self.bounds.get(name, defaults[name])
            if name == "a":
                lo = max(lo, a_floor)
            if not lo < hi:
                raise ValidationError(f"empty bounds for {name}")
            out[name] = (lo, hi)
        return out


@dataclass(frozen=True)
class CalibrationResult:
    mode: str
    params: dict
    per_maturity_rmse: dict
    iterations: int
    objective_trace: tuple
    objective: float
    wall_time: float


def _build_model(problem: CalibrationProblem, values: dict, maturity_days: int,
                 horizon: float) -> ModulatedModel:
    modulator = LevyOuModulator(
        mean_reversion=values["lambda"],
        jump_intensity=values["Lambda"],
        jump_decay=values["a"],
        gamma0=values["gamma0"])
    if "xi0" in values:
        curve = ForwardVarianceCurve.flat(values["xi0"])
    else:
        curve = problem.curve
    return ModulatedModel(problem.kernel, modulator, curve, horizon)


def _slice_prices(problem: CalibrationProblem, model: ModulatedModel,
                  maturity: float, strikes: np.ndarray) -> np.ndarray:
    window = problem.conventions.window_years
    if problem.pricing_engine == "fourier":
        return np.asarray(approximate_price_fourier(
            model, 0.0, maturity, window, strikes))
    grid = DiscretizationGrid(maturity, window, problem.mc_grid_n, 2.0)
    samples = sample_vix_squared_modulated(model, grid, problem.mc_config)
    return np.array([price_from_samples(samples, VixPayoff.call(k)).estimate
                     for k in strikes])


def _quote_weights(problem, mat, quotes, years):
    """Inverse-squared-vega weights, normalised to mean one; quotes whose
    mid cannot be inverted keep unit weight."""
    if not problem.vega_weighted:
        return np.ones(len(quotes))
    anchor = min(quotes, key=lambda q: q.strike)
    future = anchor.strike + anchor.mid_price
    weights = np.ones(len(quotes))
    for i, q in enumerate(quotes):
        try:
            vol = black_implied_vol(q.mid_price, future, q.strike, years)
        except (ArbitrageError, NumericalError):
            continue
        total = vol * np.sqrt(years)
        d1 = np.log(future / q.strike) / total + 0.5 * total
        vega = future * np.exp(-0.5 * d1 * d1) / np.sqrt(2 * np.pi) \
            * np.sqrt(years)
        weights[i] = 1.0 / max(vega, 1e-6) ** 2
    return weights / np.mean(weights)


def _objective_factory(problem: CalibrationProblem, maturities, free):
    conv = problem.conventions
    slices = []
    for mat in maturities:
        quotes = problem.quotes[mat]
        strikes = np.array([q.strike for q in quotes])
        mids = np.array([q.mid_price for q in quotes])
        years = conv.years(mat)
        horizon = years + conv.window_years + 1e-9
        weights = _quote_weights(problem, mat, quotes, years)
        slices.append((mat, years, strikes, mids, horizon, weights))

    def objective(x):
        values = dict(zip(free, x))
        try:
            total = 0.0
            for mat, years, strikes, mids, horizon, weights in slices:
                model = _build_model(problem, values, mat, horizon)
                prices = _slice_prices(problem, model, years, strikes)
                total += float(np.sum(weights * (prices - mids) ** 2))
            return problem.objective_weight * total
        except (FeasibilityError, ContourError, NumericalError,
                ValidationError):
            return _PENALTY * (1.0 + float(np.sum(np.square(x))))

    def rmse_by_maturity(x):
        values = dict(zip(free, x))
        out = {}
        for mat, years, strikes, mids, horizon, _ in slices:
            model = _build_model(problem, values, mat, horizon)
            prices = _slice_prices(problem, model, years, strikes)
            out[mat] = float(np.sqrt(np.mean((prices - mids) ** 2)))
        return out

    return objective, rmse_by_maturity


def _xi0_anchor(problem, maturities):
    """Model-free forward-variance scale: the deepest in-the-money call
    gives VIX future ~ strike + price, and xi0 ~ future^2."""
    futures = []
    for mat in maturities:
        quotes = problem.quotes[mat]
        q = min(quotes, key=lambda q: q.strike)
        futures.append(q.strike + q.mid_price)
    return float(np.mean(futures)) ** 2


def _starting_points(problem, free, bounds_arr, n_extra, maturities):
    """User start plus Latin-hypercube draws; the xi0 axis is sampled
    around the quote-implied scale, where the price objective is not flat."""
    lo, hi = bounds_arr[:, 0].copy(), bounds_arr[:, 1].copy()
    defaults = {"lambda": 0.5, "Lambda": 1.0, "a": 8.0, "gamma0": 0.1}
    if "xi0" in free:
        anchor = _xi0_anchor(problem, maturities)
        idx = free.index("xi0")
        defaults["xi0"] = anchor
        lo[idx] = max(lo[idx], 0.4 * anchor)
        hi[idx] = min(hi[idx], 2.5 * anchor)
        if not lo[idx] < hi[idx]:
            lo[idx], hi[idx] = bounds_arr[idx]
    user = np.array([problem.start.get(p, defaults[p]) for p in free])
    starts = [np.clip(user, bounds_arr[:, 0], bounds_arr[:, 1])]
    if problem.start:
        # keep the quote-anchored default in the pool as well: a user start
        # far from the price scale can slide into the flat all-prices-zero
        # region of the objective
        anchored = np.array([defaults[p] for p in free])
        starts.append(np.clip(anchored, bounds_arr[:, 0], bounds_arr[:, 1]))
    if n_extra > 0:
        sampler = qmc.LatinHypercube(d=len(free), seed=problem.seed)
        starts.extend(lo + sampler.random(n_extra) * (hi - lo))
    return starts


def _minimize_from(objective, x0, bounds_arr, weight):
    """L-BFGS-B in unit-box coordinates so the forward-difference step is
    1e-6 of each parameter's bound span and the gradient components are
    commensurate.  The overall objective weight is divided out before
    optimisation, which makes the iterates invariant under rescaling the
    weighting; the recorded trace carries the true objective."""
    lo, hi = bounds_arr[:, 0], bounds_arr[:, 1]
    span = hi - lo
    trace = []

    def scaled(z):
        return objective(lo + z * span) / weight

    def cb(zk):
        trace.append(weight * float(scaled(zk)))

    z0 = np.clip((np.asarray(x0) - lo) / span, 0.0, 1.0)
    res = optimize.minimize(
        scaled, z0, method="L-BFGS-B",
        bounds=[(0.0, 1.0)] * len(z0), callback=cb,
        options={"ftol": 1e-15, "gtol": 1e-12, "eps": 1e-6,
                 "maxiter": 500})
    res.x = lo + res.x * span
    res.fun = weight * res.fun
    return res, trace


def _fit_one(problem, maturities):
    free = problem.effective_free()
    conv = problem.conventions
    horizon = max(conv.years(m) for m in maturities) + conv.window_years + 1e-9
    bounds = problem.effective_bounds(horizon)
    bounds_arr = np.array([bounds[p] for p in free])
    objective, rmse_fn = _objective_factory(problem, maturities, free)

    starts = _starting_points(problem, free, bounds_arr,
                              max(problem.multistart - 1, 0), maturities)
    diagnostics = []
    feasible = []
    for i, x0 in enumerate(starts):
        f0 = objective(x0)
        diagnostics.append({"start_index": i, "x0": list(map(float, x0)),
                            "objective": float(f0),
                            "feasible": bool(f0 < _PENALTY)})
        if f0 < _PENALTY:
            feasible.append(x0)
    if not feasible:
        raise CalibrationError(
            "all calibration starts infeasible", diagnostics=diagnostics)

    best = None
    best_trace = None
    for x0 in feasible:
        res, trace = _minimize_from(objective, x0, bounds_arr,
                                    problem.objective_weight)
        if best is None or res.fun < best.fun:
            best, best_trace = res, trace
    params = dict(zip(free, map(float, best.x)))
    return params, rmse_fn(best.x), int(best.nit), tuple(best_trace), \
        float(best.fun)


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """Fit the modulated model to the quotes per the problem's mode.

    Deterministic for a fixed seed: the multi-start sample, the optimizer
    and the pricing engines are all seeded or exact.
    """
    tic = time.perf_counter()
    maturities = sorted(problem.quotes)
    if problem.mode == "joint":
        params, rmse, iters, trace, fun = _fit_one(problem, maturities)
        return CalibrationResult(problem.mode, params, rmse, iters, trace,
                                 fun, time.perf_counter() - tic)

    all_params = {}
    all_rmse = {}
    total_iters = 0
    full_trace = []
    total_obj = 0.0
    for mat in maturities:
        params, rmse, iters, trace, fun = _fit_one(
            CalibrationProblem(
                quotes={mat: problem.quotes[mat]}, mode=problem.mode,
                free_params=problem.free_params, bounds=problem.bounds,
                pricing_engine=problem.pricing_engine, kernel=problem.kernel,
                curve=problem.curve, conventions=problem.conventions,
                start=problem.start, multistart=problem.multistart,
                seed=problem.seed,
                objective_weight=problem.objective_weight,
                mc_config=problem.mc_config, mc_grid_n=problem.mc_grid_n),
            [mat])
        all_params[mat] = params
        all_rmse[mat] = rmse[mat]
        total_iters += iters
        full_trace.extend(trace)
        total_obj += fun
    return CalibrationResult(problem.mode, all_params, all_rmse, total_iters,
                             tuple(full_trace), total_obj,
                             time.perf_counter() - tic)


# ---------------------------------------------------------------------------
# Implied smiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmilePoint:
    strike: float
    price: float
    implied_vol: float   # nan when flagged
    flag: str            # "ok" | "outside_band"


def implied_smile(model, maturity: float, strikes, window: float,
                  engine: str = "fourier",
                  config: McConfig = McConfig(paths=100_000, seed=0),
                  grid_n: int = 90, valuation_time: float = 0.0):
    """Model smile: prices and lognormal implied vols across strikes.

    The VIX future (forward for the vol quotation) is the zero-strike call.
    ``model`` is either a ModulatedModel or a (kernel, curve) pair for the
    pure Gaussian-Volterra case (Monte Carlo engine only).  Rows whose price
    falls outside the no-arbitrage band are flagged rather than raised.
    """
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    if np.any(strikes <= 0.0):
        raise ValidationError("smile strikes must be positive")

    if isinstance(model, ModulatedModel) and engine == "fourier":
        future = approximate_price_fourier(model, valuation_time, maturity,
                                           window, 0.0)
        prices = np.asarray(approximate_price_fourier(
            model, valuation_time, maturity, window, strikes))
    else:
        grid = DiscretizationGrid(maturity, window, grid_n, 2.0)
        if isinstance(model, ModulatedModel):
            samples = sample_vix_squared_modulated(model, grid, config,
                                                   valuation_time)
        else:
            kernel, curve = model
            samples = sample_vix_squared(kernel, curve, grid, config,
                                         valuation_time)
        future = price_from_samples(samples, VixPayoff.future()).estimate
        prices = np.array([
            price_from_samples(samples, VixPayoff.call(k)).estimate
            for k in strikes])

    points = []
    for strike, price in zip(strikes, prices):
        try:
            vol = black_implied_vol(float(price), float(future),
                                    float(strike),
                                    maturity - valuation_time)
            points.append(SmilePoint(float(strike), float(price), vol, "ok"))
        except (ArbitrageError, NumericalError):
            points.append(SmilePoint(float(strike), float(price),
                                     float("nan"), "outside_band"))
    return points
