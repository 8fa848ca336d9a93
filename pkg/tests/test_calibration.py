import math

import numpy as np
import pytest

from vixvolterra.calibration import (CalibrationProblem, calibrate,
                                     implied_smile)
from vixvolterra.curves import ForwardVarianceCurve
from vixvolterra.errors import CalibrationError, ValidationError
from vixvolterra.kernels import PowerLawKernel
from vixvolterra.lognormal import McConfig
from vixvolterra.marketdata import MarketConventions, VixOptionQuote
from vixvolterra.modulated import (LevyOuModulator, ModulatedModel,
                                   approximate_price_fourier)

CONV = MarketConventions()
KERNEL = PowerLawKernel(alpha=0.2, hurst=0.1)
TRUE = {"lambda": 0.08, "Lambda": 0.71, "a": 6.18, "gamma0": 0.05,
        "xi0": 0.013}
MONEYNESS = np.array([0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.3])


def make_model(maturity_days, xi0=TRUE["xi0"]):
    years = CONV.years(maturity_days)
    return ModulatedModel(
        KERNEL,
        LevyOuModulator(TRUE["lambda"], TRUE["Lambda"], TRUE["a"],
                        TRUE["gamma0"]),
        ForwardVarianceCurve.flat(xi0),
        years + CONV.window_years + 1e-9), years


def synthetic_quotes(maturity_days, noise=0.0, seed=0):
    model, years = make_model(maturity_days)
    future = approximate_price_fourier(model, 0.0, years, CONV.window_years,
                                       0.0, "future")
    strikes = future * MONEYNESS
    prices = np.asarray(approximate_price_fourier(
        model, 0.0, years, CONV.window_years, strikes))
    if noise:
        rng = np.random.default_rng(seed)
        prices = np.maximum(prices + noise * rng.standard_normal(len(prices)),
                            1e-9)
    return [VixOptionQuote(maturity_days, float(k), float(p))
            for k, p in zip(strikes, prices)]


START = {"lambda": 0.12, "Lambda": 1.1, "a": 8.0, "gamma0": 0.08,
         "xi0": 0.018}


class TestCalibrate:
    def test_price_space_round_trip(self):
        problem = CalibrationProblem(
            quotes={7: synthetic_quotes(7)}, mode="per_slice", kernel=KERNEL,
            start=START, multistart=2, seed=42)
        result = calibrate(problem)
        assert result.per_maturity_rmse[7] < 0.005

    def test_zero_noise_start_at_truth_terminates_immediately(self):
        problem = CalibrationProblem(
            quotes={7: synthetic_quotes(7)}, mode="per_slice", kernel=KERNEL,
            start=dict(TRUE), multistart=1, seed=1)
        result = calibrate(problem)
        assert result.per_maturity_rmse[7] < 1e-6
        assert result.iterations <= 2

    def test_deterministic_given_seed(self):
        problem = CalibrationProblem(
            quotes={7: synthetic_quotes(7)}, mode="per_slice", kernel=KERNEL,
            start=START, multistart=2, seed=9)
        a = calibrate(problem)
        b = calibrate(problem)
        assert a.params == b.params
        assert a.objective_trace == b.objective_trace
        assert a.per_maturity_rmse == b.per_maturity_rmse

    def test_objective_not_worse_than_any_start(self):
        from vixvolterra.calibration import (_objective_factory,
                                             _starting_points)
        problem = CalibrationProblem(
            quotes={7: synthetic_quotes(7)}, mode="per_slice", kernel=KERNEL,
            start=START, multistart=3, seed=5)
        result = calibrate(problem)
        free = problem.effective_free()
        horizon = CONV.years(7) + CONV.window_years + 1e-9
        bounds = problem.effective_bounds(horizon)
        bounds_arr = np.array([bounds[p] for p in free])
        objective, _ = _objective_factory(problem, [7], free)
        starts = _starting_points(problem, free, bounds_arr, 2, [7])
        assert all(result.objective <= objective(x0) + 1e-12 for x0 in starts)

    def test_weight_scaling_leaves_argmin_unchanged(self):
        # the overall weight is normalised out before optimisation, and
        # scaling by a power of two is float-exact: identical iterates
        quotes = {7: synthetic_quotes(7)}
        base = CalibrationProblem(quotes=quotes, mode="per_slice",
                                  kernel=KERNEL, multistart=1, seed=3)
        scaled = CalibrationProblem(quotes=quotes, mode="per_slice",
                                    kernel=KERNEL, multistart=1, seed=3,
                                    objective_weight=4.0)
        a = calibrate(base)
        b = calibrate(scaled)
        assert a.params == b.params
        assert tuple(4.0 * np.array(a.objective_trace)) == b.objective_trace

    def test_vega_weighting_flag(self):
        quotes = {7: synthetic_quotes(7)}
        problem = CalibrationProblem(
            quotes=quotes, mode="per_slice", kernel=KERNEL, multistart=1,
            seed=3, vega_weighted=True)
        result = calibrate(problem)
        assert result.per_maturity_rmse[7] < 0.005

    def test_fixed_curve_mode_drops_xi0(self):
        quotes = {7: synthetic_quotes(7)}
        problem = CalibrationProblem(
            quotes=quotes, mode="per_slice_fixed_curve", kernel=KERNEL,
            curve=ForwardVarianceCurve.flat(TRUE["xi0"]), start=START,
            multistart=2, seed=11)
        result = calibrate(problem)
        assert "xi0" not in result.params[7]
        assert result.per_maturity_rmse[7] < 0.005

    def test_joint_mode_close_to_slice_mode(self):
        noise = 5e-4
        quotes = {m: synthetic_quotes(m, noise=noise, seed=m)
                  for m in (35, 63)}
        curve = ForwardVarianceCurve.flat(TRUE["xi0"])
        near = {k: v * 1.1 for k, v in TRUE.items() if k != "xi0"}
        common = dict(kernel=KERNEL, curve=curve, start=near, multistart=1,
                      seed=13)
        slice_fit = calibrate(CalibrationProblem(
            quotes=quotes, mode="per_slice_fixed_curve", **common))
        joint_fit = calibrate(CalibrationProblem(
            quotes=quotes, mode="joint", **common))
        for m in quotes:
            assert joint_fit.per_maturity_rmse[m] <= \
                2.0 * slice_fit.per_maturity_rmse[m] + 1e-6

    def test_all_starts_infeasible_reports_diagnostics(self):
        quotes = {7: synthetic_quotes(7)}
        problem = CalibrationProblem(
            quotes=quotes, mode="per_slice", kernel=KERNEL, start=START,
            multistart=1, seed=1,
            bounds={"gamma0": (1e6, 2e6)})  # blows up every pricing call
        with pytest.raises((CalibrationError, ValidationError)):
            calibrate(problem)

    def test_needs_three_quotes_per_slice(self):
        quotes = {7: synthetic_quotes(7)[:2]}
        with pytest.raises(ValidationError):
            CalibrationProblem(quotes=quotes, kernel=KERNEL)


class TestImpliedSmile:
    def test_modulated_smile_positive_skew(self):
        model, years = make_model(7)
        future = approximate_price_fourier(model, 0.0, years,
                                           CONV.window_years, 0.0, "future")
        points = implied_smile(model, years,
                               future * np.array([1.0, 1.05, 1.15]),
                               CONV.window_years, engine="fourier")
        vols = [p.implied_vol for p in points]
        assert all(p.flag == "ok" for p in points)
        assert vols[-1] > vols[0]

    def test_rough_bergomi_smile_flat(self):
        # pure Volterra model uses the Monte Carlo engine
        kernel = PowerLawKernel(alpha=0.2, hurst=0.1)
        curve = ForwardVarianceCurve.flat(0.04)
        cfg = McConfig(paths=60_000, seed=19)
        points = implied_smile((kernel, curve), 1.0,
                               np.array([0.16, 0.2, 0.24]), 0.1, engine="mc",
                               config=cfg)
        vols = [p.implied_vol for p in points]
        assert max(vols) - min(vols) < 0.02

    def test_strike_at_future_round_trip(self):
        from vixvolterra.black import black_call
        model, years = make_model(7)
        future = approximate_price_fourier(model, 0.0, years,
                                           CONV.window_years, 0.0, "future")
        [point] = implied_smile(model, years, [future], CONV.window_years,
                                engine="fourier")
        reprice = float(black_call(future, future,
                                   point.implied_vol * math.sqrt(years)))
        assert reprice == pytest.approx(point.price, abs=1e-8)

    def test_outside_band_rows_flagged_not_raised(self):
        # deterministic model: any strike above the (certain) VIX value
        # prices to exactly zero, which no positive vol can match
        model = ModulatedModel(KERNEL, LevyOuModulator(0.0, 0.0, 6.18, 0.0),
                               ForwardVarianceCurve.flat(0.013),
                               CONV.years(7) + CONV.window_years + 1e-9)
        years = CONV.years(7)
        points = implied_smile(model, years, [0.2], CONV.window_years,
                               engine="fourier")
        assert points[0].flag == "outside_band"
        assert math.isnan(points[0].implied_vol)
