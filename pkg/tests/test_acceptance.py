"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run pytest with -s to see them all).
The heavy Monte Carlo artifacts are shared through module-scoped fixtures.
"""

import dataclasses
import math

import numpy as np
import pytest

from vixvolterra import parallel
from vixvolterra.black import black_implied_vol
from vixvolterra.calibration import CalibrationProblem, calibrate
from vixvolterra.curves import ForwardVarianceCurve
from vixvolterra.hedging import cir_two_swap_hedge, simulate_toy_delta_hedge
from vixvolterra.kernels import PowerLawKernel
from vixvolterra.lognormal import (DiscretizationGrid, McConfig, ToyModel,
                                   VixPayoff, build_law, convergence_study,
                                   price_from_samples, price_vix_option_mc,
                                   sample_vix_squared)
from vixvolterra.marketdata import VixOptionQuote
from vixvolterra.modulated import (CirModulator, LevyOuModulator,
                                   ModulatedModel, _build_ou_simulator,
                                   _cir_step, approximate_price_fourier,
                                   laplace_transform,
                                   price_vix_option_mc_modulated,
                                   sample_vix_squared_modulated)

KERNEL = PowerLawKernel(alpha=0.2, hurst=0.1)
FLAT_20PCT = ForwardVarianceCurve.flat(0.04)   # sqrt(xi0) = 20%
ROW1 = LevyOuModulator(0.08, 0.71, 6.18, 0.05)
ROW1_XI0 = 0.013
T7 = 7 / 365
WINDOW = 30 / 365


def report(criterion, passed, detail):
    status = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {status} -- {detail}")
    assert passed, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def convergence_results():
    cfg = McConfig(paths=50_000, seed=20140514, use_control_variate=True)
    payoff = VixPayoff.call(0.1)
    out = {}
    for scheme, kappa in (("rectangle", 1.0), ("trapezoid", 2.0)):
        out[scheme] = convergence_study(
            KERNEL, FLAT_20PCT, 1.0, 0.1, [5, 10, 20, 40, 80], 2000,
            scheme, kappa, cfg, payoff)
    return out


def test_criterion_1_rectangle_convergence_rate(convergence_results):
    res = convergence_results["rectangle"]
    ok = res.slope is not None and -1.3 <= res.slope <= -0.7
    report(1, ok, f"rectangle log-log slope {res.slope:.3f} in [-1.3, -0.7]")


def test_criterion_2_trapezoid_convergence_rate(convergence_results):
    res = convergence_results["trapezoid"]
    used = [r.n for r in res.rows if r.used_in_fit]
    ok = res.slope is not None and -2.4 <= res.slope <= -1.6
    report(2, ok, f"trapezoid log-log slope {res.slope:.3f} in [-2.4, -1.6] "
                  f"(errors above 3 SE at n={used})")


def test_criterion_3_flat_rough_bergomi_smile():
    grid = DiscretizationGrid(1.0, 0.1, 90, 2.0)
    cfg = McConfig(paths=100_000, seed=3)
    samples = sample_vix_squared(KERNEL, FLAT_20PCT, grid, cfg)
    future = price_from_samples(samples, VixPayoff.future()).estimate
    vols = []
    for m in np.linspace(0.8, 1.2, 7):
        price = price_from_samples(samples,
                                   VixPayoff.call(m * future)).estimate
        vols.append(black_implied_vol(price, future, m * future, 1.0))
    spread = max(vols) - min(vols)
    report(3, spread < 0.02,
           f"implied-vol spread {spread:.4f} < 0.02 across K/F in [0.8, 1.2]")


def test_criterion_4_doleans_martingale_suite():
    paths = 200_000
    # Gaussian Volterra law at 5 grid dates
    law = build_law(KERNEL, DiscretizationGrid(1.0, 0.1, 4, 2.0))
    rng = np.random.default_rng(4)
    exp_z = np.exp(law.sample(rng, paths))
    z_plain = np.abs(exp_z.mean(axis=0) - 1.0) \
        / (exp_z.std(axis=0, ddof=1) / math.sqrt(paths))

    # modulated conditional scheme: per-date means via one-hot weights
    model = ModulatedModel(KERNEL, ROW1, ForwardVarianceCurve.flat(ROW1_XI0),
                           T7 + WINDOW + 1e-9)
    grid = DiscretizationGrid(T7, WINDOW, 4, 2.0)
    cfg = McConfig(paths=paths, seed=5, use_control_variate=False)
    sim = _build_ou_simulator(model, grid, cfg, 0.0)
    z_mod = []
    for date_idx in range(5):
        onehot = np.zeros(5)
        onehot[date_idx] = 1.0
        sub = dataclasses.replace(sim, w_exp=onehot)
        chunks = [sub.simulate_chunk(i, c)[0] for i, c in
                  enumerate(parallel.chunk_counts(paths, cfg.chunk_size))]
        vals = np.concatenate(chunks)
        z_mod.append(abs(vals.mean() - 1.0)
                     / (vals.std(ddof=1) / math.sqrt(paths)))
    worst = max(z_plain.max(), max(z_mod))
    report(4, worst < 3.0,
           f"max |mean exp(Z) - 1| z-score {worst:.2f} < 3 "
           f"(Gaussian {z_plain.max():.2f}, modulated {max(z_mod):.2f})")


def test_criterion_5_affine_laplace_transform():
    horizon = 1 / 12
    paths = 200_000
    # Levy-OU at the first calibrated parameter set
    model = ModulatedModel(KERNEL, ROW1, ForwardVarianceCurve.flat(ROW1_XI0),
                           horizon + 1e-9)
    closed_ou = laplace_transform(model, 0.0, horizon, ROW1.gamma0)
    rng = np.random.default_rng(6)
    lam, intensity, decay_a = (ROW1.mean_reversion, ROW1.jump_intensity,
                               ROW1.jump_decay)
    counts = rng.poisson(intensity * horizon, paths)
    total = int(counts.sum())
    times = rng.uniform(0.0, horizon, total)
    sizes = rng.exponential(1.0 / decay_a, total)
    owners = np.repeat(np.arange(paths), counts)

    def exact_response(taus):
        # 2 int_tau^u e^{-lam (s - tau)} |g(u-s)|^2 ds via w = (u-s)^(2H)
        taus = np.atleast_1d(taus)
        x, w = np.polynomial.legendre.leggauss(64)
        h2 = 2 * KERNEL.hurst
        upper = (horizon - taus) ** h2
        half = 0.5 * upper
        nodes = half[:, None] * (x[None, :] + 1.0)
        s_vals = horizon - nodes ** (1.0 / h2)
        integ = np.exp(-lam * (s_vals - taus[:, None]))
        return (2.0 * KERNEL.alpha ** 2 / h2) * np.sum(
            (half[:, None] * w[None, :]) * integ, axis=1)

    acc = np.zeros(paths)
    if total:
        np.add.at(acc, owners, sizes * exact_response(times))
    base = float(exact_response(np.array([0.0]))[0])
    samples_ou = np.exp(ROW1.gamma0 * base + acc)
    se_ou = samples_ou.std(ddof=1) / math.sqrt(paths)
    z_ou = abs(closed_ou - samples_ou.mean()) / se_ou

    # CIR set satisfying 4 G(T) T delta^2 <= 1
    cir = CirModulator(2.0, 1.0, 0.5, 1.0)
    cmodel = ModulatedModel(KERNEL, cir, ForwardVarianceCurve.flat(ROW1_XI0),
                            horizon + 1e-9)
    closed_cir = laplace_transform(cmodel, 0.0, horizon, cir.gamma0)
    steps = 768
    h2 = 2 * KERNEL.hurst
    w_grid = np.linspace(0.0, horizon ** h2, steps + 1)
    s_grid = (horizon - w_grid ** (1.0 / h2))[::-1]
    rng = np.random.default_rng(7)
    current = np.full(paths, cir.gamma0)
    acc = np.zeros(paths)
    w_rev = (horizon - s_grid) ** h2
    for j in range(steps):
        nxt = _cir_step(rng, cir, current, s_grid[j + 1] - s_grid[j])
        acc += 0.5 * (current + nxt) * abs(w_rev[j + 1] - w_rev[j])
        current = nxt
    samples_cir = np.exp((2.0 * KERNEL.alpha ** 2 / h2) * acc)
    se_cir = samples_cir.std(ddof=1) / math.sqrt(paths)
    z_cir = abs(closed_cir - samples_cir.mean()) / se_cir

    report(5, z_ou < 3.0 and z_cir < 3.0,
           f"Laplace closed form vs MC: |z| OU {z_ou:.2f}, CIR {z_cir:.2f} "
           "(both < 3)")


def test_criterion_6_fourier_approximation_accuracy():
    model = ModulatedModel(KERNEL, ROW1, ForwardVarianceCurve.flat(ROW1_XI0),
                           T7 + WINDOW + 1e-9)
    grid = DiscretizationGrid(T7, WINDOW, 90, 2.0)
    cfg = McConfig(paths=50_000, seed=8, use_control_variate=False)
    samples = sample_vix_squared_modulated(model, grid, cfg)
    future = price_from_samples(samples, VixPayoff.future()).estimate
    moneyness = np.array([0.85, 0.9, 0.95, 1.0, 1.02, 1.05, 1.08])
    strikes = future * moneyness
    fourier = approximate_price_fourier(model, 0.0, T7, WINDOW, strikes)
    worst = 0.0
    for strike, fprice in zip(strikes, fourier):
        mc = price_from_samples(samples, VixPayoff.call(strike))
        worst = max(worst, abs(fprice - mc.estimate) / (1.96 * mc.std_error))
    report(6, worst < 1.0,
           f"Fourier price within the MC 95% CI at 7 strikes "
           f"(max |error|/CI half-width {worst:.2f})")


def test_criterion_7_calibration_round_trip():
    model = ModulatedModel(KERNEL, ROW1, ForwardVarianceCurve.flat(ROW1_XI0),
                           T7 + WINDOW + 1e-9)
    future = approximate_price_fourier(model, 0.0, T7, WINDOW, 0.0, "future")
    strikes = future * np.array([0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.3])
    prices = approximate_price_fourier(model, 0.0, T7, WINDOW, strikes)
    quotes = {7: [VixOptionQuote(7, float(k), float(p))
                  for k, p in zip(strikes, prices)]}
    start = {"lambda": 0.12, "Lambda": 1.1, "a": 8.0, "gamma0": 0.08,
             "xi0": 0.018}  # perturbed away from the generator
    problem = CalibrationProblem(quotes=quotes, mode="per_slice",
                                 kernel=KERNEL, start=start, multistart=2,
                                 seed=9)
    result = calibrate(problem)
    rmse = result.per_maturity_rmse[7]
    report(7, rmse < 0.005,
           f"synthetic quote recovery RMSE {rmse:.2e} < 0.005")


def test_criterion_8_toy_model_hedge():
    model = ToyModel(0.04, lambda t: 0.04 * t)
    pnl10 = simulate_toy_delta_hedge(model, 0.04, 0.0, 1.0, 10, 50_000,
                                     seed=10)
    pnl100 = simulate_toy_delta_hedge(model, 0.04, 0.0, 1.0, 100, 50_000,
                                      seed=10)
    ratio = pnl100.var() / pnl10.var()
    report(8, ratio <= 0.3,
           f"hedged P&L variance ratio Var(100)/Var(10) = {ratio:.3f} <= 0.3")


def test_criterion_9_cir_two_swap_hedge():
    t_mat = 1 / 12
    cir = CirModulator(2.0, 1.0, 0.5, 1.0)
    model = ModulatedModel(KERNEL, cir, ForwardVarianceCurve.flat(ROW1_XI0),
                           t_mat + 2.0 * WINDOW)
    windows = ((t_mat, t_mat + WINDOW),
               (t_mat + 0.5 * WINDOW, t_mat + 1.5 * WINDOW))
    reportt = cir_two_swap_hedge(
        model, 0.0, t_mat, WINDOW, 0.11, windows,
        McConfig(paths=4000, seed=11, scheme="rectangle",
                 use_control_variate=False), n=32, steps=48)
    resid, se = reportt.residual_risk, reportt.std_errors["residual_risk"]
    report(9, abs(resid) <= 3.0 * se,
           f"residual quadratic variation {resid:.2e} within 3 SE "
           f"({3.0 * se:.2e}) of zero")


def test_criterion_10_reduction_consistency():
    frozen = LevyOuModulator(0.0, 0.0, 50.0, 1.0)
    model = ModulatedModel(KERNEL, frozen, ForwardVarianceCurve.flat(0.04),
                           1.0 + 0.1 + 1e-9)
    grid = DiscretizationGrid(1.0, 0.1, 60, 2.0)
    cfg = McConfig(paths=50_000, seed=12, use_control_variate=False)
    payoff = VixPayoff.call(0.2)
    p_mod = price_vix_option_mc_modulated(model, grid, cfg, payoff)
    p_pure = price_vix_option_mc(KERNEL, ForwardVarianceCurve.flat(0.04),
                                 grid, cfg, payoff)
    gap = abs(p_mod.estimate - p_pure.estimate)
    tol = 3.0 * math.hypot(p_mod.std_error, p_pure.std_error)
    report(10, gap <= tol,
           f"Gamma == 1 reprices the pure Volterra model: |diff| {gap:.2e} "
           f"<= {tol:.2e} (common seeds)")


def test_criterion_11_worker_count_determinism():
    grid = DiscretizationGrid(1.0, 0.1, 40, 2.0)
    payoff = VixPayoff.call(0.15)
    runs = [price_vix_option_mc(
        KERNEL, FLAT_20PCT, grid,
        McConfig(paths=16_384, seed=13, chunk_size=2048, workers=w), payoff)
        for w in (1, 2, 3)]
    same_pure = runs[0] == runs[1] == runs[2]

    model = ModulatedModel(KERNEL, ROW1, ForwardVarianceCurve.flat(ROW1_XI0),
                           T7 + WINDOW + 1e-9)
    mgrid = DiscretizationGrid(T7, WINDOW, 30, 2.0)
    mruns = [price_vix_option_mc_modulated(
        model, mgrid,
        McConfig(paths=16_384, seed=14, chunk_size=2048, workers=w), payoff)
        for w in (1, 2)]
    same_mod = mruns[0] == mruns[1]
    report(11, same_pure and same_mod,
           "identical numerical output across worker counts "
           f"(pure {same_pure}, modulated {same_mod})")
