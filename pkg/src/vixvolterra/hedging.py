"""Hedge ratios for VIX options.

Three layers: the closed-form delta of the instantaneous-variance option,
pathwise Monte Carlo estimates of the functional derivative of the VIX
option price with respect to the forward-variance curve, and the perfect
two-variance-swap hedge in the CIR-modulated model where the option loads
on two independent noises.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import ncx2

from . import parallel
from .curves import ForwardVarianceCurve
from .errors import (UnstableHedgeError, UnsupportedPayoffError,
                     ValidationError)
from .kernels import Kernel
from .lognormal import (DiscretizationGrid, McConfig, ToyModel, VixPayoff,
                        build_law, scheme_weights, toy_call_price)
from .modulated import (CirModulator, ModulatedModel, _cir_transition_constants,
                        _segment_kernel_matrix)
from .quadrature import graded_rule

__all__ = [
    "McEstimate",
    "HedgeReport",
    "frechet_delta_mc",
    "volterra_single_swap_hedge",
    "cir_two_swap_hedge",
    "simulate_toy_delta_hedge",
]


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float


@dataclass(frozen=True)
class HedgeReport:
    """Instrument weights plus the estimated residual quadratic variation
    per unit time (statistically zero for a perfect hedge)."""

    instruments: tuple
    weights: dict
    residual_risk: float
    std_errors: dict


def _require_differentiable(payoff: VixPayoff):
    if payoff.kind not in ("call", "put", "future", "identity"):
        raise UnsupportedPayoffError(
            f"payoff kind {payoff.kind!r} has no bounded pathwise derivative")


def _exponential_samples(kernel, curve, grid, config, valuation_time):
    """Per-path matrix exp(Z_i) and the scheme weights (chunk-accumulated)."""
    law = build_law(kernel, grid, valuation_time)
    w_exp, _, _ = scheme_weights(grid, curve, config.scheme)
    chunks = []
    for idx, count in enumerate(parallel.chunk_counts(config.paths,
                                                      config.chunk_size)):
        rng = parallel.chunk_rng(config.seed, parallel.STREAM_GAUSSIAN, idx)
        z = law.mean + rng.standard_normal((count, law.dim)) @ law.chol.T
        chunks.append(np.exp(z))
    return np.concatenate(chunks), w_exp


def frechet_delta_mc(kernel: Kernel, curve: ForwardVarianceCurve,
                     grid: DiscretizationGrid, config: McConfig,
                     payoff: VixPayoff, date: float,
                     valuation_time: float = 0.0) -> McEstimate:
    """Pathwise estimate of the curve sensitivity density at ``date``:
    E[f'(VIX^2) E_{t,T}(v) / Theta] evaluated on the discretised functional.

    ``date`` snaps to the nearest grid date (the discrete functional only
    sees the curve through the grid cells).
    """
    _require_differentiable(payoff)
    dates = grid.dates
    if not dates[0] - 1e-12 <= date <= dates[-1] + 1e-12:
        raise ValidationError("date must lie in the averaging window")
    idx = int(np.argmin(np.abs(dates - date)))
    exp_z, w_exp = _exponential_samples(kernel, curve, grid, config,
                                        valuation_time)
    vix2 = exp_z @ w_exp
    samples = payoff.derivative(vix2) * exp_z[:, idx] / grid.window
    return McEstimate(float(np.mean(samples)),
                      float(np.std(samples, ddof=1) / math.sqrt(samples.size)))


def _swap_loading_w(kernel, curve, window, valuation_time):
    """(2 / width) int_window x(u) g(u - t) du of a variance swap."""
    lo, hi = window
    nodes, weights = graded_rule(lo, hi, "left", order=16, levels=40)
    g_vals = np.asarray(kernel.evaluate(nodes, valuation_time))
    return 2.0 * float(np.dot(weights, curve.value(nodes) * g_vals)) / (hi - lo)


def volterra_single_swap_hedge(kernel: Kernel, curve: ForwardVarianceCurve,
                               grid: DiscretizationGrid, config: McConfig,
                               payoff: VixPayoff, valuation_time: float = 0.0,
                               swap_window=None) -> HedgeReport:
    """Hedge ratio in a single variance swap under the one-factor model.

    All forward variances share one Brownian driver, so matching the
    instantaneous diffusion loading gives a perfect hedge.  The residual
    loading mismatch is re-estimated on a held-out half of the paths.
    """
    _require_differentiable(payoff)
    t = valuation_time
    dates = grid.dates
    if swap_window is None:
        swap_window = (grid.maturity, grid.maturity + grid.window)
    exp_z, w_exp = _exponential_samples(kernel, curve, grid, config, t)
    vix2 = exp_z @ w_exp
    g_at_dates = np.asarray(kernel.evaluate(dates, t))
    option_w_samples = 2.0 * payoff.derivative(vix2) * (
        exp_z @ (w_exp * g_at_dates))
    swap_w = _swap_loading_w(kernel, curve, swap_window, t)

    half = option_w_samples.size // 2
    ratio = float(np.mean(option_w_samples[:half])) / swap_w
    held = option_w_samples[half:]
    mism = float(np.mean(held)) - ratio * swap_w
    mism_se = float(np.std(held, ddof=1) / math.sqrt(held.size))
    residual = mism ** 2 - mism_se ** 2
    residual_se = math.sqrt(2.0) * mism_se ** 2 + 2.0 * abs(mism) * mism_se
    label = f"varswap[{swap_window[0]:.6g},{swap_window[1]:.6g}]"
    return HedgeReport(
        instruments=(label,), weights={label: ratio},
        residual_risk=residual,
        std_errors={"residual_risk": residual_se, label: mism_se / swap_w})


# ---------------------------------------------------------------------------
# CIR two-swap hedge
# ---------------------------------------------------------------------------

def _cir_paths_from_uniforms(modulator: CirModulator, uniforms: np.ndarray,
                             dt: float, gamma0: float) -> np.ndarray:
    """CIR trajectories via inverse-transform sampling of the exact
    transitions; common uniforms give pathwise-smooth dependence on gamma0."""
    if modulator.long_run <= 0.0 and modulator.vol_of_vol > 0.0:
        raise ValidationError(
            "inverse-transform CIR simulation needs theta > 0")
    paths, steps = uniforms.shape
    values = np.empty((paths, steps + 1))
    values[:, 0] = gamma0
    decay, c, df = _cir_transition_constants(modulator, dt)
    theta = modulator.long_run
    for j in range(steps):
        prev = values[:, j]
        if modulator.vol_of_vol == 0.0:
            values[:, j + 1] = theta + (prev - theta) * decay
        else:
            values[:, j + 1] = c * ncx2.ppf(uniforms[:, j], df,
                                            prev * decay / c)
    return values


def _swap_loading_psi(model, curve, window, valuation_time):
    """(1 / width) int_window x(u) psi(u - t) du of a variance swap."""
    lo, hi = window
    nodes, weights = graded_rule(lo, hi, "none", order=24, levels=0)
    psi_vals = np.asarray(model.psi_phi.psi(nodes - valuation_time))
    return float(np.dot(weights, curve.value(nodes) * psi_vals)) / (hi - lo)


def cir_two_swap_hedge(model: ModulatedModel, valuation_time: float,
                       maturity: float, window: float, strike: float,
                       swap_windows, config: McConfig, n: int = 48,
                       steps: int = 64, bump: float = 1e-3) -> HedgeReport:
    """Perfect hedge of a VIX call with two variance swaps under the
    CIR-modulated model.

    The 2x2 system matches the option's diffusion loadings on the kernel
    noise and on the modulator noise; both are estimated pathwise (the
    modulator sensitivity by a common-uniform bump of gamma0).  Residual
    risk is the bias-corrected quadratic mismatch on a held-out batch,
    which is statistically zero when the hedge is exact.
    """
    mod = model.modulator
    if not isinstance(mod, CirModulator):
        raise ValidationError("two-swap hedge applies to the CIR modulator")
    (w1, w2) = swap_windows
    if abs(w1[0] - w2[0]) < 1e-12 and abs(w1[1] - w2[1]) < 1e-12:
        raise UnstableHedgeError("identical swap windows: singular system")
    t, T = valuation_time, maturity
    payoff = VixPayoff.call(strike)
    grid = DiscretizationGrid(T, window, n, 2.0)
    dates = grid.dates
    sol = model.psi_phi
    w_exp, _, _ = scheme_weights(grid, model.curve, config.scheme)
    g_at_dates = np.asarray(model.kernel.evaluate(dates, t))
    psi_at_dates = np.asarray(sol.psi(dates - t))
    psi_T = np.asarray(sol.psi(dates - T))
    phi_base = (np.asarray(sol.phi(dates - T))
                - np.asarray(sol.phi(dates - t)))

    times = np.linspace(t, T, steps + 1)
    cells = np.stack([
        _segment_kernel_matrix(model.kernel, dates, times[j], times[j + 1],
                               singular_at=T if j == steps - 1 else None,
                               order=8)
        for j in range(steps)])
    dt = (T - t) / steps

    def batch_values(gamma0, uniforms, normals):
        gammas = _cir_paths_from_uniforms(mod, uniforms, dt, gamma0)
        cell_avg = 0.5 * (gammas[:, :-1] + gammas[:, 1:])
        covs = np.einsum("pc,cij->pij", cell_avg, cells)
        covs += 1e-14 * np.trace(covs, axis1=1, axis2=2)[:, None, None] \
            * np.eye(dates.size)
        chols = np.linalg.cholesky(covs)
        mean = phi_base + np.multiply.outer(gammas[:, -1], psi_T) \
            - gamma0 * psi_at_dates
        z = mean + np.einsum("pij,pj->pi", chols, normals)
        return np.exp(z)

    paths = config.paths
    rng_mod = parallel.chunk_rng(config.seed, parallel.STREAM_MODULATOR, 0)
    rng_gauss = parallel.chunk_rng(config.seed, parallel.STREAM_GAUSSIAN, 0)
    uniforms = rng_mod.uniform(size=(paths, steps))
    normals = rng_gauss.standard_normal((paths, dates.size))

    exp_z = batch_values(mod.gamma0, uniforms, normals)
    vix2 = exp_z @ w_exp
    fprime = payoff.derivative(vix2)
    w_samples = 2.0 * fprime * (exp_z @ (w_exp * g_at_dates))
    psi_samples = fprime * (exp_z @ (w_exp * psi_at_dates))

    h = bump * max(mod.gamma0, 0.1)
    up = payoff.value(batch_values(mod.gamma0 + h, uniforms, normals) @ w_exp)
    dn = payoff.value(batch_values(mod.gamma0 - h, uniforms, normals) @ w_exp)
    gamma_samples = (up - dn) / (2.0 * h)
    b_samples = gamma_samples + psi_samples

    swap_w = np.array([_swap_loading_w(model.kernel, model.curve, w, t)
                       for w in (w1, w2)])
    swap_b = np.array([_swap_loading_psi(model, model.curve, w, t)
                       for w in (w1, w2)])
    system = np.vstack([swap_w, swap_b])
    if mod.vol_of_vol == 0.0:
        # modulator noise is absent: single-swap hedge, second weight zero
        half = paths // 2
        weights_vec = np.array([float(np.mean(w_samples[:half])) / swap_w[0],
                                0.0])
        mism_w = float(np.mean(w_samples[half:])) \
            - weights_vec @ swap_w
        se_w = float(np.std(w_samples[half:], ddof=1)
                     / math.sqrt(paths - half))
        residual = 4.0 * mod.gamma0 * (mism_w ** 2 - se_w ** 2)
        residual_se = 4.0 * mod.gamma0 * math.sqrt(2.0) * se_w ** 2
        mism_b = 0.0
        se_b = 0.0
    else:
        cond = np.linalg.cond(system)
        if cond > 1e8:
            raise UnstableHedgeError(
                f"swap loading matrix nearly singular (cond={cond:.2e})")
        half = paths // 2
        targets = np.array([np.mean(w_samples[:half]),
                            np.mean(b_samples[:half])])
        weights_vec = np.linalg.solve(system, targets)
        mism_w = float(np.mean(w_samples[half:])) - weights_vec @ swap_w
        mism_b = float(np.mean(b_samples[half:])) - weights_vec @ swap_b
        m = paths - half
        se_w = float(np.std(w_samples[half:], ddof=1) / math.sqrt(m))
        se_b = float(np.std(b_samples[half:], ddof=1) / math.sqrt(m))
        gam = mod.gamma0
        residual = 4.0 * gam * (mism_w ** 2 - se_w ** 2) \
            + mod.vol_of_vol ** 2 * gam * (mism_b ** 2 - se_b ** 2)
        residual_se = math.sqrt(
            2.0 * (4.0 * gam * se_w ** 2) ** 2
            + 2.0 * (mod.vol_of_vol ** 2 * gam * se_b ** 2) ** 2)

    labels = tuple(f"varswap[{w[0]:.6g},{w[1]:.6g}]" for w in (w1, w2))
    return HedgeReport(
        instruments=labels,
        weights={labels[0]: float(weights_vec[0]),
                 labels[1]: float(weights_vec[1])},
        residual_risk=float(residual),
        std_errors={"residual_risk": float(residual_se),
                    "w_loading_mismatch": se_w,
                    "b_loading_mismatch": se_b})


# ---------------------------------------------------------------------------
# Toy-model discrete delta hedge
# ---------------------------------------------------------------------------

def simulate_toy_delta_hedge(model: ToyModel, strike: float, t: float,
                             expiry: float, rebalances: int, paths: int,
                             seed: int = 0) -> np.ndarray:
    """P&L of selling the option and delta hedging at ``rebalances``
    equispaced dates; the variance shrinks toward zero as rebalancing
    becomes continuous."""
    if rebalances < 1:
        raise ValidationError("need at least one rebalance date")
    rng = parallel.chunk_rng(seed, parallel.STREAM_GAUSSIAN, 0)
    s_grid = np.linspace(t, expiry, rebalances + 1)
    c_vals = np.array([model.conditional_variance(s) for s in s_grid])
    dz = rng.standard_normal((paths, rebalances)) \
        * np.sqrt(np.maximum(np.diff(c_vals), 0.0))
    z_paths = np.concatenate([np.zeros((paths, 1)), np.cumsum(dz, axis=1)],
                             axis=1)
    xi = model.forward_variance * np.exp(
        2.0 * z_paths - 2.0 * (c_vals - c_vals[0]))

    price0 = toy_call_price(model, strike, t, expiry).price
    pnl = -np.maximum(xi[:, -1] - strike, 0.0) + price0
    for j in range(rebalances):
        var_left = c_vals[-1] - c_vals[j]
        if var_left <= 0.0:
            delta = (xi[:, j] > strike).astype(float)
        else:
            root = math.sqrt(var_left)
            d1 = (0.5 * np.log(xi[:, j] / strike) + var_left) / root
            delta = ndtr(d1)
        pnl += delta * (xi[:, j + 1] - xi[:, j])
    return pnl
