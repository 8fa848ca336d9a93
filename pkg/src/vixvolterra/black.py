"""Black-76 style formulas on a forward, plus the implied-vol inverter."""

import math

import numpy as np
from scipy.special import ndtr

from .errors import ArbitrageError, NumericalError

__all__ = [
    "black_call",
    "black_put",
    "lognormal_option_from_moments",
    "black_implied_vol",
]


def black_call(forward, strike, total_std):
    """Undiscounted call E[(F e^{N(0,s^2)-s^2/2} - K)^+] with s = total_std.

    Degenerate cases are exact: zero variance gives the intrinsic value and
    a zero strike gives the forward."""
    forward = np.asarray(forward, dtype=float)
    strike = np.asarray(strike, dtype=float)
    total_std = np.asarray(total_std, dtype=float)
    intrinsic = np.maximum(forward - strike, 0.0)
    out = np.where(total_std <= 0.0, intrinsic, np.nan)
    live = (total_std > 0.0) & (strike > 0.0)
    zero_k = (total_std > 0.0) & (strike <= 0.0)
    out = out.copy()
    if np.any(zero_k):
        out[zero_k] = np.broadcast_to(forward, out.shape)[zero_k]
    if np.any(live):
        f, k, s = (np.broadcast_to(arr, out.shape)[live]
                   for arr in np.broadcast_arrays(forward, strike, total_std))
        d1 = np.log(f / k) / s + 0.5 * s
        d2 = d1 - s
        out[live] = f * ndtr(d1) - k * ndtr(d2)
    return out if out.ndim else float(out)

def black_put(forward, strike, total_std):
    return black_call(forward, strike, total_std) - (np.asarray(forward, float)
                                                     - np.asarray(strike, float))


def lognormal_option_from_moments(mean_log, var_log, strike, kind="call"):
    """Option on e^Y with Y ~ N(mean_log, var_log); vectorised over moments.

    kind "future" returns E[e^Y]; "call"/"put" the corresponding payoff.
    """
    mean_log = np.asarray(mean_log, dtype=float)
    var_log = np.maximum(np.asarray(var_log, dtype=float), 0.0)
    fwd = np.exp(mean_log + 0.5 * var_log)
    if kind == "future":
        return fwd if fwd.ndim else float(fwd)
    std = np.sqrt(var_log)
    if kind == "call":
        return black_call(fwd, strike, std)
    if kind == "put":
        return black_put(fwd, strike, std)
    raise ValueError(f"unknown option kind {kind!r}")


def black_implied_vol(price: float, forward: float, strike: float,
                      maturity: float) -> float:
    """Invert the Black call formula for the lognormal volatility.

    Uses a bisection-safeguarded Newton iteration; the returned vol reprices
    the option to an absolute residual below 1e-10.  Prices outside the
    no-arbitrage band ((F-K)^+, F) raise ArbitrageError.
    """
    if maturity <= 0.0:
        raise ArbitrageError("implied vol needs a positive maturity")
    if forward <= 0.0 or strike <= 0.0:
        raise ArbitrageError("implied vol needs positive forward and strike")
    lo_band = max(forward - strike, 0.0)
    if not lo_band < price < forward:
        raise ArbitrageError(
            f"price {price} outside the arbitrage band ({lo_band}, {forward})")

    sqrt_t = math.sqrt(maturity)

    def f(sigma):
        return float(black_call(forward, strike, sigma * sqrt_t)) - price

    lo, hi = 1e-12, 1.0
    while f(hi) < 0.0:
        hi *= 2.0
        if hi > 1e4:
            raise NumericalError("implied vol bracket exhausted")
    sigma = 0.5 * (lo + hi)
    for _ in range(100):
        val = f(sigma)
        if abs(val) < 1e-10:
            return sigma
        if val > 0.0:
            hi = sigma
        else:
            lo = sigma
        s = sigma * sqrt_t
        d1 = math.log(forward / strike) / s + 0.5 * s
        vega = forward * math.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi) * sqrt_t
        if vega > 1e-14:
            candidate = sigma - val / vega
            if lo < candidate < hi:
                sigma = candidate
                continue
        sigma = 0.5 * (lo + hi)
    raise NumericalError("implied vol iteration failed to converge",
                         achieved_tolerance=abs(f(sigma)))
