"""Gauss-Legendre panel rules, including geometrically graded meshes.

Kernel covariances involve integrands with an algebraic singularity at one
endpoint ((T - s)^(H - 1/2) as s -> T).  A fixed-order rule on panels whose
widths shrink geometrically toward that endpoint integrates such functions
to near machine precision: on every panel the integrand varies by a bounded
factor, and the panel contributions decay geometrically.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _gl_reference(order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, weights


def panel_rule(a: float, b: float, order: int = 16):
    """Gauss-Legendre nodes and weights on a single interval [a, b]."""
    x, w = _gl_reference(order)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def graded_rule(a: float, b: float, singular_end: str = "right",
                order: int = 16, levels: int = 48):
    """Panel rule on [a, b] with panels refined geometrically toward one end.

    Parameters
    ----------
    singular_end : {"right", "left", "none"}
        Which endpoint the integrand may be (integrably) singular at.
    order : int
        Gauss-Legendre order per panel.
    levels : int
        Number of geometric refinement levels; the finest panel has width
        (b - a) * 2**-levels.

    Returns
    -------
    (nodes, weights) : tuple of ndarray
        All nodes lie strictly inside (a, b).
    """
    if b <= a:
        raise ValueError("graded_rule requires b > a")
    if singular_end == "none":
        return panel_rule(a, b, order)
    span = b - a
    # keep every node at least ~1 ulp inside the interval: the extreme
    # Gauss node sits at 0.265% of the panel width from its edge
    ulp = np.spacing(max(abs(a), abs(b), 1e-300))
    max_levels = int(np.floor(np.log2(span / (512.0 * ulp)))) if span > 1024.0 * ulp else 0
    levels = min(levels, max(max_levels, 0))
    if levels == 0:
        return panel_rule(a, b, order)
    # breakpoints from the far end toward the singular one
    fracs = span * np.ldexp(1.0, -np.arange(levels + 1))
    if singular_end == "right":
        breaks = np.concatenate(([a], b - fracs[1:], [b]))
    elif singular_end == "left":
        breaks = np.concatenate(([b], a + fracs[1:], [a]))[::-1]
    else:
        raise ValueError(f"unknown singular_end {singular_end!r}")
    x, w = _gl_reference(order)
    lo = breaks[:-1]
    hi = breaks[1:]
    half = 0.5 * (hi - lo)
    nodes = lo[:, None] + half[:, None] * (x[None, :] + 1.0)
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def integrate_graded(fn, a, b, singular_end="right", order=16, levels=48):
    """Integrate ``fn`` (vectorised) over [a, b] with a graded panel rule."""
    nodes, weights = graded_rule(a, b, singular_end, order, levels)
    return float(np.dot(weights, fn(nodes)))
