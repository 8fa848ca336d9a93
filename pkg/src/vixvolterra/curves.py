"""Forward-variance curves: today's xi_t(u) on the VIX window.

Two representations are supported (flat and piecewise-constant), both with
exact integrals of x(u), u x(u) and log x(u) over arbitrary intervals so the
discretisation weights carry no quadrature error.
"""

import numpy as np

from .errors import ValidationError

__all__ = ["ForwardVarianceCurve"]


class ForwardVarianceCurve:
    """Positive piecewise-constant curve u -> xi(u), right-continuous.

    ``knots`` is a sorted sequence of (u, value); the curve takes the first
    value before the first knot.  A flat curve is a single knot at u = 0.
    """

    def __init__(self, knots):
        knots = [(float(u), float(v)) for u, v in knots]
        if not knots:
            raise ValidationError("curve needs at least one knot")
        us = np.array([u for u, _ in knots])
        vs = np.array([v for _, v in knots])
        if np.any(np.diff(us) <= 0.0):
            raise ValidationError("curve knots must be strictly increasing")
        if np.any(vs <= 0.0):
            raise ValidationError("forward variance must be positive")
        self._us = us
        self._vs = vs

    @classmethod
    def flat(cls, value: float) -> "ForwardVarianceCurve":
        return cls([(0.0, value)])

    @classmethod
    def from_config(cls, cfg) -> "ForwardVarianceCurve":
        """Parse {"flat": v} or {"piecewise": [[u, v], ...]}."""
        if "flat" in cfg:
            return cls.flat(cfg["flat"])
        if "piecewise" in cfg:
            return cls(cfg["piecewise"])
        raise ValidationError("curve config needs a 'flat' or 'piecewise' key")

    def to_config(self):
        if self._us.size == 1:
            return {"flat": float(self._vs[0])}
        return {"piecewise": [[float(u), float(v)]
                              for u, v in zip(self._us, self._vs)]}

    @property
    def is_flat(self) -> bool:
        return self._vs.size == 1 or bool(np.all(self._vs == self._vs[0]))

    def value(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.clip(np.searchsorted(self._us, u, side="right") - 1, 0, None)
        return self._vs[idx]

    def _segments(self, a: float, b: float):
        """Yield (lo, hi, level) pieces covering [a, b]."""
        if b < a:
            raise ValidationError("integration bounds must satisfy a <= b")
        cuts = np.concatenate(([a], self._us[(self._us > a) & (self._us < b)], [b]))
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            yield lo, hi, float(self.value(0.5 * (lo + hi)))

    def integral(self, a: float, b: float) -> float:
        """int_a^b x(u) du, exact."""
        return sum((hi - lo) * v for lo, hi, v in self._segments(a, b))

    def first_moment(self, a: float, b: float) -> float:
        """int_a^b u x(u) du, exact."""
        return sum(0.5 * (hi * hi - lo * lo) * v
                   for lo, hi, v in self._segments(a, b))

    def log_integral(self, a: float, b: float) -> float:
        """int_a^b log x(u) du, exact."""
        return sum((hi - lo) * np.log(v) for lo, hi, v in self._segments(a, b))
