"""Quote files, model configs and result persistence.

File formats: quotes are CSV with columns
``maturity_days,strike,mid_price[,bid,ask,implied_vol]``; model configs and
results are JSON (UTF-8, LF).  Result persistence is atomic and round-trips
bit-exactly.
"""

import csv
import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curves import ForwardVarianceCurve
from .errors import ValidationError
from .kernels import Kernel, PowerLawKernel, ZeroKernel
from .modulated import CirModulator, LevyOuModulator

__all__ = [
    "MarketConventions",
    "VixOptionQuote",
    "ModelBundle",
    "load_quotes",
    "load_model_config",
    "model_config_from_dict",
    "persist_result",
    "load_result",
]


@dataclass(frozen=True)
class MarketConventions:
    """Day count and quote units; defaults follow the one-month VIX window."""

    day_count: int = 365
    vix_window_days: int = 30
    strike_scale: float = 1.0

    def __post_init__(self):
        if self.day_count <= 0 or self.vix_window_days <= 0:
            raise ValidationError("day counts must be positive")
        if self.strike_scale <= 0.0:
            raise ValidationError("strike_scale must be positive")

    def years(self, days: float) -> float:
        return days / self.day_count

    @property
    def window_years(self) -> float:
        return self.vix_window_days / self.day_count


@dataclass(frozen=True)
class VixOptionQuote:
    maturity_days: int
    strike: float
    mid_price: float
    bid: Optional[float] = None
    ask: Optional[float] = None
    implied_vol: Optional[float] = None

    def __post_init__(self):
        if self.maturity_days <= 0:
            raise ValidationError("maturity_days must be positive")
        if self.strike <= 0.0:
            raise ValidationError("strike must be positive")
        if self.mid_price < 0.0:
            raise ValidationError("mid_price must be nonnegative")
        if self.bid is not None and self.ask is not None:
            if self.bid > self.ask:
                raise ValidationError("crossed market: bid > ask")
            if not self.bid <= self.mid_price <= self.ask:
                raise ValidationError("mid outside [bid, ask]")


_QUOTE_FIELDS = ("maturity_days", "strike", "mid_price", "bid", "ask",
                 "implied_vol")


def load_quotes(path, conventions: MarketConventions = MarketConventions()):
    """Load and validate a quote CSV, grouped by maturity.

    Returns a dict {maturity_days: [quotes sorted by strike]} with maturities
    in increasing order.  Strikes and prices are rescaled by
    ``conventions.strike_scale`` (e.g. 0.01 for exchange-style 15.0 quotes).
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty quote file")
        unknown = set(reader.fieldnames) - set(_QUOTE_FIELDS)
        if unknown:
            raise ValidationError(f"{path}: unknown columns {sorted(unknown)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                scale = conventions.strike_scale

                def opt(name, factor=scale):
                    raw = row.get(name)
                    return None if raw in (None, "") else float(raw) * factor

                quote = VixOptionQuote(
                    maturity_days=int(row["maturity_days"]),
                    strike=float(row["strike"]) * scale,
                    mid_price=float(row["mid_price"]) * scale,
                    bid=opt("bid"), ask=opt("ask"),
                    implied_vol=opt("implied_vol", 1.0))
            except (KeyError, TypeError, ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            rows.append((lineno, quote))

    grouped = {}
    seen = set()
    for lineno, quote in rows:
        key = (quote.maturity_days, quote.strike)
        if key in seen:
            raise ValidationError(
                f"{path}:{lineno}: duplicate (maturity, strike) {key}")
        seen.add(key)
        grouped.setdefault(quote.maturity_days, []).append(quote)
    return {mat: sorted(qs, key=lambda q: q.strike)
            for mat, qs in sorted(grouped.items())}


# ---------------------------------------------------------------------------
# Model configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelBundle:
    """Everything a pricing command needs, parsed from one JSON config."""

    kernel: Kernel
    curve: ForwardVarianceCurve
    modulator: object
    maturity: float
    conventions: MarketConventions

    @property
    def window(self) -> float:
        return self.conventions.window_years

    @property
    def is_modulated(self) -> bool:
        return self.modulator is not None


def _kernel_from_config(cfg) -> Kernel:
    kind = cfg.get("type")
    if kind == "power_law":
        if "nu" in cfg:
            return PowerLawKernel.from_vol_of_vol(float(cfg["nu"]),
                                                  float(cfg["hurst"]))
        return PowerLawKernel(alpha=float(cfg["alpha"]),
                              hurst=float(cfg["hurst"]))
    if kind == "zero":
        return ZeroKernel()
    raise ValidationError(f"unknown kernel type {kind!r}")


def _modulator_from_config(cfg):
    kind = cfg.get("type")
    if kind == "levy_ou":
        return LevyOuModulator(
            mean_reversion=float(cfg["lambda"]),
            jump_intensity=float(cfg["Lambda"]),
            jump_decay=float(cfg["a"]),
            gamma0=float(cfg["gamma0"]))
    if kind == "cir":
        return CirModulator(
            mean_reversion=float(cfg["k"]),
            long_run=float(cfg["theta"]),
            vol_of_vol=float(cfg["delta"]),
            gamma0=float(cfg["gamma0"]))
    raise ValidationError(f"unknown modulator type {kind!r}")


def model_config_from_dict(cfg) -> ModelBundle:
    if "kernel" not in cfg or "curve" not in cfg:
        raise ValidationError("model config needs 'kernel' and 'curve'")
    conventions = MarketConventions(
        day_count=int(cfg.get("day_count", 365)),
        vix_window_days=int(cfg.get("vix_window_days", 30)),
        strike_scale=float(cfg.get("strike_scale", 1.0)))
    if "maturity" in cfg:
        maturity = float(cfg["maturity"])
    elif "maturity_days" in cfg:
        maturity = conventions.years(float(cfg["maturity_days"]))
    else:
        raise ValidationError("model config needs 'maturity' or "
                              "'maturity_days'")
    if maturity < 0.0:
        raise ValidationError("maturity must be nonnegative")
    modulator = _modulator_from_config(cfg["modulator"]) \
        if "modulator" in cfg else None
    return ModelBundle(
        kernel=_kernel_from_config(cfg["kernel"]),
        curve=ForwardVarianceCurve.from_config(cfg["curve"]),
        modulator=modulator, maturity=maturity, conventions=conventions)


def load_model_config(path) -> ModelBundle:
    with open(path, encoding="utf-8") as handle:
        try:
            cfg = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    return model_config_from_dict(cfg)


# ---------------------------------------------------------------------------
# Result persistence
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v)
                for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def persist_result(result, path, kind: Optional[str] = None):
    """Write a result object as JSON, atomically (temp file + rename)."""
    payload = {"kind": kind or type(result).__name__,
               "data": _jsonable(result)}
    directory = os.path.dirname(os.path.abspath(path)) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed writing result to {path}: {exc}") from exc


def load_result(path):
    """Load a persisted result; returns (kind, data dict)."""
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise OSError(f"failed reading result from {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "kind" not in payload:
        raise ValidationError(f"{path}: not a persisted result file")
    return payload["kind"], payload["data"]
