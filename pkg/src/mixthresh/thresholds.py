"""Thresholds functions delta(y) = delta0 + delta * g(y) and free ordinal thresholds.

The slope is carried on the log scale (``delta = exp(raw_slope)``) so it is
positive for every unconstrained value. Free thresholds are a first value
plus positive increments, which keeps them strictly ordered.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .families import DomainError

BASES = ("linear", "log", "shifted_log", "logit", "free")

DEFAULT_ORDINAL_LOWER = 0.9


class UnsupportedOperation(TypeError):
    pass


@dataclass(frozen=True)
class ThresholdsSpec:
    basis: str
    a: float | None = None
    b: float | None = None
    k: int | None = None

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValueError(f"unknown thresholds basis {self.basis!r}")
        if self.basis == "logit":
            if self.a is None or self.b is None:
                raise ValueError("logit thresholds need bounds a and b")
            if not self.a < self.b:
                raise ValueError(f"logit thresholds need a < b, got a={self.a}, b={self.b}")
        if self.basis == "free":
            if self.k is None or int(self.k) < 2:
                raise ValueError("free thresholds need k >= 2 categories")

    @property
    def is_free(self) -> bool:
        return self.basis == "free"

    @property
    def n_coeffs(self) -> int:
        return self.k - 1 if self.is_free else 2

    def support(self) -> tuple[float, float]:
        """Open interval of y on which g is finite."""
        if self.basis == "linear":
            return (-math.inf, math.inf)
        if self.basis == "log":
            return (0.0, math.inf)
        if self.basis == "shifted_log":
            return (-1.0, math.inf)
        if self.basis == "logit":
            return (self.a, self.b)
        return (0.0, float(self.k))

    def check(self, y) -> None:
        y = np.asarray(y, dtype=float)
        if self.is_free:
            ok = (y == np.round(y)) & (y >= 1) & (y <= self.k - 1)
            if not np.all(ok):
                raise DomainError(
                    f"free thresholds are defined for r in 1..{self.k - 1}, got {y[~ok].ravel()[:3]}"
                )
            return
        lo, hi = self.support()
        if not np.all(np.isfinite(y)):
            raise DomainError("y must be finite")
        if np.any(y <= lo):
            raise DomainError(f"y must exceed the lower bound {lo} of the {self.basis} basis")
        if np.any(y >= hi):
            raise DomainError(f"y must lie below the upper bound {hi} of the {self.basis} basis")

    # transformation g and its derivative, unchecked
    def g(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.basis == "linear":
                return y
            if self.basis == "log":
                return np.log(y)
            if self.basis == "shifted_log":
                return np.log1p(y)
            if self.basis == "logit":
                return np.log(y - self.a) - np.log(self.b - y)
        raise UnsupportedOperation("free thresholds have no transformation function")

    def dg(self, y):
        y = np.asarray(y, dtype=float)
        if self.basis == "linear":
            return np.ones_like(y)
        if self.basis == "log":
            return 1.0 / y
        if self.basis == "shifted_log":
            return 1.0 / (1.0 + y)
        if self.basis == "logit":
            return (self.b - self.a) / ((y - self.a) * (self.b - y))
        raise UnsupportedOperation("free thresholds are not differentiable in y")

    def g_inverse(self, u):
        u = np.asarray(u, dtype=float)
        if self.basis == "linear":
            return u
        if self.basis == "log":
            return np.exp(u)
        if self.basis == "shifted_log":
            return np.expm1(u)
        if self.basis == "logit":
            # (a + b e^u) / (1 + e^u), measured from the nearer bound so
            # neither overflow nor cancellation occurs for large |u|
            s = special.expit(-np.abs(u))
            w = self.b - self.a
            return np.where(u >= 0, self.b - w * s, self.a + w * s)
        raise UnsupportedOperation("free thresholds cannot be inverted")

    def __str__(self) -> str:
        if self.basis == "logit":
            return f"logit({self.a:g},{self.b:g})"
        if self.basis == "free":
            return f"free({self.k})"
        return self.basis


_CALL = re.compile(r"^\s*(\w+)\s*(?:\((.*)\))?\s*$")


def parse_basis(text: str, *, k: int | None = None) -> ThresholdsSpec:
    """Parse "linear" | "log" | "shifted_log" | "logit(a,b)" | "free(k)".

    A bare "logit" needs the number of ordinal categories ``k`` and gets
    bounds (0.9, k).
    """
    m = _CALL.match(str(text))
    if not m:
        raise ValueError(f"cannot parse thresholds basis {text!r}")
    name, args = m.group(1).lower(), m.group(2)
    vals = [v.strip() for v in args.split(",")] if args else []
    if name in ("linear", "identity", "log", "shifted_log"):
        if vals:
            raise ValueError(f"basis {name!r} takes no arguments")
        return ThresholdsSpec("linear" if name == "identity" else name)
    if name == "logit":
        if len(vals) == 2:
            return ThresholdsSpec("logit", a=float(vals[0]), b=float(vals[1]))
        if not vals and k is not None:
            return ThresholdsSpec("logit", a=DEFAULT_ORDINAL_LOWER, b=float(k))
        raise ValueError("logit basis needs two bounds, logit(a,b)")
    if name == "free":
        if len(vals) == 1:
            return ThresholdsSpec("free", k=int(vals[0]))
        if not vals and k is not None:
            return ThresholdsSpec("free", k=int(k))
        raise ValueError("free basis needs the number of categories, free(k)")
    raise ValueError(f"unknown thresholds basis {name!r}; expected one of {list(BASES)}")


@dataclass
class ThresholdsCoeffs:
    """Unconstrained coefficients of one thresholds function.

    Parametric bases use ``intercept`` and ``raw_slope``; free thresholds
    use ``intercept`` as the first threshold and ``raw_gaps`` for the
    log-increments between consecutive thresholds.
    """

    intercept: float = 0.0
    raw_slope: float = 0.0
    raw_gaps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def slope(self) -> float:
        return math.exp(self.raw_slope)

    @classmethod
    def from_slope(cls, intercept: float, slope: float) -> "ThresholdsCoeffs":
        if slope <= 0:
            raise ValueError("thresholds slope must be positive")
        return cls(float(intercept), math.log(slope))

    @classmethod
    def from_thresholds(cls, values) -> "ThresholdsCoeffs":
        v = np.asarray(values, dtype=float)
        gaps = np.diff(v)
        if np.any(gaps <= 0):
            raise ValueError("free thresholds must be strictly increasing")
        return cls(float(v[0]), 0.0, np.log(gaps))


def free_thresholds(coeffs: ThresholdsCoeffs) -> np.ndarray:
    """Ordered thresholds delta(1) < ... < delta(k-1)."""
    gaps = np.exp(np.asarray(coeffs.raw_gaps, dtype=float))
    return coeffs.intercept + np.concatenate(([0.0], np.cumsum(gaps)))


def evaluate(spec: ThresholdsSpec, coeffs: ThresholdsCoeffs, y):
    spec.check(y)
    if spec.is_free:
        th = free_thresholds(coeffs)
        out = th[np.asarray(y, dtype=int) - 1]
    else:
        out = coeffs.intercept + coeffs.slope * spec.g(y)
    return float(out) if np.ndim(y) == 0 else out


def derivative(spec: ThresholdsSpec, coeffs: ThresholdsCoeffs, y):
    if spec.is_free:
        raise UnsupportedOperation("free thresholds live on a discrete support")
    spec.check(y)
    out = coeffs.slope * spec.dg(y)
    return float(out) if np.ndim(y) == 0 else out


def inverse(spec: ThresholdsSpec, coeffs: ThresholdsCoeffs, t):
    if spec.is_free:
        raise UnsupportedOperation("free thresholds cannot be inverted")
    t = np.asarray(t, dtype=float) if np.ndim(t) else float(t)
    if not np.all(np.isfinite(t)):
        raise DomainError("threshold value must be finite")
    out = spec.g_inverse((t - coeffs.intercept) / coeffs.slope)
    return float(out) if np.ndim(t) == 0 else out
