"""Response functions F for the thresholds model.

Each family is a strictly increasing distribution function on the real line.
Besides the public scalar/array functions (``cdf``, ``pdf``, ``quantile``,
``moments``) the module exposes log-space helpers used by the likelihood
code, where tail accuracy matters more than it does for plotting.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

EULER_GAMMA = 0.57721566490153286061

# |y| beyond this is treated as the far tail by cdf/pdf.
CLAMP = 40.0


class DomainError(ValueError):
    """Argument outside the domain of a function."""


class FamilyKind(enum.IntEnum):
    NORMAL = 0
    LOGISTIC = 1
    GUMBEL = 2
    GOMPERTZ = 3


@dataclass(frozen=True)
class ResponseFamily:
    kind: FamilyKind

    @property
    def name(self) -> str:
        return self.kind.name.lower()

    @property
    def code(self) -> int:
        return int(self.kind)

    @property
    def mean(self) -> float:
        return _MOMENTS[self.kind][0]

    @property
    def variance(self) -> float:
        return _MOMENTS[self.kind][1]

    def __str__(self) -> str:
        return self.name


_MOMENTS = {
    FamilyKind.NORMAL: (0.0, 1.0),
    FamilyKind.LOGISTIC: (0.0, math.pi**2 / 3.0),
    # max-extreme-value law
    FamilyKind.GUMBEL: (EULER_GAMMA, math.pi**2 / 6.0),
    # min-extreme-value law
    FamilyKind.GOMPERTZ: (-EULER_GAMMA, math.pi**2 / 6.0),
}

NORMAL = ResponseFamily(FamilyKind.NORMAL)
LOGISTIC = ResponseFamily(FamilyKind.LOGISTIC)
GUMBEL = ResponseFamily(FamilyKind.GUMBEL)
GOMPERTZ = ResponseFamily(FamilyKind.GOMPERTZ)

FAMILIES = {f.name: f for f in (NORMAL, LOGISTIC, GUMBEL, GOMPERTZ)}


def get_family(name: str | ResponseFamily) -> ResponseFamily:
    """Look up a family by its name ("normal", "logistic", "gumbel", "gompertz")."""
    if isinstance(name, ResponseFamily):
        return name
    try:
        return FAMILIES[str(name).strip().lower()]
    except KeyError:
        raise ValueError(
            f"unknown response family {name!r}; expected one of {sorted(FAMILIES)}"
        ) from None


def _finite(y):
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("argument must be finite")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


# ---------------------------------------------------------------------------
# log-space primitives, unchecked and vectorized

def log_cdf(kind: int, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        if kind == FamilyKind.NORMAL:
            return special.log_ndtr(t)
        if kind == FamilyKind.LOGISTIC:
            return special.log_expit(t)
        if kind == FamilyKind.GUMBEL:
            return -np.exp(-t)
        return np.log(-np.expm1(-np.exp(t)))


def log_sf(kind: int, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        if kind == FamilyKind.NORMAL:
            return special.log_ndtr(-t)
        if kind == FamilyKind.LOGISTIC:
            return special.log_expit(-t)
        if kind == FamilyKind.GUMBEL:
            return np.log(-np.expm1(-np.exp(-t)))
        return -np.exp(t)


def log_pdf(kind: int, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore", under="ignore"):
        if kind == FamilyKind.NORMAL:
            return -0.5 * t * t - 0.5 * math.log(2.0 * math.pi)
        if kind == FamilyKind.LOGISTIC:
            a = np.abs(t)
            return -a - 2.0 * np.log1p(np.exp(-a))
        if kind == FamilyKind.GUMBEL:
            return -t - np.exp(-t)
        return t - np.exp(t)


def score(kind: int, t: np.ndarray) -> np.ndarray:
    """Derivative of ``log_pdf`` with respect to its argument."""
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore", under="ignore"):
        if kind == FamilyKind.NORMAL:
            return -t
        if kind == FamilyKind.LOGISTIC:
            return -np.tanh(0.5 * t)
        if kind == FamilyKind.GUMBEL:
            return np.expm1(-t)
        return -np.expm1(t)


# ---------------------------------------------------------------------------
# public API


def cdf(family: ResponseFamily, y):
    """F(y). Arguments beyond +-40 are clamped to 0/1."""
    arr = _finite(y)
    with np.errstate(under="ignore"):
        val = np.exp(log_cdf(family.kind, arr))
    val = np.where(arr < -CLAMP, 0.0, np.where(arr > CLAMP, 1.0, val))
    return _out(val, y)


def sf(family: ResponseFamily, y):
    """1 - F(y), computed without cancellation."""
    arr = _finite(y)
    with np.errstate(under="ignore"):
        val = np.exp(log_sf(family.kind, arr))
    val = np.where(arr < -CLAMP, 1.0, np.where(arr > CLAMP, 0.0, val))
    return _out(val, y)


def pdf(family: ResponseFamily, y):
    """f(y) = dF/dy; zero beyond +-40."""
    arr = _finite(y)
    with np.errstate(under="ignore"):
        val = np.exp(log_pdf(family.kind, arr))
    val = np.where(np.abs(arr) > CLAMP, 0.0, val)
    return _out(val, y)


def quantile(family: ResponseFamily, p):
    """Inverse of ``cdf`` on (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("probability must lie strictly between 0 and 1")
    kind = family.kind
    if kind == FamilyKind.NORMAL:
        val = special.ndtri(arr)
    elif kind == FamilyKind.LOGISTIC:
        val = special.logit(arr)
    elif kind == FamilyKind.GUMBEL:
        val = -np.log(-np.log(arr))
    else:
        val = np.log(-np.log1p(-arr))
    return _out(val, p)


def moments(family: ResponseFamily) -> tuple[float, float]:
    """Mean and variance of the density f."""
    return _MOMENTS[family.kind]
