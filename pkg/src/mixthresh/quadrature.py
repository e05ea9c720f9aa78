"""Gauss-Hermite rules and their tensor-product grids."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

DEFAULT_ORDER = 15
DEFAULT_NODE_BUDGET = 15**3


class ResourceError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integrals of h(x) exp(-x^2) over the real line."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @classmethod
    def gauss_hermite(cls, order: int = DEFAULT_ORDER) -> "QuadratureRule":
        nodes, weights = _hermgauss(int(order))
        return cls(nodes, weights, int(order))

    def integrate(self, h) -> float:
        return float(np.dot(self.weights, h(self.nodes)))


@lru_cache(maxsize=64)
def _hermgauss(order: int):
    if order < 1:
        raise ValueError("quadrature order must be at least 1")
    x, w = np.polynomial.hermite.hermgauss(order)
    # exact symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class ProductGrid:
    """Standard-normal expectation grid in q dimensions.

    ``E[h(u)]`` for u ~ N(0, I_q) is approximated by
    ``sum_g exp(log_weights[g]) * h(points[g])`` with points already scaled
    by sqrt(2).
    """

    points: np.ndarray
    log_weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.log_weights)


@lru_cache(maxsize=32)
def product_grid(order: int, q: int, budget: int = DEFAULT_NODE_BUDGET) -> ProductGrid:
    if q < 1:
        raise ValueError("random-effects dimension must be positive")
    if order**q > budget:
        raise ResourceError(
            f"quadrature grid of {order}^{q} = {order**q} nodes exceeds the budget of {budget}"
        )
    x, w = _hermgauss(order)
    pts = np.array(list(itertools.product(x, repeat=q))) * math.sqrt(2.0)
    logw = np.array([sum(c) for c in itertools.product(np.log(w), repeat=q)]) - 0.5 * q * math.log(math.pi)
    pts.setflags(write=False)
    logw.setflags(write=False)
    return ProductGrid(pts.reshape(-1, q), logw)
