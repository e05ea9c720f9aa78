"""Inverse-transform sampling of clustered data from a mixed thresholds model.

Datasets are drawn from numpy's PCG64 generator (``numpy.random.default_rng``)
in a fixed order, so a seed reproduces the same data on every platform:

1. random effects, an ``n_clusters x q`` block of standard normals mapped
   through the Cholesky factor;
2. covariates, one ``n_clusters`` vector per covariate in spec order
   (covariates are constant within a cluster);
3. uniforms, an ``n_clusters x m`` block, one per (cluster, measurement).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .families import quantile
from .likelihood import _as_params
from .model import (
    CONTINUOUS,
    DISCRETE,
    GLOBAL,
    MEASUREMENT,
    Covariate,
    Dataset,
    Measurement,
    ModelSpec,
    ParamLayout,
    Params,
    make_dataset,
)
from .thresholds import ThresholdsCoeffs, UnsupportedOperation, free_thresholds, inverse, parse_basis

MAX_COUNT = 10_000_000

_BERNOULLI = re.compile(r"^\s*bernoulli\s*\(\s*([0-9.eE+-]+)\s*\)\s*$")


def sample_response(spec: ModelSpec, params, j: int, eta, u):
    """Draw y for measurement ``j`` given linear predictors ``eta`` and uniforms ``u``.

    Uses P(Y > y) = F(eta - tau(y)): a continuous draw solves
    tau(y) = eta - F^{-1}(1 - u); a discrete draw is the smallest r in the
    support with tau(r) >= eta - F^{-1}(1 - u).
    """
    params = _as_params(ParamLayout(spec), params)
    mobj = spec.measurements[j]
    scalar = np.ndim(eta) == 0 and np.ndim(u) == 0
    eta, u = np.broadcast_arrays(np.asarray(eta, dtype=float), np.asarray(u, dtype=float))
    target = eta - quantile(mobj.family, 1.0 - u)
    coeffs = params.thresholds[j]
    if mobj.is_continuous:
        if mobj.thresholds.is_free:
            raise UnsupportedOperation("free thresholds cannot generate a continuous response")
        y = inverse(mobj.thresholds, coeffs, target)
    else:
        y = _discrete_draw(mobj, coeffs, np.atleast_1d(target)).reshape(target.shape)
    return float(y) if scalar else np.asarray(y, dtype=float)


def _discrete_draw(mobj: Measurement, coeffs: ThresholdsCoeffs, target: np.ndarray) -> np.ndarray:
    th = mobj.thresholds
    if th.is_free:
        # tau(k) is +inf, so searchsorted lands on 1..k
        return np.searchsorted(free_thresholds(coeffs), target, side="left") + 1.0

    lo = mobj.lowest
    hi = mobj.categories if mobj.is_ordinal else MAX_COUNT + 1

    def tau(r):
        # the top ordinal category has an infinite threshold
        val = coeffs.intercept + coeffs.slope * th.g(np.minimum(r, hi - 1))
        return np.where(mobj.is_ordinal & (r >= hi), np.inf, val)

    with np.errstate(over="ignore", invalid="ignore"):
        guess = np.ceil(th.g_inverse((target - coeffs.intercept) / coeffs.slope))
    r = np.clip(np.where(np.isnan(guess), hi, guess), lo, hi)
    # the closed-form guess can be off by one at integer boundaries
    for _ in range(4):
        up = (r < hi) & (tau(r) < target)
        down = (r > lo) & (tau(r - 1) >= target)
        if not (up.any() or down.any()):
            break
        r = r + up - down
    if not mobj.is_ordinal and np.any(r > MAX_COUNT):
        raise ArithmeticError(f"measurement {mobj.id!r}: count draw exceeds {MAX_COUNT}")
    return r + 0.0  # no negative zeros


@dataclass
class SimDesign:
    """What to simulate.

    ``covariates`` is ``"normal"`` (standard normal), ``"bernoulli(p)"``, or
    an ``n_clusters x p`` array of cluster-level values.
    """

    spec: ModelSpec
    params: Params | np.ndarray
    n_clusters: int
    covariates: str | np.ndarray = "normal"
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be positive")
        p = _as_params(ParamLayout(self.spec), self.params)
        for j, c in enumerate(p.thresholds):
            if not self.spec.measurements[j].thresholds.is_free and not c.slope > 0:
                raise ValueError("threshold slopes must be positive")
        self.params = p


def _draw_covariates(design: SimDesign, rng: np.random.Generator) -> np.ndarray:
    n, p = design.n_clusters, design.spec.p
    gen = design.covariates
    if not isinstance(gen, str):
        X = np.asarray(gen, dtype=float)
        if X.shape != (n, p):
            raise ValueError(f"covariate array has shape {X.shape}, expected {(n, p)}")
        return X
    X = np.empty((n, p))
    match = _BERNOULLI.match(gen)
    for s in range(p):
        if gen == "normal":
            X[:, s] = rng.standard_normal(n)
        elif match:
            prob = float(match.group(1))
            if not 0 <= prob <= 1:
                raise ValueError("bernoulli probability must lie in [0, 1]")
            X[:, s] = (rng.random(n) < prob).astype(float)
        else:
            raise ValueError(f"unknown covariate generator {gen!r}")
    return X


def sample_dataset(design: SimDesign) -> tuple[Dataset, np.ndarray]:
    """Draw one balanced dataset; returns it with the random effects used."""
    spec, params = design.spec, design.params
    n, m = design.n_clusters, spec.m
    rng = np.random.default_rng(design.seed)
    b = rng.standard_normal((n, spec.q)) @ params.chol.T
    X = _draw_covariates(design, rng)
    U = rng.random((n, m))
    U = np.where(U == 0.0, np.nextafter(0.0, 1.0), U)

    cols = {c.name: X[:, s] for s, c in enumerate(spec.covariates)}
    Z = np.empty((n, spec.q))
    for a, term in enumerate(spec.random_effects):
        if term == "intercept":
            Z[:, a] = 1.0
        elif term in cols:
            Z[:, a] = cols[term]
        else:
            raise ValueError(f"random-effects term {term!r} must be 'intercept' or a covariate")

    Y = np.empty((n, m))
    zb = np.einsum("ia,ia->i", Z, b)
    for j in range(m):
        eta = zb + X @ params.beta[j]
        Y[:, j] = sample_response(spec, params, j, eta, U[:, j])

    width = len(str(n))
    labels = [f"c{i + 1:0{width}d}" for i in range(n)]
    data = make_dataset(
        spec,
        cluster=np.repeat(labels, m),
        measurement=np.tile(spec.measurement_ids, n),
        y=Y.ravel(),
        columns={k: np.repeat(v, m) for k, v in cols.items()},
    )
    return data, b


def fears_like_design(n_clusters: int = 500, seed: int = 0, scope: str = MEASUREMENT) -> SimDesign:
    """Five 7-category ordinal items with logistic responses and four covariates.

    Covariate ``x1`` has a common effect across items; ``x2`` to ``x4`` vary.
    """
    items = tuple(
        Measurement(f"item{j + 1}", DISCRETE, "logistic", parse_basis("logit", k=7)) for j in range(5)
    )
    covs = tuple(Covariate(f"x{s + 1}", scope) for s in range(4))
    spec = ModelSpec(items, covs)
    beta = np.column_stack(
        [
            np.full(5, 0.5),
            np.array([1.0, -1.0, 1.0, -1.0, 1.0]) * 0.8,
            np.linspace(-0.6, 0.6, 5),
            np.array([0.0, 0.0, 0.7, 0.7, 0.0]),
        ]
    )
    thresholds = [ThresholdsCoeffs.from_slope(0.2 * j - 0.4, 1.0 + 0.1 * j) for j in range(5)]
    params = Params(beta, thresholds, np.array([[1.0]]))
    return SimDesign(spec, params, n_clusters, "normal", seed)


def mixed_type_design(n_clusters: int = 200, seed: int = 0) -> SimDesign:
    """Two continuous, one count and one 5-category ordinal measurement with two covariates."""
    meas = (
        Measurement("cont1", CONTINUOUS, "normal", parse_basis("linear")),
        Measurement("cont2", CONTINUOUS, "gumbel", parse_basis("log")),
        Measurement("count", DISCRETE, "normal", parse_basis("shifted_log")),
        Measurement("ord", DISCRETE, "logistic", parse_basis("logit", k=5)),
    )
    spec = ModelSpec(meas, (Covariate("x1", MEASUREMENT), Covariate("x2", GLOBAL)))
    beta = np.column_stack([[0.5, -0.3, 0.4, 0.8], np.full(4, -0.5)])
    thresholds = [
        ThresholdsCoeffs.from_slope(0.0, 1.0),
        ThresholdsCoeffs.from_slope(-0.5, 1.5),
        ThresholdsCoeffs.from_slope(-0.5, 1.2),
        ThresholdsCoeffs.from_slope(0.3, 1.0),
    ]
    params = Params(beta, thresholds, np.array([[0.8]]))
    return SimDesign(spec, params, n_clusters, "normal", seed)


__all__ = [
    "MAX_COUNT",
    "SimDesign",
    "fears_like_design",
    "mixed_type_design",
    "sample_dataset",
    "sample_response",
]
