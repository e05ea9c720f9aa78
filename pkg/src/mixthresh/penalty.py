"""Fusion and selection penalties on measurement-specific effects.

For every penalized covariate s with coefficient block beta_s = (beta_1s, ...,
beta_ms) the penalty is

    lam * ( ||D beta_s||_eps + ||beta_s||_eps ),

where D stacks pairwise differences (all pairs by default, adjacent pairs
optionally) and ||v||_eps = sqrt(v'v + eps^2) - eps is a smoothed L2 norm
that is exactly zero at v = 0. The first term pulls a block toward a
common value, the second toward zero.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .fit import FitOptions, FitResult, fit, fit_objective
from .likelihood import MarginalLikelihood
from .model import MEASUREMENT, Dataset, ModelSpec, ParamLayout, Params

log = logging.getLogger(__name__)

EPS_SCALE = 1e-4
FUSION_REL_TOL = 0.05


@dataclass(frozen=True)
class PenaltySpec:
    lam: float
    eps: float = 1e-6
    covariates: tuple[str, ...] | None = None
    pairs: str = "all"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.pairs not in ("all", "adjacent"):
            raise ValueError("pairs must be 'all' or 'adjacent'")


def difference_matrix(m: int, pairs: str = "all") -> np.ndarray:
    if pairs == "adjacent":
        idx = [(a, a + 1) for a in range(m - 1)]
    else:
        idx = list(itertools.combinations(range(m), 2))
    D = np.zeros((len(idx), m))
    for r, (a, b) in enumerate(idx):
        D[r, a] = 1.0
        D[r, b] = -1.0
    return D


def smoothed_norm(v, eps: float) -> float:
    v = np.asarray(v, dtype=float)
    ss = float(v @ v)
    if ss == 0.0:
        return 0.0
    # sqrt(ss + eps^2) - eps without cancellation
    return ss / (math.sqrt(ss + eps * eps) + eps)


def penalized_covariates(spec: ModelSpec, pspec: PenaltySpec) -> list[int]:
    varying = [s for s, c in enumerate(spec.covariates) if c.scope == MEASUREMENT]
    if pspec.covariates is None:
        return varying
    names = spec.covariate_names
    out = []
    for name in pspec.covariates:
        if name not in names:
            raise KeyError(f"unknown covariate {name!r}")
        s = names.index(name)
        if s not in varying:
            raise ValueError(f"covariate {name!r} is global; only measurement-specific effects are penalized")
        out.append(s)
    return out


def penalty_value(spec: ModelSpec, params, pspec: PenaltySpec) -> float:
    if isinstance(params, Params):
        beta = np.asarray(params.beta).reshape(spec.m, spec.p)
    else:
        beta = ParamLayout(spec).unpack(params).beta
    if pspec.lam == 0:
        return 0.0
    D = difference_matrix(spec.m, pspec.pairs)
    total = 0.0
    for s in penalized_covariates(spec, pspec):
        b = beta[:, s]
        total += smoothed_norm(D @ b, pspec.eps) + smoothed_norm(b, pspec.eps)
    return pspec.lam * total


class _Penalty:
    """Value, gradient and Hessian of the penalty in the packed parameters."""

    def __init__(self, spec: ModelSpec, pspec: PenaltySpec):
        self.pspec = pspec
        self.layout = ParamLayout(spec)
        self.D = difference_matrix(spec.m, pspec.pairs)
        self.blocks = [self.layout.beta_index[:, s] for s in penalized_covariates(spec, pspec)]

    def _terms(self, theta):
        eps = self.pspec.eps
        for idx in self.blocks:
            b = theta[idx]
            for M in (self.D, None):
                v = b if M is None else M @ b
                yield idx, M, v, math.sqrt(float(v @ v) + eps * eps)

    def value_grad(self, theta):
        lam, eps = self.pspec.lam, self.pspec.eps
        grad = np.zeros_like(theta)
        if lam == 0:
            return 0.0, grad
        val = 0.0
        for idx, M, v, n in self._terms(theta):
            val += float(v @ v) / (n + eps)
            gv = v / n
            grad[idx] += gv if M is None else M.T @ gv
        return lam * val, lam * grad

    def hessian(self, theta):
        lam = self.pspec.lam
        k = len(theta)
        hess = np.zeros((k, k))
        if lam == 0:
            return hess
        for idx, M, v, n in self._terms(theta):
            hv = np.eye(len(v)) / n - np.outer(v, v) / n**3
            h = hv if M is None else M.T @ hv @ M
            hess[np.ix_(idx, idx)] += h
        return lam * hess


def fit_penalized(
    spec: ModelSpec, data: Dataset, pspec: PenaltySpec, options: FitOptions | None = None
) -> FitResult:
    """Maximize log-likelihood minus the penalty.

    The result's ``loglik`` is the unpenalized log-likelihood at the
    penalized optimum and ``objective`` the penalized value.
    """
    options = options or FitOptions()
    pen = _Penalty(spec, pspec)
    res = fit_objective(spec, data, options, penalty=pen)
    res.objective = res.loglik - pen.value_grad(res.theta)[0]
    return res


# ---------------------------------------------------------------------------
# paths and cross-validation


def default_lambda_grid(n: int = 40, max_log1p: float = 6.0) -> np.ndarray:
    """0 followed by log-spaced values with log(1 + lambda) up to ``max_log1p``."""
    hi = math.expm1(max_log1p)
    lo = math.expm1(max_log1p / n)
    return np.concatenate(([0.0], np.geomspace(lo, hi, n - 1)))


def default_eps(fit0: FitResult, spec: ModelSpec, covariates=None) -> float:
    """EPS_SCALE times the root-mean-square of the unpenalized penalized-block coefficients."""
    beta = fit0.params.beta
    cols = penalized_covariates(spec, PenaltySpec(0.0, covariates=covariates))
    scale = float(np.sqrt(np.mean(beta[:, cols] ** 2))) if cols else 1.0
    return EPS_SCALE * max(scale, 1e-3)


@dataclass
class PathResult:
    lambdas: np.ndarray
    eps: float
    covariates: list[str]
    measurements: list[str]
    fits: list[FitResult | None]
    coefficients: np.ndarray  # (n_lambda, m, n_penalized)
    diagnostics: list[list[dict]]
    errors: list[str | None]
    cv_loss: np.ndarray | None = None
    cv_se: np.ndarray | None = None
    folds: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def best_lambda(self) -> float | None:
        if self.cv_loss is None:
            return None
        return float(self.lambdas[int(np.nanargmin(self.cv_loss))])

    def fused_at(self, covariate: str, tol: float = 0.05) -> float | None:
        """Smallest lambda at which the block's max pairwise difference is below ``tol``."""
        s = self.covariates.index(covariate)
        for t, diag in enumerate(self.diagnostics):
            if diag and diag[s]["max_difference"] < tol:
                return float(self.lambdas[t])
        return None

    def rows(self):
        """(lambda, covariate, measurement, coefficient) per path point."""
        for t, lam in enumerate(self.lambdas):
            for s, cov in enumerate(self.covariates):
                for j, mid in enumerate(self.measurements):
                    yield float(lam), cov, mid, float(self.coefficients[t, j, s])


def fusion_diagnostics(beta_block: np.ndarray) -> dict:
    b = np.asarray(beta_block, dtype=float)
    diff = float(np.max(np.abs(b[:, None] - b[None, :]))) if len(b) else 0.0
    rms = float(np.sqrt(np.mean(b**2))) if len(b) else 0.0
    return {
        "max_difference": diff,
        "block_norm": float(np.linalg.norm(b)),
        "fused": bool(diff < FUSION_REL_TOL * rms) if rms > 0 else True,
    }


def _check_grid(lambdas) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or len(lam) == 0:
        raise ValueError("lambda grid must be a non-empty 1-d sequence")
    if lam[0] != 0.0:
        raise ValueError("lambda grid must start at 0")
    if np.any(np.diff(lam) <= 0):
        raise ValueError("lambda grid must be strictly increasing")
    return lam


def _run_path(spec, data, lam, eps, options, pairs, covariates, start=None):
    theta = start
    fits, errors = [], []
    for value in lam:
        opts = replace(options, start=theta, compute_se=False)
        try:
            if value == 0.0 and theta is None:
                res = fit(spec, data, opts)
            else:
                res = fit_penalized(spec, data, PenaltySpec(float(value), eps, covariates, pairs), opts)
        except Exception as exc:  # noqa: BLE001 - recorded, path continues
            log.warning("path fit at lambda=%g failed: %s", value, exc)
            fits.append(None)
            errors.append(f"{type(exc).__name__}: {exc}")
            continue
        fits.append(res)
        errors.append(None)
        theta = res.theta
    return fits, errors


def path(
    spec: ModelSpec,
    data: Dataset,
    lambdas=None,
    options: FitOptions | None = None,
    *,
    eps: float | None = None,
    pairs: str = "all",
    covariates: tuple[str, ...] | None = None,
) -> PathResult:
    """Penalized fits along an increasing lambda grid with warm starts."""
    options = options or FitOptions()
    lam = _check_grid(default_lambda_grid() if lambdas is None else lambdas)
    cols = penalized_covariates(spec, PenaltySpec(0.0, covariates=covariates))
    if not cols:
        raise ValueError("no measurement-specific covariates to penalize")
    fits, errors = _run_path(spec, data, lam, eps if eps is not None else 1.0, options, pairs, covariates)
    if eps is None:
        # eps depends on the unpenalized scale, so refit everything past lambda = 0
        if fits[0] is None:
            raise RuntimeError(f"unpenalized fit failed: {errors[0]}")
        eps = default_eps(fits[0], spec, covariates)
        rest, rest_err = _run_path(spec, data, lam[1:], eps, options, pairs, covariates, start=fits[0].theta)
        fits, errors = [fits[0], *rest], [errors[0], *rest_err]
    return _assemble(spec, lam, eps, cols, fits, errors)


def _assemble(spec, lam, eps, cols, fits, errors) -> PathResult:
    coef = np.full((len(lam), spec.m, len(cols)), np.nan)
    diags = []
    for t, res in enumerate(fits):
        if res is None:
            diags.append([])
            continue
        beta = res.params.beta
        coef[t] = beta[:, cols]
        diags.append([fusion_diagnostics(beta[:, s]) for s in cols])
    return PathResult(
        lambdas=lam,
        eps=eps,
        covariates=[spec.covariates[s].name for s in cols],
        measurements=spec.measurement_ids,
        fits=fits,
        coefficients=coef,
        diagnostics=diags,
        errors=errors,
    )


def assign_folds(n_clusters: int, folds: int, seed: int) -> list[np.ndarray]:
    if folds < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    if folds > n_clusters:
        raise ValueError(f"{folds} folds requested but only {n_clusters} clusters; a fold would be empty")
    perm = np.random.default_rng(seed).permutation(n_clusters)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def cross_validate(
    spec: ModelSpec,
    data: Dataset,
    lambdas=None,
    folds: int = 5,
    seed: int = 0,
    options: FitOptions | None = None,
    *,
    eps: float | None = None,
    pairs: str = "all",
    covariates: tuple[str, ...] | None = None,
    threads: int = 1,
) -> PathResult:
    """K-fold cross-validation over clusters.

    For every fold the path is fitted on the remaining clusters and scored
    by the mean negative marginal log-likelihood per held-out cluster.
    """
    options = options or FitOptions()
    lam = _check_grid(default_lambda_grid() if lambdas is None else lambdas)
    full = path(spec, data, lam, options, eps=eps, pairs=pairs, covariates=covariates)
    parts = assign_folds(data.n_clusters, folds, seed)
    for f in parts:
        if len(f) == 0:
            raise ValueError("a fold has no clusters")

    def run_fold(held):
        train = data.subset(np.setdiff1d(np.arange(data.n_clusters), held))
        test = data.subset(held)
        fits, _ = _run_path(spec, train, lam, full.eps, options, pairs, covariates)
        lik = MarginalLikelihood(spec, test)
        return np.array(
            [np.nan if r is None else -lik.loglik(r.theta, options.order) / test.n_clusters for r in fits]
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            losses = list(pool.map(run_fold, parts))
    else:
        losses = [run_fold(p) for p in parts]
    L = np.vstack(losses)
    full.cv_loss = np.nanmean(L, axis=0)
    full.cv_se = np.nanstd(L, axis=0, ddof=1) / math.sqrt(len(parts))
    full.folds = parts
    return full
