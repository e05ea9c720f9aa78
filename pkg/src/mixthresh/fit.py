"""Maximum marginal likelihood estimation, standard errors and LR tests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .families import quantile
from .likelihood import MarginalLikelihood
from .model import GLOBAL, MEASUREMENT, Dataset, ModelSpec, ParamLayout, Params
from .quadrature import DEFAULT_NODE_BUDGET, DEFAULT_ORDER
from .special import chi2_sf

log = logging.getLogger(__name__)

START_LOG_SD = math.log(0.5)


class NestingError(ValueError):
    """The reduced model fits better than the model it is nested in."""


@dataclass
class FitOptions:
    order: int = DEFAULT_ORDER
    max_iter: int = 2000
    gtol: float = 1e-5
    start: np.ndarray | dict | None = None
    compute_se: bool = True
    hessian_step: float = 1e-4
    node_budget: int = DEFAULT_NODE_BUDGET


@dataclass
class FitResult:
    spec: ModelSpec
    theta: np.ndarray
    loglik: float
    n_params: int
    converged: bool
    iterations: int
    grad_norm: float
    names: list[str]
    estimates: np.ndarray
    std_errors: np.ndarray
    objective: float = math.nan
    message: str = ""
    order: int = DEFAULT_ORDER
    cov_theta: np.ndarray | None = None

    @property
    def aic(self) -> float:
        return 2.0 * self.n_params - 2.0 * self.loglik

    @property
    def params(self) -> Params:
        return ParamLayout(self.spec).unpack(self.theta)

    @property
    def se_available(self) -> bool:
        return bool(np.all(np.isfinite(self.std_errors)))

    def estimate(self, name: str) -> float:
        return float(self.estimates[self.names.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    def table(self) -> list[dict]:
        rows = []
        for n, est, se in zip(self.names, self.estimates, self.std_errors):
            z = est / se if np.isfinite(se) and se > 0 else math.nan
            rows.append({"name": n, "estimate": float(est), "std_error": float(se), "z_value": float(z)})
        return rows

    def summary(self) -> dict:
        return {
            "loglik": self.loglik,
            "aic": self.aic,
            "n_params": self.n_params,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "quadrature_order": self.order,
            "message": self.message,
        }


@dataclass(frozen=True)
class LrTestResult:
    statistic: float
    df: int
    p_value: float


# ---------------------------------------------------------------------------
# starting values


def starting_values(spec: ModelSpec, data: Dataset) -> np.ndarray:
    """Moment-matched thresholds, zero effects, random-effect SDs of 0.5."""
    layout = ParamLayout(spec)
    theta = np.zeros(layout.size)
    re_var = math.exp(2 * START_LOG_SD)
    slopes = []
    for j, mobj in enumerate(spec.measurements):
        y = data.y[data.measurement == j]
        fam, th = mobj.family, mobj.thresholds
        if len(y) == 0:
            intercept, slope = -fam.mean, 1.0
        elif mobj.is_continuous:
            gy = th.g(y)
            sd = float(np.std(gy)) if len(gy) > 1 else 0.0
            slope = math.sqrt(fam.variance + re_var) / sd if sd > 0 else 1.0
            intercept = -fam.mean - slope * float(np.mean(gy))
        else:
            top = mobj.categories - 1 if mobj.is_ordinal else max(int(y.max()), 1)
            r = np.arange(mobj.lowest, top + 1) if not mobj.is_ordinal else np.arange(1, top + 1)
            n = len(y)
            surv = np.array([(y > v).mean() for v in r])
            surv = np.clip(surv, 0.5 / n, 1.0 - 0.5 / n)
            # P(Y > r) = F(-tau_r) at eta = 0
            tau = -np.asarray(quantile(fam, surv))
            if th.is_free:
                tau = np.maximum.accumulate(tau)
                tau = tau + 1e-3 * np.arange(len(tau))
                theta[layout.intercept_index[j]] = tau[0]
                theta[layout.gap_index[j]] = np.log(np.diff(tau))
                continue
            gr = th.g(r)
            if len(r) > 1 and np.ptp(gr) > 0:
                slope, intercept = np.polyfit(gr, tau, 1)
                slope = max(float(slope), 1e-2)
                intercept = float(np.mean(tau - slope * gr))
            else:
                slope, intercept = 1.0, float(tau[0] - gr[0])
        theta[layout.intercept_index[j]] = intercept
        slopes.append((j, slope))
    if spec.homogeneous_dispersion and slopes:
        shared = math.exp(np.mean([math.log(s) for _, s in slopes]))
        for j, _ in slopes:
            theta[layout.slope_index[j]] = math.log(shared)
    else:
        for j, s in slopes:
            theta[layout.slope_index[j]] = math.log(s)
    for a in range(spec.q):
        theta[layout.chol_index[a, a]] = START_LOG_SD
    return theta


def _resolve_start(layout: ParamLayout, start, default: np.ndarray) -> np.ndarray:
    if start is None:
        return default
    if isinstance(start, dict):
        theta = default.copy()
        for k, v in start.items():
            theta[layout.index(k)] = v
        return theta
    theta = np.asarray(start, dtype=float)
    if theta.shape != default.shape:
        raise ValueError(f"starting vector has shape {theta.shape}, expected {default.shape}")
    return theta.copy()


# ---------------------------------------------------------------------------
# optimizer


def numerical_hessian(grad: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrized."""
    k = len(theta)
    hess = np.zeros((k, k))
    for i in range(k):
        h = step * (1.0 + abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        hess[:, i] = (grad(tp) - grad(tm)) / (2.0 * h)
    return 0.5 * (hess + hess.T)


@dataclass
class _Outcome:
    theta: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    message: str = ""
    converged: bool = False


def maximize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta0: np.ndarray,
    *,
    gtol: float = 1e-5,
    max_iter: int = 2000,
    hessian: Callable[[np.ndarray], np.ndarray] | None = None,
    newton_steps: int = 30,
) -> _Outcome:
    """Maximize a smooth objective given (value, gradient).

    Limited-memory BFGS does the bulk of the work; when it stops before
    the gradient tolerance is met, damped Newton steps on ``hessian``
    finish the job.
    """

    def neg(t):
        v, g = fun(t)
        if not np.isfinite(v):
            return 1e300, np.zeros_like(t)
        return -v, -g

    res = optimize.minimize(
        neg,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": 0.1 * gtol, "ftol": 1e-15, "maxcor": 30, "maxls": 50},
    )
    theta = np.asarray(res.x, dtype=float)
    value, grad = fun(theta)
    iters = int(res.nit)
    message = str(res.message)
    if hessian is not None:
        for _ in range(newton_steps):
            if np.max(np.abs(grad)) <= gtol:
                break
            H = hessian(theta)
            A = -H
            try:
                evals, evecs = np.linalg.eigh(A)
            except np.linalg.LinAlgError:
                break
            floor = max(1e-8, 1e-10 * np.max(np.abs(evals)))
            evals = np.maximum(evals, floor)
            step = evecs @ ((evecs.T @ grad) / evals)
            t = 1.0
            improved = False
            for _ls in range(40):
                cand = theta + t * step
                v, g = fun(cand)
                if np.isfinite(v) and v >= value - 1e-12 * (1 + abs(value)):
                    if v > value or np.max(np.abs(g)) < np.max(np.abs(grad)):
                        theta, value, grad = cand, v, g
                        improved = True
                        break
                t *= 0.5
            iters += 1
            if not improved:
                message += "; Newton line search failed"
                break
    gnorm = float(np.max(np.abs(grad))) if len(grad) else 0.0
    return _Outcome(theta, value, grad, iters, message, gnorm <= gtol)


def _standard_errors(layout: ParamLayout, hess: np.ndarray, theta: np.ndarray):
    k = layout.size
    nan = np.full(k, math.nan)
    info = -hess
    try:
        evals = np.linalg.eigvalsh(info)
        if evals.min() <= 1e-10 * max(1.0, evals.max()):
            return nan, None
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return nan, None
    jac = layout.structured_jacobian(theta)
    scov = jac @ cov @ jac.T
    return np.sqrt(np.clip(np.diag(scov), 0, None)), cov


def fit(spec: ModelSpec, data: Dataset, options: FitOptions | None = None, **kwargs) -> FitResult:
    """Maximize the Gauss-Hermite marginal log-likelihood.

    Non-convergence is reported through ``converged`` rather than raised.
    """
    return fit_objective(spec, data, options or FitOptions(**kwargs))


def fit_objective(spec: ModelSpec, data: Dataset, options: FitOptions, penalty=None) -> FitResult:
    """Shared driver for plain and penalized fits.

    ``penalty``, when given, provides ``value_grad(theta)`` and
    ``hessian(theta)`` of a term subtracted from the log-likelihood.
    """
    if data.n_clusters < 2:
        raise ValueError("fitting needs at least two clusters")
    lik = MarginalLikelihood(spec, data, node_budget=options.node_budget)
    layout = lik.layout
    theta0 = _resolve_start(layout, options.start, starting_values(spec, data))

    def fun(t):
        v, g = lik.loglik_and_grad(t, options.order)
        if penalty is not None:
            pv, pg = penalty.value_grad(t)
            v, g = v - pv, g - pg
        return v, g

    def loglik_grad(t):
        return lik.loglik_and_grad(t, options.order)[1]

    def hess(t):
        h = numerical_hessian(loglik_grad, t, options.hessian_step)
        if penalty is not None:
            h = h - penalty.hessian(t)
        return h

    out = maximize(
        fun,
        theta0,
        gtol=options.gtol,
        max_iter=options.max_iter,
        hessian=hess,
        newton_steps=30 if penalty is None else 100,
    )
    if options.compute_se:
        se, cov = _standard_errors(layout, hess(out.theta), out.theta)
    else:
        se, cov = np.full(layout.size, math.nan), None
    loglik = out.value if penalty is None else lik.loglik(out.theta, options.order)
    result = FitResult(
        spec=spec,
        theta=out.theta,
        loglik=loglik,
        n_params=layout.size,
        converged=out.converged,
        iterations=out.iterations,
        grad_norm=float(np.max(np.abs(out.grad))) if layout.size else 0.0,
        names=list(layout.names),
        estimates=layout.structured(out.theta),
        std_errors=se,
        objective=out.value,
        message=out.message,
        order=options.order,
        cov_theta=cov,
    )
    if not result.converged:
        log.warning("fit did not converge: grad_norm=%.3g (%s)", result.grad_norm, result.message)
    return result


# ---------------------------------------------------------------------------
# tests


def lr_test(full: FitResult, reduced: FitResult) -> LrTestResult:
    """Likelihood-ratio test of a nested reduced model; nesting is the caller's claim."""
    df = int(full.n_params - reduced.n_params)
    if df <= 0:
        raise ValueError(f"full model must have more parameters than the reduced one (df={df})")
    stat = 2.0 * (full.loglik - reduced.loglik)
    if stat < -2e-6:
        raise NestingError(
            f"reduced model log-likelihood {reduced.loglik:.6f} exceeds the full model's {full.loglik:.6f}"
        )
    stat = max(stat, 0.0)
    return LrTestResult(stat, df, chi2_sf(stat, df))


@dataclass
class ScanEntry:
    covariate: str
    loglik: float = math.nan
    result: LrTestResult | None = None
    error: str | None = None
    fit: FitResult | None = field(default=None, repr=False)


def _warm_start(full: FitResult, reduced_spec: ModelSpec) -> dict:
    # carry every shared name over; a demoted block starts at its mean
    start = {}
    names = ParamLayout(reduced_spec).names
    for n, v in zip(full.names, full.theta):
        if n in names:
            start[n] = v
    for cov in reduced_spec.covariates:
        name = f"beta[{cov.name}]"
        if cov.scope == GLOBAL and name in names and name not in start:
            vals = [v for n, v in zip(full.names, full.theta) if n.startswith(f"beta[{cov.name}:")]
            if vals:
                start[name] = float(np.mean(vals))
    return start


def global_vs_varying_scan(spec: ModelSpec, data: Dataset, options: FitOptions | None = None):
    """Test each measurement-specific covariate for a global effect, one at a time.

    Returns the all-varying fit and one ``ScanEntry`` per covariate.
    Failures of individual reduced fits are recorded and the scan goes on.
    """
    options = options or FitOptions()
    varying = [c.name for c in spec.covariates if c.scope == MEASUREMENT]
    if not varying:
        raise ValueError("no measurement-specific covariates to test")
    if spec.m < 2:
        raise ValueError("with a single measurement global and varying effects coincide (df = 0)")
    full = fit(spec, data, options)
    entries = []
    for name in varying:
        reduced_spec = spec.with_scope(name, GLOBAL)
        entry = ScanEntry(name)
        try:
            opts = FitOptions(**{**options.__dict__, "start": _warm_start(full, reduced_spec), "compute_se": False})
            red = fit(reduced_spec, data, opts)
            entry.fit = red
            entry.loglik = red.loglik
            entry.result = lr_test(full, red)
        except Exception as exc:  # noqa: BLE001 - recorded per covariate
            entry.error = f"{type(exc).__name__}: {exc}"
            log.warning("scan of %s failed: %s", name, entry.error)
        entries.append(entry)
    return full, entries
