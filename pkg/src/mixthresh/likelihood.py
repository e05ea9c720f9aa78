"""Observation densities and the Gauss-Hermite marginal log-likelihood.

For cluster i the random effect is written ``b = L v`` with v standard
normal, and the integral over v is replaced by a product Gauss-Hermite
sum. Per node, log-densities of all observations in the cluster are added
and the quadrature sum is taken in log space with a max shift. Cluster
contributions are combined with exactly rounded summation, so the total
does not depend on the order of clusters.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import kernels
from .families import DomainError, log_cdf, log_pdf, log_sf
from .model import Dataset, ModelSpec, Observation, ParamLayout, Params
from .quadrature import DEFAULT_NODE_BUDGET, DEFAULT_ORDER, QuadratureRule, product_grid
from .thresholds import free_thresholds


def _as_params(layout: ParamLayout, params) -> Params:
    if isinstance(params, Params):
        return params
    return layout.unpack(params)


def _order(rule) -> int:
    if rule is None:
        return DEFAULT_ORDER
    if isinstance(rule, QuadratureRule):
        return rule.order
    return int(rule)


class MarginalLikelihood:
    """Marginal log-likelihood of one model on one dataset.

    Quantities that depend only on the data (basis values at y and y - 1,
    log g'(y), support flags) are computed once here.
    """

    def __init__(self, spec: ModelSpec, data: Dataset, *, node_budget: int = DEFAULT_NODE_BUDGET):
        self.spec = spec
        self.data = data
        self.layout = ParamLayout(spec)
        self.node_budget = node_budget
        n = data.n_obs
        meas = data.measurement
        y = data.y
        self.family = np.array([spec.measurements[j].family.code for j in meas], dtype=np.int64)
        self.continuous = np.array([spec.measurements[j].is_continuous for j in meas], dtype=bool)
        self.has_hi = np.zeros(n, dtype=bool)
        self.has_lo = np.ones(n, dtype=bool)
        self.g_hi = np.zeros(n)
        self.g_lo = np.zeros(n)
        self.log_dg = np.zeros(n)
        self.free_rows: list[tuple[int, np.ndarray]] = []
        self.param_rows: list[tuple[int, np.ndarray]] = []
        for j, mobj in enumerate(spec.measurements):
            rows = np.flatnonzero(meas == j)
            if not len(rows):
                continue
            yj = y[rows]
            if not np.all(mobj.check_y(yj)):
                raise DomainError(f"measurement {mobj.id!r} has values outside its support")
            th = mobj.thresholds
            if mobj.is_continuous:
                self.g_lo[rows] = th.g(yj)
                self.log_dg[rows] = np.log(th.dg(yj))
            else:
                self.has_hi[rows] = yj > mobj.lowest
                if mobj.is_ordinal:
                    self.has_lo[rows] = yj < mobj.categories
                if not th.is_free:
                    hi = self.has_hi[rows]
                    lo = self.has_lo[rows]
                    self.g_hi[rows[hi]] = th.g(yj[hi] - 1.0)
                    self.g_lo[rows[lo]] = th.g(yj[lo])
            if th.is_free:
                self.free_rows.append((j, rows))
            else:
                self.param_rows.append((j, rows))
        self.n_continuous = np.bincount(meas[self.continuous], minlength=spec.m)
        self.starts = data.starts.astype(np.int64)

    # -- building blocks --------------------------------------------------

    def thresholds_at_data(self, params: Params):
        """tau_hi, tau_lo and log-Jacobian per observation."""
        n = self.data.n_obs
        tau_hi = np.zeros(n)
        tau_lo = np.zeros(n)
        logjac = np.zeros(n)
        for j, rows in self.param_rows:
            c = params.thresholds[j]
            slope = c.slope
            tau_hi[rows] = c.intercept + slope * self.g_hi[rows]
            tau_lo[rows] = c.intercept + slope * self.g_lo[rows]
            logjac[rows] = c.raw_slope + self.log_dg[rows]
        for j, rows in self.free_rows:
            th = free_thresholds(params.thresholds[j])
            r = self.data.y[rows].astype(int)
            hi = self.has_hi[rows]
            lo = self.has_lo[rows]
            tau_hi[rows[hi]] = th[r[hi] - 2]
            tau_lo[rows[lo]] = th[r[lo] - 1]
        return tau_hi, tau_lo, logjac

    def linear_predictor(self, params: Params, points: np.ndarray) -> np.ndarray:
        d = self.data
        beta = np.asarray(params.beta).reshape(self.spec.m, self.spec.p)
        xb = np.einsum("op,op->o", d.X, beta[d.measurement]) if self.spec.p else np.zeros(d.n_obs)
        zb = d.Z @ (np.asarray(params.chol) @ points.T)
        return xb[:, None] + zb

    def _node_terms(self, params: Params, order: int):
        grid = product_grid(order, self.spec.q, self.node_budget)
        eta = self.linear_predictor(params, grid.points)
        tau_hi, tau_lo, logjac = self.thresholds_at_data(params)
        ll, d_hi, d_lo = kernels.obs_terms(
            self.family, self.continuous, self.has_hi, self.has_lo, tau_hi, tau_lo, logjac, eta
        )
        lse, post = kernels.cluster_posterior(ll, self.starts, grid.log_weights)
        return grid, lse, post, d_hi, d_lo

    # -- public evaluation ------------------------------------------------

    def cluster_logliks(self, params, order: int = DEFAULT_ORDER) -> np.ndarray:
        params = _as_params(self.layout, params)
        _, lse, _, _, _ = self._node_terms(params, order)
        return lse

    def loglik(self, params, order: int = DEFAULT_ORDER) -> float:
        return math.fsum(self.cluster_logliks(params, order))

    def loglik_and_grad(self, params, order: int = DEFAULT_ORDER):
        params = _as_params(self.layout, params)
        grid, lse, post, d_hi, d_lo = self._node_terms(params, order)
        total = math.fsum(lse)
        lay = self.layout
        spec = self.spec
        d = self.data
        w = post[d.cluster]
        w_hi = w * d_hi
        w_lo = w * d_lo
        D_hi = w_hi.sum(axis=1)
        D_lo = w_lo.sum(axis=1)
        r = D_hi + D_lo
        grad = np.zeros(lay.size)

        if spec.p:
            gb = np.zeros((spec.m, spec.p))
            np.add.at(gb, d.measurement, d.X * r[:, None])
            np.add.at(grad, lay.beta_index, gb)

        for j, rows in self.param_rows:
            c = params.thresholds[j]
            grad[lay.intercept_index[j]] -= r[rows].sum()
            grad[lay.slope_index[j]] += (
                -c.slope * (D_hi[rows] @ self.g_hi[rows] + D_lo[rows] @ self.g_lo[rows])
                + self.n_continuous[j]
            )
        for j, rows in self.free_rows:
            c = params.thresholds[j]
            k = spec.measurements[j].thresholds.k
            gth = np.zeros(k - 1)
            ry = d.y[rows].astype(int)
            hi = self.has_hi[rows]
            lo = self.has_lo[rows]
            np.add.at(gth, ry[hi] - 2, -D_hi[rows][hi])
            np.add.at(gth, ry[lo] - 1, -D_lo[rows][lo])
            grad[lay.intercept_index[j]] += gth.sum()
            if k > 2:
                tail = np.cumsum(gth[::-1])[::-1][1:]
                grad[lay.gap_index[j]] += np.exp(c.raw_gaps) * tail

        gl = d.Z.T @ (w_hi + w_lo) @ grid.points
        chol = np.asarray(params.chol)
        for a in range(spec.q):
            for b in range(a + 1):
                v = gl[a, b]
                grad[lay.chol_index[a, b]] += v * chol[a, a] if a == b else v
        return total, grad


# ---------------------------------------------------------------------------
# operation-level API


def _eta(spec: ModelSpec, params: Params, obs: Observation, b) -> tuple[int, float]:
    j = spec.measurement_index(obs.measurement)
    x = np.asarray(obs.x, dtype=float).reshape(-1)
    z = np.asarray(obs.z, dtype=float).reshape(-1)
    if x.shape != (spec.p,):
        raise ValueError(f"x has length {x.shape[0]}, model has {spec.p} covariates")
    if z.shape != (spec.q,):
        raise ValueError(f"z has length {z.shape[0]}, model has {spec.q} random effects")
    b = np.asarray(b, dtype=float).reshape(-1)
    beta = np.asarray(params.beta).reshape(spec.m, spec.p)
    return j, float(z @ b + x @ beta[j]) if spec.p else float(z @ b)


def continuous_density(spec: ModelSpec, params, obs: Observation, b) -> float:
    """f_ij(y | b) = f(eta - delta_j(y)) * delta_j'(y)."""
    params = _as_params(ParamLayout(spec), params)
    j, eta = _eta(spec, params, obs, b)
    mobj = spec.measurements[j]
    if not mobj.is_continuous:
        raise ValueError(f"measurement {mobj.id!r} is discrete")
    th, c = mobj.thresholds, params.thresholds[j]
    th.check(obs.y)
    t = eta - c.intercept - c.slope * float(th.g(obs.y))
    return float(np.exp(log_pdf(mobj.family.code, t)) * c.slope * float(th.dg(obs.y)))


def discrete_probabilities(spec: ModelSpec, params, j: int, eta: float, upto: int | None = None) -> np.ndarray:
    """P(Y = r) over the support of discrete measurement j, starting at its
    lowest value. Counts are truncated at ``upto``."""
    params = _as_params(ParamLayout(spec), params)
    mobj = spec.measurements[j]
    if mobj.is_ordinal:
        r = np.arange(1, mobj.categories)
    else:
        if upto is None:
            raise ValueError("count support needs a truncation point")
        r = np.arange(0, upto + 1)
    th, c = mobj.thresholds, params.thresholds[j]
    tau = free_thresholds(c)[r - 1] if th.is_free else c.intercept + c.slope * th.g(r)
    surv = np.exp(log_cdf(mobj.family.code, eta - tau))  # P(Y > r)
    upper = np.concatenate(([1.0], surv))
    if mobj.is_ordinal:
        return upper - np.concatenate((surv, [0.0]))
    return upper[:-1] - surv


def discrete_density(spec: ModelSpec, params, obs: Observation, b) -> float:
    """f_ij(r | b) = P(Y > r - 1) - P(Y > r)."""
    params = _as_params(ParamLayout(spec), params)
    j, eta = _eta(spec, params, obs, b)
    mobj = spec.measurements[j]
    if mobj.is_continuous:
        raise ValueError(f"measurement {mobj.id!r} is continuous")
    if not mobj.check_y(obs.y):
        lim = f"1..{mobj.categories}" if mobj.is_ordinal else "0, 1, ..."
        raise DomainError(f"measurement {mobj.id!r}: y={obs.y!r} outside {lim}")
    th, c = mobj.thresholds, params.thresholds[j]
    y = int(obs.y)
    kind = mobj.family.code

    def tau(r):
        return float(free_thresholds(c)[r - 1]) if th.is_free else c.intercept + c.slope * float(th.g(r))

    has_hi = y > mobj.lowest
    has_lo = not (mobj.is_ordinal and y == mobj.categories)
    if has_hi and has_lo:
        a, bb = eta - tau(y - 1), eta - tau(y)
        if bb > 0:
            return float(np.exp(log_sf(kind, bb)) - np.exp(log_sf(kind, a)))
        return float(np.exp(log_cdf(kind, a)) - np.exp(log_cdf(kind, bb)))
    if has_lo:
        return float(np.exp(log_sf(kind, eta - tau(y))))
    return float(np.exp(log_cdf(kind, eta - tau(y - 1))))


def _dataset_from_observations(spec: ModelSpec, observations: Sequence[Observation]) -> Dataset:
    obs = list(observations)
    if not obs:
        raise ValueError("no observations")
    ids = {o.cluster_id for o in obs}
    if len(ids) != 1:
        raise ValueError("observations belong to more than one cluster")
    n = len(obs)
    return Dataset(
        cluster_ids=np.array([obs[0].cluster_id], dtype=object),
        cluster=np.zeros(n, dtype=int),
        measurement=np.array([spec.measurement_index(o.measurement) for o in obs], dtype=int),
        y=np.array([float(o.y) for o in obs]),
        X=np.array([np.asarray(o.x, dtype=float).reshape(spec.p) for o in obs]).reshape(n, spec.p),
        Z=np.array([np.asarray(o.z, dtype=float).reshape(spec.q) for o in obs]).reshape(n, spec.q),
        covariate_names=tuple(spec.covariate_names),
    )


def cluster_marginal_loglik(spec: ModelSpec, params, observations: Sequence[Observation], rule=None) -> float:
    data = _dataset_from_observations(spec, observations)
    return float(MarginalLikelihood(spec, data).cluster_logliks(params, _order(rule))[0])


def total_loglik(spec: ModelSpec, params, data: Dataset, rule=None) -> float:
    return MarginalLikelihood(spec, data).loglik(params, _order(rule))


def loglik_gradient(spec: ModelSpec, params, data: Dataset, rule=None) -> np.ndarray:
    """Gradient of ``total_loglik`` in the packed unconstrained parameters."""
    return MarginalLikelihood(spec, data).loglik_and_grad(params, _order(rule))[1]
