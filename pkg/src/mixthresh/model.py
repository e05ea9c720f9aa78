"""Model specification, parameter packing and the clustered dataset container."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .families import DomainError, ResponseFamily, get_family
from .thresholds import ThresholdsCoeffs, ThresholdsSpec, free_thresholds

CONTINUOUS = "continuous"
DISCRETE = "discrete"

GLOBAL = "global"
MEASUREMENT = "measurement"

MAX_RANDOM_EFFECTS = 3


@dataclass(frozen=True)
class Measurement:
    """One measurement j: response type, response function and thresholds basis.

    Discrete measurements are counts on {0, 1, ...} unless ``categories`` is
    set, in which case they are ordinal on {1, ..., categories}.
    """

    id: str
    response_type: str
    family: ResponseFamily
    thresholds: ThresholdsSpec
    categories: int | None = None
    repeatable: bool = False  # may occur more than once per cluster

    def __post_init__(self):
        object.__setattr__(self, "family", get_family(self.family))
        th = self.thresholds
        if self.response_type == CONTINUOUS:
            if th.is_free:
                raise ValueError(f"measurement {self.id!r}: free thresholds need a discrete response")
            if self.categories is not None:
                raise ValueError(f"measurement {self.id!r}: categories only apply to discrete responses")
            return
        if self.response_type != DISCRETE:
            raise ValueError(f"measurement {self.id!r}: unknown response type {self.response_type!r}")
        k = self.categories
        if k is None and th.is_free:
            k = th.k
        if k is None and th.basis == "logit":
            if float(th.b) != round(th.b):
                raise ValueError(
                    f"measurement {self.id!r}: discrete logit thresholds need an integer upper bound "
                    "or an explicit number of categories"
                )
            k = int(round(th.b))
        if k is not None:
            k = int(k)
            if k < 2:
                raise ValueError(f"measurement {self.id!r}: an ordinal response needs k >= 2")
            if th.is_free and th.k != k:
                raise ValueError(f"measurement {self.id!r}: free({th.k}) does not match {k} categories")
            if not th.is_free:
                lo, hi = th.support()
                if not (lo < 1 and hi > k - 1):
                    raise ValueError(
                        f"measurement {self.id!r}: thresholds basis {th} is not finite on 1..{k - 1}"
                    )
            object.__setattr__(self, "categories", k)
        else:
            lo, _ = th.support()
            if not lo < 0:
                raise ValueError(
                    f"measurement {self.id!r}: count responses need a basis finite at 0 "
                    f"(linear or shifted_log), got {th}"
                )

    @property
    def is_continuous(self) -> bool:
        return self.response_type == CONTINUOUS

    @property
    def is_ordinal(self) -> bool:
        return self.categories is not None

    @property
    def lowest(self) -> int:
        return 1 if self.is_ordinal else 0

    def check_y(self, y) -> np.ndarray:
        """Boolean mask of values inside the support of this measurement."""
        y = np.asarray(y, dtype=float)
        if self.is_continuous:
            lo, hi = self.thresholds.support()
            return np.isfinite(y) & (y > lo) & (y < hi)
        ok = np.isfinite(y) & (y == np.round(y)) & (y >= self.lowest)
        if self.is_ordinal:
            ok &= y <= self.categories
        return ok


@dataclass(frozen=True)
class Covariate:
    name: str
    scope: str = MEASUREMENT

    def __post_init__(self):
        if self.scope not in (GLOBAL, MEASUREMENT):
            raise ValueError(f"covariate {self.name!r}: scope must be 'global' or 'measurement'")


@dataclass(frozen=True)
class ModelSpec:
    measurements: tuple[Measurement, ...]
    covariates: tuple[Covariate, ...] = ()
    random_effects: tuple[str, ...] = ("intercept",)
    homogeneous_dispersion: bool = False

    def __post_init__(self):
        object.__setattr__(self, "measurements", tuple(self.measurements))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "random_effects", tuple(self.random_effects))
        if not self.measurements:
            raise ValueError("a model needs at least one measurement")
        ids = [m.id for m in self.measurements]
        if len(set(ids)) != len(ids):
            raise ValueError("measurement ids must be unique")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")
        if not 1 <= len(self.random_effects) <= MAX_RANDOM_EFFECTS:
            raise ValueError(f"random effects dimension must be in 1..{MAX_RANDOM_EFFECTS}")

    @property
    def m(self) -> int:
        return len(self.measurements)

    @property
    def p(self) -> int:
        return len(self.covariates)

    @property
    def q(self) -> int:
        return len(self.random_effects)

    @property
    def measurement_ids(self) -> list[str]:
        return [m.id for m in self.measurements]

    @property
    def covariate_names(self) -> list[str]:
        return [c.name for c in self.covariates]

    def measurement_index(self, key) -> int:
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < self.m:
                raise IndexError(f"measurement index {key} out of range")
            return int(key)
        try:
            return self.measurement_ids.index(str(key))
        except ValueError:
            raise KeyError(f"unknown measurement {key!r}") from None

    def with_scope(self, name: str, scope: str) -> "ModelSpec":
        covs = tuple(replace(c, scope=scope) if c.name == name else c for c in self.covariates)
        if name not in self.covariate_names:
            raise KeyError(f"unknown covariate {name!r}")
        return replace(self, covariates=covs)

    def without_covariate(self, name: str) -> "ModelSpec":
        if name not in self.covariate_names:
            raise KeyError(f"unknown covariate {name!r}")
        return replace(self, covariates=tuple(c for c in self.covariates if c.name != name))


# ---------------------------------------------------------------------------
# parameters


@dataclass
class Params:
    """Structured parameters.

    ``beta`` is the m x p matrix of effective coefficients (a global
    covariate has equal entries in its column), ``thresholds`` one
    coefficient set per measurement, ``chol`` the lower-triangular factor
    of the random-effects covariance.
    """

    beta: np.ndarray
    thresholds: list[ThresholdsCoeffs]
    chol: np.ndarray

    @property
    def cov(self) -> np.ndarray:
        return self.chol @ self.chol.T


class ParamLayout:
    """Bijection between ``Params`` and the flat unconstrained vector."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        m, p, q = spec.m, spec.p, spec.q
        names: list[str] = []
        kinds: list[str] = []

        def add(name, kind):
            names.append(name)
            kinds.append(kind)
            return len(names) - 1

        self.beta_index = np.zeros((m, p), dtype=int)
        for s, cov in enumerate(spec.covariates):
            if cov.scope == GLOBAL:
                self.beta_index[:, s] = add(f"beta[{cov.name}]", "beta")
            else:
                for j, meas in enumerate(spec.measurements):
                    self.beta_index[j, s] = add(f"beta[{cov.name}:{meas.id}]", "beta")

        self.intercept_index = np.full(m, -1)
        self.slope_index = np.full(m, -1)
        self.gap_index: list[np.ndarray] = [np.zeros(0, dtype=int) for _ in range(m)]
        shared = -1
        for j, meas in enumerate(spec.measurements):
            th = meas.thresholds
            if th.is_free:
                self.intercept_index[j] = add(f"threshold[{meas.id},1]", "free_first")
                self.gap_index[j] = np.array(
                    [add(f"threshold[{meas.id},{r}]", "free_gap") for r in range(2, th.k)], dtype=int
                )
                continue
            self.intercept_index[j] = add(f"delta0[{meas.id}]", "intercept")
            if spec.homogeneous_dispersion:
                if shared < 0:
                    shared = add("delta", "slope")
                self.slope_index[j] = shared
            else:
                self.slope_index[j] = add(f"delta[{meas.id}]", "slope")

        self.chol_index = np.full((q, q), -1)
        for a in range(q):
            for b in range(a + 1):
                if a == b:
                    self.chol_index[a, a] = add(f"sd[{spec.random_effects[a]}]", "chol_diag")
                else:
                    self.chol_index[a, b] = add(
                        f"chol[{spec.random_effects[a]},{spec.random_effects[b]}]", "chol_off"
                    )
        self.names = names
        self.kinds = np.array(kinds)
        self.size = len(names)
        # parameters optimized on the log scale
        self.log_scale = np.isin(self.kinds, ("slope", "free_gap", "chol_diag"))

    def __len__(self) -> int:
        return self.size

    def index(self, name: str) -> int:
        return self.names.index(name)

    def unpack(self, theta) -> Params:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got shape {theta.shape}")
        spec = self.spec
        beta = theta[self.beta_index] if spec.p else np.zeros((spec.m, 0))
        coeffs = []
        for j, meas in enumerate(spec.measurements):
            if meas.thresholds.is_free:
                coeffs.append(
                    ThresholdsCoeffs(theta[self.intercept_index[j]], 0.0, theta[self.gap_index[j]].copy())
                )
            else:
                coeffs.append(ThresholdsCoeffs(theta[self.intercept_index[j]], theta[self.slope_index[j]]))
        q = spec.q
        chol = np.zeros((q, q))
        for a in range(q):
            for b in range(a + 1):
                v = theta[self.chol_index[a, b]]
                chol[a, b] = math.exp(v) if a == b else v
        return Params(np.array(beta, dtype=float), coeffs, chol)

    def pack(self, params: Params) -> np.ndarray:
        spec = self.spec
        theta = np.zeros(self.size)
        beta = np.asarray(params.beta, dtype=float).reshape(spec.m, spec.p)
        for s, cov in enumerate(spec.covariates):
            col = beta[:, s]
            if cov.scope == GLOBAL and not np.allclose(col, col[0], rtol=0, atol=1e-12):
                raise ValueError(f"global covariate {cov.name!r} needs equal coefficients")
            theta[self.beta_index[:, s]] = col
        for j, meas in enumerate(spec.measurements):
            c = params.thresholds[j]
            theta[self.intercept_index[j]] = c.intercept
            if meas.thresholds.is_free:
                gaps = np.asarray(c.raw_gaps, dtype=float)
                if gaps.shape != (meas.thresholds.k - 2,):
                    raise ValueError(f"measurement {meas.id!r} needs {meas.thresholds.k - 2} gaps")
                theta[self.gap_index[j]] = gaps
            else:
                theta[self.slope_index[j]] = c.raw_slope
        chol = np.asarray(params.chol, dtype=float)
        for a in range(spec.q):
            for b in range(a + 1):
                if a == b:
                    if chol[a, a] <= 0:
                        raise ValueError("Cholesky diagonal must be positive")
                    theta[self.chol_index[a, a]] = math.log(chol[a, a])
                else:
                    theta[self.chol_index[a, b]] = chol[a, b]
        return theta

    def structured(self, theta) -> np.ndarray:
        """Parameters on the reported scale: slopes, gaps and SDs exponentiated,
        free thresholds as cumulative values."""
        theta = np.asarray(theta, dtype=float)
        out = np.where(self.log_scale, np.exp(np.where(self.log_scale, theta, 0.0)), theta)
        for j, meas in enumerate(self.spec.measurements):
            if meas.thresholds.is_free:
                idx = np.concatenate(([self.intercept_index[j]], self.gap_index[j]))
                out[idx] = free_thresholds(ThresholdsCoeffs(theta[idx[0]], 0.0, theta[idx[1:]]))
        return out

    def from_structured(self, values) -> np.ndarray:
        """Inverse of ``structured``."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.size,):
            raise ValueError(f"expected {self.size} values, got shape {values.shape}")
        pos = self.log_scale & ~np.isin(self.kinds, ("free_gap",))
        if np.any(values[pos] <= 0):
            raise ValueError("slopes and standard deviations must be positive")
        theta = values.copy()
        theta[pos] = np.log(values[pos])
        for j, meas in enumerate(self.spec.measurements):
            if meas.thresholds.is_free:
                idx = np.concatenate(([self.intercept_index[j]], self.gap_index[j]))
                c = ThresholdsCoeffs.from_thresholds(values[idx])
                theta[idx[0]] = c.intercept
                theta[idx[1:]] = c.raw_gaps
        return theta

    def structured_jacobian(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        jac = np.diag(np.where(self.log_scale, np.exp(np.where(self.log_scale, theta, 0.0)), 1.0))
        for j, meas in enumerate(self.spec.measurements):
            if meas.thresholds.is_free:
                idx = np.concatenate(([self.intercept_index[j]], self.gap_index[j]))
                g = np.exp(theta[idx[1:]])
                for r, row in enumerate(idx):
                    jac[row, idx[0]] = 1.0
                    for s in range(1, len(idx)):
                        jac[row, idx[s]] = g[s - 1] if s <= r else 0.0
        return jac


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Observation:
    """A single response y_ij with its covariate vectors."""

    cluster_id: object
    measurement: int | str
    y: float
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z: np.ndarray = field(default_factory=lambda: np.ones(1))


@dataclass
class Dataset:
    """Long-format observations grouped so each cluster's rows are contiguous."""

    cluster_ids: np.ndarray
    cluster: np.ndarray
    measurement: np.ndarray
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    covariate_names: tuple[str, ...] = ()
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return len(self.y)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    @property
    def starts(self) -> np.ndarray:
        return np.searchsorted(self.cluster, np.arange(self.n_clusters + 1))

    def subset(self, clusters: Sequence[int]) -> "Dataset":
        """Dataset restricted to the given cluster indices, in that order."""
        clusters = np.asarray(clusters, dtype=int)
        st = self.starts
        rows = np.concatenate([np.arange(st[c], st[c + 1]) for c in clusters]) if len(clusters) else np.zeros(0, int)
        sizes = st[clusters + 1] - st[clusters]
        return Dataset(
            cluster_ids=self.cluster_ids[clusters],
            cluster=np.repeat(np.arange(len(clusters)), sizes),
            measurement=self.measurement[rows],
            y=self.y[rows],
            X=self.X[rows],
            Z=self.Z[rows],
            covariate_names=self.covariate_names,
            extra={k: v[rows] for k, v in self.extra.items()},
        )

    def observations(self, spec: ModelSpec) -> list[Observation]:
        return [
            Observation(self.cluster_ids[c], spec.measurement_ids[j], float(y), self.X[i], self.Z[i])
            for i, (c, j, y) in enumerate(zip(self.cluster, self.measurement, self.y))
        ]


def make_dataset(
    spec: ModelSpec,
    cluster: Iterable,
    measurement: Iterable,
    y: Iterable,
    columns: Mapping[str, Iterable] | None = None,
) -> Dataset:
    """Build a validated ``Dataset`` from parallel row arrays.

    ``columns`` supplies the covariates named in the spec and any extra
    columns used in the random-effects design. Rows are regrouped by
    cluster (first-appearance order) and sorted by measurement within a
    cluster.
    """
    columns = dict(columns or {})
    labels = np.asarray(list(cluster), dtype=object)
    meas_raw = list(measurement)
    y = np.asarray(list(y), dtype=float)
    n = len(y)
    if n == 0:
        raise ValueError("dataset is empty")
    if len(labels) != n or len(meas_raw) != n:
        raise ValueError("cluster, measurement and y must have equal length")
    meas = np.array([spec.measurement_index(v) for v in meas_raw], dtype=int)

    cols = {}
    for name, vals in columns.items():
        arr = np.asarray(list(vals), dtype=float)
        if arr.shape != (n,):
            raise ValueError(f"column {name!r} has {arr.shape[0]} rows, expected {n}")
        cols[name] = arr
    missing = [c for c in spec.covariate_names if c not in cols]
    if missing:
        raise ValueError(f"missing covariate columns: {missing}")
    X = np.column_stack([cols[c] for c in spec.covariate_names]) if spec.p else np.zeros((n, 0))
    zcols = []
    for term in spec.random_effects:
        if term == "intercept":
            zcols.append(np.ones(n))
        elif term in cols:
            zcols.append(cols[term])
        else:
            raise ValueError(f"random-effects term {term!r} is not a data column")
    Z = np.column_stack(zcols)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
        raise ValueError("covariates must be finite")

    for j, mobj in enumerate(spec.measurements):
        rows = np.flatnonzero(meas == j)
        bad = rows[~mobj.check_y(y[rows])]
        if len(bad):
            raise DomainError(
                f"measurement {mobj.id!r}: {len(bad)} value(s) outside the support, "
                f"first at row {bad[0]} (y={y[bad[0]]!r})"
            )

    uniq, first = {}, []
    codes = np.empty(n, dtype=int)
    for i, lab in enumerate(labels):
        key = lab
        if key not in uniq:
            uniq[key] = len(uniq)
            first.append(lab)
        codes[i] = uniq[key]
    order = np.lexsort((np.arange(n), meas, codes))
    extra = {k: v[order] for k, v in cols.items() if k not in spec.covariate_names}
    return Dataset(
        cluster_ids=np.asarray(first, dtype=object),
        cluster=codes[order],
        measurement=meas[order],
        y=y[order],
        X=X[order],
        Z=Z[order],
        covariate_names=tuple(spec.covariate_names),
        extra=extra,
    )
