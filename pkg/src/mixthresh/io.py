"""File formats: JSON model specs, long-format CSV data and result tables.

Spec file schema (JSON object)::

    {
      "measurements": [
        {"id": "y1", "type": "continuous", "family": "normal", "thresholds": "log"},
        {"ids": ["a", "b"], "type": "ordinal", "categories": 7, "family": "logistic"},
        {"id": "n", "type": "count", "thresholds": "shifted_log", "repeatable": false}
      ],
      "covariates": [{"name": "x", "scope": "global"}, "z"],
      "random_effects": ["intercept"],
      "homogeneous_dispersion": false,
      "options": {"order": 15, "gtol": 1e-5, "max_iter": 2000},
      "penalty": {"lambdas": [0, 0.5, 1], "eps": 1e-6, "folds": 5, "pairs": "all"}
    }

Measurement ``type`` is ``continuous``, ``count``, ``ordinal`` (needs
``categories`` unless ``free(k)`` thresholds are used) or ``binary``
(ordinal with two categories). ``thresholds`` defaults to ``linear`` for
continuous, ``shifted_log`` for counts and ``logit`` with bounds
(0.9, k) for ordinal responses. Covariates given as bare strings are
measurement-specific.

Data files are RFC-4180 CSV with a header holding ``cluster_id``,
``measurement_id``, ``y`` and one column per covariate (and per
non-intercept random-effects term).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .families import FAMILIES, DomainError, log_pdf
from .fit import FitResult
from .model import CONTINUOUS, DISCRETE, GLOBAL, MEASUREMENT, Covariate, Dataset, Measurement, ModelSpec, make_dataset
from .thresholds import parse_basis

REQUIRED_COLUMNS = ("cluster_id", "measurement_id", "y")
MISSING = {"", "na", "nan", "null", "none", "."}
TYPE_ALIASES = {
    "continuous": "continuous",
    "count": "count",
    "counts": "count",
    "ordinal": "ordinal",
    "categorical": "ordinal",
    "binary": "binary",
}
DEFAULT_BASIS = {"continuous": "linear", "count": "shifted_log", "ordinal": "logit", "binary": "logit"}


class SpecError(ValueError):
    """Invalid spec file; the message starts with the offending field path."""


# ---------------------------------------------------------------------------
# spec files


@dataclass
class SpecConfig:
    spec: ModelSpec
    options: dict[str, Any] = field(default_factory=dict)
    penalty: dict[str, Any] = field(default_factory=dict)


def _need(obj: dict, key: str, where: str):
    if key not in obj:
        raise SpecError(f"{where}.{key}: missing required field")
    return obj[key]


def _parse_measurement(entry: Any, where: str) -> list[Measurement]:
    if not isinstance(entry, dict):
        raise SpecError(f"{where}: expected an object")
    if "ids" in entry:
        ids = entry["ids"]
        if not isinstance(ids, list) or not ids:
            raise SpecError(f"{where}.ids: expected a non-empty list of ids")
    else:
        ids = [_need(entry, "id", where)]
    raw_type = str(_need(entry, "type", where)).lower()
    if raw_type not in TYPE_ALIASES:
        raise SpecError(f"{where}.type: unknown response type {raw_type!r}")
    kind = TYPE_ALIASES[raw_type]

    family = str(entry.get("family", "normal")).lower()
    if family not in FAMILIES:
        raise SpecError(f"{where}.family: unknown family {family!r}; choose from {sorted(FAMILIES)}")

    categories = entry.get("categories")
    if kind == "binary":
        if categories not in (None, 2):
            raise SpecError(f"{where}.categories: a binary response has 2 categories")
        categories = 2
    if categories is not None and kind in ("continuous", "count"):
        raise SpecError(f"{where}.categories: only ordinal responses have categories")
    if categories is not None and (not isinstance(categories, int) or categories < 2):
        raise SpecError(f"{where}.categories: expected an integer >= 2")

    th = entry.get("thresholds", DEFAULT_BASIS[kind])
    try:
        if isinstance(th, dict):
            basis = str(_need(th, "basis", f"{where}.thresholds")).lower()
            if basis == "logit":
                a = th.get("a", 0.9 if categories else None)
                b = th.get("b", categories)
                text = f"logit({a},{b})" if a is not None and b is not None else "logit"
            elif basis == "free":
                text = f"free({th.get('k', categories)})"
            else:
                text = basis
        else:
            text = str(th)
        thresholds = parse_basis(text, k=categories)
    except SpecError:
        raise
    except (ValueError, TypeError) as exc:
        raise SpecError(f"{where}.thresholds: {exc}") from None
    if kind == "ordinal" and categories is None and not thresholds.is_free:
        if thresholds.basis != "logit":
            raise SpecError(f"{where}.categories: ordinal responses need the number of categories")

    rtype = CONTINUOUS if kind == "continuous" else DISCRETE
    out = []
    for i, mid in enumerate(ids):
        loc = f"{where}.ids[{i}]" if "ids" in entry else f"{where}.id"
        if not isinstance(mid, (str, int)) or str(mid) == "":
            raise SpecError(f"{loc}: expected a non-empty id")
        try:
            out.append(
                Measurement(
                    str(mid), rtype, family, thresholds, categories, bool(entry.get("repeatable", False))
                )
            )
        except ValueError as exc:
            raise SpecError(f"{where}: {exc}") from None
    return out


def spec_from_dict(doc: Any) -> SpecConfig:
    if not isinstance(doc, dict):
        raise SpecError("$: the spec must be a JSON object")
    meas_doc = _need(doc, "measurements", "$")
    if not isinstance(meas_doc, list) or not meas_doc:
        raise SpecError("$.measurements: expected a non-empty list")
    measurements = []
    for i, entry in enumerate(meas_doc):
        measurements.extend(_parse_measurement(entry, f"$.measurements[{i}]"))

    covariates = []
    for i, c in enumerate(doc.get("covariates", [])):
        where = f"$.covariates[{i}]"
        if isinstance(c, str):
            c = {"name": c}
        if not isinstance(c, dict):
            raise SpecError(f"{where}: expected a name or an object")
        scope = str(c.get("scope", MEASUREMENT)).lower()
        scope = {"varying": MEASUREMENT, "per_measurement": MEASUREMENT}.get(scope, scope)
        if scope not in (GLOBAL, MEASUREMENT):
            raise SpecError(f"{where}.scope: expected 'global' or 'measurement', got {scope!r}")
        covariates.append(Covariate(str(_need(c, "name", where)), scope))

    re_doc = doc.get("random_effects", ["intercept"])
    if isinstance(re_doc, dict):
        re_doc = re_doc.get("terms", ["intercept"])
    if isinstance(re_doc, str):
        re_doc = [re_doc]
    if not isinstance(re_doc, list):
        raise SpecError("$.random_effects: expected a list of terms")

    options = doc.get("options", {})
    if not isinstance(options, dict):
        raise SpecError("$.options: expected an object")
    for key in options:
        if key not in ("order", "gtol", "max_iter", "node_budget"):
            raise SpecError(f"$.options.{key}: unknown option")
    if "order" in options and (not isinstance(options["order"], int) or options["order"] < 1):
        raise SpecError("$.options.order: expected a positive integer")
    penalty = doc.get("penalty", {})
    if not isinstance(penalty, dict):
        raise SpecError("$.penalty: expected an object")
    for key in penalty:
        if key not in ("lambdas", "eps", "folds", "pairs", "covariates"):
            raise SpecError(f"$.penalty.{key}: unknown field")

    try:
        spec = ModelSpec(
            tuple(measurements),
            tuple(covariates),
            tuple(str(t) for t in re_doc),
            bool(doc.get("homogeneous_dispersion", False)),
        )
    except ValueError as exc:
        raise SpecError(f"$: {exc}") from None
    return SpecConfig(spec, dict(options), dict(penalty))


def load_config(path) -> SpecConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return spec_from_dict(doc)


def parse_spec(path) -> ModelSpec:
    """Read a JSON spec file into a validated ``ModelSpec``."""
    return load_config(path).spec


def spec_to_dict(spec: ModelSpec, options: dict | None = None, penalty: dict | None = None) -> dict:
    meas = []
    for mobj in spec.measurements:
        entry = {
            "id": mobj.id,
            "type": "continuous" if mobj.is_continuous else ("ordinal" if mobj.is_ordinal else "count"),
            "family": mobj.family.name,
            "thresholds": str(mobj.thresholds),
        }
        if mobj.is_ordinal:
            entry["categories"] = mobj.categories
        if mobj.repeatable:
            entry["repeatable"] = True
        meas.append(entry)
    doc = {
        "measurements": meas,
        "covariates": [{"name": c.name, "scope": c.scope} for c in spec.covariates],
        "random_effects": list(spec.random_effects),
        "homogeneous_dispersion": spec.homogeneous_dispersion,
    }
    if options:
        doc["options"] = options
    if penalty:
        doc["penalty"] = penalty
    return doc


def fixture_path(name: str) -> Path:
    """Path of a bundled data or spec file, e.g. ``"sleepstudy.csv"``."""
    path = Path(str(resources.files("mixthresh") / "data" / name))
    if not path.exists():
        raise FileNotFoundError(f"no bundled file {name!r}")
    return path


# ---------------------------------------------------------------------------
# data ingestion


class IngestError(ValueError):
    def __init__(self, message: str, report: "IngestReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class IngestReport:
    n_rows: int = 0
    n_used: int = 0
    dropped_missing_y: int = 0
    problems: list[tuple[int, str]] = field(default_factory=list)  # (file line, message)

    @property
    def n_dropped(self) -> int:
        return self.n_rows - self.n_used

    def lines(self, limit: int = 20) -> list[str]:
        out = [f"line {ln}: {msg}" for ln, msg in self.problems[:limit]]
        if len(self.problems) > limit:
            out.append(f"... {len(self.problems) - limit} more")
        return out

    def as_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_used": self.n_used,
            "dropped_missing_y": self.dropped_missing_y,
            "problems": [{"line": ln, "message": msg} for ln, msg in self.problems],
        }


@dataclass
class IngestResult:
    dataset: Dataset
    report: IngestReport


def _number(text: str) -> float:
    val = float(text)
    if not math.isfinite(val):
        raise ValueError(text)
    return val


def load_data(path, spec: ModelSpec, allow_drop: bool = False, exclude=()) -> IngestResult:
    """Read and validate a long-format CSV.

    Rows with a missing ``y`` are always dropped and counted. Any other bad
    row (unparseable number, unknown measurement, value outside the
    support, duplicate pair) is a hard error unless ``allow_drop`` is set,
    in which case the row is dropped and listed in the report. Clusters
    listed in ``exclude`` are skipped.
    """
    report = IngestReport()
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise IngestError(f"{path}: empty file", report)
        header = [h.strip() for h in header]
        needed = list(REQUIRED_COLUMNS) + spec.covariate_names
        needed += [t for t in spec.random_effects if t != "intercept" and t not in needed]
        missing = [c for c in needed if c not in header]
        if missing:
            raise IngestError(f"{path}: missing column(s) {missing}", report)
        dup = {h for h in header if header.count(h) > 1}
        if dup:
            raise IngestError(f"{path}: duplicate column(s) {sorted(dup)}", report)
        pos = {c: header.index(c) for c in needed}
        data_cols = needed[3:]
        known = set(spec.measurement_ids)
        repeatable = {m.id for m in spec.measurements if m.repeatable}
        exclude = {str(c) for c in exclude}

        rows_c, rows_m, rows_y, rows_x = [], [], [], []
        seen: set[tuple[str, str]] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not v.strip() for v in row):
                continue
            report.n_rows += 1
            if len(row) != len(header):
                report.problems.append((lineno, f"expected {len(header)} fields, found {len(row)}"))
                continue
            cid, mid, ytext = (row[pos[c]].strip() for c in REQUIRED_COLUMNS)
            if cid in exclude:
                continue
            if ytext.lower() in MISSING:
                report.dropped_missing_y += 1
                continue
            if mid not in known:
                report.problems.append((lineno, f"unknown measurement_id {mid!r}"))
                continue
            try:
                y = _number(ytext)
            except ValueError:
                report.problems.append((lineno, f"y: cannot parse {ytext!r} as a number"))
                continue
            mobj = spec.measurements[spec.measurement_index(mid)]
            if not mobj.check_y(y):
                report.problems.append((lineno, f"y={ytext} outside the support of measurement {mid!r}"))
                continue
            xs, bad = [], None
            for c in data_cols:
                text = row[pos[c]].strip()
                try:
                    xs.append(_number(text))
                except ValueError:
                    bad = f"{c}: cannot parse {text!r} as a finite number"
                    break
            if bad:
                report.problems.append((lineno, bad))
                continue
            key = (cid, mid)
            if key in seen and mid not in repeatable:
                report.problems.append((lineno, f"duplicate observation for cluster {cid!r}, measurement {mid!r}"))
                continue
            seen.add(key)
            rows_c.append(cid)
            rows_m.append(mid)
            rows_y.append(y)
            rows_x.append(xs)

    if report.n_rows == 0:
        raise IngestError(f"{path}: no data rows", report)
    if report.problems and not allow_drop:
        detail = "; ".join(report.lines(3))
        raise IngestError(f"{path}: {len(report.problems)} bad row(s) ({detail})", report)
    report.n_used = len(rows_y)
    if not rows_y:
        raise IngestError(f"{path}: no usable rows", report)
    X = np.array(rows_x, dtype=float).reshape(len(rows_y), len(data_cols))
    try:
        data = make_dataset(spec, rows_c, rows_m, rows_y, {c: X[:, s] for s, c in enumerate(data_cols)})
    except (DomainError, ValueError) as exc:
        raise IngestError(f"{path}: {exc}", report) from None
    return IngestResult(data, report)


def ingest(path, spec: ModelSpec, allow_drop: bool = False, exclude=()) -> Dataset:
    """Read a long-format CSV into a ``Dataset`` (see ``load_data``)."""
    return load_data(path, spec, allow_drop, exclude).dataset


# ---------------------------------------------------------------------------
# writers


def fmt6(x: float) -> str:
    """Six significant digits; 'NA' for missing values."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return f"{x:.6g}"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt6(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def params_rows(result: FitResult):
    for name, est, se in zip(result.names, result.estimates, result.std_errors):
        z = est / se if se > 0 and math.isfinite(se) else math.nan
        yield name, float(est), float(se), float(z)


def write_params_csv(path, result: FitResult) -> Path:
    return write_csv(path, ("name", "estimate", "std_error", "z_value"), params_rows(result))


def summary_dict(result: FitResult, data: Dataset | None = None, report: IngestReport | None = None) -> dict:
    out = result.summary()
    if data is not None:
        out["n_clusters"] = data.n_clusters
        out["n_obs"] = data.n_obs
    if report is not None:
        out["ingest"] = report.as_dict()
    return out


def write_json(path, doc: dict) -> Path:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"cannot serialize {type(o).__name__}")

    path = Path(path)
    # repr-precision floats; NaN becomes null
    text = json.dumps(_nan_to_none(doc), indent=2, default=default, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return None
    return obj


def write_dataset_csv(path, data: Dataset, spec: ModelSpec) -> Path:
    """Long-format CSV readable by ``ingest``; floats use repr so values round-trip exactly."""
    extra_terms = [t for t in spec.random_effects if t != "intercept" and t not in spec.covariate_names]
    header = ["cluster_id", "measurement_id", "y", *spec.covariate_names, *extra_terms]
    ids = spec.measurement_ids
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n_obs):
            row = [str(data.cluster_ids[data.cluster[i]]), ids[data.measurement[i]], repr(float(data.y[i]))]
            row += [repr(float(v)) for v in data.X[i]]
            row += [repr(float(data.extra[t][i])) for t in extra_terms]
            w.writerow(row)
    return path


def read_params_file(path, spec: ModelSpec) -> np.ndarray:
    """Structured parameter values from a params CSV (name, estimate) or a JSON name -> value map.

    Returns the packed vector.
    """
    from .model import ParamLayout

    layout = ParamLayout(spec)
    path = Path(path)
    if path.suffix.lower() == ".json":
        values = json.loads(path.read_text(encoding="utf-8"))
    else:
        values = {r["name"]: r["estimate"] for r in read_csv(path)}
    missing = [n for n in layout.names if n not in values]
    if missing:
        raise ValueError(f"{path}: no value for parameter(s) {missing}")
    unknown = [n for n in values if n not in layout.names]
    if unknown:
        raise ValueError(f"{path}: unknown parameter(s) {unknown}")
    return layout.from_structured(np.array([float(values[n]) for n in layout.names]))


def density_grid(spec: ModelSpec, params, j: int, x=None, n_points: int = 401, tail: float = 1e-4):
    """Marginal-free density of measurement ``j`` at covariates ``x`` and b = 0.

    Continuous measurements give ``n_points`` equally spaced y values
    spanning the central 1 - 2*tail probability range; discrete ones give
    the probability of every support point (counts up to the 1 - tail
    quantile). Returns (y, density).
    """
    from .likelihood import _as_params, discrete_probabilities
    from .model import ParamLayout
    from .simulate import sample_response

    params = _as_params(ParamLayout(spec), params)
    mobj = spec.measurements[j]
    x = np.zeros(spec.p) if x is None else np.asarray(x, dtype=float)
    eta = float(x @ params.beta[j])
    if mobj.is_continuous:
        lo, hi = sample_response(spec, params, j, eta, np.array([tail, 1.0 - tail]))
        y = np.linspace(lo, hi, n_points)
        th, c = mobj.thresholds, params.thresholds[j]
        with np.errstate(under="ignore"):
            dens = np.exp(log_pdf(mobj.family.code, eta - (c.intercept + c.slope * th.g(y)))) * c.slope * th.dg(y)
        return y, dens
    if mobj.is_ordinal:
        probs = discrete_probabilities(spec, params, j, eta)
        return np.arange(1.0, mobj.categories + 1), probs
    top = int(sample_response(spec, params, j, eta, 1.0 - tail))
    probs = discrete_probabilities(spec, params, j, eta, upto=top)
    return np.arange(0.0, top + 1), probs


def cleanup(paths) -> None:
    for p in paths:
        try:
            os.remove(p)
        except FileNotFoundError:
            pass
