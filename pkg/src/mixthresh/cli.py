"""Command-line interface: ``mixthresh {fit,test,path,cv,simulate}``.

Every subcommand writes its artifacts into ``--out``. On failure a single
line naming the cause goes to stderr, artifacts written so far are
removed and the exit status is nonzero. Status 0 means every fit
converged and ingestion raised no hard errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fit import FitOptions, fit, global_vs_varying_scan
from .io import (
    IngestError,
    SpecError,
    cleanup,
    density_grid,
    load_config,
    load_data,
    read_params_file,
    spec_to_dict,
    summary_dict,
    write_csv,
    write_dataset_csv,
    write_json,
    write_params_csv,
)
from .kernels import BACKEND
from .penalty import cross_validate, default_lambda_grid, path as penalty_path
from .simulate import SimDesign, fears_like_design, mixed_type_design, sample_dataset

log = logging.getLogger("mixthresh")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_ERROR = 2

DESIGNS = {"mixed": mixed_type_design, "fears": fears_like_design}


class Artifacts:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self, out: Path):
        self.out = out
        self.paths: list[Path] = []

    def __call__(self, name: str) -> Path:
        p = self.out / name
        self.paths.append(p)
        return p


def _options(args, cfg) -> FitOptions:
    opts = dict(cfg.options)
    if args.order is not None:
        opts["order"] = args.order
    return FitOptions(**opts)


def _load(args):
    cfg = load_config(args.spec)
    res = load_data(args.data, cfg.spec, allow_drop=args.allow_drop, exclude=args.exclude)
    for line in res.report.lines():
        log.warning("dropped %s", line)
    if res.report.dropped_missing_y:
        log.info("dropped %d row(s) with missing y", res.report.dropped_missing_y)
    return cfg, res


def _parse_at(text: str | None, names: list[str]) -> np.ndarray:
    x = np.zeros(len(names))
    if not text:
        return x
    for item in text.split(","):
        key, sep, val = item.partition("=")
        key = key.strip()
        if not sep or key not in names:
            raise ValueError(f"--at: expected name=value for covariates {names}, got {item!r}")
        x[names.index(key)] = float(val)
    return x


def _lambdas(args, cfg):
    if args.lambdas:
        return np.array([float(v) for v in args.lambdas.split(",")])
    if "lambdas" in cfg.penalty:
        return np.asarray(cfg.penalty["lambdas"], dtype=float)
    return default_lambda_grid()


def _penalty_kw(cfg):
    pen = cfg.penalty
    kw = {"pairs": pen.get("pairs", "all")}
    if "eps" in pen:
        kw["eps"] = float(pen["eps"])
    if "covariates" in pen:
        kw["covariates"] = tuple(pen["covariates"])
    return kw


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args, art: Artifacts) -> int:
    cfg, res = _load(args)
    spec = cfg.spec
    result = fit(spec, res.dataset, _options(args, cfg))
    write_params_csv(art("params.csv"), result)
    write_json(art("summary.json"), {**summary_dict(result, res.dataset, res.report), "backend": BACKEND})
    if args.density_grid:
        x = _parse_at(args.at, spec.covariate_names)
        for j, mid in enumerate(spec.measurement_ids):
            y, dens = density_grid(spec, result.params, j, x, n_points=args.density_grid)
            write_csv(art(f"density_{mid}.csv"), ("y", "density"), zip(y.tolist(), dens.tolist()))
    print(f"loglik {result.loglik:.6f}  aic {result.aic:.6f}  converged {result.converged}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_test(args, art: Artifacts) -> int:
    cfg, res = _load(args)
    full, entries = global_vs_varying_scan(cfg.spec, res.dataset, _options(args, cfg))
    rows = []
    ok = full.converged
    for e in entries:
        r = e.result
        converged = e.fit is not None and e.fit.converged
        ok &= converged and e.error is None
        rows.append(
            (
                e.covariate,
                full.loglik,
                e.loglik,
                r.statistic if r else math.nan,
                r.df if r else "NA",
                r.p_value if r else math.nan,
                "ok" if e.error is None and converged else (e.error or "not converged"),
            )
        )
    write_csv(
        art("lr_table.csv"),
        ("covariate", "loglik_varying", "loglik_global", "lr_statistic", "df", "p_value", "status"),
        rows,
    )
    write_json(
        art("summary.json"),
        {
            "full": summary_dict(full, res.dataset, res.report),
            "tests": [
                {
                    "covariate": e.covariate,
                    "loglik_global": e.loglik,
                    "statistic": e.result.statistic if e.result else None,
                    "df": e.result.df if e.result else None,
                    "p_value": e.result.p_value if e.result else None,
                    "error": e.error,
                }
                for e in entries
            ],
        },
    )
    for row in rows:
        print(f"{row[0]:>16s}  LR {row[3]:10.4f}  df {row[4]}  p {row[5]:.4g}")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _path_rows(pr):
    for lam, cov, mid, coef in pr.rows():
        yield lam, math.log1p(lam), cov, mid, coef


def _write_path(pr, art: Artifacts):
    write_csv(art("path.csv"), ("lambda", "log1p_lambda", "covariate", "measurement", "coefficient"), _path_rows(pr))
    diag = []
    for t, lam in enumerate(pr.lambdas):
        f = pr.fits[t]
        for s, cov in enumerate(pr.covariates):
            d = pr.diagnostics[t][s] if pr.diagnostics[t] else {}
            diag.append(
                (
                    float(lam),
                    cov,
                    d.get("max_difference", math.nan),
                    d.get("block_norm", math.nan),
                    d.get("fused", "NA"),
                    f.loglik if f else math.nan,
                    f.objective if f else math.nan,
                    f.converged if f else False,
                    pr.errors[t] or "",
                )
            )
    write_csv(
        art("path_diagnostics.csv"),
        ("lambda", "covariate", "max_difference", "block_norm", "fused", "loglik", "objective", "converged", "error"),
        diag,
    )


def _path_ok(pr) -> bool:
    return all(f is not None and f.converged for f in pr.fits)


def cmd_path(args, art: Artifacts) -> int:
    cfg, res = _load(args)
    pr = penalty_path(cfg.spec, res.dataset, _lambdas(args, cfg), _options(args, cfg), **_penalty_kw(cfg))
    _write_path(pr, art)
    write_json(art("summary.json"), {"eps": pr.eps, "lambdas": pr.lambdas, "errors": pr.errors})
    print(f"{len(pr.lambdas)} lambda values, eps {pr.eps:.3g}")
    return EXIT_OK if _path_ok(pr) else EXIT_NOT_CONVERGED


def cmd_cv(args, art: Artifacts) -> int:
    cfg, res = _load(args)
    folds = args.folds or int(cfg.penalty.get("folds", 5))
    pr = cross_validate(
        cfg.spec,
        res.dataset,
        _lambdas(args, cfg),
        folds=folds,
        seed=args.seed,
        options=_options(args, cfg),
        threads=args.threads,
        **_penalty_kw(cfg),
    )
    write_csv(
        art("cv.csv"),
        ("lambda", "mean_cv_loss", "se_cv_loss"),
        zip(pr.lambdas.tolist(), pr.cv_loss.tolist(), pr.cv_se.tolist()),
    )
    _write_path(pr, art)
    write_json(
        art("summary.json"),
        {
            "eps": pr.eps,
            "folds": folds,
            "seed": args.seed,
            "best_lambda": pr.best_lambda,
            "fold_clusters": [[str(res.dataset.cluster_ids[c]) for c in f] for f in pr.folds],
        },
    )
    print(f"best lambda {pr.best_lambda:.6g}")
    return EXIT_OK if _path_ok(pr) else EXIT_NOT_CONVERGED


def cmd_simulate(args, art: Artifacts) -> int:
    if args.design:
        design = DESIGNS[args.design](n_clusters=args.n_clusters, seed=args.seed)
        if args.covariates:
            design.covariates = args.covariates
    else:
        if not (args.spec and args.params):
            raise ValueError("simulate needs --design, or --spec together with --params")
        spec = load_config(args.spec).spec
        design = SimDesign(
            spec, read_params_file(args.params, spec), args.n_clusters, args.covariates or "normal", args.seed
        )
    data, b = sample_dataset(design)
    write_dataset_csv(art("dataset.csv"), data, design.spec)
    write_json(art("spec.json"), spec_to_dict(design.spec))
    write_csv(
        art("random_effects.csv"),
        ("cluster_id", *design.spec.random_effects),
        ([str(c), *map(repr, map(float, row))] for c, row in zip(data.cluster_ids, b)),
    )
    print(f"{data.n_clusters} clusters, {data.n_obs} observations")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "test": cmd_test, "path": cmd_path, "cv": cmd_cv, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="JSON model spec")
    common.add_argument("--data", help="long-format CSV (cluster_id, measurement_id, y, covariates)")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--order", type=int, help="Gauss-Hermite points per dimension (default 15)")
    common.add_argument("--seed", type=int, default=0, help="seed for CV folds and simulation")
    common.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    common.add_argument("--allow-drop", action="store_true", help="drop bad rows instead of failing")
    common.add_argument("--exclude", type=lambda s: [v for v in s.split(",") if v], default=[],
                        help="comma-separated cluster ids to leave out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mixthresh", description="Mixed thresholds models for clustered data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="maximum likelihood fit")
    p.add_argument("--density-grid", type=int, metavar="N", help="write density_<id>.csv with N points")
    p.add_argument("--at", help="covariate values for the density grid, e.g. x=1,z=0 (default all 0)")

    sub.add_parser("test", parents=[common], help="global-vs-varying LR test per covariate")

    for name, helptext in (("path", "penalized regularization path"), ("cv", "cross-validated penalty path")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--lambdas", help="comma-separated increasing grid starting at 0")
        if name == "cv":
            p.add_argument("--folds", type=int, help="number of folds (default 5)")

    p = sub.add_parser("simulate", parents=[common], help="draw a dataset")
    p.add_argument("--design", choices=sorted(DESIGNS), help="built-in design instead of --spec/--params")
    p.add_argument("--params", help="true parameters: params CSV (name, estimate) or JSON map")
    p.add_argument("--n-clusters", type=int, default=200)
    p.add_argument("--covariates", help="'normal' or 'bernoulli(p)'")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s"
    )
    if args.command != "simulate" and not (args.spec and args.data):
        parser.error(f"{args.command} needs --spec and --data")
    if args.threads < 1:
        parser.error("--threads must be positive")
    out = Path(args.out)
    art = Artifacts(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, art)
    except (IngestError, SpecError, ValueError, ArithmeticError, OSError, KeyError, RuntimeError) as exc:
        cleanup(art.paths)
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"mixthresh {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_ERROR
    except BaseException:
        cleanup(art.paths)
        raise


if __name__ == "__main__":
    sys.exit(main())
