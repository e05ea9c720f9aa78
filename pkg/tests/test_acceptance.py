"""Acceptance criteria, one test each.

Every test prints a PASS or FAIL line with the measured values, so the
run log doubles as the acceptance report.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate

from mixthresh.fit import FitOptions, fit, lr_test, starting_values
from mixthresh.io import fixture_path, ingest
from mixthresh.likelihood import MarginalLikelihood, continuous_density, discrete_density, total_loglik
from mixthresh.model import CONTINUOUS, Covariate, Measurement, ModelSpec, Observation, ParamLayout, Params, make_dataset
from mixthresh.penalty import PenaltySpec, cross_validate, fit_penalized, path
from mixthresh.simulate import mixed_type_design, sample_dataset
from mixthresh.thresholds import ThresholdsCoeffs, free_thresholds, parse_basis

import oracles
from conftest import fd_gradient, free_ordinal_params, load_fixture

FAMILIES = ["normal", "logistic", "gumbel", "gompertz"]


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return emit


def within(value, target, tol):
    return abs(value - target) <= tol


# -- real-data reproduction ------------------------------------------------------


def test_sleepstudy_reproduction(report):
    start = time.perf_counter()
    log_fit = fit(*load_fixture("sleepstudy_log.json", "sleepstudy.csv"))
    lin_fit = fit(*load_fixture("sleepstudy_linear.json", "sleepstudy.csv"))
    elapsed = time.perf_counter() - start
    ok = (
        log_fit.converged
        and lin_fit.converged
        and within(log_fit.loglik, -872.96, 1.0)
        and within(lin_fit.loglik, -875.50, 1.0)
        and elapsed < 30
    )
    detail = (
        f"log thresholds loglik {log_fit.loglik:.3f} (target -872.96 +/- 1), "
        f"linear {lin_fit.loglik:.3f} (target -875.50 +/- 1), {elapsed:.1f} s"
    )
    assert report("sleepstudy reproduction", ok, detail)


EPIL_EXCLUDE = ("49",)


@pytest.fixture(scope="module")
def epil_fits():
    """Full and treatment-free fits for both families, without patient 49."""
    out = {}
    start = time.perf_counter()
    for family in ("gumbel", "normal"):
        spec, data = load_fixture(f"epil_{family}.json", "epil.csv", exclude=EPIL_EXCLUDE)
        full = fit(spec, data)
        reduced_spec = spec.without_covariate("treatment")
        reduced_data = ingest(fixture_path("epil.csv"), reduced_spec, exclude=EPIL_EXCLUDE)
        reduced = fit(reduced_spec, reduced_data, FitOptions(compute_se=False))
        out[family] = (full, reduced)
    out["elapsed"] = time.perf_counter() - start
    return out


def test_epil_reproduction(report, epil_fits):
    g, _ = epil_fits["gumbel"]
    n, _ = epil_fits["normal"]
    checks = {
        "gumbel loglik": (g.loglik, -604.52, 1.5),
        "gumbel AIC": (g.aic, 1233.04, 3.0),
        "gumbel treatment": (g.estimate("beta[treatment]"), -0.534, 0.05),
        "normal loglik": (n.loglik, -622.71, 1.5),
        "normal treatment": (n.estimate("beta[treatment]"), -0.479, 0.05),
    }
    bad = [k for k, (v, t, tol) in checks.items() if not within(v, t, tol)]
    ok = g.converged and n.converged and not bad and epil_fits["elapsed"] < 60
    detail = ", ".join(f"{k} {v:.3f} (target {t} +/- {tol})" for k, (v, t, tol) in checks.items())
    detail += f"; patient 49 excluded; {epil_fits['elapsed']:.1f} s"
    if bad:
        detail += f"; out of tolerance: {', '.join(bad)}"
    # for reference, the same Gumbel fit on all 59 patients
    spec, data = load_fixture("epil_gumbel.json", "epil.csv")
    everyone = fit(spec, data, FitOptions(compute_se=False))
    detail += f"; all 59 patients: gumbel loglik {everyone.loglik:.3f}"
    assert report("epil reproduction", ok, detail)


def test_treatment_lr_ordering(report, epil_fits):
    lr = {k: lr_test(*epil_fits[k]).statistic for k in ("gumbel", "normal")}
    ordered = lr["gumbel"] > lr["normal"]
    ok = ordered and within(lr["gumbel"], 5.658, 0.5) and within(lr["normal"], 3.29, 0.5)
    detail = (
        f"treatment LR gumbel {lr['gumbel']:.3f} (target 5.658 +/- 0.5), "
        f"normal {lr['normal']:.3f} (target 3.29 +/- 0.5), gumbel > normal: {ordered}"
    )
    assert report("gumbel-vs-normal LR ordering", ok, detail)


# -- moment identities -----------------------------------------------------------


def package_moments(family, basis, d0, d, eta, a=None, b=None):
    """E g(Y) and var g(Y) by quadrature of the package's own density.

    Integrates over t = g(y), where the density is f(g^{-1}(t)) dg^{-1}/dt,
    so the heavy tails that g^{-1} creates on the y scale never reach quad.
    """
    text = basis if basis != "logit" else f"logit({a},{b})"
    spec = ModelSpec((Measurement("y", CONTINUOUS, family, parse_basis(text)),))
    params = Params(np.zeros((1, 0)), [ThresholdsCoeffs.from_slope(d0, d)], np.zeros((1, 1)))
    _, _, (lo, hi) = oracles.g_funcs(basis, a, b)
    ginv, dginv = oracles.g_inverse_funcs(basis, a, b)

    def f_t(t):
        with np.errstate(over="ignore"):
            y = ginv(t)
        # far-tail t can round y onto a bound, where the density is 0
        if not lo < y < hi:
            return 0.0
        # the random-intercept value carries eta
        return continuous_density(spec, params, Observation(0, "y", y), [eta]) * dginv(t)

    dist = oracles.SCIPY_FAMILY[family]
    cuts = [(eta - d0 - dist.ppf(1 - u)) / d for u in (1e-9, 1e-4, 0.05, 0.5, 0.95, 1 - 1e-4, 1 - 1e-9)]
    edges = [-np.inf, *cuts, np.inf]

    def integral(h):
        return sum(
            integrate.quad(h, lo_, hi_, limit=400, epsabs=1e-14, epsrel=1e-12)[0] for lo_, hi_ in zip(edges[:-1], edges[1:])
        )

    mass = integral(f_t)
    m1 = integral(lambda t: t * f_t(t))
    m2 = integral(lambda t: (t - m1) ** 2 * f_t(t))
    return mass, m1, m2


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_linear_thresholds_moment_identity(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(20):
        family = FAMILIES[i % 4]
        d0, d, eta = rng.uniform(-1.5, 1.5), rng.uniform(0.4, 2.5), rng.uniform(-1.5, 1.5)
        mu_f, var_f = oracles.family_moments(family)
        _, m1, m2 = package_moments(family, "linear", d0, d, eta)
        worst = max(worst, abs(m1 - (eta - d0 - mu_f) / d), abs(m2 - var_f / d**2))
    assert report("linear-thresholds mean/variance identity", worst <= 1e-5, f"20 configurations, max error {worst:.2e} (tol 1e-5)")


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_transformed_thresholds_moment_identity(report):
    rng = np.random.default_rng(77)
    worst = {}
    for basis, a, b in (("log", None, None), ("shifted_log", None, None), ("logit", 0.0, 10.0)):
        err = 0.0
        for family in FAMILIES:
            for _ in range(2):
                d0, d, eta = rng.uniform(-1, 1), rng.uniform(0.5, 2.0), rng.uniform(-1, 1)
                mu_f, var_f = oracles.family_moments(family)
                _, m1, m2 = package_moments(family, basis, d0, d, eta, a, b)
                err = max(err, abs(m1 - (eta - d0 - mu_f) / d), abs(m2 - var_f / d**2))
        worst[basis] = err
    ok = max(worst.values()) <= 1e-5
    detail = ", ".join(f"{k} max error {v:.2e}" for k, v in worst.items()) + " (tol 1e-5, 8 configurations each)"
    assert report("transformed-thresholds E g(Y) / var g(Y) identity", ok, detail)


# -- special cases ---------------------------------------------------------------


def test_cumulative_logit_equivalence(report, ordinal_data):
    spec, data, truth = ordinal_data
    cell_err = 0.0
    one = ModelSpec((spec.measurements[0],))
    for seed in range(5):
        p = free_ordinal_params(one, seed=seed)
        cut = free_thresholds(p.thresholds[0])
        for eta in np.linspace(-3, 3, 7):
            ours = [discrete_density(one, p, Observation(0, one.measurements[0].id, r), [eta]) for r in range(1, 6)]
            cell_err = max(cell_err, float(np.max(np.abs(np.array(ours) - oracles.cumulative_logit_probs(cut, eta)))))

    lik_err = 0.0
    rng = np.random.default_rng(5)
    layout = ParamLayout(spec)
    base = layout.pack(truth)
    for _ in range(5):
        theta = base + rng.normal(0, 0.2, layout.size)
        params = layout.unpack(theta)
        cutpoints = [free_thresholds(c) for c in params.thresholds]
        oracle = oracles.cumulative_logit_marginal_loglik(
            data.y, data.X, data.cluster, data.measurement, cutpoints, params.beta[0], params.chol[0, 0]
        )
        lik_err = max(lik_err, abs(total_loglik(spec, params, data, 15) - oracle))
    ok = cell_err <= 1e-10 and lik_err <= 1e-6
    detail = f"max cell error {cell_err:.2e} (tol 1e-10), 100-cluster loglik max error {lik_err:.2e} (tol 1e-6)"
    assert report("cumulative-logit equivalence", ok, detail)


def test_gaussian_random_intercept_special_case(report):
    meas = tuple(Measurement(f"m{j}", CONTINUOUS, "normal", parse_basis("linear")) for j in range(4))
    spec = ModelSpec(meas, (Covariate("x"),), homogeneous_dispersion=True)
    rng = np.random.default_rng(20)
    n = 20
    data = make_dataset(
        spec,
        np.repeat(np.arange(n), 4),
        np.tile([m.id for m in meas], n),
        rng.normal(size=4 * n),
        {"x": rng.normal(size=4 * n)},
    )
    # fixed-grid Gauss-Hermite needs many nodes once the random-intercept SD
    # is large next to the unit error scale; one random effect allows that
    order = 100
    worst = worst15 = 0.0
    for _ in range(10):
        beta = rng.normal(0, 1, (4, 1))
        d0 = rng.normal(0, 1, 4)
        d = math.exp(rng.uniform(-0.7, 0.7))
        sd = math.exp(rng.uniform(-1.5, 0.7))
        params = Params(beta, [ThresholdsCoeffs.from_slope(a, d) for a in d0], np.array([[sd]]))
        oracle = oracles.gaussian_random_effects_loglik(
            data.y, data.cluster, data.measurement, data.X, data.Z, beta, d0, np.full(4, d), np.array([[sd * sd]])
        )
        worst = max(worst, abs(total_loglik(spec, params, data, order) - oracle))
        worst15 = max(worst15, abs(total_loglik(spec, params, data, 15) - oracle))
    detail = (
        f"10 parameter points, max |difference| {worst:.2e} at {order} nodes (tol 1e-4); "
        f"for reference {worst15:.2e} at the default 15 nodes"
    )
    assert report("Gaussian random-intercept special case", worst <= 1e-4, detail)


# -- numerics --------------------------------------------------------------------


def test_gradient_on_all_fixtures(report, mixed_data, ordinal_data, slope_data):
    cases = {
        "sleepstudy log": load_fixture("sleepstudy_log.json", "sleepstudy.csv"),
        "sleepstudy linear": load_fixture("sleepstudy_linear.json", "sleepstudy.csv"),
        "epil gumbel": load_fixture("epil_gumbel.json", "epil.csv"),
        "epil normal": load_fixture("epil_normal.json", "epil.csv"),
        "mixed": mixed_data[:2],
        "free ordinal": ordinal_data[:2],
        "random slope": slope_data[:2],
    }
    rng = np.random.default_rng(8)
    failures, worst = [], 0.0
    for name, (spec, data) in cases.items():
        lik = MarginalLikelihood(spec, data)
        theta = starting_values(spec, data) + rng.normal(0, 0.05, lik.layout.size)
        _, grad = lik.loglik_and_grad(theta)
        fd = fd_gradient(lambda t: lik.loglik(t), theta)
        ratio = np.abs(grad - fd) / np.maximum(1e-5, 1e-4 * np.abs(fd))
        worst = max(worst, float(ratio.max()))
        if np.any(ratio > 1):
            failures.append(name)
    detail = f"{len(cases)} fixtures, worst |analytic - numeric| is {worst:.3g} of the tolerance max(1e-5, 1e-4 rel)"
    if failures:
        detail += f"; failing: {', '.join(failures)}"
    assert report("analytic gradient vs finite differences", not failures, detail)


def test_simulate_and_recover(report):
    inside = total = 0
    for seed in range(50):
        design = mixed_type_design(200, seed=seed)
        data, _ = sample_dataset(design)
        res = fit(design.spec, data)
        layout = ParamLayout(design.spec)
        truth = layout.structured(layout.pack(design.params))
        for i, name in enumerate(res.names):
            if name.startswith("beta["):
                total += 1
                inside += abs(res.estimates[i] - truth[i]) <= 3 * res.std_errors[i]
    share = inside / total
    assert report("simulate-and-recover", share >= 0.95, f"{inside}/{total} fixed effects within 3 SE ({share:.1%}, need 95%)")


# -- penalty ---------------------------------------------------------------------


def test_penalty_behaviour(report, fusion_data):
    spec, data, _ = fusion_data
    pr = path(spec, data)
    common, varying = pr.fused_at("common", 0.05), pr.fused_at("varying", 0.05)
    order_ok = common is not None and varying is not None and common < varying

    opts = FitOptions(compute_se=False)
    plain = fit(spec, data, opts)
    zero = fit_penalized(spec, data, PenaltySpec(0.0, eps=1e-8), opts)
    zero_gap = abs(zero.loglik - plain.loglik)

    grid = [0.0, 1.0, 5.0, 25.0]
    a = cross_validate(spec, data, grid, folds=5, seed=3)
    b = cross_validate(spec, data, grid, folds=5, seed=3)
    same = np.array_equal(a.cv_loss, b.cv_loss) and all(np.array_equal(x, y) for x, y in zip(a.folds, b.folds))

    ok = order_ok and zero_gap <= 1e-4 and same
    detail = (
        f"common block fuses at lambda {common:.4g}, varying at {varying:.4g}; "
        f"lambda=0 loglik gap {zero_gap:.1e} (tol 1e-4); CV repeatable: {same}"
    )
    assert report("penalty behaviour", ok, detail)
