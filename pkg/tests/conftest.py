import numpy as np
import pytest

from mixthresh.io import fixture_path, ingest, load_config
from mixthresh.model import CONTINUOUS, DISCRETE, GLOBAL, MEASUREMENT, Covariate, Measurement, ModelSpec, Params
from mixthresh.simulate import SimDesign, mixed_type_design, sample_dataset
from mixthresh.thresholds import ThresholdsCoeffs, parse_basis


def fd_gradient(f, theta, rel=1e-6):
    """Central differences with step rel * (1 + |theta_i|)."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(len(theta)):
        h = rel * (1.0 + abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp) - f(tm)) / (2 * h)
    return g


def load_fixture(spec_name, data_name, exclude=()):
    spec = load_config(fixture_path(spec_name)).spec
    return spec, ingest(fixture_path(data_name), spec, exclude=exclude)


@pytest.fixture(scope="session")
def sleep_log():
    return load_fixture("sleepstudy_log.json", "sleepstudy.csv")


@pytest.fixture(scope="session")
def sleep_linear():
    return load_fixture("sleepstudy_linear.json", "sleepstudy.csv")


@pytest.fixture(scope="session")
def epil_gumbel():
    return load_fixture("epil_gumbel.json", "epil.csv")


@pytest.fixture(scope="session")
def mixed_data():
    design = mixed_type_design(60, seed=11)
    data, _ = sample_dataset(design)
    return design.spec, data, design.params


def free_ordinal_spec(m=3, k=5, scope=GLOBAL, p=2):
    meas = tuple(Measurement(f"o{j}", DISCRETE, "logistic", parse_basis(f"free({k})")) for j in range(m))
    return ModelSpec(meas, tuple(Covariate(f"x{s}", scope) for s in range(p)))


def free_ordinal_params(spec, seed=0, sd=0.9):
    rng = np.random.default_rng(seed)
    k = spec.measurements[0].thresholds.k
    beta = np.tile(rng.normal(0, 0.6, spec.p), (spec.m, 1))
    th = [ThresholdsCoeffs.from_thresholds(np.sort(rng.normal(0, 1.5, k - 1)) + np.arange(k - 1) * 0.3) for _ in range(spec.m)]
    return Params(beta, th, np.array([[sd]]))


@pytest.fixture(scope="session")
def ordinal_data():
    spec = free_ordinal_spec()
    params = free_ordinal_params(spec, seed=3)
    data, _ = sample_dataset(SimDesign(spec, params, 100, "normal", seed=5))
    return spec, data, params


def two_effect_spec():
    """Continuous normal measurements with a random intercept and slope on x."""
    meas = tuple(Measurement(f"c{j}", CONTINUOUS, "normal", parse_basis("linear")) for j in range(4))
    return ModelSpec(meas, (Covariate("x", MEASUREMENT),), random_effects=("intercept", "x"))


@pytest.fixture(scope="session")
def slope_data():
    spec = two_effect_spec()
    params = Params(
        np.array([[0.5], [0.2], [-0.3], [0.1]]),
        [ThresholdsCoeffs.from_slope(0.1 * j, 1.0 + 0.2 * j) for j in range(4)],
        np.array([[0.8, 0.0], [0.3, 0.5]]),
    )
    data, _ = sample_dataset(SimDesign(spec, params, 40, "normal", seed=2))
    return spec, data, params


def fusion_spec(order=("m1", "m2", "m3", "m4")):
    kinds = {
        "m1": Measurement("m1", CONTINUOUS, "normal", parse_basis("linear")),
        "m2": Measurement("m2", CONTINUOUS, "logistic", parse_basis("log")),
        "m3": Measurement("m3", DISCRETE, "normal", parse_basis("shifted_log")),
        "m4": Measurement("m4", DISCRETE, "logistic", parse_basis("logit", k=5)),
    }
    return ModelSpec(tuple(kinds[k] for k in order), (Covariate("common"), Covariate("varying")))


def make_fusion_data():
    """'common' has the same effect on every measurement, 'varying' does not."""
    spec = fusion_spec()
    beta = np.column_stack([np.full(4, 0.6), [1.0, -0.8, 0.5, -1.2]])
    th = [ThresholdsCoeffs.from_slope(0.0, 1.0), ThresholdsCoeffs.from_slope(-0.3, 1.5),
          ThresholdsCoeffs.from_slope(-0.5, 1.2), ThresholdsCoeffs.from_slope(0.2, 1.0)]
    params = Params(beta, th, np.array([[0.7]]))
    data, _ = sample_dataset(SimDesign(spec, params, 150, "normal", seed=8))
    return spec, data, params


@pytest.fixture(scope="session")
def fusion_data():
    return make_fusion_data()
