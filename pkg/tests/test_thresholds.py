import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixthresh.families import DomainError
from mixthresh.thresholds import (
    ThresholdsCoeffs,
    ThresholdsSpec,
    UnsupportedOperation,
    derivative,
    evaluate,
    free_thresholds,
    inverse,
    parse_basis,
)

BASES = [parse_basis(b) for b in ("linear", "log", "shifted_log", "logit(0,10)", "logit(0.9,7)")]


def grid(spec, n=41):
    lo, hi = spec.support()
    lo = -20 if math.isinf(lo) else lo
    hi = 50 if math.isinf(hi) else hi
    w = hi - lo
    return np.linspace(lo + 0.01 * w, hi - 0.01 * w, n)


def test_eval_examples():
    assert evaluate(parse_basis("linear"), ThresholdsCoeffs.from_slope(1, 2), 3) == 7
    assert evaluate(parse_basis("logit(0,10)"), ThresholdsCoeffs.from_slope(0, 1), 5) == 0
    assert evaluate(parse_basis("shifted_log"), ThresholdsCoeffs.from_slope(0, 1), 0) == 0


def test_derivative_examples():
    assert derivative(parse_basis("linear"), ThresholdsCoeffs.from_slope(0, 2), 5) == pytest.approx(2)
    assert derivative(parse_basis("log"), ThresholdsCoeffs.from_slope(0, 1), 2) == pytest.approx(0.5)
    assert derivative(parse_basis("logit(0,10)"), ThresholdsCoeffs.from_slope(0, 1), 5) == pytest.approx(0.4)


def test_inverse_examples():
    assert inverse(parse_basis("linear"), ThresholdsCoeffs.from_slope(1, 2), 7) == pytest.approx(3)
    assert inverse(parse_basis("log"), ThresholdsCoeffs.from_slope(0, 1), 0) == pytest.approx(1)
    assert inverse(parse_basis("logit(0,10)"), ThresholdsCoeffs.from_slope(0, 1), 0) == pytest.approx(5)


@pytest.mark.parametrize("spec", BASES, ids=str)
def test_inverse_roundtrip_and_derivative(spec):
    c = ThresholdsCoeffs.from_slope(0.3, 1.7)
    y = grid(spec)
    t = evaluate(spec, c, y)
    assert np.max(np.abs(inverse(spec, c, t) - y) / np.maximum(1, np.abs(y))) <= 1e-10
    d = derivative(spec, c, y)
    assert np.all(d > 0)
    h = 1e-6 * (spec.support()[1] - spec.support()[0] if not math.isinf(spec.support()[1] - spec.support()[0]) else 1)
    fd = (evaluate(spec, c, y + h) - evaluate(spec, c, y - h)) / (2 * h)
    assert np.max(np.abs(fd - d) / np.maximum(1, np.abs(d))) <= 1e-6


def test_logit_boundary_limits():
    spec = parse_basis("logit(0,10)")
    c = ThresholdsCoeffs.from_slope(0, 1)
    assert evaluate(spec, c, 1e-9 * 10) < -15
    assert evaluate(spec, c, 10 - 1e-9 * 10) > 15


def test_support_errors_name_the_bound():
    with pytest.raises(DomainError, match="lower bound 0"):
        evaluate(parse_basis("log"), ThresholdsCoeffs(), 0.0)
    with pytest.raises(DomainError, match="upper bound 10"):
        evaluate(parse_basis("logit(0,10)"), ThresholdsCoeffs(), 10.0)
    with pytest.raises(DomainError):
        evaluate(parse_basis("free(4)"), ThresholdsCoeffs(0, 0, np.zeros(2)), 4)


def test_free_basis():
    spec = parse_basis("free(4)")
    c = ThresholdsCoeffs.from_thresholds([-1.0, 0.5, 2.0])
    assert np.allclose(evaluate(spec, c, np.array([1, 2, 3])), [-1, 0.5, 2])
    with pytest.raises(UnsupportedOperation):
        derivative(spec, c, 1)
    with pytest.raises(UnsupportedOperation):
        inverse(spec, c, 0.0)


# log-gaps below about -25 give increments that vanish next to O(1) thresholds in double precision
@given(st.lists(st.floats(-25, 5), min_size=1, max_size=8), st.floats(-10, 10))
def test_free_thresholds_strictly_increasing(gaps, first):
    th = free_thresholds(ThresholdsCoeffs(first, 0.0, np.array(gaps)))
    assert np.all(np.diff(th) > 0)


@given(st.floats(-30, 30), st.floats(-3, 3))
def test_slope_always_positive(raw, intercept):
    c = ThresholdsCoeffs(intercept, raw)
    assert c.slope > 0


def test_parse_and_validation():
    assert parse_basis("identity").basis == "linear"
    assert str(parse_basis("logit", k=7)) == "logit(0.9,7)"
    assert parse_basis("free", k=5).k == 5
    with pytest.raises(ValueError):
        ThresholdsSpec("logit", a=2, b=1)
    with pytest.raises(ValueError):
        ThresholdsSpec("free", k=1)
    with pytest.raises(ValueError):
        parse_basis("spline")
    with pytest.raises(ValueError):
        parse_basis("logit")
