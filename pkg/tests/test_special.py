import numpy as np
import pytest
import scipy.special as sp

from protoscope.errors import DomainError
from protoscope.special import digamma, lngamma, trigamma


def mixed_tol(reference, rel=1e-10):
    return rel * np.maximum(1.0, np.abs(reference))


GRID = np.concatenate([
    np.logspace(-3, 6, 400),
    np.linspace(0.5, 30.0, 200),          # recurrence / Lanczos region
    np.array([1.0, 2.0, 0.5, 1.4616321449683623]),
])


def test_lngamma_matches_scipy_across_range():
    got = lngamma(GRID)
    want = sp.gammaln(GRID)
    assert np.all(np.abs(got - want) <= mixed_tol(want))


def test_lngamma_integer_factorials():
    import math
    n = np.arange(1, 20)
    want = np.array([math.log(math.factorial(int(v) - 1)) for v in n])
    assert np.allclose(lngamma(n.astype(float)), want, rtol=1e-12, atol=1e-12)


def test_lngamma_one_and_two_are_zero():
    assert abs(lngamma(1.0)) < 1e-13
    assert abs(lngamma(2.0)) < 1e-13


def test_digamma_matches_scipy_across_range():
    got = digamma(GRID)
    want = sp.digamma(GRID)
    assert np.all(np.abs(got - want) <= mixed_tol(want, rel=1e-9))


def test_digamma_recurrence_identity():
    x = np.linspace(0.1, 5.0, 50)
    lhs = digamma(x + 1.0)
    rhs = digamma(x) + 1.0 / x
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_trigamma_matches_scipy_across_range():
    got = trigamma(GRID)
    want = sp.polygamma(1, GRID)
    assert np.all(np.abs(got - want) <= mixed_tol(want, rel=1e-9))


def test_trigamma_is_derivative_of_digamma():
    x = np.linspace(0.2, 50.0, 40)
    h = 1e-6
    numeric = (digamma(x + h) - digamma(x - h)) / (2.0 * h)
    assert np.allclose(trigamma(x), numeric, rtol=1e-4, atol=1e-6)


def test_shapes_preserved():
    x = np.full((3, 4), 2.5)
    assert lngamma(x).shape == (3, 4)
    assert digamma(x).shape == (3, 4)
    assert trigamma(x).shape == (3, 4)


def test_scalar_inputs_return_scalars():
    assert np.ndim(lngamma(3.0)) == 0
    assert np.ndim(digamma(3.0)) == 0


@pytest.mark.parametrize("fn", [lngamma, digamma, trigamma])
@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan, np.inf])
def test_domain_rejected(fn, bad):
    with pytest.raises(DomainError):
        fn(bad)


@pytest.mark.parametrize("fn", [lngamma, digamma, trigamma])
def test_domain_rejected_inside_arrays(fn):
    with pytest.raises(DomainError):
        fn(np.array([1.0, 2.0, -0.5]))
