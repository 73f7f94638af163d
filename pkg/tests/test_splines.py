import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rigaqep.splines import (ContinuityError, KnotVector, UnivariateSpace, basis_matrix, eval_basis,
                             eval_basis_derivatives, find_span, make_open_knots,
                             raise_separator_multiplicity)


def test_smallest_clamped_knot_vector():
    kv = make_open_knots(1, 2, [1])
    assert np.array_equal(kv.knots, [0, 0, 0.5, 1, 1])
    assert kv.n == 3


def test_uniform_quartic_space():
    s = UnivariateSpace.uniform(4, 16)
    assert s.n == 20
    assert set(s.continuity) == {3}


def test_mixed_multiplicity():
    s = UnivariateSpace(3, 4, (1, 3, 1))
    assert s.continuity == (2, 0, 2)
    assert s.n == 9 == len(s.kv.knots) - 3 - 1


@pytest.mark.parametrize("bad", [[0], [3]])
def test_multiplicity_out_of_range(bad):
    with pytest.raises(ContinuityError):
        make_open_knots(2, 2, bad)


def test_unclamped_knots_rejected():
    with pytest.raises(ValueError):
        KnotVector(1, np.array([0.0, 0.1, 1.0, 1.0]))


@pytest.mark.parametrize("p,target,n0,n1", [(4, 1, 68, 74), (3, 0, 67, 73)])
def test_separator_multiplicity(p, target, n0, n1):
    s = UnivariateSpace.uniform(p, 64)
    assert s.n == n0
    r = raise_separator_multiplicity(s, [16, 32, 48], target)
    assert r.n == n1
    assert all(r.continuity[b - 1] == target for b in (16, 32, 48))


def test_separator_idempotent():
    s = raise_separator_multiplicity(UnivariateSpace.uniform(3, 8), [4], 1)
    with pytest.warns(UserWarning):
        again = raise_separator_multiplicity(s, [4], 1)
    assert again == s


def test_linear_hat_values():
    kv = make_open_knots(1, 1)
    span, v = eval_basis(kv, 0.5)
    np.testing.assert_allclose(v, [0.5, 0.5])


def test_quadratic_values_by_hand():
    kv = make_open_knots(2, 2)
    span, v = eval_basis(kv, 0.25)
    assert span == 2
    np.testing.assert_allclose(v, [0.25, 0.625, 0.125], atol=1e-15)


def test_linear_derivatives():
    kv = make_open_knots(1, 1)
    _, d = eval_basis_derivatives(kv, 0.3, 1)
    np.testing.assert_allclose(d[1], [-1, 1])


def test_span_closed_at_one():
    kv = make_open_knots(3, 5)
    assert find_span(kv, 1.0) == kv.n - 1
    with pytest.raises(ValueError):
        find_span(kv, 1.5)


spaces = st.builds(
    lambda p, ne, seed: UnivariateSpace(
        p, ne, tuple(np.random.default_rng(seed).integers(1, p + 1, ne - 1))),
    st.integers(1, 5), st.integers(1, 9), st.integers(0, 2**16))


@settings(max_examples=60, deadline=None)
@given(spaces, st.floats(0, 1))
def test_partition_of_unity(space, u):
    _, d = eval_basis_derivatives(space.kv, u, min(1, space.degree))
    assert abs(d[0].sum() - 1) < 1e-12
    if space.degree >= 1:
        assert abs(d[1].sum()) < 1e-10 * max(1, np.abs(d[1]).max())
    assert np.all(d[0] >= -1e-14)


def test_derivative_matches_finite_difference():
    s = UnivariateSpace.uniform(2, 5)
    h = 1e-6
    for u in (0.13, 0.37, 0.61, 0.88):
        B = basis_matrix(s, [u - h, u, u + h], 1)
        fd = (B[0, 2] - B[0, 0]) / (2 * h)
        np.testing.assert_allclose(B[1, 1], fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


def test_basis_matrix_reproduces_polynomials():
    # the Greville abscissae interpolate linear functions exactly
    s = UnivariateSpace.uniform(3, 6)
    t = s.kv.knots
    grev = np.array([t[i + 1: i + 4].mean() for i in range(s.n)])
    u = np.linspace(0, 1, 17)
    B = basis_matrix(s, u)[0]
    np.testing.assert_allclose(B @ grev, u, atol=1e-14)


def test_support_elements():
    s = UnivariateSpace.uniform(2, 4)
    np.testing.assert_array_equal(s.support_elements[:2], [[0, 1], [0, 2]])
    np.testing.assert_array_equal(s.support_elements[-1], [3, 4])
    np.testing.assert_array_equal(s.element_first_basis, [0, 1, 2, 3])
