import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bmsdp.core import (
    ConstraintMap,
    DimensionError,
    SdpInstance,
    apply_adjoint,
    apply_map,
    make_rng,
    operator_norm,
    sample_uniform_ball,
    smat,
    snap_svec,
    svec,
    triangular,
)

E11 = np.diag([1.0, 0.0])
E22 = np.diag([0.0, 1.0])


def random_sym(rng, n):
    M = rng.standard_normal((n, n))
    return M + M.T


# apply_map / apply_adjoint

def test_apply_map_identity_trace():
    assert apply_map(ConstraintMap.from_list([np.eye(2)]), np.eye(2)) == pytest.approx([2.0])


def test_apply_map_zero():
    A = ConstraintMap.from_list([np.eye(3), np.ones((3, 3))])
    assert np.array_equal(apply_map(A, np.zeros((3, 3))), np.zeros(2))


def test_apply_map_hand_inner_product():
    A = ConstraintMap.from_list([np.diag([1.0, 2.0])])
    assert apply_map(A, np.diag([3.0, 4.0])) == pytest.approx([11.0])


def test_apply_map_dimension_mismatch():
    with pytest.raises(DimensionError):
        apply_map(ConstraintMap.from_list([np.eye(2)]), np.eye(3))


def test_adjoint_examples():
    assert np.allclose(apply_adjoint(ConstraintMap.from_list([np.eye(2)]), [2.0]), 2 * np.eye(2))
    A = ConstraintMap.from_list([E11, E22])
    assert np.array_equal(apply_adjoint(A, [0.0, 0.0]), np.zeros((2, 2)))
    assert np.array_equal(apply_adjoint(A, [1.0, 1.0]), np.eye(2))
    with pytest.raises(DimensionError):
        apply_adjoint(A, [1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_adjoint_identity(n, m, seed):
    rng = make_rng(seed)
    A = ConstraintMap(np.stack([random_sym(rng, n) for _ in range(m)]))
    X = random_sym(rng, n)
    lam = rng.standard_normal(m)
    lhs = float(apply_map(A, X) @ lam)
    rhs = float(np.sum(X * apply_adjoint(A, lam)))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs), np.linalg.norm(X) * np.linalg.norm(lam) * A.tuple_norm())


# operator norm

def test_operator_norm_examples():
    assert operator_norm(ConstraintMap.from_list([np.eye(2)])) == pytest.approx(math.sqrt(2))
    A = ConstraintMap.from_list([E11, E22])
    assert operator_norm(A) == pytest.approx(1.0)
    assert operator_norm(A.scaled(-3.0)) == pytest.approx(3.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_operator_norm_below_tuple_norm_and_is_sup(n, m, seed):
    rng = make_rng(seed)
    A = ConstraintMap(np.stack([random_sym(rng, n) for _ in range(m)]))
    nrm = operator_norm(A)
    assert nrm <= A.tuple_norm() * (1 + 1e-12)
    for _ in range(5):
        X = random_sym(rng, n)
        assert np.linalg.norm(apply_map(A, X)) <= nrm * np.linalg.norm(X) * (1 + 1e-10)


# svec

def test_svec_examples():
    assert np.array_equal(svec(np.eye(2)), [1.0, 0.0, 1.0])
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(svec(X), [0.0, math.sqrt(2), 0.0])


def test_svec_row_major_upper_order():
    X = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    r2 = math.sqrt(2)
    assert np.allclose(svec(X), [1, 2 * r2, 3 * r2, 4, 5 * r2, 6])


def test_smat_rejects_non_triangular_length():
    with pytest.raises(DimensionError):
        smat(np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_svec_roundtrip_and_norm(n, seed):
    X = random_sym(make_rng(seed), n)
    v = svec(X)
    assert abs(np.linalg.norm(v) - np.linalg.norm(X)) <= 1e-12 * np.linalg.norm(X)
    Xs = snap_svec(X)
    assert np.array_equal(svec(smat(svec(Xs))), svec(Xs))
    assert np.array_equal(smat(svec(Xs)), Xs)
    assert np.allclose(smat(v), X, rtol=0, atol=1e-15 * np.abs(X).max())


def test_triangular():
    assert [triangular(k) for k in (0, 1, 4, 7)] == [0, 1, 10, 28]
    with pytest.raises(ValueError):
        triangular(-1)


# instances

def test_instance_validation():
    A = ConstraintMap.from_list([np.eye(2)])
    with pytest.raises(DimensionError):
        SdpInstance(np.eye(3), A, [1.0])
    with pytest.raises(DimensionError):
        SdpInstance(np.eye(2), A, [1.0, 2.0])
    with pytest.raises(ValueError):
        SdpInstance(np.array([[1.0, 2.0], [0.0, 1.0]]), A, [1.0])
    with pytest.raises(ValueError):
        ConstraintMap.from_list([np.array([[1.0, np.nan], [np.nan, 1.0]])])
    inst = SdpInstance(np.eye(2), A, [1.0])
    assert np.allclose(inst.slack([0.5]), 0.5 * np.eye(2))


# sampling

def test_ball_sampling_sigma_zero_is_center():
    c = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(sample_uniform_ball(c, 0.0, make_rng(1)), c)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.floats(1e-3, 10.0), st.integers(0, 2**32 - 1))
def test_ball_sampling_stays_in_ball(k, sigma, seed):
    rng = make_rng(seed)
    c = rng.standard_normal(k)
    pts = sample_uniform_ball(c, sigma, rng, size=200)
    assert np.all(np.linalg.norm(pts - c, axis=1) <= sigma * (1 + 1e-12))


def test_ball_radius_law_ks():
    k, sigma = 6, 0.7
    pts = sample_uniform_ball(np.zeros(k), sigma, make_rng(7), size=100_000)
    u = (np.linalg.norm(pts, axis=1) / sigma) ** k
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(5, 1, 2).standard_normal(4)
    b = make_rng(5, 1, 2).standard_normal(4)
    c = make_rng(5, 2, 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
