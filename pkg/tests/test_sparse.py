import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import lasso_cd, lasso_value
from sparsetrait.dictionary import project_atom
from sparsetrait.sparse import (
    LassoParams, encode_all, kkt_violation, lasso_lars, lasso_objective,
)


def random_dictionary(rng, d, m):
    D = rng.standard_normal((d, m))
    return np.column_stack([project_atom(c) for c in D.T])


def soft(p, lam):
    return np.sign(p) * np.maximum(np.abs(p) - lam, 0)


def test_identity_example():
    c = lasso_lars(np.array([3.0, 1.0]), np.eye(2), LassoParams(1.0))
    np.testing.assert_allclose(c.values, [2.0, 0.0], rtol=0, atol=1e-10)
    assert c.nnz == 1


def test_soft_threshold_signed():
    rng = np.random.default_rng(1)
    for _ in range(200):
        p = rng.uniform(-2, 2, 6)
        lam = rng.uniform(0, 1.5)
        c = lasso_lars(p, np.eye(6), LassoParams(lam)).values
        np.testing.assert_allclose(c, soft(p, lam), atol=1e-10, rtol=0)


def test_lambda_zero_inverse():
    rng = np.random.default_rng(2)
    for _ in range(20):
        D = rng.uniform(0, 1, (5, 5)) + 2 * np.eye(5)
        p = rng.standard_normal(5)
        c = lasso_lars(p, D, LassoParams(0.0)).values
        np.testing.assert_allclose(c, np.linalg.solve(D, p), atol=1e-8)


@pytest.mark.parametrize("lam", [0.01, 0.1, 1.0])
def test_against_coordinate_descent(lam):
    rng = np.random.default_rng(int(lam * 1000))
    for _ in range(30):
        D = random_dictionary(rng, 8, 12)
        p = rng.standard_normal(8)
        c = lasso_lars(p, D, LassoParams(lam)).values
        ref = lasso_cd(p, D, lam)
        assert abs(lasso_value(p, D, c, lam) - lasso_value(p, D, ref, lam)) < 1e-6
        assert kkt_violation(p, D, c, lam) < 1e-6
        assert np.count_nonzero(c) <= 8


def test_correlated_atoms_stay_optimal():
    # near-duplicate atoms force sign changes along the homotopy path
    rng = np.random.default_rng(7)
    for _ in range(50):
        base = rng.standard_normal((6, 3))
        D = np.column_stack([base, base + 0.3 * rng.standard_normal((6, 3))])
        D /= np.linalg.norm(D, axis=0)
        p = rng.standard_normal(6)
        for lam in (0.5, 0.05, 0.005):
            c = lasso_lars(p, D, LassoParams(lam)).values
            assert kkt_violation(p, D, c, lam) < 1e-6
            ref = lasso_cd(p, D, lam)
            assert lasso_value(p, D, c, lam) <= lasso_value(p, D, ref, lam) + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.001, 1.0), st.floats(0.001, 1.0))
def test_l1_norm_monotone_in_lambda(seed, a, b):
    lo, hi = sorted((a, b))
    rng = np.random.default_rng(seed)
    D = random_dictionary(rng, 8, 12)
    p = rng.standard_normal(8)
    n_lo = np.abs(lasso_lars(p, D, LassoParams(lo)).values).sum()
    n_hi = np.abs(lasso_lars(p, D, LassoParams(hi)).values).sum()
    assert n_lo >= n_hi - 1e-9


def test_large_lambda_gives_zero():
    rng = np.random.default_rng(3)
    for _ in range(20):
        D = random_dictionary(rng, 8, 12)
        p = rng.standard_normal(8)
        lam = np.max(np.abs(D.T @ p))
        assert not lasso_lars(p, D, LassoParams(lam)).values.any()
        assert not lasso_lars(p, D, LassoParams(lam * 2)).values.any()


def test_zero_patch_and_duplicates_and_batch():
    rng = np.random.default_rng(4)
    D = np.abs(rng.standard_normal((256, 40)))
    D /= np.linalg.norm(D, axis=0)
    P = rng.uniform(0, 1, (256, 26))
    P[:, 3] = 0
    P[:, 10] = P[:, 5]
    params = LassoParams(0.1)
    C = encode_all(P, D, params)
    assert C.shape == (40, 26)
    assert not C[:, 3].any()
    np.testing.assert_array_equal(C[:, 10], C[:, 5])
    for i in range(26):
        np.testing.assert_array_equal(C[:, i], lasso_lars(P[:, i], D, params).values)


def test_thread_count_does_not_change_codes():
    rng = np.random.default_rng(5)
    D = np.abs(rng.standard_normal((64, 30)))
    D /= np.linalg.norm(D, axis=0)
    P = rng.uniform(0, 1, (64, 100))
    a = encode_all(P, D, LassoParams(0.05), threads=1)
    b = encode_all(P, D, LassoParams(0.05), threads=4)
    np.testing.assert_array_equal(a, b)


def test_rank_deficient_dictionary():
    rng = np.random.default_rng(6)
    D = random_dictionary(rng, 4, 3)
    D = np.column_stack([D, D])  # duplicated atoms
    p = rng.standard_normal(4)
    c = lasso_lars(p, D, LassoParams(0.01)).values
    assert np.all(np.isfinite(c))
    assert kkt_violation(p, D, c, 0.01) < 1e-6


def test_max_active_cap():
    rng = np.random.default_rng(8)
    D = random_dictionary(rng, 8, 12)
    p = rng.standard_normal(8)
    c = lasso_lars(p, D, LassoParams(0.001, max_active=2)).values
    assert np.count_nonzero(c) <= 2


def test_objective_helper():
    D = np.eye(2)
    assert lasso_objective(np.array([[3.0], [1.0]]), D, np.array([[2.0], [0.0]]), 1.0) == 3.0


def test_errors():
    D = np.eye(3)
    with pytest.raises(ValueError):
        lasso_lars(np.zeros(2), D)
    with pytest.raises(ValueError):
        lasso_lars(np.array([np.nan, 0, 0]), D)
    with pytest.raises(ValueError):
        encode_all(np.zeros((2, 4)), D)
    with pytest.raises(ValueError):
        encode_all(np.full((3, 1), np.inf), D)
    with pytest.raises(ValueError):
        LassoParams(-1.0)
    with pytest.raises(ValueError):
        LassoParams(0.1, tol=0)
