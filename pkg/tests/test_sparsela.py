import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from rigaqep.assembly import assemble_em
from rigaqep.spaces import build_iga_space, build_riga_space
from rigaqep.sparsela import (DimensionError, FlopCounter, Ordering, SingularMatrixError, axpy, dot,
                              lu_factorize, natural_order, nested_dissection_order, spmv,
                              symbolic_analysis, theoretical_costs)


# -- kernels ------------------------------------------------------------------

def test_spmv_identity_and_zero():
    c = FlopCounter()
    x = np.arange(4.0)
    np.testing.assert_array_equal(spmv(sp.eye(4, format="csr"), x, c), x)
    assert c.madds["mv"] == 4
    assert np.all(spmv(sp.csr_matrix((4, 4)), x, c) == 0)
    assert c.madds["mv"] == 4 and c.calls["mv"] == 2


def test_spmv_block_charges_per_column():
    c = FlopCounter()
    A = sp.csr_matrix([[1.0, 2.0], [0.0, 4.0]])
    X = np.array([[1.0, 0.0], [1.0, 1.0]])
    np.testing.assert_array_equal(spmv(A, X, c), A.toarray() @ X)
    assert c.madds["mv"] == 2 * A.nnz and c.calls["mv"] == 2


def test_spmv_by_hand():
    np.testing.assert_array_equal(spmv(sp.csr_matrix([[1, 2], [3, 4]]), np.ones(2)), [3, 7])
    with pytest.raises(DimensionError):
        spmv(sp.eye(3, format="csr"), np.ones(2))


def test_dot_conjugates_first_argument():
    e1 = np.array([1.0, 0, 0])
    assert dot(e1, e1) == 1
    x = np.array([1.0, -2.0, 3.0])
    assert dot(1j * x, x) == pytest.approx(-1j * (x @ x))
    np.testing.assert_array_equal(axpy(2, np.array([1, 0]), np.array([0, 1])), [2, 1])


def test_counter_snapshot_totals():
    c = FlopCounter()
    c.add("fa", 10)
    c.add("vv", 3, calls=2)
    snap = c.snapshot()
    assert snap["flops"]["total"] == sum(snap["flops"][k] for k in ("fa", "fb", "mv", "vv")) == 13 * 8
    with pytest.raises(KeyError):
        c.add("xx", 1)
    with pytest.raises(ValueError):
        c.add("fa", -1)
    assert c.diff(snap) == dict.fromkeys(("fa", "fb", "mv", "vv"), 0)


# -- cost model ----------------------------------------------------------------

def test_cost_counts_row():
    rows = theoretical_costs(1e6, 4, 500, 1)
    assert [r["count"] for r in rows] == [1, 500, 2500, 500000]


def test_cost_factorization_ratio_is_p_squared():
    p = 5
    iga = theoretical_costs(1e6, p, 100, 2, "iga")
    riga = theoretical_costs(1e6, p, 100, 2, "riga")
    assert iga[0]["total"] / riga[0]["total"] == pytest.approx(p ** 2)


def test_cost_nev_zero():
    rows = theoretical_costs(1e4, 3, 0, 5)
    assert [r["total"] for r in rows[1:]] == [0, 0, 0]


# -- orderings and LU ----------------------------------------------------------

def test_identity_factorization():
    n = 7
    c = FlopCounter()
    f = lu_factorize(sp.eye(n, format="csr"), natural_order(n), c)
    assert f.nnz_L == n and c.madds["fa"] == 0
    b = np.arange(1.0, n + 1)
    np.testing.assert_allclose(f.solve(b, c), b)
    assert c.madds["fb"] == 2 * n


def test_hand_lu():
    A = np.array([[4.0, 3, 0], [6, 3, 1], [0, 1, 2]])
    f = lu_factorize(sp.csr_matrix(A), natural_order(3))
    rp, cp, L, U = f.to_sparse()
    np.testing.assert_allclose((L @ U).toarray(), A[rp][:, cp], atol=1e-14)
    # partial pivoting picks 6 first
    assert rp[0] == 1
    np.testing.assert_allclose(U.toarray()[0], [6, 3, 1], atol=1e-14)


def test_random_spd_solve_and_determinism():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((50, 50))
    A = sp.csr_matrix(X @ X.T + 50 * np.eye(50))
    perm = rng.permutation(50)
    f = lu_factorize(A, Ordering(perm, "random"))
    b = rng.standard_normal(50)
    c = FlopCounter()
    x = f.solve(b, c)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-12
    first = c.madds["fb"]
    f.solve(b, c)
    assert c.madds["fb"] == 2 * first


def test_complex_rhs_with_real_factors():
    rng = np.random.default_rng(4)
    A = sp.random(30, 30, 0.2, random_state=5) + 5 * sp.eye(30)
    f = lu_factorize(A.tocsr(), natural_order(30))
    b = rng.standard_normal((30, 2)) + 1j * rng.standard_normal((30, 2))
    c = FlopCounter()
    x = f.solve(b, c)
    np.testing.assert_allclose(A @ x, b, atol=1e-12)
    assert c.calls["fb"] == 2


def test_singular_detected():
    A = sp.csr_matrix(np.array([[1.0, 1], [1, 1]]))
    with pytest.raises(SingularMatrixError):
        lu_factorize(A, natural_order(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_lu_residual_random_sparse(n, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, 0.3, random_state=seed, data_rvs=rng.standard_normal) + n * sp.eye(n)
    A = A.tocsr()
    f = lu_factorize(A, Ordering(rng.permutation(n), "random"))
    b = rng.standard_normal(n)
    x = f.solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_nested_dissection_is_valid_and_factorizes():
    s = build_iga_space("curl", 3, 8)
    P = assemble_em(s)
    o = nested_dissection_order(P.space)
    assert o.n == P.N and sorted(o.perm) == list(range(P.N))
    f = lu_factorize(P.q(3.0), o)
    b = np.random.default_rng(0).standard_normal(P.N)
    x = f.solve(b)
    assert np.linalg.norm(P.q(3.0) @ x - b) <= 1e-10 * np.linalg.norm(b)
    # reordering must not change the answer
    g = lu_factorize(P.q(3.0), natural_order(P.N))
    np.testing.assert_allclose(g.solve(b), x, rtol=1e-9, atol=1e-12)


def test_nested_dissection_single_element_box():
    s = build_iga_space("curl", 2, 2)
    o = nested_dissection_order(s, leaf_elements=2, free_only=False)
    assert len(o.nodes) == 1
    np.testing.assert_array_equal(o.perm, np.arange(s.N))


def test_riga_top_separator_is_reduced_continuity_interface():
    s = build_riga_space("curl", 3, 16, 1)
    o = nested_dissection_order(s, free_only=False)
    root = o.nodes[-1]
    sep = set(o.perm[root.start: root.stop].tolist())
    # DOFs whose support strictly crosses the vertical line x = 1/2 (element 8)
    sup = s.dof_supports
    cross = set(np.flatnonzero((sup[:, 0] < 8) & (sup[:, 1] > 8)).tolist())
    assert sep == cross and len(sep) > 0


def test_riga_fill_below_iga_small():
    fills = []
    for space in (build_iga_space("curl", 3, 32), build_riga_space("curl", 3, 32, 1)):
        P = assemble_em(space)
        fills.append(symbolic_analysis(P.K, nested_dissection_order(P.space)).nnz_L)
    assert fills[1] < fills[0]


def test_batched_solve_matches_node_by_node(monkeypatch):
    from rigaqep.sparsela import multifrontal
    P = assemble_em(build_riga_space("curl", 3, 32, 2))
    Q = P.q(7.0)
    o = nested_dissection_order(P.space)
    b = np.random.default_rng(1).standard_normal((P.N, 2))
    x = lu_factorize(Q, o).solve(b)
    monkeypatch.setattr(multifrontal, "BATCH_MAX_PIVOTS", 0)
    F = lu_factorize(Q, o)
    assert all(kind == "node" for kind, _ in F._plan)
    np.testing.assert_allclose(F.solve(b), x, rtol=1e-10, atol=1e-12 * np.abs(x).max())
    assert np.linalg.norm(Q @ x - b) <= 1e-10 * np.linalg.norm(b)
