import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quantldp import topology
from quantldp.topology import WeightMatrices


def laplacian_pair(adj_R, adj_C, weights_R, weights_C):
    """Build (R, C) from boolean patterns: R rows sum to zero, C columns sum to zero."""
    m = adj_R.shape[0]
    R = np.where(adj_R, weights_R, 0.0)
    C = np.where(adj_C, weights_C, 0.0)
    np.fill_diagonal(R, 0.0)
    np.fill_diagonal(C, 0.0)
    np.fill_diagonal(R, -R.sum(axis=1))
    np.fill_diagonal(C, -C.sum(axis=0))
    return R, C


def bfs_roots(M):
    """Independent reachability oracle: repeated relaxation on edge lists."""
    m = M.shape[0]
    edges = [(j, i) for i in range(m) for j in range(m) if i != j and M[i, j] > 0]
    roots = []
    for r in range(m):
        seen = {r}
        changed = True
        while changed:
            changed = False
            for j, i in edges:
                if j in seen and i not in seen:
                    seen.add(i)
                    changed = True
        if len(seen) == m:
            roots.append(r)
    return roots


TWO = np.array([[-0.5, 0.5], [0.5, -0.5]])
THREE_R = np.array([[-0.6, 0.6, 0.0], [0.0, -0.2, 0.2], [0.3, 0.0, -0.3]])


def test_two_node_symmetric_passes():
    rep = topology.validate(WeightMatrices(TWO, TWO))
    assert rep.passed
    assert rep.roots_R == [0, 1] and rep.roots_CT == [0, 1]


def test_row_sum_violation_is_reported():
    R = np.array([[-0.5, 0.5], [0.6, -0.5]])
    rep = topology.validate(WeightMatrices(R, TWO))
    assert not rep.passed
    assert "R-row-sum" in rep.failures


def test_column_sum_violation_is_reported():
    C = np.array([[-0.5, 0.5], [0.4, -0.5]])
    rep = topology.validate(WeightMatrices(TWO, C))
    assert "C-col-sum" in rep.failures


def test_sign_conditions():
    R = np.array([[0.0, 0.0], [0.5, -0.5]])
    rep = topology.validate(WeightMatrices(R, TWO))
    assert "R-diag-negative" in rep.failures
    R = np.array([[-1.5, 1.5], [0.5, -0.5]])
    rep = topology.validate(WeightMatrices(R, TWO))
    assert "R-diag-lower" in rep.failures
    C = np.array([[-0.5, -0.1], [0.5, 0.1]])
    rep = topology.validate(WeightMatrices(TWO, C))
    assert "C-offdiag-nonneg" in rep.failures


def test_chain_with_mirrored_push_graph_has_no_common_root():
    # G_R: 0 -> 1 -> 2 (edge j -> i iff R[i, j] > 0), rooted only at 0
    R = np.array([[-0.0, 0.0, 0.0], [0.5, -0.5, 0.0], [0.0, 0.5, -0.5]])
    # C with the same pattern makes G_{C^T} the reversed chain, rooted only at 2
    C = np.array([[-0.5, 0.0, 0.0], [0.5, -0.5, 0.0], [0.0, 0.5, -0.0]])
    rep = topology.validate(WeightMatrices(R, C))
    assert rep.roots_R == bfs_roots(R) == [0]
    assert rep.roots_CT == bfs_roots(C.T) == [2]
    assert "common-root" in rep.failures


def test_missing_spanning_tree_in_push_graph():
    R, _ = laplacian_pair(np.ones((3, 3), bool), np.ones((3, 3), bool), 0.2, 0.2)
    C = np.array([[-0.3, 0.0, 0.0], [0.3, -0.0, 0.0], [0.0, 0.0, -0.0]])
    rep = topology.validate(WeightMatrices(R, C))
    assert "spanning-tree-G_CT" in rep.failures


def test_shape_errors_raise():
    with pytest.raises(topology.TopologyError):
        topology.validate(WeightMatrices(np.zeros((2, 3)), np.zeros((2, 3))))
    with pytest.raises(topology.TopologyError):
        topology.validate(WeightMatrices(TWO, np.zeros((3, 3))))
    with pytest.raises(topology.TopologyError):
        topology.validate(WeightMatrices(np.array([[0.0]]), np.array([[0.0]])))


def test_validate_is_pure():
    W = topology.three_node()
    a, b = topology.validate(W), topology.validate(W)
    assert a.format() == b.format()


@pytest.mark.parametrize("m", [2, 3, 4])
def test_spanning_tree_verdicts_match_oracle_exhaustively(m):
    offdiag = [(i, j) for i in range(m) for j in range(m) if i != j]
    for bits in itertools.product([False, True], repeat=len(offdiag)):
        M = np.zeros((m, m))
        for (i, j), on in zip(offdiag, bits):
            M[i, j] = 0.1 if on else 0.0
        assert topology.spanning_tree_roots(M) == bfs_roots(M)


@settings(max_examples=200, deadline=None)
@given(st.integers(5, 6), st.integers(0, 2**32 - 1), st.floats(0.1, 0.8))
def test_spanning_tree_verdicts_match_oracle_random(m, seed, density):
    rng = np.random.default_rng(seed)
    M = np.where(rng.random((m, m)) < density, rng.uniform(0.01, 0.2, (m, m)), 0.0)
    np.fill_diagonal(M, -1.0)
    assert topology.spanning_tree_roots(M) == bfs_roots(M)


def test_eigenvectors_two_node_and_three_node():
    np.testing.assert_allclose(topology.left_eigenvector(TWO), [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(topology.right_eigenvector(TWO), [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(topology.left_eigenvector(THREE_R), [0.5, 1.5, 1.0], atol=1e-12)
    np.testing.assert_allclose(topology.right_eigenvector(THREE_R.T), [0.5, 1.5, 1.0], atol=1e-12)


def test_eigenvector_matches_independent_linear_solve(five_node):
    R = five_node.run.W.R
    m = R.shape[0]
    # replace one redundant balance equation by the normalization and solve exactly
    A = (np.eye(m) + R).T - np.eye(m)
    A[-1] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = m
    np.testing.assert_allclose(topology.left_eigenvector(R), np.linalg.solve(A, rhs), atol=1e-12)


def test_doubly_stochastic_gives_ones():
    W = topology.ring(6, 0.25)
    np.testing.assert_allclose(topology.left_eigenvector(W.R), np.ones(6), atol=1e-12)
    np.testing.assert_allclose(topology.right_eigenvector(W.C), np.ones(6), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_eigenpair_invariants(m, seed):
    rng = np.random.default_rng(seed)
    R, C = laplacian_pair(np.ones((m, m), bool), rng.random((m, m)) < 0.7,
                          rng.uniform(0.01, 0.9 / m, (m, m)), rng.uniform(0.01, 0.9 / m, (m, m)))
    # keep G_{C^T} rooted: add a directed cycle
    for i in range(m):
        C[(i + 1) % m, i] += 0.05
        C[i, i] -= 0.05
    W = WeightMatrices(R, C)
    assert topology.validate(W).passed
    u = topology.left_eigenvector(R)
    v = topology.right_eigenvector(C)
    I = np.eye(m)
    assert np.max(np.abs(u @ (I + R) - u)) <= 1e-10
    assert np.max(np.abs((I + C) @ v - v)) <= 1e-10
    assert abs(u.sum() - m) <= 1e-10 and abs(v.sum() - m) <= 1e-10
    assert np.all(u >= 0) and np.all(v >= 0)


def test_z_iteration_conserves_u_weighted_sum(five_node):
    R = five_node.run.W.R
    u = topology.left_eigenvector(R)
    IR = np.eye(5) + R
    Z = np.eye(5)
    start = u @ Z
    for _ in range(300):
        Z = topology.z_step(IR, Z)
        assert np.max(np.abs(u @ Z - start)) <= 1e-10


def test_scaled_diagonal_converges_to_u_on_five_node_graphs(five_node):
    rng = np.random.default_rng(11)
    graphs = [five_node.run.W.R]
    for _ in range(5):
        R, _ = laplacian_pair(rng.random((5, 5)) < 0.8, np.ones((5, 5), bool),
                              rng.uniform(0.05, 0.15, (5, 5)), 0.1)
        for i in range(5):
            R[i, (i - 1) % 5] += 0.05
            R[i, i] -= 0.05
        graphs.append(R)
    for R in graphs:
        u = topology.left_eigenvector(R)
        IR = np.eye(5) + R
        Z = np.eye(5)
        for _ in range(200):
            Z = topology.z_step(IR, Z)
        assert np.max(np.abs(5 * np.diag(Z) - u)) <= 1e-8


def test_geometric_fit_two_node_exact_convergence():
    fit = topology.estimate_geometric_constants(WeightMatrices(TWO, TWO), 20)
    # z_0 = e_i: |1/(2*1) - 1/1| = 1/2, then I + R = 11^T/2 converges in one step
    assert fit.errors[0] == pytest.approx(0.5, abs=1e-12)
    assert np.all(fit.errors[1:] == 0.0)
    assert 0.0 < fit.P_z < 1.0
    assert fit.C_z == pytest.approx(0.5, abs=1e-12)


def test_geometric_fit_two_node_asymmetric():
    R = np.array([[-0.5, 0.5], [0.3, -0.3]])
    fit = topology.estimate_geometric_constants(WeightMatrices(R, R.T.copy()), 50)
    t = np.arange(51)
    ok = np.isfinite(fit.errors)
    assert np.all(fit.errors[ok] <= fit.envelope(t[ok]) * (1 + 1e-12))


def test_geometric_fit_dominates_three_node():
    fit = topology.estimate_geometric_constants(topology.three_node(), 200)
    t = np.arange(201)
    ok = np.isfinite(fit.errors)
    assert 0.0 < fit.P_z < 1.0
    assert np.all(fit.errors[ok] <= fit.envelope(t[ok]) * (1 + 1e-12))


def test_geometric_fit_envelope_is_tight_somewhere(five_node):
    fit = topology.estimate_geometric_constants(five_node.run.W, 200)
    t = np.arange(201)
    ratio = fit.errors / fit.envelope(t)
    assert np.nanmax(ratio) == pytest.approx(1.0)


def test_z_errors_skip_agents_whose_diagonal_vanishes():
    # 1 + R_00 = 0 empties agent 0's own entry after one round; agent 1 still reports
    R = np.array([[-1.0, 1.0], [0.5, -0.5]])
    u = topology.left_eigenvector(R)
    np.testing.assert_allclose(u, [2 / 3, 4 / 3], atol=1e-12)
    errs = topology.z_errors(R, u, 10)
    assert np.all(np.isfinite(errs))
    # t = 1: z^1 = (0.5, 0.5), so only agent 1 contributes |1/(2*0.5) - 3/4|
    assert errs[1] == pytest.approx(0.25)


def test_spectral_rate_matches_observed_decay(five_node):
    R = five_node.run.W.R
    u = topology.left_eigenvector(R)
    rho = topology.spectral_rate(R, u)
    errs = topology.z_errors(R, u, 40)
    assert 0.0 < rho < 1.0
    # geometric decay at roughly rate rho over the observable window
    observed = errs[30] / errs[20]
    assert observed <= rho ** 10 * 50


def test_horizon_lower_bound():
    with pytest.raises(ValueError):
        topology.estimate_geometric_constants(topology.three_node(), 5)


def test_weight_matrices_are_read_only():
    W = topology.three_node()
    with pytest.raises(ValueError):
        W.R[0, 0] = 1.0
