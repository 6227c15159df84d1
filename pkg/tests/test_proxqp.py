import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chordsplit.cones import ConeBlock, ConeKind, smat, svec
from chordsplit.conversion import SINGLE, convert
from chordsplit.problems import BlockArrowSpec, gen_block_arrow
from chordsplit.proxqp import (IPMConfig, ProxQP, SingularH, Status, SubproblemError, _orthant_step,
                               _psd_step, kernel, kkt_solve, optimality_residuals, solve_prox_qp,
                               solve_separable)
from chordsplit.sparsity import build_clique_tree
from chordsplit.spingarn import ProxOperator

from oracles import solve_conic_qp
from instances import planted_prox_instance, random_prox_instance

TIGHT = IPMConfig(gap_tol=1e-10, feas_tol=1e-10)
PSD2 = ConeBlock(ConeKind.PSD, 2)


def dense_kkt(blocks, Q, lam, weights, A, R, r, return_matrix=False):
    """Augmented system [[M, A'], [A, 0]] assembled column by column."""
    Ms = []
    for blk, Qk, lk, w in zip(blocks, Q, lam, weights):
        if blk.kind is ConeKind.NONNEG:
            Ms.append(np.diag(w + lk ** 2))
            continue
        W = (Qk * lk) @ Qk.T
        cols = []
        for j in range(blk.dim):
            e = np.zeros(blk.dim)
            e[j] = 1.0
            cols.append(w * e + svec(W @ smat(e) @ W))
        Ms.append(np.array(cols).T)
    n = sum(M.shape[0] for M in Ms)
    At = np.hstack(A)
    m = At.shape[0]
    K = np.zeros((n + m, n + m))
    off = 0
    for M in Ms:
        K[off:off + len(M), off:off + len(M)] = M
        off += len(M)
    K[:n, n:] = At.T
    K[n:, :n] = At
    sol = np.linalg.solve(K, np.concatenate([np.concatenate(R), r]))
    if return_matrix:
        return sol[:n], sol[n:], K
    return sol[:n], sol[n:]


def random_scaling(rng, blk):
    if blk.kind is ConeKind.NONNEG:
        return None, rng.uniform(0.2, 3.0, blk.size)
    Qk, _ = np.linalg.qr(rng.standard_normal((blk.size, blk.size)))
    return Qk, rng.uniform(0.2, 3.0, blk.size)


def test_projection_psd_example():
    qp = ProxQP((PSD2,), (np.zeros((0, 3)),), [], np.zeros(3), [1.0], svec(np.diag([2.0, -3.0])))
    res = solve_prox_qp(qp)
    assert res.status is Status.OPTIMAL
    np.testing.assert_allclose(res.x, svec(np.diag([2.0, 0.0])), atol=1e-12)


def test_projection_orthant_example():
    blk = ConeBlock(ConeKind.NONNEG, 2)
    qp = ProxQP((blk,), (np.zeros((0, 2)),), [], np.zeros(2), [1.0], [1.0, -2.0])
    np.testing.assert_allclose(solve_prox_qp(qp).x, [1.0, 0.0], atol=1e-12)


def test_kernel_examples():
    np.testing.assert_array_equal(kernel(1.0, np.ones(3)), np.full(6, 0.5))
    lam = np.array([2.0, 0.5, 4.0])
    # svec order: (0,0) (1,0) (2,0) (1,1) (2,1) (2,2)
    expected = [1 / 4, 1 / 1, 1 / 8, 1 / 0.25, 1 / 2, 1 / 16]
    np.testing.assert_allclose(kernel(0.0, lam), expected)
    np.testing.assert_allclose(kernel(0.0, lam, ConeKind.NONNEG), 1 / lam ** 2)


def test_kkt_solve_single_clique_matches_dense():
    rng = np.random.default_rng(0)
    blk = ConeBlock(ConeKind.PSD, 4)
    Qk, lk = random_scaling(rng, blk)
    A = [rng.standard_normal((3, blk.dim))]
    R = [rng.standard_normal(blk.dim)]
    r = rng.standard_normal(3)
    dX, dy = kkt_solve([Qk], [lk], [0.7], A, R, r)
    ox, oy = dense_kkt([blk], [Qk], [lk], [0.7], A, R, r)
    scale = 1 + np.linalg.norm(np.concatenate([R[0], r]))
    assert np.linalg.norm(dX[0] - ox) <= 1e-10 * scale
    assert np.linalg.norm(dy - oy) <= 1e-10 * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kkt_solve_mixed_blocks_matches_dense(seed):
    rng = np.random.default_rng(seed)
    blocks = [ConeBlock(ConeKind.PSD, int(rng.integers(1, 5))) if rng.random() < 0.6
              else ConeBlock(ConeKind.NONNEG, int(rng.integers(1, 5)))
              for _ in range(int(rng.integers(1, 4)))]
    n = sum(b.dim for b in blocks)
    m = int(rng.integers(1, min(n, 10) + 1))
    scal = [random_scaling(rng, b) for b in blocks]
    Q = [s[0] for s in scal]
    lam = [s[1] for s in scal]
    weights = [float(rng.choice([0.0, 0.3, 2.0])) for _ in blocks]
    A = [rng.standard_normal((m, b.dim)) for b in blocks]
    R = [rng.standard_normal(b.dim) for b in blocks]
    r = rng.standard_normal(m)
    dX, dy = kkt_solve(Q, lam, weights, A, R, r, blocks=blocks)
    ox, oy, K = dense_kkt(blocks, Q, lam, weights, A, R, r, return_matrix=True)
    rhs = np.concatenate(R + [r])
    sol = np.concatenate(dX + [dy])
    # residual of both equations, and agreement with the dense solve
    assert np.linalg.norm(K @ sol - rhs) <= 1e-10 * (1 + np.linalg.norm(rhs))
    ref = np.concatenate([ox, oy])
    assert np.linalg.norm(sol - ref) <= 1e-10 * np.linalg.cond(K) * (1 + np.linalg.norm(ref))


def test_kkt_solve_singular_H():
    blk = ConeBlock(ConeKind.PSD, 2)
    row = np.array([[1.0, 0.5, 2.0]])
    with pytest.raises(SingularH):
        kkt_solve([np.eye(2)], [np.ones(2)], [0.0], [np.vstack([row, row])],
                  [np.zeros(3)], np.zeros(2))


def test_kkt_solve_respects_components():
    rng = np.random.default_rng(5)
    blocks = [ConeBlock(ConeKind.PSD, 3), ConeBlock(ConeKind.PSD, 2)]
    A = [np.zeros((3, 6)), np.zeros((3, 3))]
    A[0][:2] = rng.standard_normal((2, 6))
    A[1][2] = rng.standard_normal(3)
    scal = [random_scaling(rng, b) for b in blocks]
    R = [rng.standard_normal(b.dim) for b in blocks]
    r = rng.standard_normal(3)
    args = ([s[0] for s in scal], [s[1] for s in scal], [1.0, 1.0], A, R, r)
    full = kkt_solve(*args, blocks=blocks)
    split = kkt_solve(*args, blocks=blocks, components=(np.array([0, 1]), np.array([2])))
    np.testing.assert_allclose(split[1], full[1], rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_prox_matches_full_kkt_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    spec, blocks, A, b, c, w, z = random_prox_instance(rng)
    xo, _, so, info = solve_conic_qp(spec, A, b, c, w, z, tol=1e-12, centering=0.3)
    assert info["status"] == "optimal"
    res = solve_prox_qp(ProxQP.from_stacked(blocks, A, b, c, w, z), TIGHT)
    assert res.status is Status.OPTIMAL
    scale = max(1.0, np.linalg.norm(xo))
    assert np.linalg.norm(res.x - xo) <= 1e-6 * scale
    assert abs(res.objective - info["objective"]) <= 1e-6 * max(1.0, abs(info["objective"]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_prox_recovers_planted_solution(seed):
    rng = np.random.default_rng(seed)
    blocks, A, b, c, w, z, x_star = planted_prox_instance(rng)
    res = solve_prox_qp(ProxQP.from_stacked(blocks, A, b, c, w, z), TIGHT)
    assert res.status is Status.OPTIMAL
    assert np.linalg.norm(res.x - x_star) <= 1e-5 * max(1.0, np.linalg.norm(x_star))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_optimality_conditions_hold_post_hoc(seed):
    rng = np.random.default_rng(seed)
    _, blocks, A, b, c, w, z = random_prox_instance(rng)
    cfg = IPMConfig()
    qp = ProxQP.from_stacked(blocks, A, b, c, w, z)
    res = solve_prox_qp(qp, cfg)
    assert res.status is Status.OPTIMAL
    chk = optimality_residuals(qp, res)
    assert chk["primal"] <= 10 * cfg.feas_tol
    assert chk["dual"] <= 10 * cfg.feas_tol
    assert chk["cone_x"] >= -10 * cfg.feas_tol and chk["cone_s"] >= -10 * cfg.feas_tol
    assert chk["complementarity"] <= 10 * cfg.gap_tol * max(1.0, abs(res.objective))


def test_max_iter_status():
    rng = np.random.default_rng(1)
    _, blocks, A, b, c, w, z = random_prox_instance(rng)
    res = solve_prox_qp(ProxQP.from_stacked(blocks, A, b, c, w, z), IPMConfig(max_iter=1))
    if A.shape[0]:
        assert res.status is Status.MAX_ITER


def test_infeasible_problem_is_not_optimal():
    # x >= 0 with x1 + x2 = -1
    blk = ConeBlock(ConeKind.NONNEG, 2)
    qp = ProxQP((blk,), (np.ones((1, 2)),), [-1.0], np.zeros(2), [1.0], np.zeros(2))
    assert solve_prox_qp(qp, IPMConfig(max_iter=50)).status is not Status.OPTIMAL


def test_config_validation():
    with pytest.raises(ValueError):
        IPMConfig(step_fraction=1.0)
    with pytest.raises(ValueError):
        IPMConfig(gap_tol=0.0)
    with pytest.raises(ValueError):
        ProxQP((PSD2,), (np.zeros((0, 3)),), [], np.zeros(3), [-1.0], np.zeros(3))
    with pytest.raises(ValueError):
        ProxQP((PSD2,), (np.zeros((0, 3)),), [], np.zeros(2), [1.0], np.zeros(3))


def block_arrow_qps(l, seed=0, sigma=1.0):
    spec = BlockArrowSpec(l=l, d=3, w=2, s=2, seed=seed)
    lp, _ = gen_block_arrow(spec)
    cp = convert(lp, build_clique_tree(spec.cliques()), SINGLE)
    op = ProxOperator(cp)
    z = np.random.default_rng(seed).standard_normal(cp.ntilde)
    return spec, op.subproblems(z, sigma)


def test_block_arrow_subproblem_structure():
    spec, qps = block_arrow_qps(4)
    assert len(qps) == spec.l
    for qp in qps:
        assert qp.m == spec.s
        assert [(b.kind, b.size) for b in qp.blocks] == [(ConeKind.PSD, spec.d + spec.w)]


def test_separable_single_matches_direct():
    _, qps = block_arrow_qps(1)
    direct = solve_prox_qp(qps[0])
    (sep,) = solve_separable(qps)
    np.testing.assert_array_equal(sep.x, direct.x)
    np.testing.assert_array_equal(sep.y, direct.y)


def test_separable_concurrent_is_deterministic():
    _, qps = block_arrow_qps(5, seed=3)
    seq = solve_separable(qps)
    par = solve_separable(qps, threads=4)
    for a, b in zip(seq, par):
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.s, b.s)
        assert a.iterations == b.iterations


def test_separable_reports_subproblem_index(monkeypatch):
    import chordsplit.proxqp as proxqp
    _, qps = block_arrow_qps(3)
    real = proxqp.solve_prox_qp

    def flaky(qp, cfg=None):
        if qp is qps[1]:
            raise SingularH("forced")
        return real(qp, cfg)

    monkeypatch.setattr(proxqp, "solve_prox_qp", flaky)
    with pytest.raises(SubproblemError) as info:
        solve_separable(qps)
    assert info.value.index == 1


def test_rejects_non_finite_data():
    _, qps = block_arrow_qps(1)
    with pytest.raises(ValueError):
        ProxQP(qps[0].blocks, qps[0].A, qps[0].b, qps[0].c, qps[0].weights,
               np.full(len(qps[0].center), np.nan))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0, 1 / 0.99, 5.0]))
def test_capped_step_matches_eigenvalue_step(r, seed, cap):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.1, 3.0, r)
    G = rng.standard_normal((r, r))
    D = (G + G.T) * rng.uniform(0.05, 2.0)
    exact = _psd_step(lam, D)
    assert _psd_step(lam, D, cap) == pytest.approx(min(cap, exact), rel=1e-12)
    # the exact step sits on the boundary of the cone
    if np.isfinite(exact):
        assert abs(np.linalg.eigvalsh(np.diag(lam) + exact * D)[0]) <= 1e-9 * (1 + np.abs(D).max())
    x = rng.uniform(0.1, 2.0, r)
    dx = rng.standard_normal(r)
    neg = dx < 0
    ref = np.min(-x[neg] / dx[neg]) if neg.any() else np.inf
    assert _orthant_step(x, dx, cap) == pytest.approx(min(cap, ref))
