"""Test problem generators.

Block-arrow SDPs: ``l`` diagonal blocks of order ``d`` plus a dense border
of width ``w``; every constraint lives on one clique, so the converted
problem separates into ``l`` prox subproblems.

Euclidean distance matrix fitting: sensors in the unit cube with
nearest-neighbour distance measurements, fitted in the l1 norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .cones import SparseSymMatrix, vecV, vecV_dense
from .conversion import ConicLP
from .sparsity import CliqueTree, SparsityPattern, chordal_embed, clique_tree, merge_cliques


class EdgeNotCovered(ValueError):
    """A measured pair is missing from the chordal embedding."""


@dataclass(frozen=True)
class BlockArrowSpec:
    l: int
    d: int
    w: int
    s: int
    seed: int = 0

    def __post_init__(self):
        if min(self.l, self.d, self.w, self.s) < 1:
            raise ValueError("block-arrow dimensions must be positive")

    @property
    def order(self) -> int:
        return self.l * self.d + self.w

    @property
    def m(self) -> int:
        return self.l * self.s

    def cliques(self) -> list[list[int]]:
        border = list(range(self.l * self.d, self.order))
        return [list(range(k * self.d, (k + 1) * self.d)) + border for k in range(self.l)]


@dataclass(frozen=True)
class PlantedPoint:
    """Primal point X, dual multipliers y and dual slack S = sum of clique blocks."""

    X: SparseSymMatrix
    y: np.ndarray
    S: SparseSymMatrix
    S_blocks: tuple[np.ndarray, ...]


def _sym_gaussian(rng, r):
    G = rng.standard_normal((r, r))
    return np.tril(G) + np.tril(G, -1).T


def gen_block_arrow(spec: BlockArrowSpec, optimal: bool = False, rank: int = 1
                    ) -> tuple[ConicLP, PlantedPoint]:
    """Random block-arrow SDP with a planted primal-dual pair.

    By default X and every clique block of S are strictly positive definite.
    With ``optimal=True`` X is the pattern projection of ``G G'`` for a
    ``p x rank`` matrix G and each clique block of S is supported on the null
    space of the matching rows of G, so ``tr(S X) = 0`` and the planted pair
    is optimal with value ``b'y``.
    """
    rng = np.random.default_rng(spec.seed)
    cliques = spec.cliques()
    pattern = SparsityPattern.from_cliques(spec.order, cliques)
    p = spec.order
    r = spec.d + spec.w

    F_list = []
    for beta in cliques:
        idx = np.array(beta)
        for _ in range(spec.s):
            F = np.zeros((p, p))
            F[np.ix_(idx, idx)] = _sym_gaussian(rng, r)
            F_list.append(F)
    A = sp.csr_matrix(np.array([vecV_dense(pattern, F) for F in F_list]))

    if optimal:
        if rank >= r:
            raise ValueError("rank must be smaller than the clique order")
        G = rng.standard_normal((p, rank))
        Xd = G @ G.T
        S_blocks = []
        for beta in cliques:
            Gb = G[beta]
            U, _, _ = np.linalg.svd(Gb, full_matrices=True)
            N = U[:, rank:]
            M = rng.standard_normal((N.shape[1], N.shape[1]))
            S_blocks.append(N @ (M @ M.T + 0.1 * np.eye(N.shape[1])) @ N.T)
    else:
        W = SparseSymMatrix(pattern, rng.standard_normal(pattern.nnz)).todense()
        lam = min(np.linalg.eigvalsh(W[np.ix_(b, b)])[0] for b in cliques)
        alpha = 1.1 * max(0.0, -lam) + 0.1
        Xd = W + alpha * np.eye(p)
        S_blocks = []
        for _ in cliques:
            Wk = _sym_gaussian(rng, r)
            ak = 1.1 * max(0.0, -np.linalg.eigvalsh(Wk)[0]) + 0.1
            S_blocks.append(Wk + ak * np.eye(r))

    y = rng.standard_normal(spec.m)
    Sd = np.zeros((p, p))
    for beta, Sk in zip(cliques, S_blocks):
        Sd[np.ix_(beta, beta)] += Sk
    X = SparseSymMatrix.from_dense(pattern, Xd)
    S = SparseSymMatrix.from_dense(pattern, Sd)
    b = A @ vecV(X)
    c = vecV(S) + A.T @ y
    lp = ConicLP(A, b, c, pattern)
    return lp, PlantedPoint(X, y, S, tuple(S_blocks))


@dataclass(frozen=True)
class EDMInstance:
    """Sensor network; the last node is the reference point of the Gram matrix.

    ``edges`` are 0-based pairs ``i < j`` over all ``order + 1`` nodes, and
    ``pattern``/``tree`` describe the chordal embedding on the first
    ``order`` nodes.
    """

    positions: np.ndarray | None
    edges: np.ndarray
    measurements: np.ndarray
    pattern: SparsityPattern
    tree: CliqueTree

    @property
    def order(self) -> int:
        return self.pattern.order

    def gram(self) -> np.ndarray:
        """Gram matrix of the positions relative to the reference node."""
        P = self.positions[:-1] - self.positions[-1]
        return P @ P.T


def knn_edges(points: np.ndarray, k: int) -> np.ndarray:
    """Pairs i < j with i among the k nearest of j or j among the k nearest of i."""
    n = len(points)
    if not 0 < k < n:
        raise ValueError("need 0 < kNN < number of nodes")
    _, nbr = cKDTree(points).query(points, k=k + 1)
    pairs = set()
    for i in range(n):
        for j in nbr[i]:
            j = int(j)
            if j != i:
                pairs.add((min(i, j), max(i, j)))
    return np.array(sorted(pairs), dtype=np.intp).reshape(-1, 2)


def embed_pattern(order: int, pairs, t_fill: int = 5, t_size: int = 5,
                  heuristic: str = "mindegree") -> tuple[SparsityPattern, CliqueTree]:
    """Chordal embedding of a pattern followed by greedy clique merging."""
    base = SparsityPattern.from_pairs(order, pairs)
    filled, peo = chordal_embed(base, heuristic)
    tree = clique_tree(filled, peo)
    if t_fill or t_size:
        tree = merge_cliques(tree, t_fill, t_size)
    return tree.pattern(), tree


def gen_sensor_network(n_nodes: int, dim: int = 2, knn: int = 5, seed: int = 0,
                       noise: float = 0.0, t_fill: int = 5, t_size: int = 5) -> EDMInstance:
    """Random sensor network in the unit cube of dimension ``dim``.

    Measurements are exact squared distances unless ``noise > 0``, in which
    case Gaussian noise of that standard deviation is added.
    """
    rng = np.random.default_rng(seed)
    P = rng.random((n_nodes, dim))
    edges = knn_edges(P, knn)
    D = np.sum((P[edges[:, 0]] - P[edges[:, 1]]) ** 2, axis=1)
    if noise > 0:
        D = D + noise * rng.standard_normal(len(D))
    p = n_nodes - 1
    inner = [(i, j) for i, j in edges if j < p]
    pattern, tree = embed_pattern(p, inner, t_fill, t_size)
    return EDMInstance(P, edges, D, pattern, tree)


def edm_row(pattern: SparsityPattern, i: int, j: int) -> dict[int, float]:
    """Scaled vecV coefficients of (e_i - e_j)(e_i - e_j)', or e_i e_i' if j == order."""
    p = pattern.order
    if j == p:
        return {pattern.index(i, i): 1.0}
    if (j, i) not in pattern:
        raise EdgeNotCovered(f"pair ({i + 1}, {j + 1}) is not in the embedding")
    return {pattern.index(i, i): 1.0, pattern.index(j, j): 1.0,
            pattern.index(j, i): -np.sqrt(2.0)}


def build_edm_problem(inst: EDMInstance) -> ConicLP:
    """l1 fit ``minimize sum |tr(F_ij X) - D_ij|`` over the completable cone.

    The absolute values are split with two nonnegative tail variables per
    measurement: ``tr(F_ij X) - u+ + u- = D_ij``.
    """
    pattern = inst.pattern
    n = pattern.nnz
    E = len(inst.edges)
    rows, cols, vals = [], [], []
    for r, (i, j) in enumerate(inst.edges):
        for col, v in edm_row(pattern, int(i), int(j)).items():
            rows.append(r)
            cols.append(col)
            vals.append(v)
        rows += [r, r]
        cols += [n + r, n + E + r]
        vals += [-1.0, 1.0]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(E, n + 2 * E))
    c = np.concatenate([np.zeros(n), np.ones(2 * E)])
    return ConicLP(A, inst.measurements.copy(), c, pattern, ntail=2 * E)


@dataclass(frozen=True)
class FitReport:
    errors: np.ndarray
    total: float
    relative: float


def evaluate_fit(inst: EDMInstance, X) -> FitReport:
    """Absolute misfit ``|tr(F_ij X) - D_ij|`` per measured pair."""
    Xd = X.todense() if isinstance(X, SparseSymMatrix) else np.asarray(X, dtype=float)
    p = inst.order
    err = np.empty(len(inst.edges))
    for r, (i, j) in enumerate(inst.edges):
        val = Xd[i, i] if j == p else Xd[i, i] + Xd[j, j] - 2 * Xd[i, j]
        err[r] = abs(val - inst.measurements[r])
    total = float(err.sum())
    ref = float(np.sum(np.abs(inst.measurements)))
    return FitReport(err, total, total / ref if ref > 0 else total)


def random_chordal_cliques(rng: np.random.Generator, p: int, max_size: int = 6) -> list[list[int]]:
    """Cliques of a random chordal graph built by adding vertices onto existing cliques."""
    cliques = [[0]]
    for v in range(1, p):
        base = cliques[rng.integers(len(cliques))]
        keep = [u for u in base if rng.random() < 0.7][: max_size - 1]
        cliques.append(sorted(keep + [v]))
    maximal = []
    sets = [set(c) for c in cliques]
    for i, c in enumerate(sets):
        if not any(c < o or (c == o and j < i) for j, o in enumerate(sets) if j != i):
            maximal.append(sorted(c))
    return maximal
