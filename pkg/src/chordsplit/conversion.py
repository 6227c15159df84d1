"""Clique-tree conversion of sparse conic LPs.

A conic LP over a partially separable cone is rewritten with one copy
``x_k = x[gamma_k]`` of the variables per clique.  The copies are tied
together by consistency edges along the clique tree, and the constraint
rows are distributed over the cliques so that ``sum_k A_k x[gamma_k] == A x``.

Nonnegative "tail" variables of the original problem (auxiliary variables,
e.g. for l1 objectives) are never replicated: each is owned by exactly one
clique and only enters that clique's subproblem.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .cones import ConeBlock, ConeKind, ConeProduct, gamma_from_clique
from .sparsity import CliqueTree, SparsityPattern

SINGLE = "single"
SEPARATOR = "separator"


class UnsupportedRow(ValueError):
    """A constraint row cannot be distributed over the cliques."""


@dataclass(frozen=True)
class ConicLP:
    """``minimize c'x  s.t.  A x = b,  x[:n] in C_V,  x[n:] >= 0``.

    ``x[:n]`` is the scaled vectorization of a matrix with sparsity
    ``pattern`` (so ``n == pattern.nnz``) and ``C_V`` is the cone of
    pattern-sparse matrices with a PSD completion.  The remaining ``ntail``
    entries are nonnegative auxiliary variables.
    """

    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    pattern: SparsityPattern
    ntail: int = 0

    def __post_init__(self):
        object.__setattr__(self, "A", sp.csr_matrix(self.A, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        cols = self.pattern.nnz + self.ntail
        if self.A.shape != (len(self.b), cols) or len(self.c) != cols:
            raise ValueError(f"inconsistent dimensions: A {self.A.shape}, b {len(self.b)}, "
                             f"c {len(self.c)}, expected {cols} columns")

    @property
    def n(self) -> int:
        return self.pattern.nnz

    @property
    def m(self) -> int:
        return len(self.b)


@dataclass(frozen=True)
class ConvertedProblem:
    """Converted problem with per-clique data.

    The stacked vector has the clique copies first (total length ``ntilde``,
    clique k at ``offsets[k]:offsets[k+1]``) followed by the tail variables
    in their original order.  Each clique stores only the constraint rows it
    touches: ``Ablocks[k]`` has shape ``(len(rows[k]), len(gamma[k]))`` and
    ``Aaux[k]`` holds the coefficients of its own tail variables ``aux[k]``.
    """

    n: int
    ntail: int
    b: np.ndarray
    gamma: tuple[np.ndarray, ...]
    parent: tuple[int | None, ...]
    cone: ConeProduct
    rows: tuple[np.ndarray, ...]
    Ablocks: tuple[np.ndarray, ...]
    cblocks: tuple[np.ndarray, ...]
    aux: tuple[np.ndarray, ...]
    Aaux: tuple[np.ndarray, ...]
    caux: tuple[np.ndarray, ...]
    consistency_edges: tuple[tuple[np.ndarray, np.ndarray], ...]
    multiplicity: np.ndarray
    tree: CliqueTree | None = None

    @property
    def size(self) -> int:
        return len(self.gamma)

    @property
    def m(self) -> int:
        return len(self.b)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(g) for g in self.gamma])]).astype(np.intp)

    @property
    def ntilde(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def stacked_index(self) -> np.ndarray:
        """Original vecV index of every consensus slot."""
        return np.concatenate(self.gamma) if self.gamma else np.zeros(0, dtype=np.intp)

    def block(self, xc: np.ndarray, k: int) -> np.ndarray:
        return xc[self.offsets[k]:self.offsets[k + 1]]

    def objective(self, xt: np.ndarray) -> float:
        xc, tail = xt[: self.ntilde], xt[self.ntilde:]
        val = sum(float(self.cblocks[k] @ self.block(xc, k)) for k in range(self.size))
        val += sum(float(self.caux[k] @ tail[self.aux[k]]) for k in range(self.size))
        return val

    def constraint_values(self, xt: np.ndarray) -> np.ndarray:
        xc, tail = xt[: self.ntilde], xt[self.ntilde:]
        out = np.zeros(self.m)
        for k in range(self.size):
            out[self.rows[k]] += self.Ablocks[k] @ self.block(xc, k)
            if len(self.aux[k]):
                out[self.rows[k]] += self.Aaux[k] @ tail[self.aux[k]]
        return out

    def consistency_violation(self, xc: np.ndarray) -> float:
        worst = 0.0
        for child, par in self.consistency_edges:
            if len(child):
                worst = max(worst, float(np.max(np.abs(xc[child] - xc[par]))))
        return worst

    @cached_property
    def subproblems(self) -> tuple[tuple[tuple[int, ...], np.ndarray], ...]:
        """Groups of cliques coupled through shared rows, with their rows.

        Each group can be handled by an independent prox subproblem.
        """
        up = list(range(self.size))

        def find(a):
            while up[a] != a:
                up[a] = up[up[a]]
                a = up[a]
            return a

        owner = np.full(self.m, -1, dtype=np.intp)
        for k in range(self.size):
            for i in self.rows[k]:
                if owner[i] < 0:
                    owner[i] = k
                else:
                    ra, rb = find(owner[i]), find(k)
                    if ra != rb:
                        up[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for k in range(self.size):
            groups.setdefault(find(k), []).append(k)
        out = []
        for members in groups.values():
            rows = np.unique(np.concatenate([self.rows[k] for k in members] + [np.zeros(0, np.intp)]))
            out.append((tuple(members), rows.astype(np.intp)))
        return tuple(out)


@dataclass(frozen=True)
class CorrelativeReport:
    """Pattern of ``sum_k A_k G_k A_k'`` and, when it exists, the partition of
    the rows into per-clique sets."""

    pattern: np.ndarray
    block_partition: tuple[np.ndarray, ...] | None


def _csr_rows(A: sp.csr_matrix):
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        yield i, A.indices[lo:hi], A.data[lo:hi]


def convert_sets(A, b, c, gammas: Sequence[Sequence[int]], parent: Sequence[int | None],
                 blocks: Sequence[ConeBlock], ntail: int = 0, strategy: str = SINGLE,
                 tree: CliqueTree | None = None) -> ConvertedProblem:
    """Convert a conic LP over a partially separable cone given its index sets.

    ``gammas[k]`` lists (in block order) the variables of cone block k and
    ``parent`` defines a spanning tree with the running intersection property.
    Columns ``n..n+ntail`` of ``A`` are tail variables.
    """
    if strategy not in (SINGLE, SEPARATOR):
        raise ValueError(f"unknown strategy {strategy!r}")
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.eliminate_zeros()
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    gammas = tuple(np.asarray(g, dtype=np.intp) for g in gammas)
    l = len(gammas)
    n = A.shape[1] - ntail
    pos = [{int(a): t for t, a in enumerate(g)} for g in gammas]
    holders: list[list[int]] = [[] for _ in range(n)]
    for k, g in enumerate(gammas):
        for a in g:
            holders[a].append(k)
    multiplicity = np.array([len(h) for h in holders], dtype=np.intp)
    if np.any(multiplicity == 0):
        missing = int(np.flatnonzero(multiplicity == 0)[0])
        raise UnsupportedRow(f"variable {missing} is not covered by any clique")

    # owner[a]: the clique with a in gamma_k minus alpha_k
    owner = np.full(n, -1, dtype=np.intp)
    for k, g in enumerate(gammas):
        pa = parent[k]
        for a in g:
            if pa is None or int(a) not in pos[pa]:
                owner[a] = k

    offsets = np.concatenate([[0], np.cumsum([len(g) for g in gammas])]).astype(np.intp)
    entries: list[dict[int, list[tuple[int, float]]]] = [dict() for _ in range(l)]
    row_cliques: list[set[int]] = []
    tail_rows: dict[int, list[int]] = {}
    for i, idx, val in _csr_rows(A):
        psd = idx < n
        pidx, pval = idx[psd], val[psd]
        for t in idx[~psd]:
            tail_rows.setdefault(int(t) - n, []).append(i)
        if len(idx) == 0:
            raise UnsupportedRow(f"constraint row {i} is empty")
        touched: set[int] = set()
        if len(pidx):
            target = None
            if strategy == SINGLE:
                common = set(holders[pidx[0]])
                for a in pidx[1:]:
                    common.intersection_update(holders[a])
                    if not common:
                        break
                if common:
                    target = min(common, key=lambda k: (len(gammas[k]), k))
            if target is not None:
                entries[target].setdefault(i, []).extend(
                    (pos[target][int(a)], v) for a, v in zip(pidx, pval))
                touched.add(target)
            else:
                for a, v in zip(pidx, pval):
                    k = int(owner[a])
                    entries[k].setdefault(i, []).append((pos[k][int(a)], v))
                    touched.add(k)
        row_cliques.append(touched)

    aux_lists: list[list[int]] = [[] for _ in range(l)]
    tail_owner = np.full(ntail, -1, dtype=np.intp)
    for t in range(ntail):
        cands = set().union(*(row_cliques[i] for i in tail_rows.get(t, [])))
        k = min(cands) if cands else 0
        tail_owner[t] = k
        aux_lists[k].append(t)
        for i in tail_rows.get(t, []):
            entries[k].setdefault(i, [])

    rows, Ablocks, Aaux, cblocks, caux, aux = [], [], [], [], [], []
    Atail = A[:, n:].tocsc() if ntail else None
    for k in range(l):
        rk = np.array(sorted(entries[k]), dtype=np.intp)
        Ak = np.zeros((len(rk), len(gammas[k])))
        for r, i in enumerate(rk):
            for t, v in entries[k][i]:
                Ak[r, t] += v
        ak = np.array(aux_lists[k], dtype=np.intp)
        if ntail and len(ak):
            Ax = Atail[:, ak].toarray()[rk]
        else:
            Ax = np.zeros((len(rk), len(ak)))
        rows.append(rk)
        Ablocks.append(Ak)
        Aaux.append(Ax)
        aux.append(ak)
        caux.append(c[n + ak] if len(ak) else np.zeros(0))
        # objective split: same rule as separator subtraction
        ck = np.zeros(len(gammas[k]))
        mine = owner[gammas[k]] == k
        ck[mine] = c[gammas[k][mine]]
        cblocks.append(ck)

    edges = []
    for j in range(l):
        pa = parent[j]
        if pa is None:
            edges.append((np.zeros(0, np.intp), np.zeros(0, np.intp)))
            continue
        child, par = [], []
        for t, a in enumerate(gammas[j]):
            s = pos[pa].get(int(a))
            if s is not None:
                child.append(offsets[j] + t)
                par.append(offsets[pa] + s)
        edges.append((np.array(child, np.intp), np.array(par, np.intp)))

    return ConvertedProblem(
        n=n, ntail=ntail, b=b, gamma=gammas, parent=tuple(parent),
        cone=ConeProduct(tuple(blocks)), rows=tuple(rows), Ablocks=tuple(Ablocks),
        cblocks=tuple(cblocks), aux=tuple(aux), Aaux=tuple(Aaux), caux=tuple(caux),
        consistency_edges=tuple(edges), multiplicity=multiplicity, tree=tree,
    )


def convert(lp: ConicLP, tree: CliqueTree, strategy: str = SINGLE) -> ConvertedProblem:
    """Clique-tree conversion of a sparse SDP in completable-cone form.

    ``strategy="single"`` assigns each constraint whose coefficient matrix fits
    in one clique to the smallest such clique (lowest index on ties); other
    rows fall back to ``"separator"``, which gives clique k the entries of the
    coefficient matrix in ``beta_k x beta_k`` minus its parent separator block.
    """
    if tree.order != lp.pattern.order:
        raise ValueError("clique tree and pattern have different orders")
    gammas = [gamma_from_clique(lp.pattern, beta) for beta in tree.cliques]
    blocks = [ConeBlock(ConeKind.PSD, len(beta)) for beta in tree.cliques]
    return convert_sets(lp.A, lp.b, lp.c, gammas, tree.parent, blocks, lp.ntail,
                        strategy, tree=tree)


def correlative_pattern(cp: ConvertedProblem) -> CorrelativeReport:
    pattern = np.zeros((cp.m, cp.m), dtype=bool)
    np.fill_diagonal(pattern, True)
    count = np.zeros(cp.m, dtype=np.intp)
    for k in range(cp.size):
        active = cp.rows[k][(np.any(cp.Ablocks[k] != 0, axis=1)
                             | np.any(cp.Aaux[k] != 0, axis=1))]
        pattern[np.ix_(active, active)] = True
        count[active] += 1
    partition = None
    if np.all(count == 1):
        partition = tuple(cp.rows[k] for k in range(cp.size))
    return CorrelativeReport(pattern, partition)


def expand(cp: ConvertedProblem, x: np.ndarray) -> np.ndarray:
    """Replicate ``x`` into clique copies; tail variables are appended."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x[cp.stacked_index], x[cp.n:]])


def average(cp: ConvertedProblem, xc: np.ndarray) -> np.ndarray:
    """Average the clique copies of each variable (consensus part only)."""
    # averaging deviations from one copy keeps consistent inputs exact
    ref = np.zeros(cp.n)
    ref[cp.stacked_index[::-1]] = xc[::-1]
    dev = np.bincount(cp.stacked_index, weights=xc - ref[cp.stacked_index], minlength=cp.n)
    return ref + dev / cp.multiplicity


def restrict(cp: ConvertedProblem, xt: np.ndarray) -> np.ndarray:
    """Recover an original-space vector by averaging replicated entries."""
    xt = np.asarray(xt, dtype=float)
    return np.concatenate([average(cp, xt[: cp.ntilde]), xt[cp.ntilde:]])


def dense_blocks(cp: ConvertedProblem) -> sp.csr_matrix:
    """The full converted constraint matrix ``[A_1 ... A_l | A_tail]``."""
    M = sp.lil_matrix((cp.m, cp.ntilde + cp.ntail))
    for k in range(cp.size):
        off = cp.offsets[k]
        for r, i in enumerate(cp.rows[k]):
            M[i, off:off + len(cp.gamma[k])] = cp.Ablocks[k][r]
            if len(cp.aux[k]):
                M[i, cp.ntilde + cp.aux[k]] = cp.Aaux[k][r]
    return M.tocsr()


def extend_pattern(lp: ConicLP, pattern: SparsityPattern) -> ConicLP:
    """Re-express ``lp`` on a larger pattern (for example a chordal embedding).

    New entries get zero cost and zero constraint coefficients.
    """
    if not lp.pattern.issubset(pattern):
        raise ValueError("the new pattern must contain the old one")
    cols = np.array([pattern.index(i, j) for i, j in lp.pattern.entries], dtype=np.intp)
    cols = np.concatenate([cols, pattern.nnz + np.arange(lp.ntail)])
    n = pattern.nnz + lp.ntail
    P = sp.csr_matrix((np.ones(len(cols)), (np.arange(len(cols)), cols)), shape=(lp.n + lp.ntail, n))
    c = np.zeros(n)
    c[cols] = lp.c
    return ConicLP(lp.A @ P, lp.b.copy(), c, pattern, lp.ntail)
