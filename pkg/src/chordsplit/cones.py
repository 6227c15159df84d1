"""Vectorization of symmetric matrices and the chordal decomposition theorems.

Vectorizations stack the lower triangle column by column and scale
off-diagonal entries by sqrt(2), so that ``tr(XY) == svec(X) @ svec(Y)``.
This order is part of the on-disk contract: index sets of cliques and all
converted problem data depend on it.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Sequence

import numpy as np

from .sparsity import CliqueTree, SparsityPattern

SQRT2 = np.sqrt(2.0)


class BadLength(ValueError):
    """Vector length is not a triangular number."""


class CliqueNotInPattern(ValueError):
    """A clique's dense square is not contained in the pattern."""


class NotPSD(ValueError):
    """Matrix is not positive semidefinite within tolerance."""


class ConeKind(str, Enum):
    PSD = "psd"
    NONNEG = "nonneg"


@dataclass(frozen=True)
class ConeBlock:
    """A PSD block of matrix order ``size`` or a nonnegative orthant of length ``size``."""

    kind: ConeKind
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("cone block size must be at least 1")

    @property
    def dim(self) -> int:
        """Length of the block in a stacked vector."""
        if self.kind is ConeKind.PSD:
            return self.size * (self.size + 1) // 2
        return self.size

    @property
    def degree(self) -> int:
        return self.size


@dataclass(frozen=True)
class ConeProduct:
    blocks: tuple[ConeBlock, ...]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([b.dim for b in self.blocks])]).astype(np.intp)

    @property
    def dim(self) -> int:
        return int(sum(b.dim for b in self.blocks))

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        off = self.offsets
        return [x[off[k]:off[k + 1]] for k in range(len(self.blocks))]


def tri_dim(r: int) -> int:
    return r * (r + 1) // 2


def tri_order(n: int) -> int:
    r = int(round((np.sqrt(8 * n + 1) - 1) / 2))
    if tri_dim(r) != n:
        raise BadLength(f"length {n} is not a triangular number")
    return r


@lru_cache(maxsize=256)
def svec_indices(r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row indices, column indices and scale factors of the svec layout."""
    rows, cols = [], []
    for j in range(r):
        for i in range(j, r):
            rows.append(i)
            cols.append(j)
    rows = np.array(rows, dtype=np.intp)
    cols = np.array(cols, dtype=np.intp)
    scale = np.where(rows == cols, 1.0, SQRT2)
    for a in (rows, cols, scale):
        a.setflags(write=False)
    return rows, cols, scale


@lru_cache(maxsize=256)
def smat_indices(r: int) -> tuple[np.ndarray, np.ndarray]:
    """Index matrix into an svec vector and the matching inverse scale."""
    rows, cols, _ = svec_indices(r)
    idx = np.empty((r, r), dtype=np.intp)
    idx[rows, cols] = np.arange(len(rows))
    idx[cols, rows] = np.arange(len(rows))
    inv = np.full((r, r), 1.0 / SQRT2)
    np.fill_diagonal(inv, 1.0)
    idx.setflags(write=False)
    inv.setflags(write=False)
    return idx, inv


def svec(X: np.ndarray) -> np.ndarray:
    """Packed scaled lower triangle; accepts a stack of matrices too."""
    X = np.asarray(X, dtype=float)
    rows, cols, scale = svec_indices(X.shape[-1])
    return X[..., rows, cols] * scale


def smat(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    idx, inv = smat_indices(tri_order(x.shape[-1]))
    # fancy indexing leaves stacks batch-innermost; matmul needs C order for BLAS
    return np.ascontiguousarray(x[..., idx] * inv)


@dataclass(frozen=True)
class SparseSymMatrix:
    """Symmetric matrix with sparsity pattern; ``values`` are the plain
    (unscaled) lower-triangular entries in pattern order."""

    pattern: SparsityPattern
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.pattern.nnz:
            raise ValueError("values do not match the pattern")

    @classmethod
    def from_dense(cls, pattern: SparsityPattern, X: np.ndarray) -> "SparseSymMatrix":
        X = np.asarray(X, dtype=float)
        return cls(pattern, X[pattern.rows, pattern.cols].copy())

    @classmethod
    def from_vec(cls, pattern: SparsityPattern, x: np.ndarray) -> "SparseSymMatrix":
        return cls(pattern, np.asarray(x, dtype=float) / _vec_scale(pattern))

    def todense(self) -> np.ndarray:
        p = self.pattern.order
        X = np.zeros((p, p))
        X[self.pattern.rows, self.pattern.cols] = self.values
        X[self.pattern.cols, self.pattern.rows] = self.values
        return X

    def submatrix(self, beta: Sequence[int]) -> np.ndarray:
        beta = list(beta)
        idx = [[self.pattern.index(a, b) for b in beta] for a in beta]
        return self.values[np.array(idx, dtype=np.intp)]


def _vec_scale(pattern: SparsityPattern) -> np.ndarray:
    return np.where(pattern.rows == pattern.cols, 1.0, SQRT2)


def vecV(X) -> np.ndarray:
    """Scaled vectorization of a pattern-sparse symmetric matrix."""
    return X.values * _vec_scale(X.pattern)


def vecV_dense(pattern: SparsityPattern, X: np.ndarray) -> np.ndarray:
    return vecV(SparseSymMatrix.from_dense(pattern, X))


def gamma_from_clique(pattern: SparsityPattern, beta: Sequence[int]) -> np.ndarray:
    """Positions in ``vecV`` of the entries of the dense block ``beta x beta``,
    listed in svec order of that block."""
    beta = sorted(int(v) for v in beta)
    rows, cols, _ = svec_indices(len(beta))
    try:
        return np.array([pattern.position[(beta[i], beta[j])] for i, j in zip(rows, cols)],
                        dtype=np.intp)
    except KeyError as exc:
        raise CliqueNotInPattern(f"clique {beta} is not dense in the pattern") from exc


def completable_member(X: SparseSymMatrix, tree: CliqueTree, tol: float | None = None) -> bool:
    """Membership in the PSD-completable cone: every clique block is PSD.

    The default tolerance per clique is ``1e-8 * ||X_bb||_F``.
    """
    for beta in tree.cliques:
        B = X.submatrix(beta)
        t = 1e-8 * np.linalg.norm(B) if tol is None else tol
        if np.linalg.eigvalsh(B)[0] < -t:
            return False
    return True


def psd_decompose(S: SparseSymMatrix, tree: CliqueTree, tol: float | None = None
                  ) -> list[np.ndarray]:
    """Split a PSD matrix with chordal pattern into PSD clique blocks.

    A zero-fill LDL' factorization in the elimination order given by the
    residual sets along the tree postorder assigns the outer product of
    column j to the clique whose residual set contains j.  Within a residual
    set the largest remaining diagonal is eliminated first.  Pivots within
    ``tol`` of zero (default ``1e-10 * max diagonal``) give a zero column.

    Rank-deficient input that is PSD only up to rounding (for instance a
    float sum of rank-one clique terms) can have its rounding amplified by
    several orders of magnitude along the tree and then raise NotPSD.
    """
    A = S.todense()
    p = A.shape[0]
    if tol is None:
        tol = 1e-10 * float(np.max(np.abs(np.diag(A)))) if p else 0.0
    out: list[np.ndarray] = [np.zeros((0, 0))] * tree.size
    for k in tree.postorder:
        idx = np.array(tree.cliques[k], dtype=np.intp)
        Sk = np.zeros((len(idx), len(idx)))
        rest = list(tree.residuals[k])
        while rest:
            # largest pivot first: unpivoted LDL' amplifies rounding on semidefinite input
            j = max(rest, key=lambda v: A[v, v])
            rest.remove(j)
            d = A[j, j]
            if d < -tol:
                raise NotPSD(f"negative pivot {d:.3e} at vertex {j}")
            if d > tol:
                # later neighbours of j all lie in this clique, so no fill
                col = A[idx, j] / np.sqrt(d)
                outer = np.outer(col, col)
                A[np.ix_(idx, idx)] -= outer
                Sk += outer
            A[j, :] = 0.0
            A[:, j] = 0.0
        out[k] = Sk
    return out


def clique_sum(tree: CliqueTree, blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Dense sum of clique blocks copied into their principal positions."""
    S = np.zeros((tree.order, tree.order))
    for beta, B in zip(tree.cliques, blocks):
        idx = np.array(beta, dtype=np.intp)
        S[np.ix_(idx, idx)] += B
    return S


def project_psd(X: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh(X)
    return (Q * np.maximum(w, 0.0)) @ Q.T
