"""File formats: coordinate patterns, SDPA sparse, clique-tree and EDM JSON.

All files use 1-based indices.  Floats are written with ``repr`` so a
read/write cycle reproduces every value bit for bit.

SDPA sparse files describe ``max tr(F0 Y) s.t. tr(F_i Y) = c_i, Y >= 0``.
Our problem ``min tr(C X) s.t. tr(F_i X) = b_i`` is that form with
``Y = X``, ``c = b`` and ``F0 = -C``.  At most one PSD block is accepted; a
diagonal block (negative size) holds nonnegative tail variables.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .conversion import ConicLP
from .sparsity import CliqueTree, SparsityPattern

SQRT2 = np.sqrt(2.0)
_SEP = re.compile(r"[,{}()\s]+")


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based (0 when unknown)."""

    def __init__(self, path, line: int, msg: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {msg}")


def _lines(path):
    with open(path) as fh:
        for no, raw in enumerate(fh, 1):
            yield no, raw


# coordinate patterns

def read_pattern(path) -> SparsityPattern:
    """Read ``i j`` pairs, one per line.

    An optional first data line holding a single integer gives the order;
    otherwise the order is the largest index seen.  ``#`` starts a comment.
    """
    order = None
    pairs = []
    first = True
    for no, raw in _lines(path):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        tok = text.split()
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise ParseError(path, no, f"expected integers, got {text!r}") from None
        if first and len(vals) == 1:
            order = vals[0]
            if order < 1:
                raise ParseError(path, no, "order must be positive")
        elif len(vals) == 2:
            if min(vals) < 1 or (order is not None and max(vals) > order):
                raise ParseError(path, no, f"index out of range in {text!r}")
            pairs.append((vals[0] - 1, vals[1] - 1))
        else:
            raise ParseError(path, no, f"expected 'i j', got {text!r}")
        first = False
    if order is None:
        if not pairs:
            raise ParseError(path, 0, "empty pattern file")
        order = max(max(p) for p in pairs) + 1
    return SparsityPattern.from_pairs(order, pairs)


def write_pattern(path, pattern: SparsityPattern) -> None:
    with open(path, "w") as fh:
        fh.write(f"{pattern.order}\n")
        for i, j in pattern.entries:
            fh.write(f"{i + 1} {j + 1}\n")


# SDPA sparse

@dataclass
class SDPAData:
    """Raw SDPA sparse content.

    ``entries`` rows are ``(matrix, block, i, j)`` with 1-based block and
    0-based ``i <= j``; ``values`` holds the matching plain matrix entries.
    """

    m: int
    blocks: tuple[int, ...]
    c: np.ndarray
    entries: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        psd = [b for b in self.blocks if b > 0]
        diag = [b for b in self.blocks if b < 0]
        if len(psd) > 1 or len(diag) > 1 or 0 in self.blocks:
            raise ValueError("supported block structure: one PSD block and at most one diagonal block")

    @property
    def order(self) -> int:
        return next((b for b in self.blocks if b > 0), 0)

    @property
    def ntail(self) -> int:
        return next((-b for b in self.blocks if b < 0), 0)

    def _block_no(self, psd: bool) -> int:
        for k, b in enumerate(self.blocks, 1):
            if (b > 0) == psd:
                return k
        return -1

    def pattern(self) -> SparsityPattern:
        """Aggregate pattern of all PSD-block entries."""
        sel = self.entries[:, 1] == self._block_no(True)
        return SparsityPattern.from_pairs(self.order, self.entries[sel][:, 2:4])

    def to_lp(self) -> ConicLP:
        pattern = self.pattern()
        n = pattern.nnz
        psd_no, diag_no = self._block_no(True), self._block_no(False)
        A_rows, A_cols, A_vals = [], [], []
        C = np.zeros(n + self.ntail)
        for (mat, blk, i, j), val in zip(self.entries, self.values):
            if blk == psd_no:
                col = pattern.index(i, j)
                coef = val if i == j else SQRT2 * val
            elif blk == diag_no:
                col = n + i
                coef = val
            else:
                raise ValueError(f"unknown block {blk}")
            if mat == 0:
                C[col] -= coef
            else:
                A_rows.append(mat - 1)
                A_cols.append(col)
                A_vals.append(coef)
        A = sp.csr_matrix((A_vals, (A_rows, A_cols)), shape=(self.m, n + self.ntail))
        return ConicLP(A, self.c.copy(), C, pattern, ntail=self.ntail)

    @classmethod
    def from_lp(cls, lp: ConicLP) -> "SDPAData":
        pattern = lp.pattern
        n = pattern.nnz
        blocks = (pattern.order,) + ((-lp.ntail,) if lp.ntail else ())
        scale = np.concatenate([np.where(pattern.rows == pattern.cols, 1.0, SQRT2),
                                np.ones(lp.ntail)])

        def where(col):
            if col < n:
                i, j = pattern.entries[col]
                return 1, j, i
            return 2, col - n, col - n

        entries, values = [], []
        # F0 lists every pattern entry, zeros included, so V survives the round trip
        c0 = -np.asarray(lp.c, dtype=float) / scale
        for col in range(n + lp.ntail):
            if col < n or c0[col] != 0.0:
                entries.append((0, *where(col)))
                values.append(c0[col] + 0.0)
        A = sp.csr_matrix(lp.A)
        A.sort_indices()
        for r in range(A.shape[0]):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            for col, v in zip(A.indices[lo:hi], A.data[lo:hi]):
                if v != 0.0:
                    entries.append((r + 1, *where(col)))
                    values.append(v / scale[col])
        ent = np.array(entries, dtype=np.intp).reshape(-1, 4)
        return cls(lp.m, blocks, np.asarray(lp.b, dtype=float).copy(), ent, np.array(values))


def read_sdpa(path) -> SDPAData:
    """Parse an SDPA sparse (.dat-s) file."""
    header: list[tuple[int, str]] = []
    stage = 0  # 0 m, 1 nblocks, 2 block sizes, 3 c vector, 4 entries
    m = nblocks = 0
    sizes: list[int] = []
    cvec: list[float] = []
    entries, values = [], []
    seen = set()
    for no, raw in _lines(path):
        text = raw.strip()
        if not text or (stage == 0 and text[0] in '"*'):
            continue
        if stage < 4:
            toks = [t for t in _SEP.split(text) if t]
            for t in toks:
                try:
                    if stage == 0:
                        m = int(t)
                        if m < 0:
                            raise ValueError
                        stage = 1
                        break  # rest of the line is a comment
                    elif stage == 1:
                        nblocks = int(t)
                        if nblocks < 1:
                            raise ValueError
                        stage = 2
                        break
                    elif stage == 2:
                        sizes.append(int(float(t)))
                        if len(sizes) == nblocks:
                            stage = 3 if m else 4
                    elif stage == 3:
                        cvec.append(float(t))
                        if len(cvec) == m:
                            stage = 4
                            break
                    else:
                        break
                except ValueError:
                    raise ParseError(path, no, f"bad header token {t!r}") from None
            if stage == 2 and len(sizes) == nblocks:
                stage = 3 if m else 4
            header.append((no, text))
            continue
        toks = text.split()
        if len(toks) != 5:
            raise ParseError(path, no, f"expected 'matno blkno i j value', got {text!r}")
        try:
            mat, blk, i, j = (int(t) for t in toks[:4])
            val = float(toks[4])
        except ValueError:
            raise ParseError(path, no, f"bad entry {text!r}") from None
        if not 0 <= mat <= m:
            raise ParseError(path, no, f"matrix number {mat} out of range 0..{m}")
        if not 1 <= blk <= nblocks:
            raise ParseError(path, no, f"block number {blk} out of range 1..{nblocks}")
        size = abs(sizes[blk - 1])
        if not (1 <= i <= size and 1 <= j <= size):
            raise ParseError(path, no, f"index ({i}, {j}) out of range for block of size {size}")
        if sizes[blk - 1] < 0 and i != j:
            raise ParseError(path, no, "off-diagonal entry in a diagonal block")
        i, j = min(i, j) - 1, max(i, j) - 1
        key = (mat, blk, i, j)
        if key in seen:
            raise ParseError(path, no, f"duplicate entry {text!r}")
        seen.add(key)
        entries.append(key)
        values.append(val)
    if stage < 4:
        raise ParseError(path, 0, "incomplete header")
    try:
        return SDPAData(m, tuple(sizes), np.array(cvec), np.array(entries, dtype=np.intp).reshape(-1, 4),
                        np.array(values, dtype=float))
    except ValueError as exc:
        raise ParseError(path, header[0][0] if header else 0, str(exc)) from None


def write_sdpa(path, data: SDPAData | ConicLP, comment: str | None = None) -> None:
    if isinstance(data, ConicLP):
        data = SDPAData.from_lp(data)
    with open(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f'"{line}\n')
        fh.write(f"{data.m} = mdim\n{len(data.blocks)} = nblocks\n")
        fh.write(" ".join(str(b) for b in data.blocks) + "\n")
        fh.write(" ".join(repr(float(v)) for v in data.c) + "\n")
        for (mat, blk, i, j), v in zip(data.entries, data.values):
            fh.write(f"{mat} {blk} {i + 1} {j + 1} {float(v)!r}\n")


# JSON documents

def write_tree(path, tree: CliqueTree, stats: dict | None = None) -> None:
    doc = tree.to_dict()
    if stats:
        doc["stats"] = stats
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_tree(path) -> CliqueTree:
    return CliqueTree.from_dict(json.loads(Path(path).read_text()))


def write_edm(path, inst) -> None:
    doc = {
        "order": inst.order,
        "positions": None if inst.positions is None else inst.positions.tolist(),
        "edges": (inst.edges + 1).tolist(),
        "measurements": [float(v) for v in inst.measurements],
        "tree": inst.tree.to_dict(),
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def read_edm(path):
    from .problems import EDMInstance

    doc = json.loads(Path(path).read_text())
    tree = CliqueTree.from_dict(doc["tree"])
    pos = doc.get("positions")
    return EDMInstance(None if pos is None else np.array(pos, dtype=float),
                       np.array(doc["edges"], dtype=np.intp).reshape(-1, 2) - 1,
                       np.array(doc["measurements"], dtype=float), tree.pattern(), tree)


def write_solution(path, pattern: SparsityPattern, x: np.ndarray) -> None:
    """Lower-triangular entries ``i j X_ij`` (plain, unscaled values)."""
    x = np.asarray(x, dtype=float)
    with open(path, "w") as fh:
        for k, (i, j) in enumerate(pattern.entries):
            v = x[k] if i == j else x[k] / SQRT2
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_solution(path, pattern: SparsityPattern) -> np.ndarray:
    """Inverse of :func:`write_solution`; returns the scaled vector."""
    x = np.zeros(pattern.nnz)
    for no, raw in _lines(path):
        toks = raw.split()
        if not toks:
            continue
        try:
            i, j, v = int(toks[0]) - 1, int(toks[1]) - 1, float(toks[2])
            k = pattern.index(i, j)
        except (ValueError, IndexError, KeyError):
            raise ParseError(path, no, f"bad solution line {raw.strip()!r}") from None
        x[k] = v if i == j else v * SQRT2
    return x
