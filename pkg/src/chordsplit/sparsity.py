"""Sparsity patterns, chordal graph algorithms and clique trees.

All vertex indices are 0-based in memory.  Text and JSON files use 1-based
indices; the conversion happens in :mod:`chordsplit.io`.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class NotChordal(ValueError):
    """The supplied ordering is not a perfect elimination ordering."""


class RIPViolation(ValueError):
    """A clique tree does not have the running intersection property."""


@dataclass(frozen=True)
class SparsityPattern:
    """Symmetric sparsity pattern of order ``order``.

    Only lower-triangular pairs ``(i, j)`` with ``i >= j`` are stored, sorted
    in column-major order.  The diagonal is always included.
    """

    order: int
    entries: tuple[tuple[int, int], ...]

    @classmethod
    def from_pairs(cls, order: int, pairs: Iterable[tuple[int, int]]) -> "SparsityPattern":
        if order < 1:
            raise ValueError("pattern order must be positive")
        lower = {(i, i) for i in range(order)}
        for i, j in pairs:
            i, j = int(i), int(j)
            if not (0 <= i < order and 0 <= j < order):
                raise ValueError(f"index pair ({i}, {j}) out of range for order {order}")
            lower.add((max(i, j), min(i, j)))
        return cls(order, tuple(sorted(lower, key=lambda e: (e[1], e[0]))))

    @classmethod
    def from_cliques(cls, order: int, cliques: Iterable[Iterable[int]]) -> "SparsityPattern":
        pairs = []
        for beta in cliques:
            beta = sorted(beta)
            pairs.extend((a, b) for ai, a in enumerate(beta) for b in beta[: ai + 1])
        return cls.from_pairs(order, pairs)

    @classmethod
    def dense(cls, order: int) -> "SparsityPattern":
        return cls.from_cliques(order, [range(order)])

    @property
    def nnz(self) -> int:
        """Number of stored entries, i.e. the length of the vectorized matrix."""
        return len(self.entries)

    @cached_property
    def position(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.entries)}

    @cached_property
    def rows(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries], dtype=np.intp)

    @cached_property
    def cols(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.intp)

    @cached_property
    def adjacency(self) -> tuple[frozenset[int], ...]:
        nbrs: list[set[int]] = [set() for _ in range(self.order)]
        for i, j in self.entries:
            if i != j:
                nbrs[i].add(j)
                nbrs[j].add(i)
        return tuple(frozenset(s) for s in nbrs)

    def index(self, i: int, j: int) -> int:
        return self.position[(max(i, j), min(i, j))]

    def __contains__(self, pair: tuple[int, int]) -> bool:
        i, j = pair
        return (max(i, j), min(i, j)) in self.position

    def edges(self) -> list[tuple[int, int]]:
        """Off-diagonal entries as ``(i, j)`` with ``i > j``."""
        return [e for e in self.entries if e[0] != e[1]]

    def issubset(self, other: "SparsityPattern") -> bool:
        return self.order == other.order and set(self.entries) <= set(other.entries)

    def union(self, other: "SparsityPattern") -> "SparsityPattern":
        if self.order != other.order:
            raise ValueError("patterns have different orders")
        return SparsityPattern.from_pairs(self.order, self.entries + other.entries)


@dataclass(frozen=True)
class EliminationOrdering:
    """Vertex elimination order; ``perm[k]`` is the k-th vertex eliminated."""

    perm: tuple[int, ...]
    chordal_certificate: bool

    @cached_property
    def rank(self) -> np.ndarray:
        r = np.empty(len(self.perm), dtype=np.intp)
        r[list(self.perm)] = np.arange(len(self.perm))
        return r


def _later_neighbors(adj: Sequence[frozenset[int]], rank: np.ndarray) -> list[list[int]]:
    # sorted by elimination rank so that the first entry is the "follower"
    return [sorted((u for u in adj[v] if rank[u] > rank[v]), key=lambda u: rank[u])
            for v in range(len(adj))]


def is_perfect_elimination_ordering(pattern: SparsityPattern, perm: Sequence[int]) -> bool:
    """Check that eliminating vertices in ``perm`` order creates no fill.

    Uses the follower test: for every vertex v with later neighbours, the
    later neighbours other than the first one must all be adjacent to it.
    """
    p = pattern.order
    if sorted(perm) != list(range(p)):
        return False
    rank = np.empty(p, dtype=np.intp)
    rank[list(perm)] = np.arange(p)
    adj = pattern.adjacency
    later = _later_neighbors(adj, rank)
    for v in range(p):
        if len(later[v]) > 1:
            f = later[v][0]
            for u in later[v][1:]:
                if u not in adj[f]:
                    return False
    return True


def mcs_order(pattern: SparsityPattern) -> EliminationOrdering:
    """Maximum cardinality search.

    Vertices are numbered from last to first; at each step the unnumbered
    vertex with the most numbered neighbours is picked (lowest index on
    ties).  The reversed visit order is a perfect elimination ordering iff
    the graph is chordal.
    """
    p = pattern.order
    adj = pattern.adjacency
    weight = [0] * p
    visited = [False] * p
    heap = [(0, v) for v in range(p)]
    visit: list[int] = []
    while heap:
        w, v = heapq.heappop(heap)
        if visited[v] or -w != weight[v]:
            continue
        visited[v] = True
        visit.append(v)
        for u in adj[v]:
            if not visited[u]:
                weight[u] += 1
                heapq.heappush(heap, (-weight[u], u))
    perm = tuple(reversed(visit))
    return EliminationOrdering(perm, is_perfect_elimination_ordering(pattern, perm))


def min_degree_order(pattern: SparsityPattern) -> tuple[int, ...]:
    """Greedy minimum-degree ordering on the elimination graph."""
    p = pattern.order
    nbrs = [set(s) for s in pattern.adjacency]
    alive = [True] * p
    heap = [(len(nbrs[v]), v) for v in range(p)]
    heapq.heapify(heap)
    perm = []
    while heap:
        d, v = heapq.heappop(heap)
        if not alive[v] or d != len(nbrs[v]):
            continue
        alive[v] = False
        perm.append(v)
        nv = nbrs[v]
        for u in nv:
            nbrs[u].discard(v)
            nbrs[u].update(nv - {u})
        for u in nv:
            heapq.heappush(heap, (len(nbrs[u]), u))
        nbrs[v] = set()
    return tuple(perm)


def symbolic_fill(pattern: SparsityPattern, perm: Sequence[int]) -> SparsityPattern:
    """Filled pattern of a Cholesky factorization in the given order."""
    p = pattern.order
    rank = np.empty(p, dtype=np.intp)
    rank[list(perm)] = np.arange(p)
    higher = [set(u for u in pattern.adjacency[v] if rank[u] > rank[v]) for v in range(p)]
    pairs = []
    for v in perm:
        hv = higher[v]
        pairs.extend((v, u) for u in hv)
        if hv:
            # pass the remaining structure on to the first later neighbour
            f = min(hv, key=lambda u: rank[u])
            higher[f].update(hv - {f})
    return SparsityPattern.from_pairs(p, pairs)


def chordal_embed(pattern: SparsityPattern, heuristic="mindegree"
                  ) -> tuple[SparsityPattern, EliminationOrdering]:
    """Chordal embedding by symbolic elimination.

    ``heuristic`` is ``"mindegree"``, ``"mcs"``, ``"natural"`` or an explicit
    vertex ordering.  The returned ordering is a perfect elimination ordering
    of the returned (chordal) pattern.
    """
    if isinstance(heuristic, str):
        if heuristic == "mindegree":
            perm = min_degree_order(pattern)
        elif heuristic == "mcs":
            perm = mcs_order(pattern).perm
        elif heuristic == "natural":
            perm = tuple(range(pattern.order))
        else:
            raise ValueError(f"unknown ordering heuristic {heuristic!r}")
    else:
        perm = tuple(int(v) for v in heuristic)
        if sorted(perm) != list(range(pattern.order)):
            raise ValueError("ordering is not a permutation of the vertices")
    filled = symbolic_fill(pattern, perm)
    return filled, EliminationOrdering(perm, True)


def extract_cliques(pattern: SparsityPattern, peo: EliminationOrdering) -> list[tuple[int, ...]]:
    """Maximal cliques of a chordal pattern, given a perfect elimination ordering.

    The candidate ``{v} + later(v)`` is non-maximal exactly when some vertex u
    with follower v has ``|later(u)| == |later(v)| + 1``.
    """
    if not is_perfect_elimination_ordering(pattern, peo.perm):
        raise NotChordal("ordering is not a perfect elimination ordering of the pattern")
    rank = peo.rank
    later = _later_neighbors(pattern.adjacency, rank)
    absorbed = [False] * pattern.order
    for u in peo.perm:
        if later[u]:
            f = later[u][0]
            if len(later[u]) == len(later[f]) + 1:
                absorbed[f] = True
    return [tuple(sorted([v] + later[v])) for v in peo.perm if not absorbed[v]]


@dataclass(frozen=True)
class CliqueTree:
    """Clique tree (or forest) with parent links.

    ``parent[k]`` is ``None`` for roots.  ``postorder`` lists children before
    their parents.
    """

    order: int
    cliques: tuple[tuple[int, ...], ...]
    parent: tuple[int | None, ...]
    separators: tuple[tuple[int, ...], ...] = field(default=())
    residuals: tuple[tuple[int, ...], ...] = field(default=())
    postorder: tuple[int, ...] = field(default=())

    @classmethod
    def from_parents(cls, order: int, cliques: Sequence[Iterable[int]],
                     parent: Sequence[int | None]) -> "CliqueTree":
        cliques = tuple(tuple(sorted(int(v) for v in b)) for b in cliques)
        parent = tuple(None if q is None else int(q) for q in parent)
        seps, res = [], []
        for k, beta in enumerate(cliques):
            pa = parent[k]
            eta = () if pa is None else tuple(sorted(set(beta) & set(cliques[pa])))
            seps.append(eta)
            res.append(tuple(v for v in beta if v not in eta))
        return cls(order, cliques, parent, tuple(seps), tuple(res),
                   _postorder(parent))

    @property
    def size(self) -> int:
        return len(self.cliques)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        ch: list[list[int]] = [[] for _ in self.cliques]
        for k, pa in enumerate(self.parent):
            if pa is not None:
                ch[pa].append(k)
        return tuple(tuple(c) for c in ch)

    @property
    def roots(self) -> list[int]:
        return [k for k, pa in enumerate(self.parent) if pa is None]

    def pattern(self) -> SparsityPattern:
        return SparsityPattern.from_cliques(self.order, self.cliques)

    def weight(self) -> int:
        return sum(len(s) for s in self.separators)

    def path(self, i: int, j: int) -> list[int]:
        """Cliques on the tree path from i to j (inclusive); empty if disconnected."""
        up_i = [i]
        while self.parent[up_i[-1]] is not None:
            up_i.append(self.parent[up_i[-1]])
        pos = {k: n for n, k in enumerate(up_i)}
        up_j = [j]
        while up_j[-1] not in pos:
            pa = self.parent[up_j[-1]]
            if pa is None:
                return []
            up_j.append(pa)
        return up_i[: pos[up_j[-1]] + 1] + up_j[-2::-1]

    def check_rip(self) -> None:
        """Raise :class:`RIPViolation` unless each vertex induces a subtree."""
        holders: dict[int, set[int]] = {}
        for k, beta in enumerate(self.cliques):
            for v in beta:
                holders.setdefault(v, set()).add(k)
        for v, ks in holders.items():
            # a forest on ks is connected iff it has |ks| - 1 edges
            edges = sum(1 for k in ks if self.parent[k] in ks)
            if edges != len(ks) - 1:
                raise RIPViolation(f"vertex {v} does not induce a subtree")

    def to_dict(self) -> dict:
        """1-based JSON-ready representation."""
        one = lambda seq: [v + 1 for v in seq]  # noqa: E731
        return {
            "order": self.order,
            "cliques": [one(b) for b in self.cliques],
            "parent": [None if q is None else q + 1 for q in self.parent],
            "separators": [one(s) for s in self.separators],
            "residuals": [one(r) for r in self.residuals],
            "postorder": one(self.postorder),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CliqueTree":
        cliques = [[v - 1 for v in b] for b in doc["cliques"]]
        parent = [None if q is None else q - 1 for q in doc["parent"]]
        order = doc.get("order") or 1 + max(max(b) for b in cliques)
        return cls.from_parents(order, cliques, parent)


def _postorder(parent: Sequence[int | None]) -> tuple[int, ...]:
    children: list[list[int]] = [[] for _ in parent]
    for k, pa in enumerate(parent):
        if pa is not None:
            children[pa].append(k)
    out: list[int] = []
    for root in (k for k, pa in enumerate(parent) if pa is None):
        stack = [(root, False)]
        while stack:
            k, expanded = stack.pop()
            if expanded:
                out.append(k)
            else:
                stack.append((k, True))
                stack.extend((c, False) for c in reversed(children[k]))
    if len(out) != len(parent):
        raise ValueError("parent links contain a cycle")
    return tuple(out)


class _DisjointSets:
    def __init__(self, n: int):
        self.up = list(range(n))

    def find(self, a: int) -> int:
        while self.up[a] != a:
            self.up[a] = self.up[self.up[a]]
            a = self.up[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.up[max(ra, rb)] = min(ra, rb)
        return True


def build_clique_tree(cliques: Sequence[Iterable[int]], order: int | None = None,
                      last_vertex: int | None = None) -> CliqueTree:
    """Maximum-weight spanning forest of the clique intersection graph.

    Edge weights are intersection sizes; Kruskal's algorithm is used with
    ties broken by lowest clique index.  Each component is rooted at the
    highest-indexed clique containing ``last_vertex`` (by default the largest
    vertex of that component), i.e. the last vertex of a perfect elimination
    ordering.
    """
    cliques = [tuple(sorted(int(v) for v in b)) for b in cliques]
    if order is None:
        order = 1 + max(max(b) for b in cliques if b)
    l = len(cliques)
    holders: dict[int, list[int]] = {}
    for k, beta in enumerate(cliques):
        for v in beta:
            holders.setdefault(v, []).append(k)
    weights: dict[tuple[int, int], int] = {}
    for ks in holders.values():
        for a_i, a in enumerate(ks):
            for b in ks[a_i + 1:]:
                weights[(a, b)] = weights.get((a, b), 0) + 1
    ds = _DisjointSets(l)
    adj: list[list[int]] = [[] for _ in range(l)]
    for (a, b), w in sorted(weights.items(), key=lambda e: (-e[1], e[0])):
        if ds.union(a, b):
            adj[a].append(b)
            adj[b].append(a)

    components: dict[int, list[int]] = {}
    for k in range(l):
        components.setdefault(ds.find(k), []).append(k)
    parent: list[int | None] = [None] * l
    for members in components.values():
        verts = set().union(*(cliques[k] for k in members))
        target = last_vertex if last_vertex in verts else max(verts)
        root = max(k for k in members if target in cliques[k])
        seen = {root}
        queue = [root]
        while queue:
            k = queue.pop(0)
            for c in sorted(adj[k]):
                if c not in seen:
                    seen.add(c)
                    parent[c] = k
                    queue.append(c)
    tree = CliqueTree.from_parents(order, cliques, parent)
    tree.check_rip()
    return tree


def clique_tree(pattern: SparsityPattern, peo: EliminationOrdering | None = None) -> CliqueTree:
    """Cliques and clique tree of a chordal pattern.

    If no ordering is given, maximum cardinality search supplies one and
    :class:`NotChordal` is raised for non-chordal patterns.
    """
    if peo is None:
        peo = mcs_order(pattern)
    cliques = extract_cliques(pattern, peo)
    return build_clique_tree(cliques, pattern.order, last_vertex=peo.perm[-1])


def merge_cliques(tree: CliqueTree, t_fill: int, t_size: int) -> CliqueTree:
    """Greedy clique merging along a postorder traversal.

    Clique k is merged into its parent when the fill it causes,
    ``(|pa| - |sep_k|) * (|k| - |sep_k|)``, is at most ``t_fill``, or when both
    residual sets are at most ``t_size``.  Because of the running intersection
    property the separators of untouched cliques do not change.
    """
    cliques = [set(b) for b in tree.cliques]
    parent = list(tree.parent)
    seps = [len(s) for s in tree.separators]
    children = [set(c) for c in tree.children]
    alive = [True] * tree.size
    for k in tree.postorder:
        pa = parent[k]
        if pa is None:
            continue
        bk, bp, ek = len(cliques[k]), len(cliques[pa]), seps[k]
        if (bp - ek) * (bk - ek) <= t_fill or max(bk - ek, bp - seps[pa]) <= t_size:
            cliques[pa] |= cliques[k]
            alive[k] = False
            children[pa].discard(k)
            for c in children[k]:
                parent[c] = pa
            children[pa] |= children[k]
    keep = [k for k in range(tree.size) if alive[k]]
    new_index = {k: n for n, k in enumerate(keep)}
    merged = CliqueTree.from_parents(
        tree.order,
        [cliques[k] for k in keep],
        [None if parent[k] is None else new_index[parent[k]] for k in keep],
    )
    merged.check_rip()
    return merged
