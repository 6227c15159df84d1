import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chordsplit.sparsity import (CliqueTree, NotChordal, RIPViolation, SparsityPattern,
                                 build_clique_tree, chordal_embed, clique_tree, extract_cliques,
                                 is_perfect_elimination_ordering, mcs_order, merge_cliques)

# Fig. 8 pattern, 0-based: cliques {0,1,2}, {1,2,3}, {2,3,4}
FIG8 = SparsityPattern.from_cliques(5, [[0, 1, 2], [1, 2, 3], [2, 3, 4]])


def cycle(p):
    return SparsityPattern.from_pairs(p, [(i, (i + 1) % p) for i in range(p)])


def to_graph(pattern):
    G = nx.Graph()
    G.add_nodes_from(range(pattern.order))
    G.add_edges_from(pattern.edges())
    return G


@st.composite
def chordal_patterns(draw, max_order=40):
    p = draw(st.integers(1, max_order))
    seed = draw(st.integers(0, 2**32 - 1))
    density = draw(st.floats(0.02, 0.3))
    G = nx.gnp_random_graph(p, density, seed=seed)
    H, _ = nx.complete_to_chordal_graph(G)
    return SparsityPattern.from_pairs(p, H.edges())


def test_fig8_pattern():
    # 12 stored lower-triangular entries
    assert FIG8.nnz == 12
    assert mcs_order(FIG8).chordal_certificate


def test_mcs_examples():
    assert mcs_order(SparsityPattern.dense(4)).chordal_certificate
    assert not mcs_order(cycle(4)).chordal_certificate
    perm = mcs_order(cycle(4)).perm
    assert sorted(perm) == [0, 1, 2, 3]


def test_pattern_diagonal_and_symmetry():
    P = SparsityPattern.from_pairs(3, [(0, 2), (2, 0)])
    assert P.entries == ((0, 0), (2, 0), (1, 1), (2, 2))
    assert (0, 2) in P and (2, 0) in P and (1, 0) not in P
    with pytest.raises(ValueError):
        SparsityPattern.from_pairs(3, [(0, 3)])


def test_embed_examples():
    filled, peo = chordal_embed(FIG8, heuristic=mcs_order(FIG8).perm)
    assert filled == FIG8 and peo.chordal_certificate
    filled, _ = chordal_embed(cycle(4))
    assert len(filled.edges()) == 5
    path = SparsityPattern.from_pairs(4, [(0, 1), (1, 2), (2, 3)])
    filled, _ = chordal_embed(path, "natural")
    assert filled == path


def test_cycle4_minimum_fill_is_one():
    # exhaustive over all elimination orderings
    fills = []
    for perm in itertools.permutations(range(4)):
        filled, _ = chordal_embed(cycle(4), perm)
        fills.append(len(filled.edges()) - 4)
    assert min(fills) == 1
    filled, _ = chordal_embed(cycle(4), "mindegree")
    assert len(filled.edges()) - 4 == 1


def test_extract_cliques_examples():
    peo = mcs_order(FIG8)
    assert sorted(extract_cliques(FIG8, peo)) == [(0, 1, 2), (1, 2, 3), (2, 3, 4)]
    K = SparsityPattern.dense(6)
    assert extract_cliques(K, mcs_order(K)) == [tuple(range(6))]
    arrow = SparsityPattern.from_cliques(7, [[0, 1, 6], [2, 3, 6], [4, 5, 6]])
    assert sorted(extract_cliques(arrow, mcs_order(arrow))) == [(0, 1, 6), (2, 3, 6), (4, 5, 6)]


def test_extract_cliques_rejects_bad_ordering():
    from chordsplit.sparsity import EliminationOrdering
    with pytest.raises(NotChordal):
        extract_cliques(FIG8, EliminationOrdering((2, 0, 1, 3, 4), True))


def test_fig8_clique_tree():
    tree = build_clique_tree([[0, 1, 2], [1, 2, 3], [2, 3, 4]])
    assert tree.parent == (1, 2, None)
    assert tree.separators == ((1, 2), (2, 3), ())
    assert tree.residuals == ((0,), (1,), (2, 3, 4))
    assert tree.postorder == (0, 1, 2)


def edge_separators(tree):
    return {frozenset((k, pa)): set(tree.separators[k])
            for k, pa in enumerate(tree.parent) if pa is not None}


def test_conversion_example_tree():
    # {1,2,6}, {2,5,6}, {3,5}, {4,6} in 0-based form
    sets = [[0, 1, 5], [1, 4, 5], [2, 4], [3, 5]]
    tree = build_clique_tree(sets)
    seps = edge_separators(tree)
    assert seps[frozenset((0, 1))] == {1, 5}
    assert seps[frozenset((1, 2))] == {4}
    # {4,6} ties between {1,2,6} and {2,5,6}; lowest index wins
    assert seps[frozenset((0, 3))] == {5}
    assert sorted(map(sorted, seps.values())) == [[1, 5], [4], [5]]
    # the hub-shaped tree drawn for this example has the same weight and is valid
    hub = CliqueTree.from_parents(6, sets, [1, None, 1, 1])
    hub.check_rip()
    assert hub.weight() == tree.weight() == mwst_weight(sets)


def test_single_clique_tree():
    tree = build_clique_tree([[0, 1, 2]])
    assert tree.parent == (None,) and tree.separators == ((),)


def test_forest_for_disconnected_pattern():
    tree = clique_tree(SparsityPattern.from_pairs(4, [(0, 1), (2, 3)]))
    assert len(tree.roots) == 2
    assert tree.weight() == 0


def test_rip_violation_detected():
    with pytest.raises(RIPViolation):
        CliqueTree.from_parents(4, [[0, 1], [1, 2], [2, 3], [3, 0]], [1, 2, 3, None]).check_rip()


def test_clique_tree_rejects_nonchordal():
    with pytest.raises(NotChordal):
        clique_tree(cycle(5))


def test_merge_examples():
    tree = build_clique_tree([[0, 1, 2], [1, 2, 3], [2, 3, 4]])
    assert merge_cliques(tree, 0, 0) == tree
    two = build_clique_tree([[0, 1], [1, 2]])
    merged = merge_cliques(two, 5, 0)
    assert merged.cliques == ((0, 1, 2),)


def test_merge_rule_fill_threshold():
    # fill of merging {0,1,2} into {2,3,4,5}: (4 - 1) * (3 - 1) = 6
    tree = build_clique_tree([[0, 1, 2], [2, 3, 4, 5]])
    assert merge_cliques(tree, 5, 0).size == 2
    assert merge_cliques(tree, 6, 0).size == 1


def test_json_round_trip():
    tree = build_clique_tree([[0, 1, 2], [1, 2, 3], [2, 3, 4]])
    doc = tree.to_dict()
    assert doc["cliques"][0] == [1, 2, 3] and doc["parent"] == [2, 3, None]
    assert CliqueTree.from_dict(doc) == tree


# properties on random chordal patterns

def mwst_weight(cliques):
    G = nx.Graph()
    G.add_nodes_from(range(len(cliques)))
    for a, b in itertools.combinations(range(len(cliques)), 2):
        w = len(set(cliques[a]) & set(cliques[b]))
        if w:
            G.add_edge(a, b, weight=w)
    T = nx.maximum_spanning_tree(G)
    return sum(d["weight"] for _, _, d in T.edges(data=True))


def check_tree(pattern, tree):
    G = to_graph(pattern)
    oracle = sorted(tuple(sorted(c)) for c in nx.find_cliques(G))
    assert sorted(tree.cliques) == oracle
    res = [v for r in tree.residuals for v in r]
    assert sorted(res) == list(range(pattern.order))
    for i, j in itertools.combinations(range(tree.size), 2):
        common = set(tree.cliques[i]) & set(tree.cliques[j])
        for k in tree.path(i, j):
            assert common <= set(tree.cliques[k])
        if not tree.path(i, j):
            assert not common
    assert tree.weight() == mwst_weight(tree.cliques)
    pos = {k: n for n, k in enumerate(tree.postorder)}
    assert all(pa is None or pos[k] < pos[pa] for k, pa in enumerate(tree.parent))


@settings(max_examples=60, deadline=None)
@given(chordal_patterns())
def test_random_chordal_tree_invariants(pattern):
    peo = mcs_order(pattern)
    assert peo.chordal_certificate
    assert is_perfect_elimination_ordering(pattern, peo.perm)
    check_tree(pattern, clique_tree(pattern, peo))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1), st.floats(0.05, 0.4))
def test_embedding_is_chordal_superset(p, seed, density):
    G = nx.gnp_random_graph(p, density, seed=seed)
    base = SparsityPattern.from_pairs(p, G.edges())
    filled, peo = chordal_embed(base)
    assert base.issubset(filled)
    assert mcs_order(filled).chordal_certificate
    assert is_perfect_elimination_ordering(filled, peo.perm)
    assert nx.is_chordal(to_graph(filled))


@settings(max_examples=40, deadline=None)
@given(chordal_patterns(30), st.integers(0, 8), st.integers(0, 8))
def test_merge_keeps_invariants(pattern, t_fill, t_size):
    tree = clique_tree(pattern)
    merged = merge_cliques(tree, t_fill, t_size)
    assert pattern.issubset(merged.pattern())
    assert merged.size <= tree.size
    merged.check_rip()
    check_tree(merged.pattern(), merged)


def test_merge_reduces_sensor_network_cliques():
    rng = np.random.default_rng(0)
    P = rng.random((500, 2))
    from scipy.spatial import cKDTree
    _, nbr = cKDTree(P).query(P, k=6)
    pairs = {(min(i, int(j)), max(i, int(j))) for i in range(500) for j in nbr[i][1:]}
    base = SparsityPattern.from_pairs(500, pairs)
    filled, peo = chordal_embed(base)
    tree = clique_tree(filled, peo)
    merged = merge_cliques(tree, 5, 5)
    assert merged.size < 0.5 * tree.size
