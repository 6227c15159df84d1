"""Chordal conversion and splitting methods for sparse conic linear programs.

A sparse SDP over the cone of PSD-completable matrices is converted along
a clique tree into a problem with one small PSD block per clique plus
consistency constraints, which Spingarn's method of partial inverses solves
with an interior-point prox operator.
"""
__version__ = "0.1.0"

from .cones import ConeBlock, ConeKind, ConeProduct, SparseSymMatrix, psd_decompose, vecV
from .conversion import ConicLP, ConvertedProblem, convert
from .problems import BlockArrowSpec, build_edm_problem, gen_block_arrow, gen_sensor_network
from .proxqp import IPMConfig, ProxQP, solve_prox_qp
from .sparsity import (CliqueTree, SparsityPattern, build_clique_tree, chordal_embed, clique_tree,
                       merge_cliques)
from .spingarn import Solution, SpingarnConfig, solve, solve_converted

__all__ = [
    "BlockArrowSpec", "CliqueTree", "ConeBlock", "ConeKind", "ConeProduct", "ConicLP",
    "ConvertedProblem", "IPMConfig", "ProxQP", "Solution", "SparseSymMatrix", "SparsityPattern",
    "SpingarnConfig", "build_clique_tree", "build_edm_problem", "chordal_embed", "clique_tree",
    "convert", "gen_block_arrow", "gen_sensor_network", "merge_cliques", "psd_decompose", "solve",
    "solve_converted", "solve_prox_qp", "vecV",
]
