"""Spingarn's method of partial inverses for the converted problem.

The converted problem is ``minimize f(x)  s.t.  x in V`` where ``f`` collects
the objective, the equality rows and the clique cones, and ``V`` is the
consistency subspace.  Each iteration evaluates ``prox_{f/sigma}`` with the
interior-point solver (one independent subproblem per group of coupled
cliques), projects onto ``V`` by averaging, and applies a relaxed update.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .cones import ConeBlock, ConeKind
from .conversion import ConicLP, ConvertedProblem, SINGLE, average, convert
from .proxqp import (IPMConfig, IPMResult, ProxQP, Status, optimality_residuals,
                     solve_separable)
from .sparsity import CliqueTree

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "sigma", "rel_rp", "rel_rd", "objective", "prox_ms")


class ProxFailure(RuntimeError):
    """The interior-point solver could not evaluate the prox operator."""


def default_tau(k: int) -> float:
    return 1.0 + 0.9 ** k


@dataclass(frozen=True)
class SpingarnConfig:
    sigma0: float = 1.0
    adaptive: bool = True
    mu: float = 2.0
    tau: Callable[[int], float] = default_tau
    rho: float = 1.75
    eps_p: float = 1e-4
    eps_d: float = 1e-4
    max_iter: int = 1000
    rescale: bool = False
    threads: int | None = None
    ipm: IPMConfig = field(default_factory=IPMConfig)

    def __post_init__(self):
        if self.mu <= 1:
            raise ValueError("mu must exceed 1")
        if not 0 < self.rho < 2:
            raise ValueError("rho must lie in (0, 2)")
        if self.sigma0 <= 0 or self.eps_p <= 0 or self.eps_d <= 0 or self.max_iter < 1:
            raise ValueError("sigma0, tolerances and max_iter must be positive")


@dataclass(frozen=True)
class LogRecord:
    iter: int
    sigma: float
    rel_rp: float
    rel_rd: float
    objective: float
    prox_ms: float
    # relative defect of ||x - w||^2 = ||rp||^2 + ||rd||^2 / sigma^2
    orth_defect: float = 0.0

    def row(self) -> tuple:
        return tuple(getattr(self, k) for k in LOG_COLUMNS)


@dataclass
class SpingarnState:
    z: np.ndarray
    x: np.ndarray
    v: np.ndarray
    sigma: float
    iter: int = 0
    rp: np.ndarray | None = None
    rd: np.ndarray | None = None
    tail: np.ndarray | None = None
    log: list[LogRecord] = field(default_factory=list)

    @property
    def rel_rp(self) -> float:
        return float(np.linalg.norm(self.rp) / max(1.0, np.linalg.norm(self.x)))

    @property
    def rel_rd(self) -> float:
        return float(np.linalg.norm(self.rd) / max(1.0, np.linalg.norm(self.v)))


class SolveStatus(str, Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"


@dataclass
class Solution:
    x: np.ndarray
    x_tilde: np.ndarray
    tail: np.ndarray
    objective: float
    status: SolveStatus
    iterations: int
    log: list[LogRecord]
    sigma: float
    converted: ConvertedProblem | None = None


def project_V(cp: ConvertedProblem, xt: np.ndarray) -> np.ndarray:
    """Orthogonal projection of a stacked consensus vector onto V."""
    return average(cp, xt)[cp.stacked_index]


class ProxOperator:
    """Evaluates ``prox_{f/sigma}`` for a converted problem.

    The subproblem structure (which cliques share constraint rows) is fixed,
    so the dense blocks are laid out once and only the center and the weight
    change between calls.
    """

    def __init__(self, cp: ConvertedProblem, ipm: IPMConfig | None = None,
                 threads: int | None = None):
        self.cp = cp
        self.ipm = ipm or IPMConfig()
        self.threads = threads
        self.groups = []
        for members, rows in cp.subproblems:
            local = {int(i): t for t, i in enumerate(rows)}
            blocks, A, c, slots = [], [], [], []
            for k in members:
                blk = cp.cone.blocks[k]
                Ak = np.zeros((len(rows), blk.dim))
                if len(cp.rows[k]):
                    Ak[[local[int(i)] for i in cp.rows[k]]] = cp.Ablocks[k]
                blocks.append(blk)
                A.append(Ak)
                c.append(cp.cblocks[k])
                slots.append(("x", k))
            for k in members:
                if len(cp.aux[k]):
                    Ak = np.zeros((len(rows), len(cp.aux[k])))
                    Ak[[local[int(i)] for i in cp.rows[k]]] = cp.Aaux[k]
                    blocks.append(ConeBlock(ConeKind.NONNEG, len(cp.aux[k])))
                    A.append(Ak)
                    c.append(cp.caux[k])
                    slots.append(("aux", k))
            self.groups.append({
                "blocks": tuple(blocks), "A": tuple(A), "b": cp.b[rows], "c": np.concatenate(c),
                "slots": slots,
            })

    def subproblems(self, z: np.ndarray, sigma: float) -> list[ProxQP]:
        cp = self.cp
        out = []
        for g in self.groups:
            centers, weights = [], []
            for (kind, k), blk in zip(g["slots"], g["blocks"]):
                if kind == "x":
                    centers.append(cp.block(z, k))
                    weights.append(sigma)
                else:
                    centers.append(np.zeros(blk.dim))
                    weights.append(0.0)
            out.append(ProxQP(g["blocks"], g["A"], g["b"], g["c"], np.array(weights),
                              np.concatenate(centers)))
        return out

    def __call__(self, z: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray, list]:
        cp = self.cp
        qps = self.subproblems(z, sigma)
        results = solve_separable(qps, self.ipm, self.threads)
        x = np.empty(cp.ntilde)
        tail = np.zeros(cp.ntail)
        for gi, (g, qp, res) in enumerate(zip(self.groups, qps, results)):
            self._check(gi, qp, res)
            off = 0
            for (kind, k), blk in zip(g["slots"], g["blocks"]):
                piece = res.x[off:off + blk.dim]
                off += blk.dim
                if kind == "x":
                    x[cp.offsets[k]:cp.offsets[k + 1]] = piece
                else:
                    tail[cp.aux[k]] = piece
        return x, tail, results

    def _check(self, gi: int, qp: ProxQP, res: IPMResult):
        if res.status is Status.OPTIMAL:
            return
        chk = optimality_residuals(qp, res)
        # a breakdown close to the solution is still a usable prox point
        tol = max(100 * max(self.ipm.feas_tol, self.ipm.gap_tol), 1e-7)
        scale = max(1.0, abs(res.objective))
        if (chk["primal"] <= tol and chk["dual"] <= tol and chk["complementarity"] <= tol * scale
                and chk["cone_x"] >= -tol and chk["cone_s"] >= -tol):
            log.debug("subproblem %d: %s accepted, residuals %s", gi, res.status.value, chk)
            return
        raise ProxFailure(f"subproblem {gi}: {res.status.value} after {res.iterations} "
                          f"iterations, residuals {chk}")


def adapt_sigma(sigma: float, t: float, mu: float, tau: float) -> float:
    """Residual-balancing rule for the steplength parameter."""
    if t > mu:
        return sigma * tau
    if t < 1.0 / mu:
        return sigma / tau
    return sigma


def update_sigma(state: SpingarnState, cfg: SpingarnConfig) -> float:
    """Next sigma from the ratio of relative primal and dual residuals."""
    nrp, nx = np.linalg.norm(state.rp), np.linalg.norm(state.x)
    nrd, nv = np.linalg.norm(state.rd), np.linalg.norm(state.v)
    if min(nx, nrd, nv) == 0.0:
        return state.sigma
    t = (nrp / nx) * (nv / nrd)
    return adapt_sigma(state.sigma, t, cfg.mu, cfg.tau(state.iter))


def initial_state(cp: ConvertedProblem, cfg: SpingarnConfig) -> SpingarnState:
    zero = np.zeros(cp.ntilde)
    return SpingarnState(z=zero.copy(), x=zero.copy(), v=zero.copy(), sigma=cfg.sigma0,
                         rp=zero.copy(), rd=zero.copy(), tail=np.zeros(cp.ntail))


def step(cp: ConvertedProblem, state: SpingarnState, cfg: SpingarnConfig,
         prox: ProxOperator | None = None) -> SpingarnState:
    """One prox / projection / relaxation step, followed by the sigma update."""
    prox = prox or ProxOperator(cp, cfg.ipm, cfg.threads)
    sigma = state.sigma
    t0 = time.perf_counter()
    x, tail, _ = prox(state.z, sigma)
    prox_ms = 1e3 * (time.perf_counter() - t0)
    v = sigma * (state.z - x)
    px = project_V(cp, x)
    w = project_V(cp, 2 * x - state.z)
    z = state.z + cfg.rho * (w - x)
    rp = px - x
    rd = -project_V(cp, v)

    g2 = float(np.sum((x - w) ** 2))
    split = float(np.sum(rp ** 2) + np.sum(rd ** 2) / sigma ** 2)
    defect = abs(g2 - split) / g2 if g2 > 0 else abs(split)

    # objective at the consensus point P_V(x)
    objective = cp.objective(np.concatenate([px, tail]))
    new = SpingarnState(z=z, x=x, v=v, sigma=sigma, iter=state.iter + 1, rp=rp, rd=rd,
                        tail=tail, log=state.log)
    new.log.append(LogRecord(new.iter, sigma, new.rel_rp, new.rel_rd, objective, prox_ms, defect))
    if cfg.adaptive:
        s_new = update_sigma(new, cfg)
        if s_new != sigma:
            if cfg.rescale:
                new.z = x + (sigma / s_new) * (z - x)
            new.sigma = s_new
    return new


def converged(state: SpingarnState, cfg: SpingarnConfig) -> bool:
    return state.iter > 0 and state.rel_rp <= cfg.eps_p and state.rel_rd <= cfg.eps_d


def solve_converted(cp: ConvertedProblem, cfg: SpingarnConfig | None = None,
                    callback: Callable[[SpingarnState], None] | None = None) -> Solution:
    cfg = cfg or SpingarnConfig()
    prox = ProxOperator(cp, cfg.ipm, cfg.threads)
    state = initial_state(cp, cfg)
    status = SolveStatus.MAX_ITER
    while state.iter < cfg.max_iter:
        state = step(cp, state, cfg, prox)
        if callback is not None:
            callback(state)
        if converged(state, cfg):
            status = SolveStatus.CONVERGED
            break
    rec = state.log[-1] if state.log else None
    xbar = average(cp, state.x)
    return Solution(x=xbar, x_tilde=state.x, tail=state.tail,
                    objective=rec.objective if rec else 0.0, status=status,
                    iterations=state.iter, log=state.log, sigma=state.sigma, converted=cp)


def solve(lp: ConicLP, tree: CliqueTree, cfg: SpingarnConfig | None = None,
          strategy: str = SINGLE, callback=None) -> Solution:
    """Convert ``lp`` along ``tree`` and run the splitting method."""
    return solve_converted(convert(lp, tree, strategy), cfg, callback)


def write_log(path, records) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(LOG_COLUMNS)
        for r in records:
            wr.writerow([r.iter, repr(r.sigma), repr(r.rel_rp), repr(r.rel_rd),
                         repr(r.objective), f"{r.prox_ms:.3f}"])


def read_log(path) -> list[LogRecord]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != LOG_COLUMNS:
            raise ValueError(f"unexpected log columns {rd.fieldnames}")
        return [LogRecord(int(r["iter"]), float(r["sigma"]), float(r["rel_rp"]),
                          float(r["rel_rd"]), float(r["objective"]), float(r["prox_ms"]))
                for r in rd]

