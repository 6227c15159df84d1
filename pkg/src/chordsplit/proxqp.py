"""Interior-point solver for the regularized conic QP that defines the prox step.

The problem is::

    minimize    c'x + sum_k w_k/2 ||x_k - z_k||^2
    subject to  A x = b,  x_k in K_k

where every K_k is a PSD cone (``x_k`` an svec vector) or a nonnegative
orthant.  The Newton equations are reduced to an ``m x m`` system by
diagonalizing the Nesterov-Todd scaling of each block: in the eigenbasis of
the scaling matrix ``W_k = Q diag(lam) Q'`` the operator
``U -> w U + W U W`` is a Hadamard product with ``1 / (w + lam_a lam_b)``.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .cones import ConeBlock, ConeKind, ConeProduct, smat, smat_indices, svec, svec_indices

log = logging.getLogger(__name__)


class SingularH(np.linalg.LinAlgError):
    """The reduced Newton matrix could not be factored."""


class SubproblemError(RuntimeError):
    def __init__(self, index: int, exc: BaseException):
        super().__init__(f"subproblem {index}: {exc}")
        self.index = index


class Status(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class IPMConfig:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 100
    step_fraction: float = 0.99
    # floor on the Mehrotra centering parameter; keeps iterates near the
    # central path so x converges like mu rather than sqrt(mu)
    centering_min: float = 0.1

    def __post_init__(self):
        if min(self.gap_tol, self.feas_tol) <= 0 or self.max_iter < 1:
            raise ValueError("tolerances and max_iter must be positive")
        if not 0 <= self.centering_min < 1:
            raise ValueError("centering_min must lie in [0, 1)")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ProxQP:
    """Data of one prox subproblem.

    ``A[k]`` is the dense ``m x dim_k`` column block of block k, ``weights[k]``
    the quadratic weight of block k (0 for plain conic LP blocks) and
    ``center`` the stacked vector z.
    """

    blocks: tuple[ConeBlock, ...]
    A: tuple[np.ndarray, ...]
    b: np.ndarray
    c: np.ndarray
    weights: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        m = len(self.b)
        A = tuple(np.asarray(a, dtype=float).reshape(m, blk.dim)
                  for a, blk in zip(self.A, self.blocks))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        n = self.cone.dim
        if len(A) != len(self.blocks) or len(self.c) != n or len(self.center) != n:
            raise ValueError("ProxQP data do not match the cone dimensions")
        if len(self.weights) != len(self.blocks) or np.any(self.weights < 0):
            raise ValueError("need one nonnegative weight per block")
        for name in ("b", "c", "weights", "center"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"ProxQP.{name} has non-finite entries")

    @classmethod
    def from_stacked(cls, blocks: Sequence[ConeBlock], A, b, c, weights, center) -> "ProxQP":
        A = np.asarray(A.toarray() if hasattr(A, "toarray") else A, dtype=float)
        cone = ConeProduct(tuple(blocks))
        A = A.reshape(len(b), cone.dim)
        return cls(tuple(blocks), tuple(A[:, sl] for sl in cone_slices(cone)), b, c,
                   weights, center)

    @cached_property
    def cone(self) -> ConeProduct:
        return ConeProduct(self.blocks)

    @property
    def m(self) -> int:
        return len(self.b)

    @cached_property
    def weight_vector(self) -> np.ndarray:
        return np.concatenate([np.full(blk.dim, w) for blk, w in zip(self.blocks, self.weights)])

    @cached_property
    def stacked_A(self) -> np.ndarray:
        return np.hstack(self.A) if self.A else np.zeros((self.m, 0))

    @cached_property
    def row_components(self) -> tuple[np.ndarray, ...]:
        """Rows of the reduced Newton matrix grouped into coupled components."""
        m = self.m
        up = np.arange(m)

        def find(a):
            while up[a] != a:
                up[a] = up[up[a]]
                a = up[a]
            return a

        for a in self.A:
            nz = np.flatnonzero(np.any(a != 0, axis=1))
            for i in nz[1:]:
                ra, rb = find(nz[0]), find(i)
                if ra != rb:
                    up[max(ra, rb)] = min(ra, rb)
        roots = np.array([find(i) for i in range(m)], dtype=np.intp)
        return tuple(np.flatnonzero(roots == r) for r in np.unique(roots))

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + 0.5 * np.sum(self.weight_vector * (x - self.center) ** 2))


@dataclass
class IPMResult:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    gap: float
    primal_res: float
    dual_res: float
    status: Status
    iterations: int = 0
    objective: float = float("nan")
    info: dict = field(default_factory=dict)


def cone_slices(cone: ConeProduct) -> list[slice]:
    off = cone.offsets
    return [slice(int(off[k]), int(off[k + 1])) for k in range(len(cone.blocks))]


def kernel(weight: float, lam: np.ndarray, kind: ConeKind = ConeKind.PSD) -> np.ndarray:
    """Elimination kernel ``1 / (w + lam_a lam_b)``.

    For PSD blocks the result is returned in svec slot order; for orthant
    blocks it is the diagonal ``1 / (w + lam^2)``.
    """
    lam = np.asarray(lam, dtype=float)
    if kind is ConeKind.NONNEG:
        return 1.0 / (weight + lam * lam)
    rows, cols, _ = svec_indices(len(lam))
    return 1.0 / (weight + lam[rows] * lam[cols])


class ReducedSystem:
    """Factored reduced Newton equations for fixed scalings.

    Solves, for every block k (``W_k = Q_k diag(lam_k) Q_k'``)::

        w_k dX_k + W_k dX_k W_k + sum_i dy_i F_ik = R_k
        sum_k <F_ik, dX_k> = r_i
    """

    def __init__(self, blocks, Q, lam, weights, A, components=None, regularize=False):
        self.blocks = blocks
        self.Q = Q
        self.kern = []
        self.Ahat = []
        m = A[0].shape[0] if len(A) else 0
        H = np.zeros((m, m))
        for blk, Qk, lk, w, Ak in zip(blocks, Q, lam, weights, A):
            kv = kernel(w, lk, blk.kind)
            if blk.kind is ConeKind.PSD and m:
                F = smat(Ak)
                Ah = svec(np.swapaxes(Qk, 0, 1) @ F @ Qk)
            else:
                Ah = Ak
            self.kern.append(kv)
            self.Ahat.append(Ah)
            if m:
                H += (Ah * kv) @ Ah.T
        self.H = H
        if components is None:
            components = (np.arange(m),)
        self.factors = []
        for rows in components:
            Hc = H[np.ix_(rows, rows)]
            try:
                fac = ("chol", sla.cho_factor(Hc, lower=True, check_finite=False))
            except np.linalg.LinAlgError:
                fac = None
            if fac is None and regularize:
                # H is positive definite in exact arithmetic but can be
                # numerically indefinite near the solution; refinement in
                # solve() corrects for the shift
                delta = 1e-14 * max(1.0, float(np.abs(np.diag(Hc)).max(initial=0.0)))
                try:
                    fac = ("chol", sla.cho_factor(Hc + delta * np.eye(len(rows)), lower=True,
                                                  check_finite=False))
                except np.linalg.LinAlgError:
                    fac = None
            if fac is None:
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", sla.LinAlgWarning)
                        lu = sla.lu_factor(Hc, check_finite=False)
                except (ValueError, np.linalg.LinAlgError) as exc:
                    raise SingularH(str(exc)) from exc
                if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(1.0, np.abs(Hc).max()):
                    raise SingularH("reduced Newton matrix is singular")
                fac = ("lu", lu)
            self.factors.append((rows, fac))

    def _solve_H(self, g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(g)
        for rows, (kind, fac) in self.factors:
            if kind == "chol":
                out[rows] = sla.cho_solve(fac, g[rows], check_finite=False)
            else:
                out[rows] = sla.lu_solve(fac, g[rows], check_finite=False)
        return out

    def solve(self, R: Sequence[np.ndarray], r: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """``R`` holds one svec (or orthant) vector per block."""
        Rhat = []
        g = -np.asarray(r, dtype=float).copy()
        for blk, Qk, Rk, kv, Ah in zip(self.blocks, self.Q, R, self.kern, self.Ahat):
            Rh = svec(Qk.T @ smat(Rk) @ Qk) if blk.kind is ConeKind.PSD else np.asarray(Rk)
            Rhat.append(Rh)
            if len(g):
                g += Ah @ (kv * Rh)
        dy = self._solve_H(g)
        if len(g):
            # one step of iterative refinement on the constraint rows
            e = -np.asarray(r, dtype=float)
            for Rh, kv, Ah in zip(Rhat, self.kern, self.Ahat):
                e = e + Ah @ (kv * (Rh - Ah.T @ dy))
            dy += self._solve_H(e)
        dX = []
        for blk, Qk, Rh, kv, Ah in zip(self.blocks, self.Q, Rhat, self.kern, self.Ahat):
            dxh = kv * (Rh - Ah.T @ dy) if len(dy) else kv * Rh
            if blk.kind is ConeKind.PSD:
                dX.append(svec(Qk @ smat(dxh) @ Qk.T))
            else:
                dX.append(dxh)
        return dX, dy


def kkt_solve(Q, lam, weights, A, R, r, blocks=None, components=None):
    """Solve the reduced Newton equations once (see :class:`ReducedSystem`).

    ``Q[k]`` is ``None`` (or ignored) for orthant blocks, whose scaling is
    diagonal with entries ``lam[k]``.  If ``blocks`` is omitted all blocks
    are taken to be PSD.
    """
    if blocks is None:
        blocks = [ConeBlock(ConeKind.PSD, len(lk)) for lk in lam]
    sysm = ReducedSystem(blocks, Q, lam, weights, A, components)
    return sysm.solve(R, r)


def _identity(blk: ConeBlock, tau: float) -> np.ndarray:
    if blk.kind is ConeKind.PSD:
        return svec(tau * np.eye(blk.size))
    return np.full(blk.size, tau)


def _interior(blocks, slices, v: np.ndarray) -> bool:
    for sl, blk in zip(slices, blocks):
        if blk.kind is ConeKind.PSD:
            try:
                np.linalg.cholesky(smat(v[sl]))
            except np.linalg.LinAlgError:
                return False
        elif np.any(v[sl] <= 0):
            return False
    return True


def _psd_step(lam: np.ndarray, D: np.ndarray, cap: float = np.inf) -> float:
    """Largest a with diag(lam) + a D >= 0, truncated at ``cap``."""
    il = 1.0 / np.sqrt(lam)
    M = il[:, None] * D * il[None, :]
    if np.isfinite(cap):
        # a Cholesky test is far cheaper than the eigenvalues when the capped step fits
        try:
            np.linalg.cholesky(np.eye(len(lam)) + cap * M)
            return cap
        except np.linalg.LinAlgError:
            pass
    lo = np.linalg.eigvalsh(M)[0]
    return cap if lo >= 0 else min(cap, -1.0 / lo)


def _orthant_step(x: np.ndarray, dx: np.ndarray, cap: float = np.inf) -> float:
    neg = dx < 0
    return min(cap, float(np.min(-x[neg] / dx[neg]))) if neg.any() else cap


def _projection(qp: ProxQP) -> IPMResult:
    """Closed form when there are no rows and every weight is positive."""
    xs, ss = [], []
    for sl, blk, w in zip(cone_slices(qp.cone), qp.blocks, qp.weights):
        v = qp.center[sl] - qp.c[sl] / w
        if blk.kind is ConeKind.PSD:
            lam, U = np.linalg.eigh(smat(v))
            x = svec((U * np.maximum(lam, 0)) @ U.T)
        else:
            x = np.maximum(v, 0)
        xs.append(x)
        ss.append(w * (x - v))
    x = np.concatenate(xs) if xs else np.zeros(0)
    s = np.concatenate(ss) if ss else np.zeros(0)
    return IPMResult(x, np.zeros(0), s, 0.0, 0.0, 0.0, Status.OPTIMAL, 0, qp.objective(x))


def solve_prox_qp(qp: ProxQP, cfg: IPMConfig | None = None) -> IPMResult:
    """Mehrotra predictor-corrector method with Nesterov-Todd scaling."""
    cfg = cfg or IPMConfig()
    if qp.m == 0 and np.all(qp.weights > 0):
        return _projection(qp)
    blocks = qp.blocks
    slices = cone_slices(qp.cone)
    A, At = qp.stacked_A, qp.stacked_A.T
    wv = qp.weight_vector
    q = qp.c - wv * qp.center
    b = qp.b
    nu = sum(blk.degree for blk in blocks)
    nb, nq = np.linalg.norm(b), np.linalg.norm(q)

    tau = max(1.0, np.sqrt(max(np.abs(b).max(initial=0.0), np.abs(q).max(initial=0.0))))
    x = np.concatenate([_identity(blk, tau) for blk in blocks])
    s = x.copy()
    y = np.zeros(qp.m)
    status = Status.MAX_ITER
    it = 0
    rp = b - A @ x
    rd = q + wv * x - At @ y - s
    for it in range(cfg.max_iter + 1):
        rp = b - A @ x
        rd = q + wv * x - At @ y - s
        gap = float(x @ s)
        mu = gap / nu
        pres = np.linalg.norm(rp) / (1 + nb)
        dres = np.linalg.norm(rd) / (1 + nq)
        if pres <= cfg.feas_tol and dres <= cfg.feas_tol and \
                gap <= cfg.gap_tol * max(1.0, abs(qp.objective(x))):
            status = Status.OPTIMAL
            break
        if it == cfg.max_iter:
            break
        if not np.isfinite(gap) or max(np.abs(x).max(), np.abs(s).max()) > 1e15:
            # diverging iterates signal an infeasible subproblem
            log.debug("prox IPM diverged at iteration %d", it)
            status = Status.NUMERICAL_FAILURE
            break

        # scalings
        Q, lamW, scal = [], [], []
        try:
            for sl, blk in zip(slices, blocks):
                if blk.kind is ConeKind.PSD:
                    Lx = np.linalg.cholesky(smat(x[sl]))
                    Ls = np.linalg.cholesky(smat(s[sl]))
                    U, lam, Vt = np.linalg.svd(Ls.T @ Lx)
                    ih = 1.0 / np.sqrt(lam)
                    Rm = (Lx @ Vt.T) * ih
                    Ri = (U.T @ Ls.T) * ih[:, None]
                    d, Qk = np.linalg.eigh(Ri.T @ Ri)
                    if d[0] <= 0:
                        raise np.linalg.LinAlgError("scaling lost definiteness")
                    Q.append(Qk)
                    lamW.append(d)
                    scal.append((lam, Rm, Ri))
                else:
                    xk, sk = x[sl], s[sl]
                    if np.any(xk <= 0) or np.any(sk <= 0):
                        raise np.linalg.LinAlgError("orthant iterate left the cone")
                    Q.append(None)
                    lamW.append(np.sqrt(sk / xk))
                    scal.append(None)
            system = ReducedSystem(blocks, Q, lamW, qp.weights, qp.A, qp.row_components,
                                   regularize=True)
        except np.linalg.LinAlgError as exc:
            log.debug("prox IPM breakdown at iteration %d: %s", it, exc)
            status = Status.NUMERICAL_FAILURE
            break

        def direction(eta_fn):
            G = []
            for k, (sl, blk) in enumerate(zip(slices, blocks)):
                if blk.kind is ConeKind.PSD:
                    lam, Rm, Ri = scal[k]
                    eta = eta_fn(k, lam)
                    t = 2.0 * eta / (lam[:, None] + lam[None, :])
                    G.append(svec(Ri.T @ t @ Ri) - rd[sl])
                else:
                    G.append(eta_fn(k, None) / x[sl] - rd[sl])
            dX, dyp = system.solve(G, rp)
            dx = np.concatenate(dX)
            dy = -dyp
            ds = wv * dx - At @ dy + rd
            return dx, dy, ds

        def step_length(dx, ds, cap):
            amax = cap
            scaled = []
            for k, (sl, blk) in enumerate(zip(slices, blocks)):
                if blk.kind is ConeKind.PSD:
                    lam, Rm, Ri = scal[k]
                    dxb = Ri @ smat(dx[sl]) @ Ri.T
                    dsb = Rm.T @ smat(ds[sl]) @ Rm
                    amax = min(amax, _psd_step(lam, dxb, amax), _psd_step(lam, dsb, amax))
                    scaled.append((dxb, dsb))
                else:
                    amax = min(amax, _orthant_step(x[sl], dx[sl], amax),
                               _orthant_step(s[sl], ds[sl], amax))
                    scaled.append((dx[sl], ds[sl]))
            return amax, scaled

        try:
            # predictor: eta = -lam^2
            def eta_aff(k, lam):
                if lam is None:
                    sl = slices[k]
                    return -x[sl] * s[sl]
                return -np.diag(lam * lam)

            dxa, dya, dsa = direction(eta_aff)
            aa, scaled = step_length(dxa, dsa, 1.0)
            mu_aff = float((x + aa * dxa) @ (s + aa * dsa)) / nu
            sig = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0
            sig = max(sig, cfg.centering_min)

            def eta_cor(k, lam):
                dxb, dsb = scaled[k]
                if lam is None:
                    sl = slices[k]
                    return sig * mu - x[sl] * s[sl] - dxb * dsb
                prod = 0.5 * (dxb @ dsb + dsb @ dxb)
                return sig * mu * np.eye(len(lam)) - np.diag(lam * lam) - prod

            dx, dy, ds = direction(eta_cor)
            amax, _ = step_length(dx, ds, 1.0 / cfg.step_fraction)
        except np.linalg.LinAlgError as exc:
            log.debug("prox IPM breakdown at iteration %d: %s", it, exc)
            status = Status.NUMERICAL_FAILURE
            break
        alpha = min(1.0, cfg.step_fraction * amax)
        # rounding can push a near-boundary step out of the cone
        for _ in range(40):
            if _interior(blocks, slices, x + alpha * dx) and _interior(blocks, slices, s + alpha * ds):
                break
            alpha *= 0.5
        else:
            log.debug("prox IPM breakdown at iteration %d: no interior step", it)
            status = Status.NUMERICAL_FAILURE
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds

    return IPMResult(x, y, s, float(x @ s), float(np.linalg.norm(rp)), float(np.linalg.norm(rd)),
                     status, it, qp.objective(x))


def optimality_residuals(qp: ProxQP, res: IPMResult) -> dict[str, float]:
    """Post-hoc check of the prox optimality conditions.

    Returns the equality residuals, the most negative cone eigenvalue of x
    and s (relative to block norms), and the complementarity ``x's``.
    """
    x, y, s = res.x, res.y, res.s
    wv = qp.weight_vector
    rp = qp.b - qp.stacked_A @ x
    rd = qp.stacked_A.T @ y + s + wv * (qp.center - x) - qp.c
    worst_x = worst_s = 0.0
    for sl, blk in zip(cone_slices(qp.cone), qp.blocks):
        for v, name in ((x[sl], "x"), (s[sl], "s")):
            if blk.kind is ConeKind.PSD:
                lo = np.linalg.eigvalsh(smat(v))[0]
            else:
                lo = float(v.min())
            rel = min(0.0, lo) / max(1.0, np.linalg.norm(v))
            if name == "x":
                worst_x = min(worst_x, rel)
            else:
                worst_s = min(worst_s, rel)
    return {
        "primal": float(np.linalg.norm(rp) / (1 + np.linalg.norm(qp.b))),
        "dual": float(np.linalg.norm(rd) / (1 + np.linalg.norm(qp.c - wv * qp.center))),
        "cone_x": float(worst_x),
        "cone_s": float(worst_s),
        "complementarity": float(abs(x @ s)),
    }


def solve_separable(qps: Sequence[ProxQP], cfg: IPMConfig | None = None,
                    threads: int | None = None) -> list[IPMResult]:
    """Solve independent subproblems, optionally on a thread pool.

    The result order always matches ``qps``.
    """
    cfg = cfg or IPMConfig()

    def run(item):
        i, qp = item
        try:
            return solve_prox_qp(qp, cfg)
        except Exception as exc:  # re-raised with the subproblem index
            raise SubproblemError(i, exc) from exc

    if threads and threads > 1 and len(qps) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, enumerate(qps)))
    return [run(item) for item in enumerate(qps)]
