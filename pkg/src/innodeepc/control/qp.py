"""Dense convex quadratic programming.

Problems have the form

    minimize 0.5 z'Hz + f'z  subject to  G z <= h,  A_eq z = b_eq.

Equalities are eliminated with a null-space basis. A strictly convex
reduced problem is solved with the Goldfarb-Idnani dual active-set method,
which starts from the unconstrained minimizer and adds violated constraints
one at a time. Merely convex problems use proximal-point iterations over
that same method, with ADMM plus an active-set polish as a last resort.
"""

import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import numerics
from ..errors import InputError

logger = logging.getLogger(__name__)

QP_TOL = 1e-9
QP_MAX_ITER = 10_000

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    G: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None

    def __post_init__(self):
        H = numerics.as_matrix(self.H, "H")
        n = H.shape[0]
        if H.shape != (n, n):
            raise InputError(f"H must be square, got {H.shape}")
        if not np.allclose(H, H.T, atol=1e-10 * max(1.0, np.abs(H).max())):
            raise InputError("H must be symmetric")
        f = np.asarray(self.f, dtype=float).ravel()
        if f.size != n:
            raise InputError(f"f has {f.size} entries, expected {n}")
        G, h = _pair(self.G, self.h, n, "G", "h")
        A, b = _pair(self.A_eq, self.b_eq, n, "A_eq", "b_eq")
        for name, val in (("H", 0.5 * (H + H.T)), ("f", f), ("G", G), ("h", h),
                          ("A_eq", A), ("b_eq", b)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        return float(0.5 * z @ self.H @ z + self.f @ z)


def _pair(M, v, n, mname, vname):
    if M is None:
        return np.zeros((0, n)), np.zeros(0)
    M = np.asarray(M, dtype=float).reshape(-1, n)
    v = np.asarray(v, dtype=float).ravel()
    if v.size != M.shape[0]:
        raise InputError(f"{vname} has {v.size} entries for {M.shape[0]} rows of {mname}")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(v))):
        raise InputError(f"{mname}/{vname} must be finite; drop unbounded rows instead")
    return M, v


def box_constraints(n: int, lo, hi):
    """``(G, h)`` for ``lo <= z <= hi``; infinite bounds produce no rows."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
    if np.any(lo > hi):
        raise InputError("lower bound exceeds upper bound")
    eye = np.eye(n)
    up, dn = np.isfinite(hi), np.isfinite(lo)
    return np.vstack([eye[up], -eye[dn]]), np.concatenate([hi[up], -lo[dn]])


@dataclass
class QpResult:
    z: np.ndarray
    status: str
    iterations: int
    multipliers: np.ndarray
    eq_multipliers: np.ndarray
    kkt: dict = field(default_factory=dict)
    violated: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(p: QpProblem, z, lam, nu) -> dict:
    """Infinity-norm KKT residuals of a candidate primal/dual pair."""
    grad = p.H @ z + p.f + p.G.T @ lam + p.A_eq.T @ nu
    slack = p.G @ z - p.h
    scale = 1.0 + max(np.abs(p.f).max(initial=0), np.abs(p.h).max(initial=0))
    return {
        "stationarity": float(np.abs(grad).max(initial=0)) / scale,
        "primal": float(max(slack.max(initial=0), 0.0,
                            np.abs(p.A_eq @ z - p.b_eq).max(initial=0))),
        "dual": float(max(-lam.min(initial=0), 0.0)),
        "complementarity": float(np.abs(lam * slack).max(initial=0)) / scale,
    }


_FACTOR_CACHE: "OrderedDict[bytes, tuple]" = OrderedDict()
_FACTOR_CACHE_SIZE = 8


def _hessian_factors(H):
    """``(eigvals, Hinv)`` of a Hessian, or ``(eigvals, None)`` if not strictly convex.

    Controllers with a fixed Hessian solve the same matrix every step, so
    the last few factorizations are memoized on the matrix contents.
    """
    key = hashlib.blake2b(H.tobytes(), digest_size=16).digest() + bytes(str(H.shape), "ascii")
    hit = _FACTOR_CACHE.get(key)
    if hit is not None:
        _FACTOR_CACHE.move_to_end(key)
        return hit
    eig = np.linalg.eigvalsh(H)
    Hinv = None
    if eig[0] > 0 and eig[-1] < 1e12 * eig[0]:
        Linv = np.linalg.inv(np.linalg.cholesky(H))
        Hinv = Linv.T @ Linv
    _FACTOR_CACHE[key] = (eig, Hinv)
    if len(_FACTOR_CACHE) > _FACTOR_CACHE_SIZE:
        _FACTOR_CACHE.popitem(last=False)
    return eig, Hinv


def _goldfarb_idnani(H, f, N, b, tol, max_iter):
    """Dual active-set method for ``min 0.5x'Hx + f'x  s.t.  N'x >= b``.

    ``H`` must be strictly convex. Returns
    ``(x, lam, status, iterations, violated)``.
    """
    n, m = N.shape
    eig, Hinv = _hessian_factors(H)
    x = -Hinv @ f
    lam = np.zeros(m)
    active = []
    scale = 1.0 + np.abs(b).max(initial=0) + np.abs(f).max(initial=0)
    degenerate = 1e-14 / eig[0]
    it = 0
    while it < max_iter:
        it += 1
        s = N.T @ x - b
        s[active] = 0.0
        p = int(np.argmin(s)) if m else 0
        if not m or s[p] >= -tol * scale:
            return x, lam, OPTIMAL, it, None
        u_p = 0.0
        u_a = lam[active].copy()
        while True:
            it += 1
            if it > max_iter:
                return x, lam, MAX_ITER, it, None
            Na = N[:, active]
            n_p = N[:, p]
            if active:
                HN = Hinv @ Na
                Nstar = np.linalg.solve(Na.T @ HN, HN.T)
                r = Nstar @ n_p
                z = Hinv @ n_p - HN @ r
            else:
                r = np.zeros(0)
                z = Hinv @ n_p
            # largest dual step keeping active multipliers nonnegative
            pos = r > 1e-14
            t1, k_drop = np.inf, -1
            if pos.any():
                ratios = np.where(pos, u_a / np.where(pos, r, 1.0), np.inf)
                k_drop = int(np.argmin(ratios))
                t1 = ratios[k_drop]
            zn = z @ n_p
            if zn <= degenerate * (n_p @ n_p):
                if not np.isfinite(t1):
                    return x, lam, INFEASIBLE, it, p
                u_a -= t1 * r
                u_p += t1
                del active[k_drop]
                u_a = np.delete(u_a, k_drop)
                continue
            t2 = -(n_p @ x - b[p]) / zn
            t = min(t1, t2)
            x = x + t * z
            u_a -= t * r
            u_p += t
            lam[:] = 0.0
            lam[active] = u_a
            if t2 <= t1:
                active.append(p)
                u_a = np.append(u_a, u_p)
                lam[p] = u_p
                break
            del active[k_drop]
            u_a = np.delete(u_a, k_drop)
            lam[:] = 0.0
            lam[active] = u_a
            lam[p] = u_p
    return x, lam, MAX_ITER, it, None


def _proximal(H, f, G, h, tol, max_iter, outer=500):
    """Proximal-point iterations for a merely convex ``H``.

    Each step solves the strictly convex problem with ``H + eps I`` and the
    linear term shifted by ``-eps x_k`` exactly with Goldfarb-Idnani; the
    iterates converge to a minimizer of the original problem.
    Returns ``(x, lam, status, iterations, violated)``.
    """
    n = H.shape[0]
    eps = 1e-8 * max(1.0, np.abs(H).max(initial=0))
    Hp = H + eps * np.eye(n)
    x = np.zeros(n)
    lam = np.zeros(G.shape[0])
    total = 0
    for _ in range(outer):
        x_new, lam, status, it, viol = _goldfarb_idnani(Hp, f - eps * x, -G.T, -h, tol,
                                                        max_iter)
        total += it
        if status != OPTIMAL:
            return x_new, lam, status, total, viol
        # the stationarity residual of the original problem is eps * (x_new - x)
        step = np.abs(x_new - x).max(initial=0)
        x = x_new
        if eps * step <= tol * (1.0 + np.abs(f).max(initial=0)):
            return x, lam, OPTIMAL, total, None
    return x, lam, MAX_ITER, total, None


def _admm(H, f, G, h, tol, max_iter, rho=1.0, sigma=1e-6):
    """Operator splitting for ``G x <= h`` with positive semidefinite ``H``.

    The objective is rescaled and the constraint rows normalized before
    iterating; multipliers are mapped back to the original problem. If an
    iterate stops being finite the last finite one is returned with
    status ``max-iter``.
    """
    n, m = H.shape[0], G.shape[0]
    scale = max(1.0, np.abs(H).max(initial=0), np.abs(f).max(initial=0))
    Hs, fs = H / scale, f / scale
    row = np.linalg.norm(G, axis=1)
    row[row == 0] = 1.0
    Gs, hs = G / row[:, None], h / row
    x = np.zeros(n)
    zc = np.minimum(Gs @ x, hs)
    y = np.zeros(m)
    Lk = np.linalg.cholesky(Hs + sigma * np.eye(n) + rho * Gs.T @ Gs)
    status, it = MAX_ITER, max_iter
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, max_iter + 1):
            rhs = sigma * x - fs + Gs.T @ (rho * zc - y)
            x_new = np.linalg.solve(Lk.T, np.linalg.solve(Lk, rhs))
            Gx = Gs @ x_new
            z_new = np.minimum(Gx + y / rho, hs)
            y_new = y + rho * (Gx - z_new)
            if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(y_new))):
                logger.debug("ADMM iterate diverged at iteration %d", k)
                it = k
                break
            x, y, zc = x_new, y_new, z_new
            r_prim = np.abs(Gx - z_new).max(initial=0)
            r_dual = np.abs(Hs @ x + fs + Gs.T @ y).max(initial=0)
            if r_prim <= tol and r_dual <= tol:
                status, it = OPTIMAL, k
                break
    return x, np.maximum(y, 0.0) * scale / row, status, it


def _polish(H, f, G, h, x, lam, tol):
    """Re-solve the KKT system on the active set guessed by ADMM."""
    act = np.where((lam > tol) | (G @ x >= h - 1e-7))[0]
    n = H.shape[0]
    Ga = G[act]
    K = np.block([[H, Ga.T], [Ga, np.zeros((len(act), len(act)))]])
    sol = np.linalg.lstsq(K, np.concatenate([-f, h[act]]), rcond=None)[0]
    xp = sol[:n]
    lp = np.zeros(G.shape[0])
    lp[act] = sol[n:]
    if np.all(G @ xp <= h + tol) and np.all(lp >= -tol):
        return xp, np.maximum(lp, 0.0)
    return x, lam


def solve_qp(p: QpProblem, tol: float = QP_TOL, max_iter: int = QP_MAX_ITER) -> QpResult:
    """Solve a convex QP.

    Returns a :class:`QpResult` whose ``status`` is ``optimal``, ``max-iter``
    or ``infeasible``. For infeasible problems ``violated`` is the index of
    an inequality row that cannot be satisfied together with those already
    active (the Goldfarb-Idnani infeasibility certificate); ``-1`` marks
    inconsistent equalities.
    """
    n = p.n
    # eliminate equalities: z = z0 + Zb y
    if p.A_eq.shape[0]:
        z0 = numerics.pinv(p.A_eq) @ p.b_eq
        eq_gap = np.abs(p.A_eq @ z0 - p.b_eq).max()
        if eq_gap > 1e-8 * (1.0 + np.abs(p.b_eq).max()):
            return QpResult(z0, INFEASIBLE, 0, np.zeros(p.G.shape[0]),
                            np.zeros(p.A_eq.shape[0]), violated=-1)
        Zb = numerics.null_space_projector(p.A_eq)
    else:
        z0, Zb = np.zeros(n), np.eye(n)
    Hr = Zb.T @ p.H @ Zb
    fr = Zb.T @ (p.H @ z0 + p.f)
    Gr = p.G @ Zb
    hr = p.h - p.G @ z0

    if Zb.shape[1] == 0:
        y, lam, status, it, viol = np.zeros(0), np.zeros(p.G.shape[0]), OPTIMAL, 0, None
        if hr.size and hr.min() < -tol:
            status, viol = INFEASIBLE, int(np.argmin(hr))
    else:
        strictly_convex = _hessian_factors(Hr)[1] is not None
        if strictly_convex:
            y, lam, status, it, viol = _goldfarb_idnani(Hr, fr, -Gr.T, -hr, tol, max_iter)
        elif Gr.shape[0] == 0:
            y = -np.linalg.lstsq(Hr, fr, rcond=None)[0]
            lam, it, viol = np.zeros(0), 1, None
            resid = np.abs(Hr @ y + fr).max(initial=0)
            status = OPTIMAL if resid <= 1e-8 * (1 + np.abs(fr).max()) else MAX_ITER
        else:
            logger.debug("reduced Hessian is singular, using proximal iterations")
            y, lam, status, it, viol = _proximal(Hr, fr, Gr, hr, tol, max_iter)
            if status == OPTIMAL:
                y, lam = _polish(Hr, fr, Gr, hr, y, lam, 1e-7)
            elif status == MAX_ITER:
                logger.debug("proximal iterations stalled, using ADMM")
                y, lam, status, it = _admm(Hr, fr, Gr, hr, tol, max_iter)
                y, lam = _polish(Hr, fr, Gr, hr, y, lam, 1e-7)
                if status == MAX_ITER and np.all(Gr @ y <= hr + 1e-7):
                    res = Hr @ y + fr + Gr.T @ lam
                    if np.abs(res).max(initial=0) <= 1e-7 * (1 + np.abs(fr).max(initial=0)):
                        status = OPTIMAL
    z = z0 + Zb @ y
    nu = np.zeros(p.A_eq.shape[0])
    if p.A_eq.shape[0]:
        g = p.H @ z + p.f + p.G.T @ lam
        nu = -np.linalg.lstsq(p.A_eq.T, g, rcond=None)[0]
    return QpResult(z, status, it, lam, nu, kkt_residuals(p, z, lam, nu), viol)
