"""Dense linear-algebra kernel.

Everything here is a pure function of its inputs. Rank decisions use a
relative tolerance: singular values below ``rank_tol * sigma_max`` count as
zero, with ``rank_tol`` defaulting to ``max(rows, cols) * eps``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CertificateError, InputError, NumericalError

EPS = np.finfo(float).eps

DARE_TOL = 1e-12
DARE_MAX_ITER = 100_000


@dataclass(frozen=True)
class SvdFactors:
    """Full SVD of a matrix together with the rank tolerance used on it."""

    U: np.ndarray
    s: np.ndarray
    Vt: np.ndarray
    rank_tol: float

    @property
    def threshold(self) -> float:
        return self.rank_tol * self.s[0] if self.s.size else 0.0

    @property
    def rank(self) -> int:
        if not self.s.size or self.s[0] == 0.0:
            return 0
        return int(np.count_nonzero(self.s > self.threshold))

    @property
    def sigma_min(self) -> float:
        """Smallest of the min(rows, cols) singular values (0 for empty input)."""
        return float(self.s[-1]) if self.s.size else 0.0


def as_matrix(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError(f"{name} must be a 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains NaN or Inf entries")
    return X


def default_rank_tol(X) -> float:
    return max(X.shape) * EPS


def svd(X, rank_tol=None) -> SvdFactors:
    X = as_matrix(X)
    if rank_tol is None:
        rank_tol = default_rank_tol(X)
    if rank_tol < 0:
        raise InputError("rank_tol must be nonnegative")
    try:
        U, s, Vt = np.linalg.svd(X, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return SvdFactors(U, s, Vt, float(rank_tol))


def rank(X, rank_tol=None) -> int:
    return svd(X, rank_tol).rank


def pinv(X, rank_tol=None) -> np.ndarray:
    """Moore-Penrose inverse with relative singular-value cutoff.

    Args:
        X: Matrix to invert, any shape.
        rank_tol: Singular values below ``rank_tol * sigma_max`` are treated
            as zero. Defaults to ``max(X.shape) * eps``.

    Returns:
        The ``cols x rows`` pseudo-inverse.
    """
    X = as_matrix(X)
    if X.size == 0:
        return np.zeros((X.shape[1], X.shape[0]))
    f = svd(X, rank_tol)
    r = f.rank
    if r == 0:
        return np.zeros((X.shape[1], X.shape[0]))
    return (f.Vt[:r].T / f.s[:r]) @ f.U[:, :r].T


def null_space_projector(X, rank_tol=None) -> np.ndarray:
    """Orthonormal basis of the null space of ``X``.

    The result has ``cols(X) - rank(X)`` columns and satisfies
    ``X @ N ~ 0`` and ``N.T @ N = I``.
    """
    X = as_matrix(X)
    if X.shape[0] == 0:
        return np.eye(X.shape[1])
    f = svd(X, rank_tol)
    return f.Vt[f.rank:].T.copy()


def spectral_radius(X) -> float:
    X = as_matrix(X)
    if X.shape[0] != X.shape[1]:
        raise InputError(f"spectral radius needs a square matrix, got {X.shape}")
    if X.size == 0:
        return 0.0
    try:
        lam = np.linalg.eigvals(X)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue solver did not converge: {exc}") from exc
    return float(np.max(np.abs(lam)))


def is_schur(X) -> bool:
    return spectral_radius(X) < 1.0


def _riccati_map(P, A, C, Sw, Sv):
    S = C @ P @ C.T + Sv
    APC = A @ P @ C.T
    P_next = A @ P @ A.T + Sw - APC @ np.linalg.solve(S, APC.T)
    return 0.5 * (P_next + P_next.T)


def solve_dare(A, C, Sigma_w, Sigma_v, tol=DARE_TOL, max_iter=DARE_MAX_ITER):
    """Steady-state Kalman gain by fixed-point iteration of the Riccati map.

    The gain is in predictor form, ``x(t+1) = A x(t) + B u(t) + K e(t)``,
    so ``K = A P C' (C P C' + Sigma_v)^-1`` with ``P`` the one-step-ahead
    error covariance.

    Returns:
        ``(K, P)``.

    Raises:
        InputError: ``Sigma_v`` is singular or shapes disagree.
        CertificateError: no convergence in ``max_iter`` steps, or the
            resulting ``A - K C`` is not Schur stable.
    """
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    Sw = as_matrix(Sigma_w, "Sigma_w")
    Sv = as_matrix(Sigma_v, "Sigma_v")
    n, m = A.shape[0], C.shape[0]
    if A.shape != (n, n) or C.shape[1] != n or Sw.shape != (n, n) or Sv.shape != (m, m):
        raise InputError("inconsistent shapes for A, C, Sigma_w, Sigma_v")
    if np.linalg.matrix_rank(Sv) < m or np.min(np.linalg.eigvalsh(0.5 * (Sv + Sv.T))) <= 0:
        raise InputError("Sigma_v must be positive definite")

    # starting above the fixed point gives the stabilizing solution even when Sigma_w is singular
    P = Sw + np.eye(n)
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            P_next = _riccati_map(P, A, C, Sw, Sv)
        if not np.all(np.isfinite(P_next)):
            raise CertificateError("Riccati iteration diverged; (A, C) is not detectable")
        if np.linalg.norm(P_next - P, "fro") <= tol:
            P = P_next
            break
        P = P_next
    else:
        raise CertificateError(f"Riccati iteration did not converge in {max_iter} steps")

    K = A @ P @ C.T @ np.linalg.inv(C @ P @ C.T + Sv)
    radius = spectral_radius(A - K @ C)
    if radius >= 1.0:
        raise CertificateError(f"A - KC is not Schur stable (spectral radius {radius:.6g})")
    return K, P


def riccati_residual(P, A, C, Sigma_w, Sigma_v) -> float:
    """Frobenius norm of ``Ric(P) - P``; zero at the fixed point."""
    return float(np.linalg.norm(_riccati_map(P, A, C, Sigma_w, Sigma_v) - P, "fro"))


def least_squares(Y, X, rank_tol=None) -> np.ndarray:
    """Minimizer of ``||Y - Theta X||_F``, computed as ``Y pinv(X)``."""
    Y = as_matrix(Y, "Y")
    X = as_matrix(X, "X")
    if Y.shape[1] != X.shape[1]:
        raise InputError(f"Y and X need the same column count, got {Y.shape} and {X.shape}")
    return Y @ pinv(X, rank_tol)
