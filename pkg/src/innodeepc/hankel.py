"""Block-Hankel matrices and the past/future data partition."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import numerics
from .errors import DataLengthError, InputError
from .system import as_sequence


def build_hankel(seq, depth: int) -> np.ndarray:
    """Depth-``depth`` block Hankel matrix of a vector sequence.

    Column ``j`` stacks ``x(j), ..., x(j + depth - 1)``, so the result is
    ``(dim * depth) x (N - depth + 1)``.
    """
    x = as_sequence(seq, name="seq")
    n, dim = x.shape
    if depth < 1:
        raise InputError("depth must be at least 1")
    if n < depth:
        raise DataLengthError(f"sequence length {n} is shorter than depth {depth}")
    # windows: (N - depth + 1, dim, depth) -> columns ordered time-major
    win = sliding_window_view(x, depth, axis=0)
    return np.ascontiguousarray(win.transpose(0, 2, 1).reshape(n - depth + 1, dim * depth).T)


def is_persistently_exciting(seq, order: int, rank_tol=None):
    """Whether ``seq`` is persistently exciting of the given order.

    Returns:
        ``(flag, sigma_min)``; ``sigma_min`` is the smallest singular value
        of the order-``order`` Hankel matrix (0 when it has fewer columns
        than rows).
    """
    H = build_hankel(seq, order)
    f = numerics.svd(H, rank_tol)
    full = f.rank == H.shape[0]
    sigma_min = f.s[H.shape[0] - 1] if H.shape[0] <= H.shape[1] else 0.0
    return bool(full), float(sigma_min)


@dataclass(frozen=True, eq=False)
class HankelBlocks:
    """Past/future row blocks of the input, output and innovation Hankels."""

    U_p: np.ndarray
    U_f: np.ndarray
    Y_p: np.ndarray
    Y_f: np.ndarray
    L_p: int
    L_f: int
    N: int
    E_p: Optional[np.ndarray] = None
    E_f: Optional[np.ndarray] = None

    @property
    def L(self) -> int:
        return self.L_p + self.L_f

    @property
    def n_cols(self) -> int:
        return self.U_p.shape[1]

    @property
    def n_u(self) -> int:
        return self.U_p.shape[0] // self.L_p

    @property
    def n_y(self) -> int:
        return self.Y_p.shape[0] // self.L_p

    @property
    def has_innovations(self) -> bool:
        return self.E_p is not None

    @property
    def U_d(self) -> np.ndarray:
        return np.vstack([self.U_p, self.U_f])

    @property
    def Y_d(self) -> np.ndarray:
        return np.vstack([self.Y_p, self.Y_f])

    @property
    def E_d(self) -> Optional[np.ndarray]:
        return None if self.E_p is None else np.vstack([self.E_p, self.E_f])

    def without_innovations(self) -> "HankelBlocks":
        return HankelBlocks(self.U_p, self.U_f, self.Y_p, self.Y_f, self.L_p, self.L_f, self.N)


def min_data_length(n_u: int, n_y: int, L: int, n_x: int, with_innovations: bool) -> int:
    """Smallest record length for which the fundamental lemma applies."""
    extra = n_y if with_innovations else 0
    return (n_u + extra + 1) * L + n_x - 1


def partition(u_d, y_d, e_d=None, L_p: int = 1, L_f: int = 1, n_x: int = 0) -> HankelBlocks:
    """Split depth-``L_p + L_f`` Hankels of offline data into past/future blocks.

    Args:
        u_d, y_d: Offline input/output records of equal length N.
        e_d: Optional innovation record (true or estimated).
        L_p, L_f: Past and future horizons, both at least 1.
        n_x: Assumed state dimension (an upper bound is fine) used only for
            the data-length check.
    """
    if L_p < 1 or L_f < 1:
        raise InputError("L_p and L_f must both be at least 1")
    u = as_sequence(u_d, name="u_d")
    y = as_sequence(y_d, name="y_d")
    e = None if e_d is None else as_sequence(e_d, y.shape[1], "e_d")
    n = len(u)
    if len(y) != n or (e is not None and len(e) != n):
        raise InputError("offline sequences must share one length")
    L = L_p + L_f
    need = min_data_length(u.shape[1], y.shape[1], L, n_x, e is not None)
    if n < need:
        which = "(n_u + n_y + 1) L + n_x - 1" if e is not None else "(n_u + 1) L + n_x - 1"
        raise DataLengthError(f"N = {n} violates N >= {which} = {need}")
    rows_u, rows_y = u.shape[1] * L_p, y.shape[1] * L_p
    U = build_hankel(u, L)
    Y = build_hankel(y, L)
    blocks = dict(U_p=U[:rows_u], U_f=U[rows_u:], Y_p=Y[:rows_y], Y_f=Y[rows_y:],
                  L_p=L_p, L_f=L_f, N=n)
    if e is not None:
        E = build_hankel(e, L)
        blocks.update(E_p=E[:rows_y], E_f=E[rows_y:])
    return HankelBlocks(**blocks)
