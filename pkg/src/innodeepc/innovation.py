"""Innovation estimation by non-parametric VARX least squares.

The regression predicts ``y(t)`` from the ``rho`` previous outputs and
inputs plus the current input. Its residuals estimate the Kalman
innovations without identifying any state-space matrices.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import numerics
from .errors import DataLengthError, InnoDeePCError, InputError
from .hankel import build_hankel, partition
from .system import as_sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class VarxFit:
    """Coefficients and residuals of a VARX fit of order ``rho``.

    ``Phi_y`` and ``Phi_u`` are laid out oldest lag first, matching the row
    order of the regressor Hankels. ``e_hat`` has one row per estimation
    sample.
    """

    rho: int
    Phi_y: np.ndarray
    Phi_u: np.ndarray
    D_hat: np.ndarray
    e_hat: np.ndarray
    residual_norm: float
    regressor_rank: int
    with_feedthrough: bool = True
    warnings: List[str] = field(default_factory=list)

    @property
    def coefficients(self) -> np.ndarray:
        return np.hstack([self.Phi_y, self.Phi_u, self.D_hat])

    def predict_one_step(self, u, y) -> np.ndarray:
        """One-step predictions for samples ``rho..len-1`` of new data."""
        u = as_sequence(u, self.Phi_u.shape[1] // self.rho, "u")
        y = as_sequence(y, self.Phi_y.shape[0], "y")
        ups = _regressor(u, y, self.rho, len(u) - self.rho, self.with_feedthrough)
        coef = self.coefficients if self.with_feedthrough else np.hstack([self.Phi_y, self.Phi_u])
        return (coef @ ups).T


def _regressor(u, y, rho, n_est, with_d):
    rows = [build_hankel(y[:rho + n_est - 1], rho), build_hankel(u[:rho + n_est - 1], rho)]
    if with_d:
        rows.append(u[rho:].T)
    return np.vstack(rows)


def fit_varx(u, y, rho: int, pin_d_zero: bool = False, rank_tol=None) -> VarxFit:
    """Least-squares VARX fit and its innovation residuals.

    Args:
        u, y: Records of length ``N + rho``. The first ``rho`` samples only
            feed the regressor; residuals are produced for the last ``N``.
        rho: Number of past lags.
        pin_d_zero: Treat the feedthrough as known to be zero.

    Raises:
        DataLengthError: fewer estimation samples than regressor rows.
    """
    if rho < 1:
        raise InputError("rho must be at least 1")
    u = as_sequence(u, name="u")
    y = as_sequence(y, name="y")
    if len(u) != len(y):
        raise InputError("u and y lengths differ")
    n_u, n_y = u.shape[1], y.shape[1]
    n_est = len(u) - rho
    n_rows = (n_u + n_y) * rho + (0 if pin_d_zero else n_u)
    if n_est <= n_rows:
        raise DataLengthError(
            f"{n_est} estimation samples for {n_rows} regressors (rho = {rho}); "
            f"need more than {n_rows}"
        )

    ups = _regressor(u, y, rho, n_est, not pin_d_zero)
    target = y[rho:].T
    f = numerics.svd(ups, rank_tol)
    warnings = []
    if f.rank < ups.shape[0]:
        msg = f"VARX regressor is rank deficient ({f.rank} < {ups.shape[0]}) for rho = {rho}"
        logger.warning(msg)
        warnings.append(msg)
    coef = numerics.least_squares(target, ups, rank_tol)
    resid = target - coef @ ups
    Phi_y = coef[:, :n_y * rho]
    Phi_u = coef[:, n_y * rho:(n_y + n_u) * rho]
    D_hat = np.zeros((n_y, n_u)) if pin_d_zero else coef[:, (n_y + n_u) * rho:]
    return VarxFit(rho, Phi_y, Phi_u, D_hat, resid.T.copy(),
                   float(np.linalg.norm(resid)), f.rank, not pin_d_zero, warnings)


def innovation_quality(e_hat, e_true):
    """Per-channel Pearson correlation and variance ratio ``var(e_hat)/var(e_true)``.

    Channels with zero variance get NaN.
    """
    a = as_sequence(e_hat, name="e_hat")
    b = as_sequence(e_true, a.shape[1], "e_true")
    if len(a) != len(b):
        raise InputError("e_hat and e_true lengths differ")
    corr = np.full(a.shape[1], np.nan)
    ratio = np.full(a.shape[1], np.nan)
    for i in range(a.shape[1]):
        va, vb = np.var(a[:, i]), np.var(b[:, i])
        if vb > 0:
            ratio[i] = va / vb
        if va > 0 and vb > 0:
            corr[i] = np.corrcoef(a[:, i], b[:, i])[0, 1]
    return corr, ratio


@dataclass(frozen=True)
class SweepRow:
    rho: int
    residual_norm: float
    validation_rms: float
    theta_radius: float
    stable: bool
    note: str = ""

    def as_row(self):
        return [self.rho, self.residual_norm, self.validation_rms, self.theta_radius,
                int(self.stable), self.note]


SWEEP_HEADER = ["rho", "residual_norm", "validation_rms", "theta_radius", "stable", "note"]


def offline_window(u, y, rho, n_est):
    """Trailing ``rho + n_est`` samples of a record with extra leading history."""
    start = len(u) - n_est - rho
    if start < 0:
        raise DataLengthError(f"record of length {len(u)} cannot supply {rho} lags before "
                              f"{n_est} estimation samples")
    return u[start:], y[start:]


def sweep_rho(u, y, rho_candidates: Sequence[int], L_p: int, L_f: int,
              n_est: Optional[int] = None, validation_fraction: float = 0.0,
              n_x: int = 0, pin_d_zero: bool = False) -> List[SweepRow]:
    """Evaluate the stability gate for each candidate VARX order.

    Args:
        u, y: Offline record; the last ``n_est`` samples form the Hankel data
            and earlier samples provide VARX history. ``n_est`` defaults to
            ``len(u) - max(rho_candidates)``.
        validation_fraction: If positive, also refit on the leading part of
            the estimation window and report the RMS one-step error on the
            held-out tail.

    Returns:
        One row per candidate, in the given order. Candidates that cannot be
        fitted are reported as unstable with a note.
    """
    from .predictor import build_inno_predictor

    if not rho_candidates:
        raise InputError("rho_candidates must be nonempty")
    u = as_sequence(u, name="u")
    y = as_sequence(y, name="y")
    if n_est is None:
        n_est = len(u) - max(rho_candidates)
    rows = []
    for rho in rho_candidates:
        try:
            uu, yy = offline_window(u, y, rho, n_est)
            fit = fit_varx(uu, yy, rho, pin_d_zero=pin_d_zero)
            blocks = partition(uu[rho:], yy[rho:], fit.e_hat, L_p, L_f, n_x=n_x)
            pred = build_inno_predictor(blocks)
        except InnoDeePCError as exc:  # reported per row, the sweep continues
            rows.append(SweepRow(rho, float("nan"), float("nan"), float("nan"), False,
                                 f"{type(exc).__name__}: {exc}"))
            continue
        val = float("nan")
        if validation_fraction > 0:
            n_val = int(round(validation_fraction * n_est))
            try:
                head = fit_varx(uu[:len(uu) - n_val], yy[:len(yy) - n_val], rho, pin_d_zero)
                tail_u, tail_y = uu[len(uu) - n_val - rho:], yy[len(yy) - n_val - rho:]
                err = tail_y[rho:] - head.predict_one_step(tail_u, tail_y)
                val = float(np.sqrt(np.mean(err ** 2)))
            except DataLengthError:
                pass
        rows.append(SweepRow(rho, fit.residual_norm, val, pred.theta_radius,
                             pred.theta_radius < 1.0))
    return rows
