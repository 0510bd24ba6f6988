"""Innovation-based data-driven output predictor and the SPC baseline.

The predictor solves, in minimum-norm sense,

    col(U_p N, U_f N, Y_p N, E_p N) h = col(u_p, u_f, y_p, e_p)

where the columns of ``N`` span the null space of the future innovation
block ``E_f``, then predicts ``y_f = Y_f N h``. Everything that does not
depend on the online windows is precomputed once, so a prediction is a
single matrix-vector product.

Closed-loop use keeps a moving window of past inputs, outputs and
innovation estimates (:class:`OnlineState`); the newest innovation is the
measured output minus the one-step prediction made with the applied input.
"""

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import numerics
from .errors import InputError, RankError
from .hankel import HankelBlocks

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class InnoPredictor:
    """Precomputed maps of the innovation-based predictor.

    ``M`` maps the stacked right-hand side to ``alpha = N h``; ``P`` and
    ``Z1..Z3`` describe how the next right-hand side is assembled from the
    current one, and ``theta = M P`` is the closed-loop transition of the
    prediction-error dynamics. ``theta_radius < 1`` is the validity
    certificate for the innovation estimates behind ``E_p``/``E_f``.
    """

    blocks: HankelBlocks
    ef_perp: np.ndarray
    stacked_pinv: np.ndarray
    M: np.ndarray
    P: np.ndarray
    Z1: np.ndarray
    Z2: np.ndarray
    Z3: np.ndarray
    theta: np.ndarray
    theta_radius: float
    ef_sigma_min: float
    gain: np.ndarray

    @property
    def L_p(self) -> int:
        return self.blocks.L_p

    @property
    def L_f(self) -> int:
        return self.blocks.L_f

    @property
    def n_u(self) -> int:
        return self.blocks.n_u

    @property
    def n_y(self) -> int:
        return self.blocks.n_y

    @property
    def is_stable(self) -> bool:
        return self.theta_radius < 1.0

    def summary(self) -> dict:
        return {
            "L_p": self.L_p,
            "L_f": self.L_f,
            "n_u": self.n_u,
            "n_y": self.n_y,
            "N": self.blocks.N,
            "hankel_columns": self.blocks.n_cols,
            "null_space_dim": self.ef_perp.shape[1],
            "ef_sigma_min": self.ef_sigma_min,
            "theta_radius": self.theta_radius,
            "theta_stable": self.is_stable,
        }


class PredictionResult(NamedTuple):
    y_f_hat: np.ndarray
    h_norm: float
    one_step: np.ndarray


@dataclass(frozen=True)
class OnlineState:
    """Stacked past windows at time ``t`` (oldest sample first)."""

    u_p: np.ndarray
    y_p: np.ndarray
    e_p: np.ndarray
    t: int = 0

    @classmethod
    def from_windows(cls, u_win, y_win, e_win=None, t=0) -> "OnlineState":
        u = np.asarray(u_win, dtype=float).ravel()
        y = np.asarray(y_win, dtype=float).ravel()
        e = np.zeros_like(y) if e_win is None else np.asarray(e_win, dtype=float).ravel()
        return cls(u, y, e, t)


def _selector_blocks(blocks: HankelBlocks, E_p: np.ndarray):
    n_u, n_y, L_p, L_f = blocks.n_u, blocks.n_y, blocks.L_p, blocks.L_f
    m = blocks.n_cols
    L = L_p + L_f
    y1 = blocks.Y_f[:n_y]
    P = np.vstack([
        blocks.U_p[n_u:], blocks.U_f[:n_u], np.zeros((n_u * L_f, m)),
        blocks.Y_p[n_y:], np.zeros((n_y, m)),
        E_p[n_y:], -y1,
    ])
    lead = n_u * L + n_y * (L_p - 1)
    Z1 = np.vstack([np.zeros((lead, m)), y1, np.zeros((n_y * (L_p - 1), m)), y1])
    Z2 = np.vstack([np.zeros((n_u * L_p, n_u * L_f)), np.eye(n_u * L_f),
                    np.zeros((2 * n_y * L_p, n_u * L_f))])
    Z3 = np.vstack([np.zeros((lead, n_y)), np.eye(n_y),
                    np.zeros((n_y * (L_p - 1), n_y)), np.eye(n_y)])
    return P, Z1, Z2, Z3


def build_inno_predictor(blocks: HankelBlocks, rank_tol=None,
                         require_full_rank: bool = True) -> InnoPredictor:
    """Precompute the innovation-based predictor from partitioned offline data.

    Args:
        blocks: Partition that includes ``E_p``/``E_f`` (estimated or true).
        rank_tol: Relative singular-value cutoff for the pseudo-inverses.
        require_full_rank: Reject data whose ``E_f`` is rank deficient. Pass
            False for degenerate cases such as all-zero innovations.

    Raises:
        InputError: the blocks carry no innovation data.
        RankError: ``E_f`` lacks full row rank and ``require_full_rank`` is set.
    """
    if not blocks.has_innovations:
        raise InputError("innovation blocks E_p/E_f are required")
    ef = numerics.svd(blocks.E_f, rank_tol)
    full_rows = blocks.E_f.shape[0]
    sigma_min = float(ef.s[full_rows - 1]) if full_rows <= blocks.n_cols else 0.0
    if ef.rank < full_rows and require_full_rank:
        raise RankError(
            f"E_f has rank {ef.rank} < {full_rows} rows (sigma_min = {sigma_min:.3e})",
            sigma_min,
        )
    ef_perp = ef.Vt[ef.rank:].T.copy()
    stacked = np.vstack([blocks.U_p @ ef_perp, blocks.U_f @ ef_perp,
                         blocks.Y_p @ ef_perp, blocks.E_p @ ef_perp])
    stacked_pinv = numerics.pinv(stacked, rank_tol)
    M = ef_perp @ stacked_pinv
    P, Z1, Z2, Z3 = _selector_blocks(blocks, blocks.E_p)
    theta = M @ P
    # M P and P M share their nonzero eigenvalues; P M is the smaller matrix
    radius = numerics.spectral_radius(P @ M if P.shape[0] < M.shape[0] else theta)
    gain = blocks.Y_f @ M
    return InnoPredictor(blocks, ef_perp, stacked_pinv, M, P, Z1, Z2, Z3, theta, radius,
                         sigma_min, gain)


def stacked_rhs(pred, state: OnlineState, u_f) -> np.ndarray:
    u_f = np.asarray(u_f, dtype=float).ravel()
    n_u, n_y, L_p, L_f = pred.n_u, pred.n_y, pred.L_p, pred.L_f
    if u_f.size != n_u * L_f:
        raise InputError(f"u_f has {u_f.size} entries, expected {n_u * L_f}")
    if state.u_p.size != n_u * L_p or state.y_p.size != n_y * L_p or state.e_p.size != n_y * L_p:
        raise InputError("online windows do not match the predictor's past horizon")
    return np.concatenate([state.u_p, u_f, state.y_p, state.e_p])


def predict(pred: InnoPredictor, state: OnlineState, u_f) -> PredictionResult:
    rhs = stacked_rhs(pred, state, u_f)
    h = pred.stacked_pinv @ rhs
    y_f = pred.gain @ rhs
    return PredictionResult(y_f, float(np.linalg.norm(h)), y_f[:pred.n_y].copy())


def alpha(pred: InnoPredictor, state: OnlineState, u_f) -> np.ndarray:
    """The combination vector ``N h`` over Hankel columns."""
    return pred.M @ stacked_rhs(pred, state, u_f)


@dataclass(frozen=True, eq=False)
class SpcPredictor:
    """Pseudo-inverse predictor without innovation blocks."""

    blocks: HankelBlocks
    g_map: np.ndarray
    gain: np.ndarray

    @property
    def L_p(self) -> int:
        return self.blocks.L_p

    @property
    def L_f(self) -> int:
        return self.blocks.L_f

    @property
    def n_u(self) -> int:
        return self.blocks.n_u

    @property
    def n_y(self) -> int:
        return self.blocks.n_y


def build_spc_predictor(blocks: HankelBlocks, rank_tol=None) -> SpcPredictor:
    g_map = numerics.pinv(np.vstack([blocks.U_p, blocks.U_f, blocks.Y_p]), rank_tol)
    return SpcPredictor(blocks.without_innovations(), g_map, blocks.Y_f @ g_map)


def predict_spc(spc, u_p, y_p, u_f) -> PredictionResult:
    """SPC prediction; ``spc`` may be a prebuilt :class:`SpcPredictor` or raw blocks."""
    if isinstance(spc, HankelBlocks):
        spc = build_spc_predictor(spc)
    u_p = np.asarray(u_p, dtype=float).ravel()
    y_p = np.asarray(y_p, dtype=float).ravel()
    u_f = np.asarray(u_f, dtype=float).ravel()
    if (u_p.size != spc.n_u * spc.L_p or y_p.size != spc.n_y * spc.L_p
            or u_f.size != spc.n_u * spc.L_f):
        raise InputError("window sizes do not match the SPC horizons")
    rhs = np.concatenate([u_p, u_f, y_p])
    g = spc.g_map @ rhs
    y_f = spc.gain @ rhs
    return PredictionResult(y_f, float(np.linalg.norm(g)), y_f[:spc.n_y].copy())


def update_window(state: OnlineState, u_t, y_t, one_step=None, e_t=None) -> OnlineState:
    """Shift every window by one sample.

    The appended innovation is ``y_t - one_step`` unless ``e_t`` is given
    explicitly (used when true innovations are available).
    """
    u_t = np.atleast_1d(np.asarray(u_t, dtype=float)).ravel()
    y_t = np.atleast_1d(np.asarray(y_t, dtype=float)).ravel()
    if e_t is None:
        if one_step is None:
            raise InputError("need either the one-step prediction or the innovation")
        e_t = y_t - np.asarray(one_step, dtype=float).ravel()
    e_t = np.atleast_1d(np.asarray(e_t, dtype=float)).ravel()
    if u_t.size > state.u_p.size or y_t.size > state.y_p.size or e_t.size != y_t.size:
        raise InputError("sample sizes do not match the windows")
    return OnlineState(
        np.concatenate([state.u_p[u_t.size:], u_t]),
        np.concatenate([state.y_p[y_t.size:], y_t]),
        np.concatenate([state.e_p[e_t.size:], e_t]),
        state.t + 1,
    )


class WindowInit(NamedTuple):
    e_p: np.ndarray
    feasibility_gap: float
    g: np.ndarray


def init_innovation_window(blocks: HankelBlocks, u_p0, y_p0, rank_tol=None) -> WindowInit:
    """Least-norm initial innovation window.

    Minimizes ``||E_p g||`` over ``g`` subject to ``col(U_p, Y_p) g =
    col(u_p0, y_p0)`` by the null-space method, and returns ``E_p g``. If
    the equality is not exactly attainable the least-squares-feasible
    ``g`` is used and the residual norm is reported as ``feasibility_gap``.
    """
    if not blocks.has_innovations:
        raise InputError("innovation blocks are required")
    Ac = np.vstack([blocks.U_p, blocks.Y_p])
    bc = np.concatenate([np.asarray(u_p0, dtype=float).ravel(),
                         np.asarray(y_p0, dtype=float).ravel()])
    if bc.size != Ac.shape[0]:
        raise InputError(f"initial windows have {bc.size} entries, expected {Ac.shape[0]}")
    g = numerics.pinv(Ac, rank_tol) @ bc
    gap = float(np.linalg.norm(Ac @ g - bc))
    if gap > 1e-8 * max(1.0, np.linalg.norm(bc)):
        logger.info("initial window is off the data span, feasibility gap %.3e", gap)
    Nc = numerics.null_space_projector(Ac, rank_tol)
    if Nc.shape[1]:
        B = blocks.E_p @ Nc
        z = -numerics.pinv(B, rank_tol) @ (blocks.E_p @ g)
        g = g + Nc @ z
    return WindowInit(blocks.E_p @ g, gap, g)


def check_certificate(pred: InnoPredictor):
    """``(is_schur, radius)`` for the transition matrix ``theta``."""
    return pred.theta_radius < 1.0, pred.theta_radius


def beta_rhs(pred_hat: InnoPredictor, pred_kf: InnoPredictor, beta, alpha_kf,
             u_f_next, e_t) -> np.ndarray:
    """Right-hand side of the prediction-gap recursion.

    ``beta`` is ``alpha_kf - alpha_hat`` at time t; the result is the value at
    t + 1 given the true-innovation combination vector ``alpha_kf``, the next
    future input block and the true innovation ``e_t``.
    """
    Mt = pred_kf.M - pred_hat.M
    return (pred_hat.theta @ beta
            + (pred_kf.theta - pred_hat.theta + Mt @ pred_hat.Z1) @ alpha_kf
            + Mt @ (pred_hat.Z2 @ np.ravel(u_f_next))
            + Mt @ (pred_hat.Z3 @ np.ravel(e_t)))


@dataclass
class OpenLoopResult:
    predictions: np.ndarray
    innovations: np.ndarray
    h_norms: np.ndarray
    final_state: OnlineState

    def steps_ahead(self, step: int) -> np.ndarray:
        """Predictions of ``step``-ahead outputs, one row per prediction time."""
        n_y = self.innovations.shape[1]
        return self.predictions[:, (step - 1) * n_y:step * n_y]


def run_open_loop(pred, state: OnlineState, u, y, e_feed=None) -> OpenLoopResult:
    """Online prediction loop over recorded data.

    At each step ``k`` the predictor sees the future inputs
    ``u[k:k + L_f]``, predicts, then observes ``y[k]`` and shifts its
    windows. ``pred`` may be an :class:`InnoPredictor` or an
    :class:`SpcPredictor` (whose innovation window is ignored).

    Args:
        u: Inputs of length at least ``len(y) + L_f - 1``.
        y: Measured outputs, one row per step.
        e_feed: Optional true innovations to push into the window instead
            of the computed one-step errors.
    """
    u = np.asarray(u, dtype=float).reshape(-1, pred.n_u)
    y = np.asarray(y, dtype=float).reshape(-1, pred.n_y)
    steps = len(y)
    if len(u) < steps + pred.L_f - 1:
        raise InputError(f"need {steps + pred.L_f - 1} inputs for {steps} steps, got {len(u)}")
    preds = np.empty((steps, pred.n_y * pred.L_f))
    innov = np.empty((steps, pred.n_y))
    norms = np.empty(steps)
    for k in range(steps):
        u_f = u[k:k + pred.L_f].ravel()
        if isinstance(pred, SpcPredictor):
            res = predict_spc(pred, state.u_p, state.y_p, u_f)
        else:
            res = predict(pred, state, u_f)
        preds[k] = res.y_f_hat
        norms[k] = res.h_norm
        innov[k] = y[k] - res.one_step
        e_k = None if e_feed is None else np.asarray(e_feed[k], dtype=float)
        state = update_window(state, u[k], y[k], res.one_step, e_t=e_k)
    return OpenLoopResult(preds, innov, norms, state)


def with_true_innovations(blocks: HankelBlocks, e_d) -> HankelBlocks:
    """Replace the innovation blocks with ones built from another sequence."""
    from .hankel import build_hankel

    E = build_hankel(e_d, blocks.L)
    rows = blocks.n_y * blocks.L_p
    return replace(blocks, E_p=E[:rows], E_f=E[rows:])
