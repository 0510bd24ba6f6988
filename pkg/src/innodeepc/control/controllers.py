"""Receding-horizon output-tracking controllers.

All four controllers share one interface: ``reset`` with an initial
input/output window, then alternate ``step(k)`` (plan over the horizon)
and ``observe(u, y)`` (record what was applied and measured). Each one
differs only in how it predicts future outputs:

* :class:`InnoDeePC` uses the innovation-based data-driven predictor,
* :class:`SpcControl` the pseudo-inverse SPC predictor,
* :class:`RegDeePC` optimizes the Hankel combination vector directly under a
  regularization penalty,
* :class:`SskfMpc` uses the true model and steady-state Kalman filter.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .. import numerics
from ..errors import CertificateError, ConfigError, InputError
from ..hankel import HankelBlocks
from ..predictor import (InnoPredictor, OnlineState, SpcPredictor, build_spc_predictor,
                         init_innovation_window, update_window)
from ..system import StateSpaceModel, prediction_matrices, sskf_update
from .qp import INFEASIBLE, OPTIMAL, QpProblem, box_constraints, solve_qp

SLACK_PENALTY = 1e6
REGULARIZERS = ("projection", "ridge")


@dataclass(frozen=True)
class SinusoidReference:
    """``r(k) = amplitude * sin(2 pi k / period)`` on every output channel."""

    period: float
    amplitude: float = 1.0
    n_y: int = 1

    def __call__(self, k) -> np.ndarray:
        k = np.atleast_1d(np.asarray(k, dtype=float))
        r = self.amplitude * np.sin(2.0 * np.pi * k / self.period)
        return np.repeat(r[:, None], self.n_y, axis=1)

    def window(self, k: int, length: int) -> np.ndarray:
        """Stacked ``r(k), ..., r(k + length - 1)``."""
        return self(np.arange(k, k + length)).ravel()


def _spd(X, name):
    X = numerics.as_matrix(X, name)
    if X.shape[0] != X.shape[1] or not np.allclose(X, X.T):
        raise ConfigError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(X).min() <= 0:
        raise ConfigError(f"{name} must be positive definite")
    return X


def _bounds(b, name):
    lo, hi = (np.asarray(v, dtype=float) for v in b)
    if np.any(lo >= hi):
        raise ConfigError(f"{name}: lower bound must be below upper bound")
    return lo, hi


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    """Weights, horizons, constraints and reference shared by all controllers.

    Bounds are per-step boxes ``(lo, hi)`` with scalar or per-channel entries;
    use ``+-inf`` for no bound. ``lam`` is the regularization weight on the
    Hankel combination vector (Reg-DeePC only) and ``lam_y`` the penalty on the
    mismatch with past outputs.
    """

    Q: np.ndarray
    R: np.ndarray
    L_p: int
    L_f: int
    u_bounds: Tuple = (-2.0, 2.0)
    y_bounds: Tuple = (-2.0, 2.0)
    reference: SinusoidReference = field(default_factory=lambda: SinusoidReference(100.0))
    lam: float = 0.0
    lam_y: float = 1e3
    slack_penalty: float = SLACK_PENALTY

    def __post_init__(self):
        object.__setattr__(self, "Q", _spd(self.Q, "Q"))
        object.__setattr__(self, "R", _spd(self.R, "R"))
        _bounds(self.u_bounds, "u_bounds")
        _bounds(self.y_bounds, "y_bounds")
        if self.L_p < 1 or self.L_f < 1:
            raise ConfigError("L_p and L_f must be positive")
        if self.lam < 0 or self.lam_y < 0:
            raise ConfigError("lam and lam_y must be nonnegative")

    @property
    def n_u(self) -> int:
        return self.R.shape[0]

    @property
    def n_y(self) -> int:
        return self.Q.shape[0]

    @property
    def Q_bar(self) -> np.ndarray:
        return np.kron(np.eye(self.L_f), self.Q)

    @property
    def R_bar(self) -> np.ndarray:
        return np.kron(np.eye(self.L_f), self.R)

    def stacked_bounds(self, which: str):
        lo, hi = self.u_bounds if which == "u" else self.y_bounds
        dim = self.n_u if which == "u" else self.n_y
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
        return np.tile(lo, self.L_f), np.tile(hi, self.L_f)

    def with_lambda(self, lam: float) -> "ControllerConfig":
        return replace(self, lam=float(lam))


class StepResult(NamedTuple):
    u_f: np.ndarray
    y_f: np.ndarray
    status: str
    iterations: int
    softened: bool


def affine_map(pred, state: OnlineState):
    """``(Gamma, b)`` with ``predict(state, u_f) = Gamma u_f + b``.

    Works for both the innovation-based and the SPC predictor.
    """
    n_up = pred.n_u * pred.L_p
    n_uf = pred.n_u * pred.L_f
    Gamma = pred.gain[:, n_up:n_up + n_uf]
    past = state.y_p if isinstance(pred, SpcPredictor) else np.concatenate([state.y_p, state.e_p])
    b = pred.gain[:, :n_up] @ state.u_p + pred.gain[:, n_up + n_uf:] @ past
    return Gamma, b


def tracking_qp(Gamma, b, r, cfg: ControllerConfig, soft: bool = False) -> QpProblem:
    """QP in ``u_f`` (plus output slacks when ``soft``) for an affine predictor."""
    n = Gamma.shape[1]
    Qb, Rb = cfg.Q_bar, cfg.R_bar
    H = 2.0 * (Gamma.T @ Qb @ Gamma + Rb)
    f = 2.0 * Gamma.T @ Qb @ (b - r)
    Gu, hu = box_constraints(n, *cfg.stacked_bounds("u"))
    ylo, yhi = cfg.stacked_bounds("y")
    up, dn = np.isfinite(yhi), np.isfinite(ylo)
    Gy = np.vstack([Gamma[up], -Gamma[dn]])
    hy = np.concatenate([yhi[up] - b[up], -(ylo[dn] - b[dn])])
    if not soft:
        return QpProblem(H, f, np.vstack([Gu, Gy]), np.concatenate([hu, hy]))
    m = len(b)
    # one slack per predicted output entry, shared by its upper and lower bound
    S = np.vstack([np.eye(m)[up], np.eye(m)[dn]])
    Hs = np.block([[H, np.zeros((n, m))], [np.zeros((m, n)), 2.0 * cfg.slack_penalty * np.eye(m)]])
    fs = np.concatenate([f, np.zeros(m)])
    G = np.block([[Gu, np.zeros((len(hu), m))], [Gy, -S], [np.zeros((m, n)), -np.eye(m)]])
    h = np.concatenate([hu, hy, np.zeros(m)])
    return QpProblem(Hs, fs, G, h)


def solve_tracking(Gamma, b, r, cfg: ControllerConfig) -> StepResult:
    """Hard-constrained solve, relaxing the output bounds if infeasible."""
    res = solve_qp(tracking_qp(Gamma, b, r, cfg))
    softened = False
    if res.status == INFEASIBLE:
        softened = True
        res = solve_qp(tracking_qp(Gamma, b, r, cfg, soft=True))
    u_f = res.z[:Gamma.shape[1]]
    u_f = np.clip(u_f, *cfg.stacked_bounds("u"))
    return StepResult(u_f, Gamma @ u_f + b, res.status, res.iterations, softened)


def _check_window(u_init, y_init, cfg):
    u = np.asarray(u_init, dtype=float).reshape(-1, cfg.n_u)
    y = np.asarray(y_init, dtype=float).reshape(-1, cfg.n_y)
    if len(u) != cfg.L_p or len(y) != cfg.L_p:
        raise InputError(f"initial windows must have L_p = {cfg.L_p} samples")
    return u, y


class Controller:
    """Common plumbing: planned input sequence and the reference window."""

    name = "controller"

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        self.last_plan: Optional[StepResult] = None

    def reference(self, k: int) -> np.ndarray:
        return self.cfg.reference.window(k, self.cfg.L_f)

    def reset(self, u_init, y_init):
        raise NotImplementedError

    def step(self, k: int) -> StepResult:
        raise NotImplementedError

    def observe(self, u_t, y_t):
        raise NotImplementedError

    def _applied_plan(self, u_t):
        """Last planned ``u_f`` with its first block replaced by the applied input."""
        u_f = self.last_plan.u_f.copy() if self.last_plan is not None else \
            np.zeros(self.cfg.n_u * self.cfg.L_f)
        u_f[:self.cfg.n_u] = np.ravel(u_t)
        return u_f


class InnoDeePC(Controller):
    """Predictive control with the innovation-based data-driven predictor.

    Raises:
        CertificateError: the predictor's transition matrix is not Schur
            stable and ``force`` is not set.
    """

    name = "Inno-DeePC"

    def __init__(self, pred: InnoPredictor, cfg: ControllerConfig, force: bool = False):
        super().__init__(cfg)
        if not pred.is_stable and not force:
            raise CertificateError(
                f"predictor certificate failed (spectral radius {pred.theta_radius:.4f})")
        self.pred = pred
        self.state: Optional[OnlineState] = None
        self.init_gap = 0.0

    def reset(self, u_init, y_init):
        u, y = _check_window(u_init, y_init, self.cfg)
        init = init_innovation_window(self.pred.blocks, u, y)
        self.init_gap = init.feasibility_gap
        self.state = OnlineState(u.ravel(), y.ravel(), init.e_p, 0)
        self.last_plan = None

    def step(self, k: int) -> StepResult:
        Gamma, b = affine_map(self.pred, self.state)
        self.last_plan = solve_tracking(Gamma, b, self.reference(k), self.cfg)
        return self.last_plan

    def observe(self, u_t, y_t):
        Gamma, b = affine_map(self.pred, self.state)
        n_y = self.cfg.n_y
        one_step = Gamma[:n_y] @ self._applied_plan(u_t) + b[:n_y]
        self.state = update_window(self.state, u_t, y_t, one_step)
        return one_step


class SpcControl(Controller):
    name = "SPC"

    def __init__(self, spc, cfg: ControllerConfig):
        super().__init__(cfg)
        self.pred = build_spc_predictor(spc) if isinstance(spc, HankelBlocks) else spc
        self.state: Optional[OnlineState] = None

    def reset(self, u_init, y_init):
        u, y = _check_window(u_init, y_init, self.cfg)
        self.state = OnlineState(u.ravel(), y.ravel(), np.zeros(y.size), 0)
        self.last_plan = None

    def step(self, k: int) -> StepResult:
        Gamma, b = affine_map(self.pred, self.state)
        self.last_plan = solve_tracking(Gamma, b, self.reference(k), self.cfg)
        return self.last_plan

    def observe(self, u_t, y_t):
        Gamma, b = affine_map(self.pred, self.state)
        n_y = self.cfg.n_y
        one_step = Gamma[:n_y] @ self._applied_plan(u_t) + b[:n_y]
        self.state = update_window(self.state, u_t, y_t, one_step)
        return one_step


class RegDeePC(Controller):
    """Regularized DeePC over the Hankel combination vector ``g``.

    Past inputs are matched exactly (``g`` is parametrized on the affine set
    ``U_p g = u_p``), past outputs through the penalty ``lam_y``, and the
    future inputs are ``u_f = U_f g``. The cost adds ``lam * ||g||^2`` for
    ``regularizer="ridge"``, or ``lam * ||(I - Pi) g||^2`` for
    ``regularizer="projection"``, where ``Pi`` projects onto the row space of
    ``col(U_p, Y_p, U_f)``. The projection form only penalizes the part of
    ``g`` that the past data and future inputs leave undetermined, so as
    ``lam`` grows it approaches the SPC predictor.
    """

    name = "Reg-DeePC"

    def __init__(self, blocks: HankelBlocks, cfg: ControllerConfig,
                 regularizer: str = "projection"):
        super().__init__(cfg)
        if regularizer not in REGULARIZERS:
            raise ConfigError(f"regularizer must be one of {REGULARIZERS}, got {regularizer!r}")
        self.regularizer = regularizer
        self.blocks = blocks.without_innovations()
        b = self.blocks
        self.Up_pinv = numerics.pinv(b.U_p)
        self.N = numerics.null_space_projector(b.U_p)
        Qb, Rb = cfg.Q_bar, cfg.R_bar
        reg = np.eye(b.n_cols)
        if regularizer == "projection":
            W = np.vstack([b.U_p, b.Y_p, b.U_f])
            reg = reg - numerics.pinv(W) @ W
            reg = 0.5 * (reg + reg.T)
        # quadratic form in g, without the terms that depend on windows
        self.Hg = 2.0 * (b.Y_f.T @ Qb @ b.Y_f + b.U_f.T @ Rb @ b.U_f
                         + cfg.lam * reg + cfg.lam_y * b.Y_p.T @ b.Y_p)
        H = self.N.T @ self.Hg @ self.N
        self.H = 0.5 * (H + H.T)
        self.state: Optional[OnlineState] = None
        self.g: Optional[np.ndarray] = None

    def reset(self, u_init, y_init):
        u, y = _check_window(u_init, y_init, self.cfg)
        self.state = OnlineState(u.ravel(), y.ravel(), np.zeros(y.size), 0)
        self.last_plan = None

    def _qp(self, r, soft=False):
        b, cfg, N = self.blocks, self.cfg, self.N
        g0 = self.Up_pinv @ self.state.u_p
        lin = (-2.0 * b.Y_f.T @ cfg.Q_bar @ r
               - 2.0 * cfg.lam_y * b.Y_p.T @ self.state.y_p)
        f = N.T @ (self.Hg @ g0 + lin)
        rows, lims = [], []
        for which, F in (("u", b.U_f), ("y", b.Y_f)):
            lo, hi = cfg.stacked_bounds(which)
            up, dn = np.isfinite(hi), np.isfinite(lo)
            rows += [F[up] @ N, -F[dn] @ N]
            lims += [hi[up] - F[up] @ g0, -(lo[dn] - F[dn] @ g0)]
        G, h = np.vstack(rows), np.concatenate(lims)
        if not soft:
            return QpProblem(self.H, f, G, h), g0
        # slack only on the output rows, which follow the input rows
        n_u_rows = sum(len(x) for x in lims[:2])
        m = len(h) - n_u_rows
        nz = self.H.shape[0]
        S = np.vstack([np.zeros((n_u_rows, m)), -np.eye(m)])
        Hs = np.block([[self.H, np.zeros((nz, m))],
                       [np.zeros((m, nz)), 2.0 * cfg.slack_penalty * np.eye(m)]])
        Gs = np.block([[G, S], [np.zeros((m, nz)), -np.eye(m)]])
        return QpProblem(Hs, np.concatenate([f, np.zeros(m)]), Gs,
                         np.concatenate([h, np.zeros(m)])), g0

    def step(self, k: int) -> StepResult:
        r = self.reference(k)
        p, g0 = self._qp(r)
        res = solve_qp(p)
        softened = False
        if res.status == INFEASIBLE:
            softened = True
            p, g0 = self._qp(r, soft=True)
            res = solve_qp(p)
        self.g = g0 + self.N @ res.z[:self.N.shape[1]]
        u_f = np.clip(self.blocks.U_f @ self.g, *self.cfg.stacked_bounds("u"))
        self.last_plan = StepResult(u_f, self.blocks.Y_f @ self.g, res.status,
                                    res.iterations, softened)
        return self.last_plan

    def observe(self, u_t, y_t):
        one_step = None if self.last_plan is None else self.last_plan.y_f[:self.cfg.n_y]
        self.state = update_window(self.state, u_t, y_t, e_t=np.zeros(self.cfg.n_y))
        return one_step


class SskfMpc(Controller):
    """Model-based oracle: Kalman-filter state estimate plus exact rollout."""

    name = "SSKF-MPC"

    def __init__(self, model: StateSpaceModel, cfg: ControllerConfig):
        super().__init__(cfg)
        model._require_gain()
        self.model = model
        self.O, self.T = prediction_matrices(model, cfg.L_f)
        self.xhat = np.zeros(model.n_x)

    def reset(self, u_init, y_init, xhat0=None):
        u, y = _check_window(u_init, y_init, self.cfg)
        self.xhat = np.zeros(self.model.n_x) if xhat0 is None else np.asarray(xhat0, float)
        for ut, yt in zip(u, y):
            self.xhat, _ = sskf_update(self.model, self.xhat, ut, yt)
        self.last_plan = None

    def step(self, k: int) -> StepResult:
        self.last_plan = solve_tracking(self.T, self.O @ self.xhat, self.reference(k), self.cfg)
        return self.last_plan

    def observe(self, u_t, y_t):
        one_step = self.model.C @ self.xhat + self.model.D @ np.ravel(u_t)
        self.xhat, _ = sskf_update(self.model, self.xhat, np.ravel(u_t), np.ravel(y_t))
        return one_step


def unconstrained_solution(Gamma, b, r, cfg: ControllerConfig) -> np.ndarray:
    """Normal-equations minimizer of the tracking cost without constraints."""
    Qb = cfg.Q_bar
    return np.linalg.solve(Gamma.T @ Qb @ Gamma + cfg.R_bar, Gamma.T @ Qb @ (r - b))


__all__ = [
    "ControllerConfig", "SinusoidReference", "StepResult", "affine_map", "tracking_qp",
    "solve_tracking", "InnoDeePC", "SpcControl", "RegDeePC", "SskfMpc",
    "unconstrained_solution", "OPTIMAL",
]
