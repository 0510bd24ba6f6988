"""Closed-loop simulation of a controller against a stochastic plant."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from ..errors import InnoDeePCError, InputError
from ..system import StateSpaceModel, draw_noise, make_rng
from .controllers import Controller
from .qp import OPTIMAL

logger = logging.getLogger(__name__)

HELD = "held"


@dataclass
class ClosedLoopLog:
    """Per-step record of one closed-loop run (``k = 1..N_test``)."""

    k: np.ndarray
    u: np.ndarray
    y: np.ndarray
    r: np.ndarray
    y_hat: np.ndarray
    status: List[str]
    iterations: np.ndarray
    softened: np.ndarray
    u_init: np.ndarray
    y_init: np.ndarray

    def __post_init__(self):
        n = len(self.k)
        if not (len(self.u) == len(self.y) == len(self.r) == len(self.y_hat) == len(self.status)
                == len(self.iterations) == len(self.softened) == n):
            raise InputError("closed-loop log columns must be aligned")

    def __len__(self):
        return len(self.k)

    @property
    def n_held(self) -> int:
        return sum(s == HELD for s in self.status)

    def y_violations(self, y_bounds) -> int:
        lo, hi = y_bounds
        return int(np.sum((self.y < lo) | (self.y > hi)))

    def write_csv(self, path):
        n_u, n_y = self.u.shape[1], self.y.shape[1]
        header = (["k"] + [f"u_{i + 1}" for i in range(n_u)] + [f"y_{i + 1}" for i in range(n_y)]
                  + [f"r_{i + 1}" for i in range(n_y)] + [f"y_hat_{i + 1}" for i in range(n_y)]
                  + ["status", "iterations", "softened"])
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                w.writerow([int(self.k[i])] + [repr(float(v)) for v in self.u[i]]
                           + [repr(float(v)) for v in self.y[i]]
                           + [repr(float(v)) for v in self.r[i]]
                           + [repr(float(v)) for v in self.y_hat[i]]
                           + [self.status[i], int(self.iterations[i]), int(self.softened[i])])


def initial_inputs(seed, L_p: int, n_u: int, variance: float = 1.0) -> np.ndarray:
    """Random inputs for the window preceding closed-loop operation."""
    return np.sqrt(variance) * make_rng([int(seed), 1]).standard_normal((L_p, n_u))


def run_closed_loop(controller: Controller, plant: StateSpaceModel, n_test: int, seed,
                    u_init=None, init_variance: float = 1.0, x0=None) -> ClosedLoopLog:
    """Receding-horizon loop: plan, apply the first input, measure, update.

    The plant starts at ``x0`` (zero by default) at the beginning of an
    ``L_p``-sample window driven by ``u_init`` (random with variance
    ``init_variance`` when omitted). That window initializes the
    controller; then ``n_test`` closed-loop steps follow, indexed
    ``k = 1..n_test``. Process and measurement noise come from ``seed``, so
    different controllers given the same seed see identical disturbances.

    A step whose QP fails (max-iter or infeasible after relaxation) applies
    the previous input and is logged with status ``held``.
    """
    cfg = controller.cfg
    L_p, n_u, n_y = cfg.L_p, plant.n_u, plant.n_y
    if n_test < 1:
        raise InputError("n_test must be positive")
    if u_init is None:
        u_init = initial_inputs(seed, L_p, n_u, init_variance)
    u_init = np.asarray(u_init, dtype=float).reshape(L_p, n_u)
    w, v = draw_noise(plant, L_p + n_test, make_rng([int(seed), 0]))
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    x = np.zeros(plant.n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(plant.n_x)

    y_init = np.empty((L_p, n_y))
    for i in range(L_p):
        y_init[i] = C @ x + D @ u_init[i] + v[i]
        x = A @ x + B @ u_init[i] + w[i]
    controller.reset(u_init, y_init)

    us, ys, yh = np.empty((n_test, n_u)), np.empty((n_test, n_y)), np.empty((n_test, n_y))
    status, iters, soft = [], np.zeros(n_test, dtype=int), np.zeros(n_test, dtype=bool)
    u_prev = u_init[-1]
    for j in range(n_test):
        k = j + 1
        try:
            plan = controller.step(k)
            ok = plan.status == OPTIMAL
        except InnoDeePCError as exc:  # a failed solve holds the input, the run goes on
            logger.warning("step %d: %s", k, exc)
            plan, ok = None, False
        if ok:
            u = plan.u_f[:n_u]
            status.append(plan.status)
        else:
            u = u_prev
            status.append(HELD)
        if plan is not None:
            iters[j], soft[j] = plan.iterations, plan.softened
        i = L_p + j
        y = C @ x + D @ u + v[i]
        one_step = controller.observe(u, y)
        yh[j] = np.nan if one_step is None else one_step
        x = A @ x + B @ u + w[i]
        us[j], ys[j], u_prev = u, y, u
    ks = np.arange(1, n_test + 1)
    return ClosedLoopLog(ks, us, ys, cfg.reference(ks), yh, status, iters, soft, u_init, y_init)

