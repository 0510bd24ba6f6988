"""Stochastic LTI plant, steady-state Kalman filter and excitation signals.

Conventions: sequences are 2-D arrays with time along axis 0, so a length-N
input for an ``n_u``-input plant has shape ``(N, n_u)``. Stacked windows
(``u_f``, ``y_f``) are flat vectors, oldest sample first.
"""

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import numerics
from .errors import ConfigError, InputError

BENCH_A = np.array([[0.7326, -0.0861], [0.1722, 0.9909]])
BENCH_B = np.array([[0.0609], [0.0064]])
BENCH_C = np.array([[0.0, 1.4142]])
BENCH_D = np.zeros((1, 1))

# noise scale q for each target SNR (dB) of the benchmark plant
BENCH_Q = {20: 11.49, 30: 1.13, 40: 0.11}


def as_sequence(x, dim=None, name="sequence") -> np.ndarray:
    """Coerce a 1-D or 2-D array to shape ``(N, dim)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if dim in (None, 1) else x.reshape(-1, dim)
    if x.ndim != 2:
        raise InputError(f"{name} must be 1-D or 2-D, got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise InputError(f"{name} has {x.shape[1]} channels, expected {dim}")
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains NaN or Inf entries")
    return x


def _is_psd(S, tol=1e-12):
    if not np.allclose(S, S.T, atol=1e-12):
        return False
    return np.min(np.linalg.eigvalsh(S)) >= -tol * max(1.0, np.abs(S).max())


def _cov_factor(S):
    """Square factor F with F F' = S for a PSD S (possibly singular)."""
    d, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.clip(d, 0.0, None))


def observability_matrix(A, C, depth=None):
    n = A.shape[0]
    depth = n if depth is None else depth
    blocks, M = [], C.copy()
    for _ in range(depth):
        blocks.append(M)
        M = M @ A
    return np.vstack(blocks)


def controllability_matrix(A, B):
    blocks, M = [], B.copy()
    for _ in range(A.shape[0]):
        blocks.append(M)
        M = A @ M
    return np.hstack(blocks)


def lag(A, C) -> int:
    """Smallest l such that col(C, CA, ..., CA^{l-1}) has rank n_x."""
    n = A.shape[0]
    for depth in range(1, n + 1):
        if np.linalg.matrix_rank(observability_matrix(A, C, depth)) == n:
            return depth
    raise InputError("(A, C) is not observable")


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Discrete-time plant x+ = Ax + Bu + w, y = Cx + Du + v.

    ``K`` is the steady-state Kalman gain in predictor form. It is optional
    here; :meth:`with_kalman_gain` fills it in from the Riccati equation.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Sigma_w: np.ndarray
    Sigma_v: np.ndarray
    K: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "Sigma_w", "Sigma_v"):
            object.__setattr__(self, name, numerics.as_matrix(getattr(self, name), name))
        if self.K is not None:
            object.__setattr__(self, "K", numerics.as_matrix(self.K, "K"))
        n, m, p = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        expected = {
            "A": (n, n), "B": (n, m), "C": (p, n), "D": (p, m),
            "Sigma_w": (n, n), "Sigma_v": (p, p),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InputError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not _is_psd(self.Sigma_w) or not _is_psd(self.Sigma_v):
            raise InputError("noise covariances must be symmetric positive semidefinite")
        if np.linalg.matrix_rank(observability_matrix(self.A, self.C)) < n:
            raise InputError("(A, C) is not observable")
        if np.linalg.matrix_rank(controllability_matrix(self.A, self.B)) < n:
            raise InputError("(A, B) is not controllable")
        if self.K is not None:
            if self.K.shape != (n, p):
                raise InputError(f"K has shape {self.K.shape}, expected {(n, p)}")
            if numerics.spectral_radius(self.A - self.K @ self.C) >= 1.0:
                raise InputError("A - KC is not Schur stable")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def A_bar(self) -> np.ndarray:
        self._require_gain()
        return self.A - self.K @ self.C

    def _require_gain(self):
        if self.K is None:
            raise ConfigError("model has no steady-state Kalman gain K; call with_kalman_gain()")

    def with_kalman_gain(self) -> "StateSpaceModel":
        K, _ = numerics.solve_dare(self.A, self.C, self.Sigma_w, self.Sigma_v)
        return replace(self, K=K)

    def scaled(self, q: float) -> "StateSpaceModel":
        """Copy with both noise covariances multiplied by ``q`` (gain kept)."""
        return replace(self, Sigma_w=q * self.Sigma_w, Sigma_v=q * self.Sigma_v)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in ("A", "B", "C", "D", "Sigma_w", "Sigma_v")}
        if self.K is not None:
            d["K"] = self.K.tolist()
        return d


def benchmark_plant(q: float = 1.0) -> StateSpaceModel:
    """The two-state benchmark plant at noise scale ``q``.

    Noise variances are ``q * 1e-4`` per state and ``4.5 q * 1e-4`` on the
    output. The Kalman gain does not depend on ``q`` (both covariances scale
    together), so it is computed at ``q = 1`` and reused, which also gives
    a valid observer gain in the noise-free case ``q = 0``.
    """
    if q < 0:
        raise InputError("q must be nonnegative")
    unit = StateSpaceModel(
        BENCH_A, BENCH_B, BENCH_C, BENCH_D, 1e-4 * np.eye(2), 4.5e-4 * np.eye(1)
    ).with_kalman_gain()
    return unit.scaled(q)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Aligned input/output (and optionally innovation/state) samples."""

    u: np.ndarray
    y: np.ndarray
    e: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    start_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "u", as_sequence(self.u, name="u"))
        object.__setattr__(self, "y", as_sequence(self.y, name="y"))
        n = len(self.u)
        if len(self.y) != n:
            raise InputError("u and y lengths differ")
        for name in ("e", "x"):
            val = getattr(self, name)
            if val is not None:
                val = as_sequence(val, name=name)
                if len(val) != n:
                    raise InputError(f"{name} length {len(val)} differs from u length {n}")
                object.__setattr__(self, name, val)

    def __len__(self):
        return len(self.u)

    def slice(self, start, stop=None) -> "Trajectory":
        sl = slice(start, stop)
        pick = lambda a: None if a is None else a[sl]  # noqa: E731
        first = range(len(self))[sl]
        offset = first.start if len(first) else 0
        return Trajectory(self.u[sl], self.y[sl], pick(self.e), pick(self.x),
                          self.start_index + offset)


@dataclass(frozen=True)
class NoiseSpec:
    """Seed plus a multiplier ``q`` applied to the model's noise covariances."""

    seed: int
    q: float = 1.0

    def __post_init__(self):
        if not self.q > 0:
            raise InputError("noise scale q must be positive")


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; accepts an int, a sequence of ints, or a Generator."""
    return np.random.default_rng(seed)


def draw_noise(model: StateSpaceModel, n: int, rng, q: float = 1.0):
    """Draw process and measurement noise sequences ``(w, v)``."""
    w = rng.standard_normal((n, model.n_x)) @ _cov_factor(q * model.Sigma_w).T
    v = rng.standard_normal((n, model.n_y)) @ _cov_factor(q * model.Sigma_v).T
    return w, v


def simulate(model: StateSpaceModel, u, noise: Optional[NoiseSpec] = None, x0=None,
             w=None, v=None) -> Trajectory:
    """Simulate the plant under a given input sequence.

    Noise is drawn from ``noise.seed`` unless explicit ``w``/``v`` sequences
    are given; with neither, the run is noise-free. Returns the trajectory
    with the state sequence ``x(0..N-1)`` attached.
    """
    u = as_sequence(u, model.n_u, "u")
    n = len(u)
    if n == 0:
        raise InputError("u must be nonempty")
    x = np.zeros(model.n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n_x)
    if w is None and v is None and noise is not None:
        w, v = draw_noise(model, n, make_rng(noise.seed), noise.q)
    w = np.zeros((n, model.n_x)) if w is None else as_sequence(w, model.n_x, "w")
    v = np.zeros((n, model.n_y)) if v is None else as_sequence(v, model.n_y, "v")
    if len(w) != n or len(v) != n:
        raise InputError("noise sequences must match the input length")

    A, B, C, D = model.A, model.B, model.C, model.D
    xs = np.empty((n, model.n_x))
    ys = np.empty((n, model.n_y))
    for t in range(n):
        xs[t] = x
        ys[t] = C @ x + D @ u[t] + v[t]
        x = A @ x + B @ u[t] + w[t]
    return Trajectory(u, ys, x=xs)


def sskf_filter(model: StateSpaceModel, u, y, xhat0=None):
    """Run the steady-state Kalman filter over recorded data.

    Returns:
        ``(e, xhat)`` where ``e[t] = y[t] - C xhat[t] - D u[t]`` and ``xhat``
        has ``N + 1`` rows: the prior estimates for t = 0..N.
    """
    model._require_gain()
    u = as_sequence(u, model.n_u, "u")
    y = as_sequence(y, model.n_y, "y")
    if len(u) != len(y):
        raise InputError("u and y lengths differ")
    A, B, C, D, K = model.A, model.B, model.C, model.D, model.K
    n = len(u)
    xh = np.zeros(model.n_x) if xhat0 is None else np.asarray(xhat0, dtype=float).reshape(model.n_x)
    e = np.empty((n, model.n_y))
    xhat = np.empty((n + 1, model.n_x))
    for t in range(n):
        xhat[t] = xh
        e[t] = y[t] - C @ xh - D @ u[t]
        xh = A @ xh + B @ u[t] + K @ e[t]
    xhat[n] = xh
    return e, xhat


def sskf_update(model: StateSpaceModel, xhat, u_t, y_t):
    """One filter step; returns ``(next xhat, innovation)``."""
    e = y_t - model.C @ xhat - model.D @ u_t
    return model.A @ xhat + model.B @ u_t + model.K @ e, e


def sskf_predict(model: StateSpaceModel, xhat, u_f) -> np.ndarray:
    """Multi-step output prediction from ``xhat`` with zero future innovations.

    Args:
        xhat: Current prior state estimate.
        u_f: Future inputs, ``(L_f, n_u)`` or stacked ``n_u * L_f``.

    Returns:
        Stacked prediction of length ``n_y * L_f``.
    """
    u_f = as_sequence(u_f, model.n_u, "u_f")
    x = np.asarray(xhat, dtype=float).reshape(model.n_x)
    out = np.empty((len(u_f), model.n_y))
    for k, uk in enumerate(u_f):
        out[k] = model.C @ x + model.D @ uk
        x = model.A @ x + model.B @ uk
    return out.ravel()


def prediction_matrices(model: StateSpaceModel, L_f: int):
    """``(O, T)`` with ``y_f = O xhat + T u_f`` for the deterministic rollout."""
    n_y, n_u = model.n_y, model.n_u
    O = observability_matrix(model.A, model.C, L_f)
    T = np.zeros((n_y * L_f, n_u * L_f))
    markov = [model.D]
    M = model.B
    for _ in range(1, L_f):
        markov.append(model.C @ M)
        M = model.A @ M
    for i in range(L_f):
        for j in range(i + 1):
            T[i * n_y:(i + 1) * n_y, j * n_u:(j + 1) * n_u] = markov[i - j]
    return O, T


def simulate_innovation_form(model: StateSpaceModel, u, e, xhat0=None) -> Trajectory:
    """Roll out x+ = A x + B u + K e, y = C x + D u + e."""
    model._require_gain()
    u = as_sequence(u, model.n_u, "u")
    e = as_sequence(e, model.n_y, "e")
    if len(u) != len(e):
        raise InputError("u and e lengths differ")
    n = len(u)
    x = np.zeros(model.n_x) if xhat0 is None else np.asarray(xhat0, dtype=float).reshape(model.n_x)
    xs = np.empty((n, model.n_x))
    ys = np.empty((n, model.n_y))
    for t in range(n):
        xs[t] = x
        ys[t] = model.C @ x + model.D @ u[t] + e[t]
        x = model.A @ x + model.B @ u[t] + model.K @ e[t]
    return Trajectory(u, ys, e=e, x=xs)


def snr_db(y, e) -> float:
    """Signal-to-noise ratio ``10 log10(var(y - e) / var(e))`` in dB.

    Variances are per output channel, then averaged across channels.
    Returns ``inf`` when the innovations have zero variance and ``-inf``
    when the noise-free part does.
    """
    y = as_sequence(y, name="y")
    e = as_sequence(e, y.shape[1], "e")
    if len(y) != len(e) or len(y) < 2:
        raise InputError("y and e need equal lengths of at least 2")
    signal = float(np.mean(np.var(y - e, axis=0)))
    noise = float(np.mean(np.var(e, axis=0)))
    if noise == 0.0:
        return float("inf")
    if signal == 0.0:
        return float("-inf")
    return 10.0 * np.log10(signal / noise)


def gen_square_wave_input(period: int, amplitude: float, dither_var: float, length: int,
                          seed=None, n_u: int = 1) -> np.ndarray:
    """Square wave (high for the first half of each period) plus Gaussian dither."""
    if period < 2:
        raise InputError("period must be at least 2")
    if dither_var < 0:
        raise InputError("dither variance must be nonnegative")
    t = np.arange(length)
    wave = np.where((t % period) < period // 2, amplitude, -amplitude).astype(float)
    u = np.repeat(wave[:, None], n_u, axis=1)
    if dither_var > 0:
        u = u + np.sqrt(dither_var) * make_rng(seed).standard_normal((length, n_u))
    return u


def gen_gaussian_input(variance: float, length: int, seed=None, n_u: int = 1) -> np.ndarray:
    if not variance > 0:
        raise InputError("variance must be positive")
    return np.sqrt(variance) * make_rng(seed).standard_normal((length, n_u))


def write_trajectory_csv(path, traj: Trajectory):
    """Write ``t, u_1.., y_1.., e_1..`` columns (e only when present)."""
    n_u, n_y = traj.u.shape[1], traj.y.shape[1]
    header = ["t"] + [f"u_{i + 1}" for i in range(n_u)] + [f"y_{i + 1}" for i in range(n_y)]
    if traj.e is not None:
        header += [f"e_{i + 1}" for i in range(n_y)]
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(traj)):
            row = [traj.start_index + k] + [repr(float(v)) for v in traj.u[k]]
            row += [repr(float(v)) for v in traj.y[k]]
            if traj.e is not None:
                row += [repr(float(v)) for v in traj.e[k]]
            w.writerow(row)


def read_trajectory_csv(path) -> Trajectory:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    cols = {name: i for i, name in enumerate(header)}
    pick = lambda p: [cols[h] for h in header if h.startswith(p)]  # noqa: E731
    e_idx = pick("e_")
    start = int(body[0, 0]) if len(body) else 0
    return Trajectory(body[:, pick("u_")], body[:, pick("y_")],
                      body[:, e_idx] if e_idx else None, start_index=start)
