"""Monte Carlo studies: multi-step prediction, certificate demo, closed-loop control.

Every run draws its data from its own seed, ``base_seed + index * SEED_PRIME``,
with separate streams for the offline record, the test record and the
closed-loop disturbances. Runs are independent, so they can be farmed out
to worker processes; results come back in task order, which keeps the
output identical for any ``jobs`` setting.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..control import (ControllerConfig, InnoDeePC, RegDeePC, SinusoidReference, SpcControl,
                       SskfMpc, run_closed_loop)
from ..errors import ConfigError, InnoDeePCError
from ..hankel import min_data_length, partition
from ..innovation import fit_varx, offline_window
from ..predictor import (OnlineState, build_inno_predictor, build_spc_predictor,
                         init_innovation_window, run_open_loop)
from ..system import (StateSpaceModel, benchmark_plant, draw_noise, gen_gaussian_input,
                      gen_square_wave_input, make_rng, simulate, snr_db, sskf_filter,
                      sskf_predict)
from .metrics import control_costs, log_slope, r_squared

logger = logging.getLogger(__name__)

SEED_PRIME = 1_000_003
VALIDATION_INDEX = 10**6
CONTROLLERS = ("SSKF-MPC", "Inno-DeePC", "SPC", "Reg-DeePC")
PREDICTORS = ("Inno-OP", "SPC", "SSKF")

# stream ids within one run seed
_OFFLINE_INPUT, _OFFLINE_NOISE, _TEST_INPUT, _TEST_NOISE = 2, 3, 4, 5


@dataclass(frozen=True)
class ExperimentConfig:
    """All parameters of a study. Defaults follow the benchmark setup."""

    snr_targets: Tuple[int, ...] = (20, 30, 40)
    q_values: Tuple[float, ...] = (11.49, 1.13, 0.11)
    n_runs: int = 100
    N: int = 200
    N_test: int = 100
    L_p: int = 10
    L_f: int = 15
    rho: int = 15
    rho_pair: Tuple[int, int] = (15, 50)
    rho_fallback: Tuple[int, ...] = (10, 20, 12, 18)
    steps: Tuple[int, ...] = (1, 5, 10)
    controllers: Tuple[str, ...] = CONTROLLERS
    base_seed: int = 0
    square_period: int = 50
    square_amplitude: float = 2.0
    dither_variance: float = 0.01
    test_input_variance: float = 4.0
    init_variance: float = 1.0
    Q: float = 1.0
    R: float = 0.01
    u_bounds: Tuple[float, float] = (-2.0, 2.0)
    y_bounds: Tuple[float, float] = (-2.0, 2.0)
    lambda_grid: Tuple[float, ...] = tuple(float(x) for x in np.logspace(-2, 4, 7))
    lam_y: float = 1e3
    regularizer: str = "projection"
    n_x_bound: int = 2
    max_seed_tries: int = 500

    def __post_init__(self):
        for name in ("snr_targets", "q_values", "rho_pair", "rho_fallback", "steps",
                     "controllers", "lambda_grid", "u_bounds", "y_bounds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if len(self.snr_targets) != len(self.q_values):
            raise ConfigError("snr_targets and q_values must have the same length")
        if any(q <= 0 for q in self.q_values):
            raise ConfigError("q_values must be positive")
        if min(self.L_p, self.L_f, self.N_test, self.rho) < 1:
            raise ConfigError("L_p, L_f, N_test and rho must be positive")
        need = min_data_length(1, 1, self.L_p + self.L_f, self.n_x_bound, True)
        if self.N < need:
            raise ConfigError(f"N = {self.N} is below the data-length bound {need}")
        if any(s < 1 or s > self.L_f for s in self.steps):
            raise ConfigError(f"prediction steps must lie in 1..L_f = {self.L_f}")
        unknown = set(self.controllers) - set(CONTROLLERS)
        if unknown:
            raise ConfigError(f"unknown controllers {sorted(unknown)}; choose from {CONTROLLERS}")
        if len(self.rho_pair) != 2:
            raise ConfigError("rho_pair needs exactly two values")
        if not self.lambda_grid or any(x < 0 for x in self.lambda_grid):
            raise ConfigError("lambda_grid must be a nonempty list of nonnegative values")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict, path: str = "experiment") -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def q_for(self, snr: int) -> float:
        return self.q_values[self.snr_targets.index(snr)]

    def controller_config(self, lam: float = 0.0) -> ControllerConfig:
        return ControllerConfig(np.array([[self.Q]]), np.array([[self.R]]), self.L_p, self.L_f,
                                self.u_bounds, self.y_bounds, SinusoidReference(self.N_test),
                                lam=lam, lam_y=self.lam_y)


def smoke_config(**overrides) -> ExperimentConfig:
    """Small profile for quick checks."""
    base = dict(n_runs=5, lambda_grid=(1.0, 10.0, 100.0))
    base.update(overrides)
    return ExperimentConfig(**base)


def run_seed(cfg: ExperimentConfig, index: int) -> int:
    return cfg.base_seed + index * SEED_PRIME


@dataclass
class OfflineData:
    u: np.ndarray
    y: np.ndarray
    e_true: np.ndarray
    snr_db: float


def offline_record(plant: StateSpaceModel, cfg: ExperimentConfig, seed: int,
                   history: int) -> OfflineData:
    """Square-wave experiment of length ``history + N``."""
    n = cfg.N + history
    u = gen_square_wave_input(cfg.square_period, cfg.square_amplitude, cfg.dither_variance, n,
                              [seed, _OFFLINE_INPUT], plant.n_u)
    w, v = draw_noise(plant, n, make_rng([seed, _OFFLINE_NOISE]))
    tr = simulate(plant, u, w=w, v=v)
    e, _ = sskf_filter(plant, u, tr.y)
    return OfflineData(u, tr.y, e, snr_db(tr.y[history:], e[history:]))


def test_record(plant: StateSpaceModel, cfg: ExperimentConfig, seed: int, length: int):
    """Gaussian-input test trajectory with its Kalman innovations and state estimates."""
    u = gen_gaussian_input(cfg.test_input_variance, length, [seed, _TEST_INPUT], plant.n_u)
    w, v = draw_noise(plant, length, make_rng([seed, _TEST_NOISE]))
    tr = simulate(plant, u, w=w, v=v)
    e, xhat = sskf_filter(plant, u, tr.y)
    return u, tr.y, e, xhat


def fit_predictor(data: OfflineData, cfg: ExperimentConfig, rho: int):
    """VARX innovation estimates, partition and predictor for one rho."""
    uu, yy = offline_window(data.u, data.y, rho, cfg.N)
    fit = fit_varx(uu, yy, rho)
    blocks = partition(uu[rho:], yy[rho:], fit.e_hat, cfg.L_p, cfg.L_f, n_x=cfg.n_x_bound)
    return blocks, build_inno_predictor(blocks)


def gated_predictor(data: OfflineData, cfg: ExperimentConfig):
    """Certificate gate: first rho in ``(rho, *rho_fallback)`` with Schur-stable theta.

    Returns ``(blocks, pred, rho_used, note)``; ``pred`` is None when every
    candidate fails.
    """
    notes = []
    last_blocks = None
    for rho in (cfg.rho,) + tuple(r for r in cfg.rho_fallback if r != cfg.rho):
        if rho > len(data.u) - cfg.N:
            continue
        try:
            blocks, pred = fit_predictor(data, cfg, rho)
        except InnoDeePCError as exc:  # try the next candidate
            notes.append(f"rho={rho}: {type(exc).__name__}")
            continue
        last_blocks = blocks
        if pred.is_stable:
            return blocks, pred, rho, "; ".join(notes)
        notes.append(f"rho={rho}: radius {pred.theta_radius:.4f}")
    return last_blocks, None, None, "; ".join(notes) or "no rho candidate fits"


# prediction study ----------------------------------------------------------

PREDICTION_HEADER = ["run", "seed", "snr_db", "q", "method", "step", "r2", "theta_radius",
                     "measured_snr_db", "status", "reason"]


def _prediction_run(task):
    cfg, snr, index = task
    seed = run_seed(cfg, index)
    q = cfg.q_for(snr)
    plant = benchmark_plant(q)
    base = dict(run=index, seed=seed, snr_db=snr, q=q)
    data = offline_record(plant, cfg, seed, cfg.rho)
    try:
        blocks, pred = fit_predictor(data, cfg, cfg.rho)
    except InnoDeePCError as exc:
        reason = f"{type(exc).__name__}: {exc}"
        return [dict(base, method=m, step=s, r2=float("nan"), theta_radius=float("nan"),
                     measured_snr_db=data.snr_db, status="excluded", reason=reason)
                for m in PREDICTORS for s in cfg.steps]
    spc = build_spc_predictor(blocks)
    s_max = max(cfg.steps)
    n_pred = cfg.N_test + s_max - 1
    length = cfg.L_p + n_pred + cfg.L_f - 1
    u, y, e, xhat = test_record(plant, cfg, seed, length)
    t0 = cfg.L_p
    init = init_innovation_window(blocks, u[:t0], y[:t0])
    state = OnlineState(u[:t0].ravel(), y[:t0].ravel(), init.e_p, t0)
    preds = {
        "Inno-OP": run_open_loop(pred, state, u[t0:], y[t0:t0 + n_pred]).predictions,
        "SPC": run_open_loop(spc, state, u[t0:], y[t0:t0 + n_pred]).predictions,
        "SSKF": np.array([sskf_predict(plant, xhat[t0 + j], u[t0 + j:t0 + j + cfg.L_f])
                          for j in range(n_pred)]),
    }
    # evaluate on y(t0 + s_max - 1 ... ); the s-step prediction of y(t) was made at t - s + 1
    first = t0 + s_max - 1
    y_eval = y[first:first + cfg.N_test, 0]
    rows = []
    for m in PREDICTORS:
        for s in cfg.steps:
            made = np.arange(first, first + cfg.N_test) - s + 1 - t0
            y_hat = preds[m][made, s - 1]
            status = "ok" if pred.is_stable or m != "Inno-OP" else "uncertified"
            rows.append(dict(base, method=m, step=s, r2=r_squared(y_eval, y_hat),
                             theta_radius=pred.theta_radius, measured_snr_db=data.snr_db,
                             status=status, reason=""))
    return rows


def map_tasks(fn, tasks, jobs: int = 1):
    """Apply ``fn`` to every task, optionally in worker processes, keeping order."""
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def run_prediction_study(cfg: ExperimentConfig, jobs: int = 1) -> List[dict]:
    """R² of Inno-OP, SPC and the Kalman oracle for every (SNR, run, step)."""
    tasks = [(cfg, snr, i) for snr in cfg.snr_targets for i in range(cfg.n_runs)]
    return [row for rows in map_tasks(_prediction_run, tasks, jobs) for row in rows]


# certificate demonstration -------------------------------------------------

@dataclass
class StabilityDemo:
    found: bool
    run_index: int
    seed: int
    tries: int
    rho_pair: Tuple[int, int]
    radii: Tuple[float, float]
    errors_stable: np.ndarray
    errors_unstable: np.ndarray
    slope_stable: float
    growth_unstable: float
    snr_db: int

    def trace_rows(self) -> List[dict]:
        rows = []
        for k in range(len(self.errors_stable)):
            rows.append(dict(t=k + 1, e_hat_stable=float(self.errors_stable[k]),
                             e_hat_unstable=float(self.errors_unstable[k])))
        return rows


def error_growth(e, head: int = 10) -> float:
    """``max |e|`` over the run divided by the mean ``|e|`` of the first ``head`` steps."""
    a = np.abs(np.asarray(e, dtype=float).ravel())
    start = max(float(np.mean(a[:head])), np.finfo(float).tiny)
    return float(a.max() / start)


def _one_step_errors(pred, blocks, plant, cfg, seed):
    length = cfg.L_p + cfg.N_test + cfg.L_f - 1
    u, y, _, _ = test_record(plant, cfg, seed, length)
    t0 = cfg.L_p
    init = init_innovation_window(blocks, u[:t0], y[:t0])
    state = OnlineState(u[:t0].ravel(), y[:t0].ravel(), init.e_p, t0)
    return run_open_loop(pred, state, u[t0:], y[t0:t0 + cfg.N_test]).innovations[:, 0]


def run_stability_demo(cfg: ExperimentConfig, snr: int = 30,
                       start_index: int = 0) -> StabilityDemo:
    """Find a run where the small rho certifies and the large rho does not.

    Seeds ``start_index, start_index + 1, ...`` are tried until the pair of
    spectral radii straddles one, or ``max_seed_tries`` is exhausted. The
    online one-step errors of both predictors on that run's test record are
    returned. If no seed qualifies, ``found`` is False and the traces belong
    to the run with the largest large-rho radius seen.
    """
    rho1, rho2 = cfg.rho_pair
    plant = benchmark_plant(cfg.q_for(snr))
    history = max(rho1, rho2)
    best = None
    tries = 0
    for index in range(start_index, start_index + cfg.max_seed_tries):
        tries += 1
        seed = run_seed(cfg, index)
        data = offline_record(plant, cfg, seed, history)
        try:
            b1, p1 = fit_predictor(data, cfg, rho1)
            b2, p2 = fit_predictor(data, cfg, rho2)
        except InnoDeePCError as exc:  # skip seeds the pipeline rejects
            logger.info("seed index %d skipped: %s", index, exc)
            continue
        cand = (p1.theta_radius < 1.0 <= p2.theta_radius, p2.theta_radius)
        if best is None or cand > best[0]:
            best = (cand, index, seed, b1, p1, b2, p2)
        if cand[0]:
            break
    if best is None:
        raise InnoDeePCError("no seed could be fitted for the stability demonstration")
    (found, _), index, seed, b1, p1, b2, p2 = best
    e1 = _one_step_errors(p1, b1, plant, cfg, seed)
    e2 = _one_step_errors(p2, b2, plant, cfg, seed)
    return StabilityDemo(bool(found), index, seed, tries, (rho1, rho2),
                         (p1.theta_radius, p2.theta_radius), e1, e2, log_slope(e1),
                         error_growth(e2), snr)


# control study -------------------------------------------------------------

CONTROL_HEADER = ["run", "seed", "snr_db", "q", "controller", "J_u", "J_y", "J_total",
                  "lambda", "rho_used", "theta_radius", "held_steps", "softened_steps",
                  "y_violations", "status", "reason"]


def _make_controller(name, plant, blocks, pred, cfg: ExperimentConfig, lam):
    ccfg = cfg.controller_config(lam if name == "Reg-DeePC" else 0.0)
    if name == "SSKF-MPC":
        return SskfMpc(plant, ccfg)
    if name == "Inno-DeePC":
        return InnoDeePC(pred, ccfg)
    if name == "SPC":
        return SpcControl(blocks, ccfg)
    return RegDeePC(blocks, ccfg, regularizer=cfg.regularizer)


def _control_run(task):
    cfg, snr, index, lam, names = task
    seed = run_seed(cfg, index)
    q = cfg.q_for(snr)
    plant = benchmark_plant(q)
    data = offline_record(plant, cfg, seed, max((cfg.rho,) + cfg.rho_fallback))
    blocks, pred, rho_used, note = gated_predictor(data, cfg)
    radius = pred.theta_radius if pred is not None else float("nan")
    rows = []
    for name in names:
        base = dict(run=index, seed=seed, snr_db=snr, q=q, controller=name,
                    **{"lambda": lam if name == "Reg-DeePC" else float("nan")},
                    rho_used=rho_used if rho_used is not None else -1, theta_radius=radius)
        nan_row = dict(base, J_u=float("nan"), J_y=float("nan"), J_total=float("nan"),
                       held_steps=0, softened_steps=0, y_violations=0)
        if name == "Inno-DeePC" and pred is None:
            rows.append(dict(nan_row, status="excluded", reason=f"certificate failed: {note}"))
            continue
        if name in ("SPC", "Reg-DeePC", "Inno-DeePC") and blocks is None:
            rows.append(dict(nan_row, status="excluded", reason=note))
            continue
        try:
            ctrl = _make_controller(name, plant, blocks, pred, cfg, lam)
            log = run_closed_loop(ctrl, plant, cfg.N_test, seed, init_variance=cfg.init_variance)
        except InnoDeePCError as exc:
            rows.append(dict(nan_row, status="excluded", reason=f"{type(exc).__name__}: {exc}"))
            continue
        J_u, J_y, J_t = control_costs(log, cfg.Q, cfg.R)
        finite = np.isfinite(J_t)
        rows.append(dict(base, J_u=J_u, J_y=J_y, J_total=J_t, held_steps=log.n_held,
                         softened_steps=int(log.softened.sum()),
                         y_violations=log.y_violations(cfg.y_bounds),
                         status="ok" if finite else "diverged",
                         reason="" if rho_used == cfg.rho or name != "Inno-DeePC"
                         else f"gate fell back to rho={rho_used}"))
    return rows


def select_lambda(cfg: ExperimentConfig, snr: int, jobs: int = 1) -> Tuple[float, List[dict]]:
    """Grid search for the Reg-DeePC weight on one held-out validation run.

    Returns the value with the lowest ``J_total`` (ties go to the first grid
    entry) and the per-value validation rows.
    """
    tasks = [(cfg, snr, VALIDATION_INDEX, lam, ("Reg-DeePC",)) for lam in cfg.lambda_grid]
    rows = [r for rs in map_tasks(_control_run, tasks, jobs) for r in rs]
    scores = [r["J_total"] if np.isfinite(r["J_total"]) else np.inf for r in rows]
    return float(cfg.lambda_grid[int(np.argmin(scores))]), rows


def run_control_study(cfg: ExperimentConfig, jobs: int = 1):
    """Closed-loop costs of every configured controller for every (SNR, run).

    Returns ``(rows, lambdas, validation_rows)``.
    """
    lambdas, validation = {}, []
    for snr in cfg.snr_targets:
        lam = 0.0
        if "Reg-DeePC" in cfg.controllers:
            lam, val_rows = select_lambda(cfg, snr, jobs)
            validation += val_rows
        lambdas[snr] = lam
    tasks = [(cfg, snr, i, lambdas[snr], cfg.controllers)
             for snr in cfg.snr_targets for i in range(cfg.n_runs)]
    rows = [row for rs in map_tasks(_control_run, tasks, jobs) for row in rs]
    return rows, lambdas, validation


def run_single_control(cfg: ExperimentConfig, snr: int, index: int, lam: Optional[float] = None,
                       names: Sequence[str] = CONTROLLERS):
    """One closed-loop run per controller, returning ``{name: (log, costs)}``."""
    seed = run_seed(cfg, index)
    plant = benchmark_plant(cfg.q_for(snr))
    data = offline_record(plant, cfg, seed, max((cfg.rho,) + cfg.rho_fallback))
    blocks, pred, rho_used, note = gated_predictor(data, cfg)
    if lam is None:
        lam = cfg.lambda_grid[len(cfg.lambda_grid) // 2]
    out = {}
    for name in names:
        if name == "Inno-DeePC" and pred is None:
            raise InnoDeePCError(f"certificate failed for every rho candidate: {note}")
        ctrl = _make_controller(name, plant, blocks, pred, cfg, lam)
        log = run_closed_loop(ctrl, plant, cfg.N_test, seed, init_variance=cfg.init_variance)
        out[name] = (log, control_costs(log, cfg.Q, cfg.R))
    return out


# aggregation ---------------------------------------------------------------

AGGREGATE_FIELDS = ["n_runs", "n_excluded", "mean", "sd", "median", "min", "max",
                    "exclusions"]


def aggregate(rows: List[dict], keys: Sequence[str], value: str) -> List[dict]:
    """Mean/sd/median of ``value`` per group, after dropping non-ok rows.

    Each output row records how many runs were aggregated and why others
    were excluded.
    """
    groups: Dict[tuple, List[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key in groups:
        members = groups[key]
        vals = np.array([r[value] for r in members
                         if r.get("status", "ok") in ("ok", "uncertified")
                         and np.isfinite(r[value])], dtype=float)
        reasons = sorted({r.get("reason", "") or r.get("status", "")
                          for r in members if r.get("status", "ok") not in ("ok", "uncertified")})
        row = dict(zip(keys, key))
        row["quantity"] = value
        row["n_runs"] = int(vals.size)
        row["n_excluded"] = len(members) - int(vals.size)
        if vals.size:
            row.update(mean=float(vals.mean()),
                       sd=float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                       median=float(np.median(vals)), min=float(vals.min()),
                       max=float(vals.max()))
        else:
            row.update(mean=float("nan"), sd=float("nan"), median=float("nan"),
                       min=float("nan"), max=float("nan"))
        row["exclusions"] = " | ".join(reasons)
        out.append(row)
    return out


def mean_of(agg_rows: List[dict], quantity: str, **match) -> float:
    for r in agg_rows:
        if r["quantity"] == quantity and all(r[k] == v for k, v in match.items()):
            return r["mean"]
    raise KeyError(f"no aggregate row for {quantity} {match}")


__all__ = [
    "ExperimentConfig", "smoke_config", "run_seed", "offline_record", "test_record",
    "fit_predictor", "gated_predictor", "run_prediction_study", "run_stability_demo",
    "run_control_study", "run_single_control", "select_lambda", "aggregate", "mean_of",
    "StabilityDemo", "error_growth", "map_tasks", "PREDICTION_HEADER", "CONTROL_HEADER",
    "CONTROLLERS", "PREDICTORS", "SEED_PRIME",
]
