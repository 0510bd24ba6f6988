"""Command-line entry point.

Subcommands:
  simulate   generate offline and test trajectories
  estimate   VARX innovation estimation and the stability gate
  predict    online multi-step prediction on test data
  control    one closed-loop run per controller
  benchmark  Monte Carlo studies with CSV tables and SVG figures

Configuration comes from an optional YAML file; command-line flags
override it. Exit codes: 0 success, 2 configuration error, 3 certificate
or gate failure, 4 numerical failure, 5 I/O error.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import yaml
from filelock import FileLock, Timeout

from . import __version__
from .bench import report, studies
from .bench.metrics import r_squared
from .bench.plotting import closed_loop_figure
from .errors import CertificateError, ConfigError, InnoDeePCError
from .innovation import SWEEP_HEADER, fit_varx, offline_window, sweep_rho
from .predictor import OnlineState, init_innovation_window, run_open_loop
from .system import (BENCH_Q, StateSpaceModel, Trajectory, benchmark_plant,
                     write_trajectory_csv)

logger = logging.getLogger("innodeepc")

EXIT_OK, EXIT_CONFIG, EXIT_GATE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5

TOP_KEYS = {"plant", "snr_db", "q", "zero_noise", "rho", "seed", "out", "controllers",
            "experiment", "lambda"}
PLANT_KEYS = {"A", "B", "C", "D", "Sigma_w", "Sigma_v"}
BUILTIN_PLANTS = ("paper-2x1",)
# experiment fields pinned by --paper
PRESET_FIELDS = ("snr_targets", "q_values", "N", "N_test", "L_p", "L_f", "rho", "rho_pair",
                "steps", "square_period", "square_amplitude", "dither_variance",
                "test_input_variance", "Q", "R", "u_bounds", "y_bounds", "lambda_grid")


@dataclass
class CliConfig:
    """Validated settings for one invocation."""

    plant_name: str = "paper-2x1"
    plant_matrices: Optional[dict] = None
    snr_db: int = 30
    q: Optional[float] = None
    zero_noise: bool = False
    rho: Tuple[int, ...] = (15,)
    seed: int = 0
    out: Path = Path("innodeepc-out")
    controllers: Tuple[str, ...] = studies.CONTROLLERS
    lam: Optional[float] = None
    experiment: studies.ExperimentConfig = field(default_factory=studies.ExperimentConfig)

    @property
    def noise_q(self) -> float:
        if self.zero_noise:
            return 0.0
        if self.q is not None:
            return self.q
        # custom plants carry absolute covariances
        return 1.0 if self.plant_matrices is not None else BENCH_Q[self.snr_db]

    def plant(self) -> StateSpaceModel:
        if self.plant_matrices is None:
            return benchmark_plant(self.noise_q)
        m = self.plant_matrices
        try:
            base = StateSpaceModel(*(np.atleast_2d(np.asarray(m[k], dtype=float))
                                     for k in ("A", "B", "C", "D", "Sigma_w", "Sigma_v")))
            return base.with_kalman_gain().scaled(self.noise_q)
        except InnoDeePCError as exc:
            raise ConfigError(f"plant: {exc}") from exc

    def snapshot(self) -> dict:
        return {
            "plant": self.plant_name if self.plant_matrices is None else self.plant_matrices,
            "snr_db": self.snr_db, "q": self.noise_q, "zero_noise": self.zero_noise,
            "rho": list(self.rho), "seed": self.seed, "out": str(self.out),
            "controllers": list(self.controllers), "lambda": self.lam,
            "experiment": self.experiment.to_dict(), "version": __version__,
        }


def _as_int_tuple(v, path):
    vals = v if isinstance(v, (list, tuple)) else [v]
    try:
        out = tuple(int(x) for x in vals)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected an integer or a list of integers, got {v!r}")
    if not out or min(out) < 1:
        raise ConfigError(f"{path}: values must be positive integers")
    return out


def load_config(path: Optional[str], args) -> CliConfig:
    """Merge the YAML file (if any) and command-line flags into a CliConfig."""
    raw = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s) at top level: {', '.join(unknown)}")

    cfg = CliConfig()
    plant = raw.get("plant", "paper-2x1")
    if isinstance(plant, str):
        if plant not in BUILTIN_PLANTS:
            raise ConfigError(f"plant: unknown built-in {plant!r}; choose from {BUILTIN_PLANTS}")
        cfg.plant_name = plant
    elif isinstance(plant, dict):
        missing = sorted(PLANT_KEYS - set(plant))
        extra = sorted(set(plant) - PLANT_KEYS)
        if missing:
            raise ConfigError(f"plant: missing required field(s) {', '.join(missing)}")
        if extra:
            raise ConfigError(f"plant: unknown key(s) {', '.join(extra)}")
        cfg.plant_name, cfg.plant_matrices = "custom", plant
    else:
        raise ConfigError("plant: expected a built-in name or a mapping of matrices")

    if "snr_db" in raw:
        if raw["snr_db"] not in BENCH_Q:
            raise ConfigError(f"snr_db: must be one of {sorted(BENCH_Q)} (or give q directly)")
        cfg.snr_db = int(raw["snr_db"])
    if "q" in raw:
        try:
            cfg.q = float(raw["q"])
        except (TypeError, ValueError):
            raise ConfigError(f"q: expected a number, got {raw['q']!r}")
        if cfg.q <= 0:
            raise ConfigError("q: must be positive (use zero_noise for noise-free runs)")
    cfg.zero_noise = bool(raw.get("zero_noise", False))
    if "rho" in raw:
        cfg.rho = _as_int_tuple(raw["rho"], "rho")
    if "seed" in raw:
        cfg.seed = int(_as_int_tuple(raw["seed"], "seed")[0]) if raw["seed"] else 0
    if "out" in raw:
        cfg.out = Path(str(raw["out"]))
    if "controllers" in raw:
        names = tuple(raw["controllers"])
        bad = sorted(set(names) - set(studies.CONTROLLERS))
        if bad:
            raise ConfigError(f"controllers: unknown {bad}; choose from {studies.CONTROLLERS}")
        cfg.controllers = names
    if raw.get("lambda") is not None:
        cfg.lam = float(raw["lambda"])

    exp = raw.get("experiment", {}) or {}
    if not isinstance(exp, dict):
        raise ConfigError("experiment: expected a mapping")
    if getattr(args, "paper", False):
        preset = studies.ExperimentConfig()
        exp = {k: v for k, v in exp.items() if k not in PRESET_FIELDS}
        exp.update({k: getattr(preset, k) for k in PRESET_FIELDS})
    exp.setdefault("rho", cfg.rho[0])
    exp.setdefault("controllers", list(cfg.controllers))
    exp.setdefault("base_seed", cfg.seed)

    # flags override the file
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        exp["base_seed"] = args.seed
    if getattr(args, "out", None):
        cfg.out = Path(args.out)
    if getattr(args, "runs", None) is not None:
        exp["n_runs"] = args.runs
    if getattr(args, "rho", None):
        cfg.rho = _as_int_tuple([int(x) for x in args.rho.split(",")], "--rho")
        exp["rho"] = cfg.rho[0]
    if getattr(args, "snr", None) is not None:
        if args.snr not in BENCH_Q:
            raise ConfigError(f"--snr: must be one of {sorted(BENCH_Q)}")
        cfg.snr_db, cfg.q = args.snr, None
    if getattr(args, "zero_noise", False):
        cfg.zero_noise = True
    cfg.experiment = studies.ExperimentConfig.from_dict(exp)
    if cfg.plant_matrices is not None:
        cfg.plant()  # validate now rather than mid-run
    return cfg


# data helpers ---------------------------------------------------------------

def _offline(cfg: CliConfig):
    exp = cfg.experiment
    plant = cfg.plant()
    data = studies.offline_record(plant, exp, cfg.seed, max(cfg.rho))
    return plant, data


def _test(cfg: CliConfig, plant):
    exp = cfg.experiment
    length = exp.L_p + exp.N_test + exp.L_f - 1
    return studies.test_record(plant, exp, cfg.seed, length)


def _print(lines):
    for line in lines:
        print(line)


# commands -------------------------------------------------------------------

def cmd_simulate(cfg: CliConfig, args) -> int:
    plant, data = _offline(cfg)
    u, y, e, _ = _test(cfg, plant)
    write_trajectory_csv(cfg.out / "offline.csv", Trajectory(data.u, data.y, e=data.e_true))
    write_trajectory_csv(cfg.out / "test.csv", Trajectory(u, y, e=e))
    _print([f"offline: {len(data.u)} samples ({max(cfg.rho)} history + {cfg.experiment.N}), "
            f"measured SNR {data.snr_db:.2f} dB",
            f"test: {len(u)} samples",
            f"written to {cfg.out}"])
    return EXIT_OK


def cmd_estimate(cfg: CliConfig, args) -> int:
    exp = cfg.experiment
    _, data = _offline(cfg)
    rows = sweep_rho(data.u, data.y, list(cfg.rho), exp.L_p, exp.L_f, n_est=exp.N,
                     n_x=exp.n_x_bound)
    report.write_table(cfg.out / "estimate.csv", SWEEP_HEADER,
                       [dict(zip(SWEEP_HEADER, r.as_row())) for r in rows])
    print(f"{'rho':>5} {'residual':>12} {'radius':>10}  verdict")
    for r in rows:
        verdict = "STABLE" if r.stable else "UNSTABLE"
        note = f"  ({r.note})" if r.note else ""
        print(f"{r.rho:>5} {r.residual_norm:>12.5g} {r.theta_radius:>10.5f}  {verdict}{note}")
    passing = [r for r in rows if r.stable]
    chosen = passing[0] if passing else None
    if chosen is not None:
        uu, yy = offline_window(data.u, data.y, chosen.rho, exp.N)
        fit = fit_varx(uu, yy, chosen.rho)
        report.write_table(cfg.out / "innovations.csv", ["t", "e_hat_1"],
                           [dict(t=k, e_hat_1=float(v)) for k, v in enumerate(fit.e_hat[:, 0])])
        print(f"gate passed with rho = {chosen.rho}")
        return EXIT_OK
    print("no candidate rho passed the stability gate")
    return EXIT_OK if args.force else EXIT_GATE


def cmd_predict(cfg: CliConfig, args) -> int:
    exp = cfg.experiment
    plant, data = _offline(cfg)
    blocks, pred = studies.fit_predictor(data, exp, cfg.rho[0])
    if not pred.is_stable and not args.force:
        raise CertificateError(f"predictor for rho = {cfg.rho[0]} is not certified "
                               f"(radius {pred.theta_radius:.4f}); rerun with --force to use it")
    u, y, e, _ = _test(cfg, plant)
    t0 = exp.L_p
    init = init_innovation_window(blocks, u[:t0], y[:t0])
    state = OnlineState(u[:t0].ravel(), y[:t0].ravel(), init.e_p, t0)
    res = run_open_loop(pred, state, u[t0:], y[t0:t0 + exp.N_test])
    header = ["t", "y"] + [f"y_hat_{s}" for s in range(1, exp.L_f + 1)] + ["e_hat"]
    rows = []
    for k in range(exp.N_test):
        row = dict(t=t0 + k, y=float(y[t0 + k, 0]), e_hat=float(res.innovations[k, 0]))
        row.update({f"y_hat_{s}": float(res.predictions[k, s - 1]) for s in range(1, exp.L_f + 1)})
        rows.append(row)
    report.write_table(cfg.out / "predictions.csv", header, rows)
    lines = [f"theta radius {pred.theta_radius:.5f}, initial-window gap {init.feasibility_gap:.3g}"]
    for s in exp.steps:
        # s-step predictions made at k - s + 1 for outputs k = s-1 .. N_test-1
        y_true = y[t0 + s - 1:t0 + exp.N_test, 0]
        y_hat = res.predictions[:exp.N_test - s + 1, s - 1]
        lines.append(f"{s:>2}-step R^2 = {r_squared(y_true, y_hat):.4f}")
    _print(lines)
    report.write_summary(cfg.out, lines)
    return EXIT_OK


def cmd_control(cfg: CliConfig, args) -> int:
    exp = cfg.experiment
    if cfg.plant_matrices is not None or cfg.zero_noise or cfg.q is not None:
        raise ConfigError("control runs use the built-in plant at a listed snr_db")
    snr = cfg.snr_db
    if snr not in exp.snr_targets:
        exp = replace(exp, snr_targets=(snr,), q_values=(BENCH_Q[snr],))
    exp = replace(exp, base_seed=cfg.seed)
    out = studies.run_single_control(exp, snr, 0, cfg.lam, cfg.controllers)
    rows = []
    lines = [f"{snr} dB, seed {cfg.seed}"]
    for name, (log, (J_u, J_y, J_t)) in out.items():
        log.write_csv(cfg.out / f"closed_loop_{name}.csv")
        rows.append(dict(controller=name, J_u=J_u, J_y=J_y, J_total=J_t, held_steps=log.n_held,
                         softened_steps=int(log.softened.sum())))
        lines.append(f"{name:<10} J_u {J_u:.4f}  J_y {J_y:.4f}  J_total {J_t:.4f}"
                     f"  held {log.n_held}")
    report.write_table(cfg.out / "costs.csv",
                       ["controller", "J_u", "J_y", "J_total", "held_steps", "softened_steps"],
                       rows)
    closed_loop_figure(cfg.out / "closed_loop.svg", {k: v[0] for k, v in out.items()})
    _print(lines)
    report.write_summary(cfg.out, lines)
    return EXIT_OK


def cmd_benchmark(cfg: CliConfig, args) -> int:
    exp = cfg.experiment
    which = args.study
    pred_agg = demo = ctrl_agg = lambdas = None
    if which in ("prediction", "all"):
        rows = studies.run_prediction_study(exp, jobs=args.jobs)
        pred_agg = report.emit_prediction_report(cfg.out, rows, exp)
    if which in ("stability", "all"):
        demo = studies.run_stability_demo(exp)
        report.emit_stability_report(cfg.out, demo)
    if which in ("control", "all"):
        rows, lambdas, validation = studies.run_control_study(exp, jobs=args.jobs)
        ctrl_agg = report.emit_control_report(cfg.out, rows, exp, lambdas, validation)
    lines = report.summary_lines(pred_agg, demo, ctrl_agg, lambdas)
    _print(lines)
    report.write_summary(cfg.out, lines)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "predict": cmd_predict,
    "control": cmd_control,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--paper", action="store_true",
                        help="pin every benchmark parameter to the reference setup")
    common.add_argument("--force", action="store_true",
                        help="proceed even if the stability certificate fails")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for Monte Carlo runs")
    common.add_argument("--snr", type=int, help="noise level in dB (20, 30 or 40)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="innodeepc", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    s = sub.add_parser("simulate", parents=[common], help="generate offline and test data")
    s.add_argument("--zero-noise", action="store_true", help="noise-free plant")
    e = sub.add_parser("estimate", parents=[common], help="innovation estimation and the gate")
    e.add_argument("--rho", help="VARX order or comma-separated sweep, e.g. 5,10,15,20")
    pr = sub.add_parser("predict", parents=[common], help="online multi-step prediction")
    pr.add_argument("--rho", help="VARX order")
    sub.add_parser("control", parents=[common], help="one closed-loop run per controller")
    b = sub.add_parser("benchmark", parents=[common], help="Monte Carlo studies and report")
    b.add_argument("--runs", type=int, help="Monte Carlo runs per SNR")
    b.add_argument("--study", choices=("prediction", "stability", "control", "all"),
                   default="all")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(cfg.out / ".innodeepc.lock"), timeout=0)
        with lock:
            report.write_config(cfg.out, cfg.snapshot())
            return COMMANDS[args.command](cfg, args)
    except Timeout:
        print(f"I/O error: output directory {cfg.out} is locked by another run", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificateError as exc:
        print(f"certificate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    except InnoDeePCError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
