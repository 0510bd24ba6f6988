"""Report emission: CSV tables, SVG figures, a config snapshot and a text summary."""

import csv
import math
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np
import yaml

from . import plotting
from .metrics import band
from .studies import CONTROL_HEADER, CONTROLLERS, PREDICTION_HEADER, PREDICTORS, aggregate

# reference (mean, sd) of J_u and J_y the control study is checked against, per SNR
REFERENCE_COSTS = {
    ("SSKF-MPC", 20): ((1.11, 0.13), (1.93, 0.75)),
    ("SSKF-MPC", 30): ((0.83, 0.07), (0.38, 0.42)),
    ("SSKF-MPC", 40): ((0.80, 0.06), (0.22, 0.38)),
    ("Inno-DeePC", 20): ((1.04, 0.15), (2.23, 0.82)),
    ("Inno-DeePC", 30): ((0.84, 0.07), (0.41, 0.42)),
    ("Inno-DeePC", 40): ((0.80, 0.06), (0.23, 0.38)),
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def _parse(s: str):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def write_table(path, header: Sequence[str], rows: Iterable[dict]):
    """CSV with a header row; floats are written with full precision."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h)) for h in header])


def read_table(path) -> List[dict]:
    """Inverse of :func:`write_table` (numbers are parsed back to int/float)."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        return [dict(zip(header, (_parse(x) for x in row))) for row in reader]


def tables_equal(a: List[dict], b: List[dict]) -> bool:
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if ra.keys() != rb.keys():
            return False
        for k in ra:
            x, y = ra[k], rb[k]
            if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
                continue
            if x != y:
                return False
    return True


AGG_HEADER_TAIL = ["quantity", "n_runs", "n_excluded", "mean", "sd", "median", "min", "max",
                   "exclusions"]


def write_config(out: Path, config: dict):
    with (out / "config.yaml").open("w") as fh:
        yaml.safe_dump(config, fh, sort_keys=True)


def emit_prediction_report(out, rows, cfg) -> List[dict]:
    """Raw and aggregate R² tables plus the boxplot figure. Returns the aggregate."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "prediction_runs.csv", PREDICTION_HEADER, rows)
    agg = aggregate(rows, ["snr_db", "method", "step"], "r2")
    write_table(out / "prediction_summary.csv", ["snr_db", "method", "step"] + AGG_HEADER_TAIL,
                agg)

    def values(snr, step, method):
        return [r["r2"] for r in rows if r["snr_db"] == snr and r["method"] == method
                and r["step"] == step and r["status"] in ("ok", "uncertified")]

    plotting.grouped_boxplots(out / "prediction_r2.svg", list(cfg.snr_targets), list(PREDICTORS),
                              list(cfg.steps), values, "R²", lambda s: f"{s}-step")
    return agg


def emit_stability_report(out, demo) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "stability_errors.csv", ["t", "e_hat_stable", "e_hat_unstable"],
                demo.trace_rows())
    rho1, rho2 = demo.rho_pair
    plotting.error_traces(
        out / "stability_errors.svg",
        {f"rho={rho1} (radius {demo.radii[0]:.3f})": demo.errors_stable,
         f"rho={rho2} (radius {demo.radii[1]:.3f})": demo.errors_unstable},
        title=f"seed {demo.seed}, {demo.snr_db} dB")


def emit_control_report(out, rows, cfg, lambdas, validation) -> List[dict]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "control_runs.csv", CONTROL_HEADER, rows)
    write_table(out / "lambda_validation.csv", CONTROL_HEADER, validation)
    agg = []
    for q in ("J_u", "J_y", "J_total"):
        agg += aggregate(rows, ["snr_db", "controller"], q)
    write_table(out / "control_summary.csv", ["snr_db", "controller"] + AGG_HEADER_TAIL, agg)
    names = [c for c in CONTROLLERS if c in cfg.controllers]

    def values(snr, _group, name):
        return [r["J_total"] for r in rows if r["snr_db"] == snr and r["controller"] == name
                and r["status"] == "ok"]

    plotting.grouped_boxplots(out / "control_jtotal.svg", list(cfg.snr_targets), names, [None],
                              values, "J_total", lambda g: "")
    return agg


def summary_lines(pred_agg=None, demo=None, ctrl_agg=None, lambdas=None) -> List[str]:
    lines = []
    if pred_agg:
        lines.append("Prediction study: mean R² (n runs)")
        for r in pred_agg:
            lines.append(f"  {r['snr_db']} dB  {r['method']:<8} {r['step']:>2}-step  "
                         f"{r['mean']:.4f}  (n={r['n_runs']}, excluded {r['n_excluded']})")
    if demo is not None:
        lines.append("Certificate demonstration")
        lines.append(f"  seed {demo.seed} (index {demo.run_index}, {demo.tries} tried), "
                     f"found straddling pair: {demo.found}")
        lines.append(f"  radii rho={demo.rho_pair[0]}: {demo.radii[0]:.4f}, "
                     f"rho={demo.rho_pair[1]}: {demo.radii[1]:.4f}")
        lines.append(f"  stable log|e| slope {demo.slope_stable:.5f}/step, "
                     f"unstable growth {demo.growth_unstable:.2f}x")
    if ctrl_agg:
        lines.append("Control study: mean ± sd (n runs)")
        if lambdas:
            lines.append("  Reg-DeePC lambda per SNR: "
                         + ", ".join(f"{k} dB -> {v:g}" for k, v in lambdas.items()))
        for r in ctrl_agg:
            ref = REFERENCE_COSTS.get((r["controller"], r["snr_db"]))
            extra = ""
            if ref is not None and r["quantity"] in ("J_u", "J_y"):
                m, sd = ref[0] if r["quantity"] == "J_u" else ref[1]
                lo, hi = band(m, sd)
                inside = lo <= r["mean"] <= hi
                verdict = "in" if inside else "OUT"
                extra = f"  reference {m:.2f}, band [{lo:.3f}, {hi:.3f}] {verdict}"
            lines.append(f"  {r['snr_db']} dB  {r['controller']:<10} {r['quantity']:<7} "
                         f"{r['mean']:.3f} ± {r['sd']:.3f} (n={r['n_runs']}){extra}")
    return lines


def write_summary(out, lines: Sequence[str]):
    Path(out, "summary.txt").write_text("\n".join(lines) + "\n")
