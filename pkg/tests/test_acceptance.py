"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The Monte Carlo criteria run the full 100-run studies, so this module takes
a few minutes. Criteria that the implementation does not meet are marked
strict xfail: they still run at their stated tolerance and report FAIL.
"""

import time

import numpy as np
import pytest

from innodeepc import hankel, numerics, predictor, system
from innodeepc.bench import metrics, report, studies
from innodeepc.control import SskfMpc, run_closed_loop
from innodeepc.control.qp import OPTIMAL, QpProblem, box_constraints, solve_qp

from conftest import record_criterion
from test_qp import enumerate_box_qp, random_box_qp

CFG = studies.ExperimentConfig()


def timed(fn, *args, **kw):
    start = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - start


# 1: exact-innovation equivalence in closed loop ------------------------------

class EquivalenceProbe(SskfMpc):
    """SSKF-MPC that also evaluates the data-driven predictor on every plan.

    The data-driven predictor is fed the filter's own innovations, so both
    predictors see the same information at every step.
    """

    def __init__(self, model, cfg, pred):
        super().__init__(model, cfg)
        self.pred = pred
        self.errors = []

    def reset(self, u_init, y_init, xhat0=None):
        super().reset(u_init, y_init)
        e, _ = system.sskf_filter(self.model, u_init, y_init)
        self.state = predictor.OnlineState.from_windows(u_init, y_init, e)

    def step(self, k):
        plan = super().step(k)
        ref = system.sskf_predict(self.model, self.xhat, plan.u_f)
        got = predictor.predict(self.pred, self.state, plan.u_f).y_f_hat
        self.errors.append(np.linalg.norm(got - ref) / (1.0 + np.linalg.norm(ref)))
        return plan

    def observe(self, u_t, y_t):
        m = self.model
        e_t = np.ravel(y_t) - m.C @ self.xhat - m.D @ np.ravel(u_t)
        one_step = super().observe(u_t, y_t)
        self.state = predictor.update_window(self.state, u_t, y_t, e_t=e_t)
        return one_step


def criterion_1():
    plant = system.benchmark_plant(CFG.q_for(30))
    data = studies.offline_record(plant, CFG, 0, 0)
    blocks = hankel.partition(data.u, data.y, data.e_true, CFG.L_p, CFG.L_f, n_x=2)
    probe = EquivalenceProbe(plant, CFG.controller_config(), predictor.build_inno_predictor(blocks))
    log = run_closed_loop(probe, plant, 100, seed=1)
    return max(probe.errors), len(probe.errors), log.n_held


def test_criterion_1_exact_innovation_equivalence():
    (err, steps, held), elapsed = timed(criterion_1)
    ok = err <= 1e-6 and steps == 100 and held == 0 and elapsed < 10
    record_criterion(1, ok, f"max relative error {err:.2e} over {steps} closed-loop steps "
                            f"(tol 1e-6), {elapsed:.1f} s")
    assert ok


# 2: noise-free fundamental-lemma reduction -----------------------------------

def criterion_2():
    plant = system.benchmark_plant(0.0)
    L = CFG.L_p + CFG.L_f
    data = studies.offline_record(plant, CFG, 0, 0)
    pe, _ = hankel.is_persistently_exciting(data.u, L + 2)
    assert np.all(data.e_true == 0.0)
    blocks = hankel.partition(data.u, data.y, data.e_true, CFG.L_p, CFG.L_f, n_x=2)
    inno = predictor.build_inno_predictor(blocks, require_full_rank=False)
    spc = predictor.build_spc_predictor(blocks.without_innovations())
    u = system.gen_gaussian_input(1.0, 50 + L - 1, 7)
    tr = system.simulate(plant, u, x0=[0.5, -0.3])
    worst = 0.0
    for k in range(50):
        up, yp = u[k:k + CFG.L_p], tr.y[k:k + CFG.L_p]
        uf, yf = u[k + CFG.L_p:k + L], tr.y[k + CFG.L_p:k + L].ravel()
        state = predictor.OnlineState.from_windows(up, yp)
        worst = max(worst,
                    np.abs(predictor.predict(inno, state, uf).y_f_hat - yf).max(),
                    np.abs(predictor.predict_spc(spc, up, yp, uf).y_f_hat - yf).max())
    return pe, worst


def test_criterion_2_noise_free_reduction():
    (pe, worst), elapsed = timed(criterion_2)
    ok = pe and worst <= 1e-8 and elapsed < 5
    record_criterion(2, ok, f"max error {worst:.2e} over 50 windows, SPC and Inno-OP "
                            f"(tol 1e-8), input PE of order L + n_x: {pe}, {elapsed:.1f} s")
    assert ok


# 3: certificate demonstration ------------------------------------------------

@pytest.mark.xfail(strict=True, reason="the straddling rho = 50 predictor has radius barely "
                   "above one, so its errors grow a few-fold in 100 steps, not 1000-fold")
def test_criterion_3_certificate_demonstration():
    demo, elapsed = timed(studies.run_stability_demo, CFG, 30)
    checks = {
        "straddle": demo.found and demo.radii[0] < 1.0 < demo.radii[1],
        "stable slope": demo.slope_stable <= 1e-3,
        "unstable growth": demo.growth_unstable > 1e3,
        "runtime": elapsed < 30,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    record_criterion(3, ok, f"seed {demo.seed}: radii {demo.radii[0]:.4f} / {demo.radii[1]:.4f}, "
                            f"stable slope {demo.slope_stable:.5f}/step (tol 0.001), "
                            f"unstable growth {demo.growth_unstable:.2f}x (need > 1000), "
                            f"{elapsed:.1f} s" + (f"; failed: {', '.join(failed)}" if failed
                                                  else ""))
    assert ok


# 4: prediction study ordering ------------------------------------------------

@pytest.fixture(scope="module")
def prediction_study():
    rows, elapsed = timed(studies.run_prediction_study, CFG)
    return studies.aggregate(rows, ["snr_db", "method", "step"], "r2"), elapsed


def test_criterion_4_prediction_ordering(prediction_study):
    agg, elapsed = prediction_study
    failures, gaps = [], {}
    for snr in CFG.snr_targets:
        inno = [studies.mean_of(agg, "r2", snr_db=snr, method="Inno-OP", step=s)
                for s in CFG.steps]
        spc = [studies.mean_of(agg, "r2", snr_db=snr, method="SPC", step=s) for s in CFG.steps]
        gaps[snr] = [a - b for a, b in zip(inno, spc)]
        if any(g < 0 for g in gaps[snr]):
            failures.append(f"{snr} dB ordering")
        if any(a <= b for a, b in zip(inno, inno[1:])):
            failures.append(f"{snr} dB Inno-OP not degrading with step")
    if not gaps[20][-1] > 0:
        failures.append("20 dB step-10 gap not positive")
    runs = {r["n_runs"] for r in agg}
    ok = not failures and runs == {100} and elapsed < 600
    gap_text = ", ".join(f"{snr} dB " + "/".join(f"{g:+.3f}" for g in gaps[snr])
                         for snr in CFG.snr_targets)
    record_criterion(4, ok, f"R² gap Inno-OP - SPC at steps 1/5/10: {gap_text}; "
                            f"runs per group {sorted(runs)}, {elapsed:.0f} s"
                            + (f"; failed: {', '.join(failures)}" if failures else ""))
    assert ok


# 5: control study ------------------------------------------------------------

@pytest.fixture(scope="module")
def control_study():
    (rows, lambdas, _), elapsed = timed(studies.run_control_study, CFG)
    agg = []
    for q in ("J_u", "J_y", "J_total"):
        agg += studies.aggregate(rows, ["snr_db", "controller"], q)
    return agg, lambdas, elapsed


def test_criterion_5_cost_bands(control_study):
    agg, _, elapsed = control_study
    outside, n_checked = [], 0
    for (name, snr), refs in report.REFERENCE_COSTS.items():
        for quantity, (mean, sd) in zip(("J_u", "J_y"), refs):
            got = studies.mean_of(agg, quantity, snr_db=snr, controller=name)
            lo, hi = metrics.band(mean, sd)
            n_checked += 1
            if not lo <= got <= hi:
                outside.append(f"{name} {snr} dB {quantity} {got:.3f} not in [{lo:.3f}, {hi:.3f}]")
    ok = not outside and elapsed < 1800
    record_criterion("5 (bands)", ok, f"{n_checked - len(outside)}/{n_checked} mean costs inside "
                                      f"their bands, {elapsed:.0f} s"
                     + (f"; {'; '.join(outside)}" if outside else ""))
    assert ok


def _jtotal(agg, snr):
    return {c: studies.mean_of(agg, "J_total", snr_db=snr, controller=c)
            for c in ("Inno-DeePC", "Reg-DeePC", "SPC")}


def test_criterion_5_inno_beats_baselines(control_study):
    agg, lambdas, _ = control_study
    text, ok = [], True
    for snr in (20, 30):
        j = _jtotal(agg, snr)
        ok &= j["Inno-DeePC"] < j["Reg-DeePC"] and j["Inno-DeePC"] < j["SPC"]
        text.append(f"{snr} dB Inno {j['Inno-DeePC']:.3f} Reg {j['Reg-DeePC']:.3f} "
                    f"(lambda {lambdas[snr]:g}) SPC {j['SPC']:.3f}")
    record_criterion("5 (Inno-DeePC < Reg-DeePC, SPC)", ok, "; ".join(text))
    assert ok


@pytest.mark.xfail(strict=True, reason="at 20 dB the validated Reg-DeePC weight lands on a "
                   "near-SPC solution whose mean J_total exceeds SPC's by about 0.1 percent")
def test_criterion_5_reg_not_worse_than_spc(control_study):
    agg, lambdas, _ = control_study
    text, ok = [], True
    for snr in (20, 30):
        j = _jtotal(agg, snr)
        ok &= j["Reg-DeePC"] <= j["SPC"]
        text.append(f"{snr} dB Reg {j['Reg-DeePC']:.4f} vs SPC {j['SPC']:.4f}")
    record_criterion("5 (Reg-DeePC <= SPC)", ok, "; ".join(text))
    assert ok


# 6: numerics oracles ---------------------------------------------------------

def criterion_6():
    g = np.random.default_rng(2024)
    pinv_err = 0.0
    for i in range(100):
        m, n = g.integers(1, 12, size=2)
        r = int(g.integers(1, min(m, n) + 1))
        X = g.standard_normal((m, r)) @ g.standard_normal((r, n)) * 10.0 ** g.uniform(-3, 3)
        P = numerics.pinv(X)
        # XP and PX are orthogonal projectors, so the last two residuals are already unitless
        pinv_err = max(pinv_err, np.abs(X @ P @ X - X).max() / np.abs(X).max(),
                       np.abs(P @ X @ P - P).max() / np.abs(P).max(),
                       np.abs((X @ P).T - X @ P).max(), np.abs((P @ X).T - P @ X).max())

    dare_err = 0.0
    for _ in range(50):
        a, c = g.uniform(-1.5, 1.5), g.uniform(0.2, 2.0)
        w, v = g.uniform(0.01, 2.0), g.uniform(0.01, 2.0)
        K, P = numerics.solve_dare([[a]], [[c]], [[w]], [[v]])
        # positive root of c² P² + (v (1 - a²) - w c²) P - w v = 0
        bq = v * (1 - a * a) - w * c * c
        p_ref = (-bq + np.sqrt(bq * bq + 4 * c * c * w * v)) / (2 * c * c)
        dare_err = max(dare_err, abs(P[0, 0] - p_ref) / (1 + p_ref),
                       abs(K[0, 0] - a * p_ref * c / (c * c * p_ref + v)))
    plant = system.benchmark_plant(1.0)
    K, _ = numerics.solve_dare(plant.A, plant.C, plant.Sigma_w, plant.Sigma_v)
    radius = numerics.spectral_radius(plant.A - K @ plant.C)

    qp_err, not_optimal = 0.0, 0
    for seed in range(200):
        H, f, lo, hi = random_box_qp(seed)
        res = solve_qp(QpProblem(H, f, *box_constraints(4, lo, hi)))
        _, z = enumerate_box_qp(H, f, lo, hi)
        not_optimal += res.status != OPTIMAL
        qp_err = max(qp_err, np.abs(res.z - z).max())
    return pinv_err, dare_err, radius, qp_err, not_optimal


def test_criterion_6_numerics_oracles():
    (pinv_err, dare_err, radius, qp_err, bad), elapsed = timed(criterion_6)
    ok = (pinv_err <= 1e-8 and dare_err <= 1e-10 and radius < 1 and qp_err <= 1e-6 and bad == 0
          and elapsed < 30)
    record_criterion(6, ok, f"pinv identities {pinv_err:.1e} (tol 1e-8), scalar DARE "
                            f"{dare_err:.1e} (tol 1e-10), radius(A - KC) {radius:.4f}, "
                            f"box QPs vs enumeration {qp_err:.1e} (tol 1e-6), {elapsed:.1f} s")
    assert ok


# 7: gap recursion --------------------------------------------------------------

def criterion_7():
    plant = system.benchmark_plant(CFG.q_for(30))
    data = studies.offline_record(plant, CFG, 0, CFG.rho)
    blocks_hat, pred_hat = studies.fit_predictor(data, CFG, CFG.rho)
    blocks_kf = predictor.with_true_innovations(blocks_hat, data.e_true[CFG.rho:])
    pred_kf = predictor.build_inno_predictor(blocks_kf)
    steps = 50
    u = system.gen_gaussian_input(CFG.test_input_variance, CFG.L_p + steps + CFG.L_f + 1, 3)
    y = system.simulate(plant, u, system.NoiseSpec(5)).y
    e, _ = system.sskf_filter(plant, u, y)
    L_p, L_f = CFG.L_p, CFG.L_f
    init = predictor.init_innovation_window(blocks_hat, u[:L_p], y[:L_p])
    s_hat = predictor.OnlineState(u[:L_p].ravel(), y[:L_p].ravel(), init.e_p, L_p)
    s_kf = predictor.OnlineState.from_windows(u[:L_p], y[:L_p], e[:L_p], L_p)
    worst = 0.0
    for k in range(steps):
        t = L_p + k
        u_f, u_next = u[t:t + L_f].ravel(), u[t + 1:t + 1 + L_f].ravel()
        a_kf = predictor.alpha(pred_kf, s_kf, u_f)
        beta = a_kf - predictor.alpha(pred_hat, s_hat, u_f)
        rhs = predictor.beta_rhs(pred_hat, pred_kf, beta, a_kf, u_next, e[t])
        one = predictor.predict(pred_hat, s_hat, u_f).one_step
        s_hat = predictor.update_window(s_hat, u[t], y[t], one)
        s_kf = predictor.update_window(s_kf, u[t], y[t], e_t=e[t])
        recorded = (predictor.alpha(pred_kf, s_kf, u_next)
                    - predictor.alpha(pred_hat, s_hat, u_next))
        worst = max(worst, np.abs(recorded - rhs).max() / (1 + np.abs(recorded).max()))
    return worst


def test_criterion_7_gap_recursion():
    worst, elapsed = timed(criterion_7)
    ok = worst <= 1e-6 and elapsed < 10
    record_criterion(7, ok, f"max recursion residual {worst:.2e} over 50 steps (tol 1e-6), "
                            f"{elapsed:.1f} s")
    assert ok
