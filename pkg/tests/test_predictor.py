import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from innodeepc import hankel, numerics, predictor, system
from innodeepc.control.qp import QpProblem, solve_qp
from innodeepc.errors import InputError, RankError

from conftest import L_F, L_P, RHO


def test_selector_shapes(kf_pred):
    n = 1 * (L_P + L_F) + 2 * 1 * L_P
    assert kf_pred.P.shape == (n, 176)
    assert kf_pred.M.shape == (176, n)
    assert kf_pred.Z1.shape == (n, 176)
    assert kf_pred.Z2.shape == (n, L_F)
    assert kf_pred.Z3.shape == (n, 1)
    assert np.array_equal(kf_pred.Z2[L_P:L_P + L_F], np.eye(L_F))
    assert not kf_pred.Z2[:L_P].any() and not kf_pred.Z2[L_P + L_F:].any()
    assert kf_pred.ef_perp.shape == (176, 176 - L_F)


def test_radius_shortcut_matches_full_spectrum(kf_pred, varx_pred):
    for p in (kf_pred, varx_pred):
        full = np.max(np.abs(np.linalg.eigvals(p.theta)))
        assert p.theta_radius == pytest.approx(full, rel=1e-9)
        assert np.allclose(p.theta, p.M @ p.P)
        assert predictor.check_certificate(p) == (p.theta_radius < 1.0, p.theta_radius)


def random_state(seed, n_u=1, n_y=1):
    g = np.random.default_rng(seed)
    return (predictor.OnlineState(g.standard_normal(n_u * L_P), g.standard_normal(n_y * L_P),
                                  0.1 * g.standard_normal(n_y * L_P)),
            g.standard_normal(n_u * L_F))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_reduced_form_equals_full_pseudo_inverse(varx_pred, seed):
    b = varx_pred.blocks
    state, u_f = random_state(seed)
    full = np.vstack([b.U_p, b.U_f, b.Y_p, b.E_p, b.E_f])
    rhs = np.concatenate([state.u_p, u_f, state.y_p, state.e_p, np.zeros(L_F)])
    g = numerics.pinv(full) @ rhs
    res = predictor.predict(varx_pred, state, u_f)
    assert np.allclose(res.y_f_hat, b.Y_f @ g, atol=1e-9 * (1 + np.abs(b.Y_f @ g).max()))
    a = predictor.alpha(varx_pred, state, u_f)
    assert np.allclose(b.E_f @ a, 0.0, atol=1e-9)
    assert np.allclose(res.one_step, res.y_f_hat[:1])


def test_true_innovation_predictor_matches_kalman(kf_pred, plant30):
    u = system.gen_gaussian_input(4.0, L_P + 60 + L_F, 5)
    tr = system.simulate(plant30, u, system.NoiseSpec(9))
    e, xhat = system.sskf_filter(plant30, u, tr.y)
    state = predictor.OnlineState.from_windows(u[:L_P], tr.y[:L_P], e[:L_P])
    res = predictor.run_open_loop(kf_pred, state, u[L_P:], tr.y[L_P:L_P + 60],
                                  e_feed=e[L_P:L_P + 60])
    for k in range(60):
        ref = system.sskf_predict(plant30, xhat[L_P + k], u[L_P + k:L_P + k + L_F])
        assert np.linalg.norm(res.predictions[k] - ref) <= 1e-6 * (1 + np.linalg.norm(ref))
    # its one-step errors are the Kalman innovations themselves
    assert np.allclose(res.innovations, e[L_P:L_P + 60], atol=1e-6)


def test_gap_recursion(kf_pred, varx_pred, plant30):
    u = system.gen_gaussian_input(4.0, L_P + 40 + L_F + 1, 6)
    tr = system.simulate(plant30, u, system.NoiseSpec(10))
    e, _ = system.sskf_filter(plant30, u, tr.y)
    s_hat = s_kf = predictor.OnlineState.from_windows(u[:L_P], tr.y[:L_P], e[:L_P])
    for k in range(40):
        t = L_P + k
        u_f, u_next = u[t:t + L_F].ravel(), u[t + 1:t + 1 + L_F].ravel()
        a_kf = predictor.alpha(kf_pred, s_kf, u_f)
        beta = a_kf - predictor.alpha(varx_pred, s_hat, u_f)
        rhs = predictor.beta_rhs(varx_pred, kf_pred, beta, a_kf, u_next, e[t])
        one = predictor.predict(varx_pred, s_hat, u_f).one_step
        s_hat = predictor.update_window(s_hat, u[t], tr.y[t], one)
        s_kf = predictor.update_window(s_kf, u[t], tr.y[t], e_t=e[t])
        beta_next = predictor.alpha(kf_pred, s_kf, u_next) - predictor.alpha(varx_pred, s_hat,
                                                                            u_next)
        assert np.abs(beta_next - rhs).max() <= 1e-6 * (1 + np.abs(beta_next).max())


def test_noise_free_predictors_are_exact():
    m = system.benchmark_plant(0.0)
    u = system.gen_gaussian_input(1.0, 200, 1)
    tr = system.simulate(m, u)
    b = hankel.partition(u, tr.y, np.zeros_like(tr.y), L_P, L_F, n_x=2)
    inno = predictor.build_inno_predictor(b, require_full_rank=False)
    spc = predictor.build_spc_predictor(b)
    ut = system.gen_gaussian_input(1.0, L_P + L_F + 10, 2)
    tt = system.simulate(m, ut, x0=[0.3, -0.2])
    for k in range(10):
        up, yp = ut[k:k + L_P], tt.y[k:k + L_P]
        uf, yf = ut[k + L_P:k + L_P + L_F], tt.y[k + L_P:k + L_P + L_F].ravel()
        s = predictor.OnlineState.from_windows(up, yp)
        assert np.abs(predictor.predict(inno, s, uf).y_f_hat - yf).max() < 1e-8
        assert np.abs(predictor.predict_spc(spc, up, yp, uf).y_f_hat - yf).max() < 1e-8


def test_zero_innovation_blocks_rejected_by_default(offline30):
    _, u, y, _ = offline30
    b = hankel.partition(u, y, np.zeros_like(y), L_P, L_F)
    with pytest.raises(RankError) as info:
        predictor.build_inno_predictor(b)
    assert info.value.sigma_min == 0.0
    with pytest.raises(InputError):
        predictor.build_inno_predictor(b.without_innovations())


def test_spc_matches_normal_equations(kf_blocks):
    spc = predictor.build_spc_predictor(kf_blocks)
    state, u_f = random_state(3)
    W = np.vstack([kf_blocks.U_p, kf_blocks.U_f, kf_blocks.Y_p])
    rhs = np.concatenate([state.u_p, u_f, state.y_p])
    ref = kf_blocks.Y_f @ np.linalg.lstsq(W, rhs, rcond=None)[0]
    got = predictor.predict_spc(kf_blocks, state.u_p, state.y_p, u_f).y_f_hat
    assert np.allclose(got, ref, atol=1e-9)
    assert np.allclose(predictor.predict_spc(spc, state.u_p, state.y_p, u_f).y_f_hat, got)
    with pytest.raises(InputError):
        predictor.predict_spc(spc, state.u_p[:-1], state.y_p, u_f)


def test_update_window_shifts():
    s = predictor.OnlineState(np.arange(3.0), np.arange(3.0) + 10, np.zeros(3), 4)
    n = predictor.update_window(s, 7.0, 20.0, one_step=19.5)
    assert np.array_equal(n.u_p, [1.0, 2.0, 7.0]) and np.array_equal(n.y_p, [11.0, 12.0, 20.0])
    assert np.array_equal(n.e_p, [0.0, 0.0, 0.5]) and n.t == 5
    assert predictor.update_window(s, 7.0, 20.0, e_t=0.25).e_p[-1] == 0.25
    with pytest.raises(InputError):
        predictor.update_window(s, 7.0, 20.0)


def test_initial_window_is_least_norm(kf_blocks, plant30):
    u = system.gen_gaussian_input(1.0, L_P, 4)
    y = system.simulate(plant30, u, system.NoiseSpec(4)).y
    init = predictor.init_innovation_window(kf_blocks, u, y)
    Ac = np.vstack([kf_blocks.U_p, kf_blocks.Y_p])
    bc = np.concatenate([u.ravel(), y.ravel()])
    assert init.feasibility_gap < 1e-8
    assert np.allclose(Ac @ init.g, bc, atol=1e-8)
    # independent route: equality-constrained QP over g, regularized to fix g uniquely
    Ep = kf_blocks.E_p
    H = 2.0 * (Ep.T @ Ep) + 1e-9 * np.eye(Ep.shape[1])
    res = solve_qp(QpProblem(H, np.zeros(Ep.shape[1]), A_eq=Ac, b_eq=bc))
    assert res.ok
    assert np.linalg.norm(init.e_p) <= np.linalg.norm(Ep @ res.z) + 1e-7
    assert np.allclose(init.e_p, Ep @ res.z, atol=1e-5)


def test_initial_window_requires_innovations(kf_blocks):
    with pytest.raises(InputError):
        predictor.init_innovation_window(kf_blocks.without_innovations(), np.zeros(L_P),
                                         np.zeros(L_P))
    with pytest.raises(InputError):
        predictor.init_innovation_window(kf_blocks, np.zeros(L_P - 1), np.zeros(L_P))


def test_open_loop_with_spc_and_step_extraction(kf_blocks, plant30):
    spc = predictor.build_spc_predictor(kf_blocks)
    u = system.gen_gaussian_input(4.0, L_P + 20 + L_F, 8)
    y = system.simulate(plant30, u, system.NoiseSpec(8)).y
    s = predictor.OnlineState.from_windows(u[:L_P], y[:L_P])
    res = predictor.run_open_loop(spc, s, u[L_P:], y[L_P:L_P + 20])
    assert res.predictions.shape == (20, L_F)
    assert np.array_equal(res.steps_ahead(5)[:, 0], res.predictions[:, 4])
    assert res.final_state.t == 20
    with pytest.raises(InputError):
        predictor.run_open_loop(spc, s, u[L_P:L_P + 20], y[L_P:L_P + 20])


def test_with_true_innovations_swaps_blocks(varx_blocks, offline30):
    _, _, _, e = offline30
    b = predictor.with_true_innovations(varx_blocks, e[RHO:])
    assert np.array_equal(b.U_p, varx_blocks.U_p)
    assert np.array_equal(b.E_p[0], e[RHO:RHO + 176, 0])


def test_summary_is_plain_data(varx_pred):
    s = varx_pred.summary()
    assert s["theta_radius"] == varx_pred.theta_radius
    assert varx_pred.is_stable == (varx_pred.theta_radius < 1)
