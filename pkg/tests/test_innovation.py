import numpy as np
import pytest

from innodeepc import innovation
from innodeepc.errors import DataLengthError, InputError

from conftest import L_F, L_P, N_OFF, RHO


def arx_record(n, a=0.8, b=0.5, sigma=0.0, seed=0):
    g = np.random.default_rng(seed)
    u = g.standard_normal(n)
    e = sigma * g.standard_normal(n)
    y = np.zeros(n)
    for t in range(1, n):
        y[t] = a * y[t - 1] + b * u[t - 1] + e[t]
    return u, y, e


def test_exact_arx_recovered():
    u, y, _ = arx_record(120)
    fit = innovation.fit_varx(u, y, 1)
    assert fit.Phi_y[0, 0] == pytest.approx(0.8, abs=1e-10)
    assert fit.Phi_u[0, 0] == pytest.approx(0.5, abs=1e-10)
    assert fit.D_hat[0, 0] == pytest.approx(0.0, abs=1e-10)
    assert fit.residual_norm < 1e-10
    assert fit.e_hat.shape == (119, 1)


def test_residuals_track_the_driving_noise():
    u, y, e = arx_record(3000, sigma=0.1, seed=3)
    fit = innovation.fit_varx(u, y, 2, pin_d_zero=True)
    corr, ratio = innovation.innovation_quality(fit.e_hat, e[2:])
    assert corr[0] > 0.99 and ratio[0] == pytest.approx(1.0, abs=0.05)


def test_estimates_correlate_with_kalman_innovations(offline30):
    _, u, y, e = offline30
    fit = innovation.fit_varx(u, y, RHO)
    corr, ratio = innovation.innovation_quality(fit.e_hat, e[RHO:])
    assert corr[0] > 0.8
    assert 0.5 < ratio[0] < 1.2


def test_one_step_prediction_matches_residuals(offline30):
    _, u, y, _ = offline30
    fit = innovation.fit_varx(u, y, 5)
    assert np.allclose(y[5:] - fit.predict_one_step(u, y), fit.e_hat, atol=1e-10)


def test_fit_validation():
    u, y, _ = arx_record(30)
    with pytest.raises(DataLengthError):
        innovation.fit_varx(u, y, 10)
    with pytest.raises(InputError):
        innovation.fit_varx(u, y, 0)
    with pytest.raises(InputError):
        innovation.fit_varx(u, y[:-1], 1)


def test_rank_deficient_regressor_warns():
    u = np.ones(60)
    y = np.linspace(0.0, 1.0, 60)
    fit = innovation.fit_varx(u, y, 2)
    assert fit.warnings and fit.regressor_rank < 7


def test_quality_with_constant_channel():
    corr, ratio = innovation.innovation_quality(np.ones(10), np.arange(10.0))
    assert np.isnan(corr[0]) and ratio[0] == 0.0


def test_offline_window_keeps_trailing_samples():
    u = np.arange(100.0)
    uu, yy = innovation.offline_window(u, u, 15, 60)
    assert len(uu) == 75 and uu[0] == 25.0 and uu[-1] == 99.0
    with pytest.raises(DataLengthError):
        innovation.offline_window(u, u, 50, 60)


def test_sweep_reports_each_candidate(offline30):
    _, u, y, _ = offline30
    rows = innovation.sweep_rho(u, y, [5, 10, 15], L_P, L_F, n_est=N_OFF, n_x=2,
                                validation_fraction=0.25)
    assert [r.rho for r in rows] == [5, 10, 15]
    for r in rows:
        assert r.stable == (r.theta_radius < 1.0)
        assert np.isfinite(r.residual_norm) and np.isfinite(r.validation_rms)
    # residuals shrink as the model grows
    assert rows[0].residual_norm >= rows[-1].residual_norm
    assert len(rows[0].as_row()) == len(innovation.SWEEP_HEADER)


def test_sweep_notes_unfittable_candidates(offline30):
    _, u, y, _ = offline30
    rows = innovation.sweep_rho(u, y, [10, 100], L_P, L_F, n_est=N_OFF - 100, n_x=2)
    assert not rows[1].stable and "Error" in rows[1].note
    with pytest.raises(InputError):
        innovation.sweep_rho(u, y, [], L_P, L_F)
