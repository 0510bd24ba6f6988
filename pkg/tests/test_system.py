import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from innodeepc import system
from innodeepc.errors import ConfigError, InputError


def test_benchmark_plant_matrices():
    m = system.benchmark_plant()
    assert np.array_equal(m.A, [[0.7326, -0.0861], [0.1722, 0.9909]])
    assert np.array_equal(m.B, [[0.0609], [0.0064]])
    assert np.array_equal(m.C, [[0.0, 1.4142]])
    assert np.array_equal(m.D, [[0.0]])
    assert (m.n_x, m.n_u, m.n_y) == (2, 1, 1)


def test_gain_does_not_depend_on_noise_scale():
    a, b = system.benchmark_plant(0.11), system.benchmark_plant(11.49)
    assert np.allclose(a.K, b.K)
    assert np.allclose(b.Sigma_w, 11.49e-4 * np.eye(2))
    assert np.allclose(b.Sigma_v, 11.49 * 4.5e-4 * np.eye(1))


def test_model_validation():
    with pytest.raises(InputError):
        system.StateSpaceModel(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), np.zeros((1, 1)),
                               np.eye(2), np.eye(1))
    with pytest.raises(InputError):  # unobservable
        system.StateSpaceModel(np.diag([0.5, 0.6]), np.ones((2, 1)), [[1.0, 0.0]],
                               np.zeros((1, 1)), np.eye(2), np.eye(1))
    no_gain = system.StateSpaceModel(system.BENCH_A, system.BENCH_B, system.BENCH_C,
                                     system.BENCH_D, np.eye(2), np.eye(1))
    with pytest.raises(ConfigError):
        system.sskf_filter(no_gain, np.zeros(3), np.zeros(3))


def test_noise_free_simulation_matches_recursion(rng):
    m = system.benchmark_plant(0.0)
    u = rng.standard_normal((30, 1))
    tr = system.simulate(m, u)
    x = np.zeros(2)
    for t in range(30):
        assert tr.y[t, 0] == pytest.approx((m.C @ x)[0], abs=1e-15)
        x = m.A @ x + m.B @ u[t]


def test_simulation_is_seeded():
    m = system.benchmark_plant(1.13)
    u = system.gen_gaussian_input(1.0, 50, 3)
    a = system.simulate(m, u, system.NoiseSpec(7))
    b = system.simulate(m, u, system.NoiseSpec(7))
    c = system.simulate(m, u, system.NoiseSpec(8))
    assert np.array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)


def test_zero_noise_innovations_vanish(rng):
    m = system.benchmark_plant(0.0)
    u = rng.standard_normal((40, 1))
    tr = system.simulate(m, u)
    e, _ = system.sskf_filter(m, u, tr.y)
    assert np.abs(e).max() < 1e-14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(5, 60))
def test_innovation_form_reproduces_outputs(seed, n):
    m = system.benchmark_plant(1.13)
    u = system.gen_gaussian_input(1.0, n, seed)
    tr = system.simulate(m, u, system.NoiseSpec(seed + 1))
    e, xhat = system.sskf_filter(m, u, tr.y)
    again = system.simulate_innovation_form(m, u, e)
    assert np.allclose(again.y, tr.y, atol=1e-12)
    assert np.allclose(again.x, xhat[:-1], atol=1e-12)


def test_prediction_matrices_against_rollout(rng):
    m = system.benchmark_plant(1.0)
    O, T = system.prediction_matrices(m, 15)
    assert O.shape == (15, 2) and T.shape == (15, 15)
    assert np.allclose(np.triu(T, 1), 0.0)
    # Toeplitz: every diagonal is constant and holds a Markov parameter
    for k in range(1, 15):
        markov = (m.C @ np.linalg.matrix_power(m.A, k - 1) @ m.B)[0, 0]
        assert np.allclose(np.diag(T, -k), markov)
    x, u_f = rng.standard_normal(2), rng.standard_normal(15)
    assert np.allclose(O @ x + T @ u_f, system.sskf_predict(m, x, u_f), atol=1e-13)


def test_snr_matches_noise_levels():
    # a long record pins the measured SNR close to the nominal level
    for snr, q in system.BENCH_Q.items():
        m = system.benchmark_plant(q)
        u = system.gen_square_wave_input(50, 2.0, 0.01, 20000, 1)
        tr = system.simulate(m, u, system.NoiseSpec(2))
        e, _ = system.sskf_filter(m, u, tr.y)
        assert abs(system.snr_db(tr.y, e) - snr) < 1.0


def test_snr_edge_cases():
    y = np.arange(5.0)
    assert system.snr_db(y, np.zeros(5)) == np.inf
    assert system.snr_db(y, y) == -np.inf
    with pytest.raises(InputError):
        system.snr_db(np.ones(1), np.ones(1))


def test_square_wave_shape():
    u = system.gen_square_wave_input(50, 2.0, 0.0, 120)
    assert np.all(u[:25] == 2.0) and np.all(u[25:50] == -2.0) and np.all(u[100:] == 2.0)
    d = system.gen_square_wave_input(50, 2.0, 0.01, 20000, 5) - system.gen_square_wave_input(
        50, 2.0, 0.0, 20000)
    assert d.var() == pytest.approx(0.01, rel=0.05)
    with pytest.raises(InputError):
        system.gen_square_wave_input(1, 1.0, 0.0, 10)


def test_gaussian_input_variance():
    u = system.gen_gaussian_input(4.0, 20000, 1)
    assert u.var() == pytest.approx(4.0, rel=0.05)
    with pytest.raises(InputError):
        system.gen_gaussian_input(0.0, 10)


def test_trajectory_csv_round_trip(tmp_path, rng):
    tr = system.Trajectory(rng.standard_normal((20, 1)), rng.standard_normal((20, 1)),
                           e=rng.standard_normal((20, 1)), start_index=7)
    path = tmp_path / "t.csv"
    system.write_trajectory_csv(path, tr)
    back = system.read_trajectory_csv(path)
    assert np.array_equal(back.u, tr.u) and np.array_equal(back.y, tr.y)
    assert np.array_equal(back.e, tr.e) and back.start_index == 7


def test_trajectory_validation():
    with pytest.raises(InputError):
        system.Trajectory(np.zeros(3), np.zeros(4))
    with pytest.raises(InputError):
        system.Trajectory(np.zeros(3), np.array([0.0, np.nan, 1.0]))
    tr = system.Trajectory(np.arange(10.0), np.arange(10.0))
    assert tr.slice(4, 8).start_index == 4 and len(tr.slice(4, 8)) == 4
