import csv

import numpy as np
import pytest

from esrf_limit.errors import ConfigurationError, DivergenceError, UnsupportedModelError
from esrf_limit.kalman import (
    KalmanState,
    integrate_kalman_bucy,
    integrate_riccati,
    kalman_forecast,
    kalman_gain,
    kalman_step,
    run_kalman,
)
from esrf_limit.model import LinearDrift, StateSpaceModel, TimeGrid, named_drift, simulate_reference


def scalar(A=-0.5, Q=1.0, G=1.0, C=1.0, T=1.0):
    return StateSpaceModel(LinearDrift([[A]]), G=[[G]], Q=[[Q]], C=[[C]], horizon=T)


def test_gain_examples():
    assert kalman_gain([[1.0]], [[1.0]], [[1.0]], 0.0)[0, 0] == 1.0
    assert kalman_gain([[1.0]], [[1.0]], [[1.0]], 0.1)[0, 0] == pytest.approx(1 / 1.1, rel=1e-14)


def test_unobserved_step_keeps_forecast():
    m = scalar(G=0.0)
    s = kalman_step(KalmanState(np.array([1.0]), np.array([[2.0]])), m, 0.1, [5.0])
    assert np.array_equal(s.mean, s.prior.mean)
    assert np.array_equal(s.cov, s.prior.cov)


def test_forecast_adds_hQ():
    m = scalar(A=1.0, Q=2.0)
    f = kalman_forecast(KalmanState(np.array([1.0]), np.array([[1.0]])), m, 0.1)
    assert f.mean[0] == pytest.approx(1.1)
    assert f.cov[0, 0] == pytest.approx(1.21 + 0.2)
    assert f.phase == "forecast" and f.step_index == 1


def test_step_needs_analysis_and_linear_model():
    m = scalar()
    f = kalman_forecast(KalmanState(np.zeros(1), np.eye(1)), m, 0.1)
    with pytest.raises(ConfigurationError):
        kalman_step(f, m, 0.1, [0.0])
    nl = StateSpaceModel(named_drift("tanh_damped"), G=[[1.0]], Q=[[1.0]], C=[[1.0]])
    with pytest.raises(UnsupportedModelError):
        kalman_step(KalmanState(np.zeros(1), np.eye(1)), nl, 0.1, [0.0])
    with pytest.raises(UnsupportedModelError):
        integrate_riccati(nl, np.eye(1), 0.1, 3)


def test_riccati_fixed_point():
    P = integrate_riccati(scalar(A=0.0), [[1.0]], 0.01, 500)
    np.testing.assert_allclose(P[:, 0, 0], 1.0, rtol=0, atol=1e-15)


def test_riccati_matches_coth():
    # dP = (1 - P^2) dt, P_0 = 3  =>  P_t = coth(t + arccoth 3)
    h = 1e-4
    P = integrate_riccati(scalar(A=0.0), [[3.0]], h, 50000)[:, 0, 0]
    assert np.all(np.diff(P) <= 0)
    exact = 1.0 / np.tanh(5.0 + np.arctanh(1.0 / 3.0))
    assert abs(P[-1] - exact) <= 1e-4


def test_riccati_without_observations_grows_linearly():
    m = StateSpaceModel(LinearDrift(np.zeros((2, 2))), G=np.zeros((1, 2)), Q=np.diag([1.0, 2.0]), C=[[1.0]])
    P = integrate_riccati(m, np.eye(2), 0.01, 100)
    np.testing.assert_allclose(P[-1], np.eye(2) + 1.0 * np.diag([1.0, 2.0]), rtol=1e-13)


def test_riccati_blow_up():
    with pytest.raises(DivergenceError):
        integrate_riccati(scalar(A=20.0, G=0.0), [[1.0]], 0.001, 2000)


def test_riccati_monotone_in_initial_value(rng):
    m = StateSpaceModel(LinearDrift([[-0.3, 0.0], [0.0, 0.4]]), G=np.eye(2), Q=np.eye(2), C=np.eye(2))
    P0 = np.diag([0.5, 1.0])
    P0b = P0 + np.diag([1.0, 0.3])
    a = integrate_riccati(m, P0, 0.01, 300)
    b = integrate_riccati(m, P0b, 0.01, 300)
    assert min(np.linalg.eigvalsh(b[n] - a[n])[0] for n in range(301)) >= -1e-8


def _kalman_vs_riccati(h, m):
    path = simulate_reference(m, TimeGrid.from_horizon(m.horizon, h), 0)
    _, covs, _ = run_kalman(m, path, h, np.zeros(1), np.eye(1))
    ric = integrate_riccati(m, np.eye(1), h / 64, path.n_steps * 64)[::64]
    return np.max(np.abs(covs - ric))


def test_discrete_kalman_is_first_order():
    m = scalar(T=2.0)
    errs = [_kalman_vs_riccati(h, m) for h in (2.0 ** -4, 2.0 ** -5, 2.0 ** -6)]
    for a, b in zip(errs, errs[1:]):
        assert 1.6 <= a / b <= 2.4


def test_analysis_below_forecast(rng):
    m = StateSpaceModel(LinearDrift(rng.standard_normal((3, 3))), G=rng.standard_normal((2, 3)),
                        Q=np.eye(3), C=np.eye(2), horizon=1.0)
    path = simulate_reference(m, TimeGrid.from_horizon(1.0, 0.05), 1)
    _, covs, fcovs = run_kalman(m, path, 0.05)
    for Pa, Pf in zip(covs[1:], fcovs):
        assert np.linalg.eigvalsh(Pf - Pa)[0] >= -1e-12
        assert np.linalg.eigvalsh(Pa)[0] >= -1e-12


def test_kalman_bucy_trajectory_and_csv(tmp_path):
    m = StateSpaceModel(LinearDrift([[0.0, 1.0], [-1.0, -0.5]]), G=[[1.0, 0.0]], Q=np.eye(2), C=[[1.0]])
    path = simulate_reference(m, TimeGrid.from_horizon(1.0, 0.01), 3)
    kb = integrate_kalman_bucy(m, path)
    assert kb.means.shape == (101, 2) and kb.covs.shape == (101, 2, 2)
    assert np.isfinite(kb.sup_cov_norm) and kb.sup_cov_norm >= 1.0 - 1e-12
    assert all(np.linalg.eigvalsh(P)[0] >= 0 for P in kb.covs)
    f = tmp_path / "kb.csv"
    kb.to_csv(f, every=10)
    rows = list(csv.reader(open(f)))
    assert rows[0] == ["t", "m_0", "m_1", "P_0_0", "P_0_1", "P_1_1"]
    assert len(rows) == 12
    assert float(rows[-1][3]) == kb.covs[-1, 0, 0]


def test_kalman_bucy_mean_is_euler_of_mean_equation():
    m = scalar()
    path = simulate_reference(m, TimeGrid.from_horizon(1.0, 0.01), 4)
    kb = integrate_kalman_bucy(m, path, [0.3], [[2.0]])
    x, P = kb.means[:, 0], kb.covs[:, 0, 0]
    dy = path.obs_increments[:, 0]
    np.testing.assert_allclose(x[1:], x[:-1] - 0.5 * 0.01 * x[:-1] + P[:-1] * (dy - 0.01 * x[:-1]), rtol=1e-12)
