"""Discrete Kalman filter and the Kalman-Bucy filter (mean SDE + Riccati ODE)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DivergenceError, UnsupportedModelError
from .model import ObservationPath, StateSpaceModel, TimeGrid, aggregate_increments

RICCATI_BLOWUP = 1e8


def kalman_gain(Pf, G, C, h: float) -> np.ndarray:
    """``K = P G^T (C + h G P G^T)^{-1}``, via a linear solve."""
    Pf = np.atleast_2d(Pf)
    G = np.atleast_2d(G)
    S = C + h * G @ Pf @ G.T
    return np.linalg.solve(0.5 * (S + S.T), G @ Pf).T


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray
    phase: str = "analysis"
    step_index: int = 0
    prior: Optional["KalmanState"] = None  # forecast that produced this analysis


def kalman_forecast(state: KalmanState, model: StateSpaceModel, h: float) -> KalmanState:
    if not model.is_linear:
        raise UnsupportedModelError("the Kalman filter needs a linear drift")
    B = np.eye(model.dim_state) + h * model.A
    P = B @ state.cov @ B.T + h * model.Q
    return KalmanState(B @ state.mean, 0.5 * (P + P.T), "forecast", state.step_index + 1)


def kalman_update(forecast: KalmanState, model: StateSpaceModel, h: float, dy) -> KalmanState:
    G = model.G
    K = kalman_gain(forecast.cov, G, model.C, h)
    mean = forecast.mean + K @ (np.asarray(dy, float) - h * G @ forecast.mean)
    P = forecast.cov - h * K @ G @ forecast.cov
    return KalmanState(mean, 0.5 * (P + P.T), "analysis", forecast.step_index, forecast)


def kalman_step(state: KalmanState, model: StateSpaceModel, h: float, dy) -> KalmanState:
    """One forecast/update cycle; the forecast is kept in ``result.prior``."""
    if state.phase != "analysis":
        raise ConfigurationError("kalman_step expects an analysis state")
    return kalman_update(kalman_forecast(state, model, h), model, h, dy)


def run_kalman(model: StateSpaceModel, path: ObservationPath, h: float, mean0=None, cov0=None):
    """Discrete Kalman filter at step ``h`` on the aggregated path.

    Returns ``(analysis_means, analysis_covs, forecast_covs)`` with shapes
    ``(L+1, d)``, ``(L+1, d, d)`` and ``(L, d, d)``.
    """
    dY = aggregate_increments(path, h)
    state = KalmanState(model.init_mean if mean0 is None else np.asarray(mean0, float),
                        model.init_cov if cov0 is None else np.asarray(cov0, float))
    means, covs, fcovs = [state.mean], [state.cov], []
    for dy in dY:
        state = kalman_step(state, model, h, dy)
        means.append(state.mean)
        covs.append(state.cov)
        fcovs.append(state.prior.cov)
    return np.array(means), np.array(covs), np.array(fcovs)


def riccati_rhs(model: StateSpaceModel, P) -> np.ndarray:
    A = model.A
    return A @ P + P @ A.T + model.Q - P @ model.Theta @ P


def integrate_riccati(model: StateSpaceModel, P0, h: float, n_steps: int) -> np.ndarray:
    """Explicit Euler for the Riccati ODE, symmetrized and eigen-clamped each step."""
    if not model.is_linear:
        raise UnsupportedModelError("the Riccati equation needs a linear drift")
    A, Q, Th = model.A, model.Q, model.Theta
    d = model.dim_state
    out = np.empty((n_steps + 1, d, d))
    P = 0.5 * (np.asarray(P0, float) + np.asarray(P0, float).T)
    out[0] = P
    for n in range(n_steps):
        AP = A @ P
        P = P + h * (AP + AP.T + Q - P @ Th @ P)
        P = 0.5 * (P + P.T)
        if d == 1:
            if P[0, 0] < 0.0:
                P = np.zeros((1, 1))
        else:
            lam, U = np.linalg.eigh(P)
            if lam[0] < 0.0:
                P = (U * np.clip(lam, 0.0, None)) @ U.T
        if not np.all(np.isfinite(P)) or np.abs(P).max() > RICCATI_BLOWUP:
            raise DivergenceError("Riccati solution blew up", step=n + 1)
        out[n + 1] = P
    return out


@dataclass(frozen=True)
class KalmanBucyTrajectory:
    grid: TimeGrid
    means: np.ndarray  # (N+1, d)
    covs: np.ndarray  # (N+1, d, d)

    @property
    def sup_cov_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.covs, ord=2, axis=(1, 2))))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def to_csv(self, file, every: int = 1) -> None:
        """Columns ``t, m_0.., P_i_j`` (upper triangle, row-major)."""
        write_mean_cov_csv(file, self.times[::every], self.means[::every], self.covs[::every])


def write_mean_cov_csv(file, times, means, covs) -> None:
    d = means.shape[1]
    iu = np.triu_indices(d)
    header = ["t"] + [f"m_{i}" for i in range(d)] + [f"P_{i}_{j}" for i, j in zip(*iu)]
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, m, P in zip(times, means, covs):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in m] + [repr(float(v)) for v in P[iu]])


def integrate_kalman_bucy(model: StateSpaceModel, path: ObservationPath,
                          mean0=None, cov0=None) -> KalmanBucyTrajectory:
    """Euler scheme for the Kalman-Bucy mean and Riccati covariance on the path's fine grid."""
    hf = path.h_fine
    N = path.n_steps
    P0 = model.init_cov if cov0 is None else np.asarray(cov0, float)
    covs = integrate_riccati(model, P0, hf, N)
    gains = covs @ (model.G.T @ model.C_inv)  # (N+1, d, p)
    B = np.eye(model.dim_state) + hf * model.A
    G = model.G
    x = np.array(model.init_mean if mean0 is None else mean0, dtype=float)
    means = np.empty((N + 1, x.size))
    means[0] = x
    dY = path.obs_increments
    for n in range(N):
        x = B @ x + gains[n] @ (dY[n] - hf * (G @ x))
        means[n + 1] = x
    return KalmanBucyTrajectory(path.fine_grid, means, covs)
