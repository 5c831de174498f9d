"""Discrete-time ensemble filters: EAKF, ETKF, Whitaker-Hamill, the modified
filter with built-in deterministic perturbations, and the stochastic EnKF.

Every step is a forecast

    X_i^f = X_i^a + h f(X_i^a) + h Q^{1/2} W_i

followed by an analysis step. The ESRF variants transform the forecast
deviations so that ``P^a = (Id - h K G) P^f`` holds exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigurationError,
    DivergenceError,
    FilterConsistencyError,
    InputError,
    InvalidPostMultiplierError,
)
from .kalman import kalman_gain
from .linalg import half_gain_inverse, opnorm
from .model import Ensemble, ObservationPath, StateSpaceModel, TimeGrid, aggregate_increments
from .perturbations import PerturbationSpec, compute_perturbation

VARIANT_KINDS = ("eakf", "etkf", "wh2002", "modified", "stoch-enkf")
ESRF_KINDS = ("eakf", "etkf", "wh2002")
DIVERGENCE_THRESHOLD = 1e8
MEAN_CONSISTENCY_RTOL = 1e-8


@dataclass(frozen=True)
class EsrfVariant:
    """Filter selection.

    ``mode="expansion"`` replaces the exact EAKF/ETKF transform by its
    first-order part ``Id - (h/2) P^f G^T C^{-1} G``. ``post_multiplier``
    maps the forecast ensemble to an orthogonal ``M x M`` matrix applied to
    the analysis deviations. ``stoch-enkf`` draws its model noise at random
    and ignores ``perturbation``.
    """

    kind: str = "eakf"
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    post_multiplier: Optional[Callable[[Ensemble], np.ndarray]] = None
    mode: str = "exact"

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ConfigurationError(f"unknown variant {self.kind!r}; expected one of {VARIANT_KINDS}")
        if self.kind == "modified" and self.perturbation.kind != "reich":
            raise ConfigurationError("the modified filter is defined with 'reich' perturbations only")
        if self.mode not in ("exact", "expansion"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class GainSet:
    K: np.ndarray
    K_hat: np.ndarray
    remainder_norm: float


# -- forecast -----------------------------------------------------------------

def forecast_step(analysis: Ensemble, model: StateSpaceModel, h: float,
                  pert: PerturbationSpec, W: np.ndarray | None = None) -> Ensemble:
    """Euler step of every member plus ``h Q^{1/2} W``.

    ``W`` may be passed in when the caller already computed the perturbation.
    """
    if not h > 0:
        raise ConfigurationError("h must be positive")
    X = analysis.members
    if W is None:
        W = compute_perturbation(pert, analysis, model, h)
    return Ensemble(X + h * model.drift(X) + h * model.Q_sqrt @ W)


def stochastic_forecast(analysis: Ensemble, model: StateSpaceModel, h: float,
                        rng: np.random.Generator) -> Ensemble:
    X = analysis.members
    noise = model.Q_sqrt @ (np.sqrt(h) * rng.standard_normal(X.shape))
    return Ensemble(X + h * model.drift(X) + noise)


# -- transforms and gains -----------------------------------------------------

def _inv_sqrt_sym(S):
    lam, U = np.linalg.eigh(0.5 * (S + S.T))
    return (U / np.sqrt(lam)) @ U.T


def etkf_transform(forecast: Ensemble, model: StateSpaceModel, h: float) -> np.ndarray:
    """``T = (Id + h/(M-1) E^T G^T C^{-1} G E)^{-1/2}``, an ``M x M`` SPD matrix."""
    if h < 0:
        raise ConfigurationError("h must be nonnegative")
    E = forecast.deviations
    M = forecast.size
    inner = np.eye(M) + (h / (M - 1)) * E.T @ model.Theta @ E
    return _inv_sqrt_sym(inner)


def eakf_transform(forecast: Ensemble, model: StateSpaceModel, h: float) -> np.ndarray:
    """``A = S (Id + h S Theta S)^{-1/2} S^+`` with ``S`` the PSD root of ``P^f``.

    Uses the pseudo-inverse of ``S`` so rank-deficient forecasts are fine.
    """
    if h < 0:
        raise ConfigurationError("h must be nonnegative")
    lam, U = np.linalg.eigh(forecast.covariance)
    lam = np.clip(lam, 0.0, None)
    root = np.sqrt(lam)
    keep = lam > 1e-10 * lam[-1] if lam[-1] > 0 else np.zeros_like(lam, bool)
    inv_root = np.zeros_like(root)
    inv_root[keep] = 1.0 / root[keep]
    S = (U * root) @ U.T
    S_pinv = (U * inv_root) @ U.T
    inner = np.eye(forecast.dim) + h * S @ model.Theta @ S
    return S @ _inv_sqrt_sym(inner) @ S_pinv


def integral_transform_expansion(forecast: Ensemble, model: StateSpaceModel, h: float):
    """``(Id - (h/2) P^f Theta, A E^f - (Id - (h/2) P^f Theta) E^f)``."""
    E = forecast.deviations
    linear = np.eye(forecast.dim) - 0.5 * h * forecast.covariance @ model.Theta
    remainder = eakf_transform(forecast, model, h) @ E - linear @ E
    return linear, remainder


def remainder_bound(Pf, model: StateSpaceModel, h: float) -> float:
    """``(3h^2/8) ||P^f||^2 ||G^T C^{-1} G||^2``."""
    return 3.0 * h * h / 8.0 * opnorm(Pf) ** 2 * opnorm(model.Theta) ** 2


def whitaker_gain(forecast_cov, model: StateSpaceModel, h: float) -> np.ndarray:
    """Deviation gain ``P G^T (C+hGPG^T)^{-1/2} ((C+hGPG^T)^{1/2} + C^{1/2})^{-1}``."""
    if h < 0:
        raise ConfigurationError("h must be nonnegative")
    Pf = np.atleast_2d(forecast_cov)
    G = model.G
    return Pf @ G.T @ half_gain_inverse(model.C, h * G @ Pf @ G.T)


def gain_set(forecast: Ensemble, variant: EsrfVariant, model: StateSpaceModel, h: float) -> GainSet:
    Pf = forecast.covariance
    K = kalman_gain(Pf, model.G, model.C, h)
    if variant.kind in ("eakf", "etkf"):
        K_hat = 0.5 * Pf @ model.G.T @ model.C_inv
        E = forecast.deviations
        _, R = integral_transform_expansion(forecast, model, h)
        nE = opnorm(E)
        rem = opnorm(R) / nE if nE > 0 else 0.0
    elif variant.kind == "wh2002":
        K_hat = whitaker_gain(Pf, model, h)
        rem = 0.0
    else:
        K_hat = 0.5 * K
        rem = 0.0
    return GainSet(K, K_hat, rem)


def unified_update(forecast: Ensemble, K, K_hat, dy, h: float, G, remainder=None) -> np.ndarray:
    """Member-wise ``X^f - hK^G X^f - h(K-K^)G xbar^f + K dy + R e_i`` (``d x M``).

    ``remainder`` is the ``d x M`` matrix whose columns are ``R e_i``.
    """
    X = forecast.members
    xf = forecast.mean[:, None]
    out = X - h * K_hat @ G @ X - h * (K - K_hat) @ G @ xf + (K @ np.asarray(dy, float))[:, None]
    if remainder is not None:
        out = out + remainder
    return out


def orthogonal_postmultiply(analysis_devs, U) -> np.ndarray:
    """``E U`` for an orthogonal ``U`` having the ones vector as eigenvector."""
    E = np.asarray(analysis_devs, float)
    U = np.asarray(U, float)
    M = E.shape[1]
    if U.shape != (M, M):
        raise InvalidPostMultiplierError(f"post-multiplier must be {M}x{M}")
    if np.linalg.norm(U.T @ U - np.eye(M)) > 1e-10:
        raise InvalidPostMultiplierError("post-multiplier is not orthogonal")
    one = np.ones(M)
    u1 = U @ one
    lam = u1 @ one / M
    if abs(abs(lam) - 1.0) > 1e-10 or np.linalg.norm(u1 - lam * one) > 1e-10 * np.sqrt(M):
        raise InvalidPostMultiplierError("ones vector is not an eigenvector of the post-multiplier")
    return E @ U


def random_mean_preserving_orthogonal(M: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthogonal ``M x M`` matrix with ``U 1 = 1``."""
    Bq, _ = np.linalg.qr(np.hstack([np.ones((M, 1)), rng.standard_normal((M, M - 1))]))
    B = Bq[:, 1:]
    O, _ = np.linalg.qr(rng.standard_normal((M - 1, M - 1)))
    return np.full((M, M), 1.0 / M) + B @ O @ B.T


def householder_fixing_ones(M: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(M)
    v -= v.mean()
    v /= np.linalg.norm(v)
    return np.eye(M) - 2.0 * np.outer(v, v)


# -- analysis -----------------------------------------------------------------

def _analysis(forecast: Ensemble, variant: EsrfVariant, model: StateSpaceModel, h: float,
              dy, rng: np.random.Generator | None):
    dy = np.asarray(dy, float).reshape(-1)
    if dy.shape != (model.dim_obs,):
        raise InputError(f"observation increment must have length {model.dim_obs}, got {dy.shape}")
    G = model.G
    Pf = forecast.covariance
    K = kalman_gain(Pf, G, model.C, h)
    xf = forecast.mean
    innov = dy - h * G @ xf
    mean_a = xf + K @ innov
    X = forecast.members
    E = forecast.deviations
    kind = variant.kind
    K_hat = 0.5 * Pf @ G.T @ model.C_inv

    if kind in ("eakf", "etkf"):
        if variant.mode == "expansion":
            Ea = E - 0.5 * h * Pf @ model.Theta @ E
        elif kind == "eakf":
            Ea = eakf_transform(forecast, model, h) @ E
        else:
            Ea = E @ etkf_transform(forecast, model, h)
    elif kind == "wh2002":
        K_hat = whitaker_gain(Pf, model, h)
        Ea = E - h * K_hat @ G @ E
    elif kind == "modified":
        Xa = X + K @ (dy[:, None] - 0.5 * h * G @ (X + xf[:, None]))
        Ea = Xa - Xa.mean(axis=1, keepdims=True)
    else:
        if rng is None:
            raise ConfigurationError("the stochastic EnKF needs a random generator")
        V = np.sqrt(h) * rng.standard_normal((model.dim_obs, forecast.size))
        Xa = X + K @ (dy[:, None] + model.C_sqrt @ V - h * G @ X)
        Ea = Xa - Xa.mean(axis=1, keepdims=True)
        mean_a = Xa.mean(axis=1)

    if variant.post_multiplier is not None:
        Ea = orthogonal_postmultiply(Ea, variant.post_multiplier(forecast))

    if kind == "stoch-enkf":
        members = mean_a[:, None] + Ea
    else:
        # member-wise update; its implied mean must reproduce the Kalman mean update
        members = X + (Ea - E) + (K @ innov)[:, None]
        implied = members.mean(axis=1)
        scale = 1.0 + np.linalg.norm(mean_a) + np.linalg.norm(E)
        if np.linalg.norm(implied - mean_a) > MEAN_CONSISTENCY_RTOL * scale:
            raise FilterConsistencyError(
                f"{kind}: implied analysis mean deviates from the Kalman mean update by "
                f"{np.linalg.norm(implied - mean_a):.3e}")
    return Ensemble(members), K, K_hat


def analysis_step(forecast: Ensemble, variant: EsrfVariant, model: StateSpaceModel, h: float,
                  dy, rng: np.random.Generator | None = None) -> Ensemble:
    """Update the forecast ensemble with the coarse observation increment ``dy``."""
    return _analysis(forecast, variant, model, h, dy, rng)[0]


# -- full runs ----------------------------------------------------------------

DIAGNOSTIC_COLUMNS = (
    "step", "t", "norm_Pf", "norm_Pa", "norm_Pa_inv", "min_eig_Pf_minus_Pa",
    "spread_f", "spread_a", "norm_K", "norm_K_hat", "a1_cross_residual", "a1_center_residual",
)


@dataclass(frozen=True)
class FilterTrajectory:
    """Analysis ensembles at ``t_0..t_L`` and forecasts at ``t_1..t_L``."""

    variant: EsrfVariant
    grid: TimeGrid
    analyses: np.ndarray  # (L+1, d, M)
    forecasts: np.ndarray  # (L, d, M)
    diagnostics: dict

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def analysis(self, k: int) -> Ensemble:
        return Ensemble(self.analyses[k])

    def forecast(self, k: int) -> Ensemble:
        """Forecast at ``t_k``, ``k >= 1``."""
        return Ensemble(self.forecasts[k - 1])

    def means(self, which: str = "analysis") -> np.ndarray:
        X = self.analyses if which == "analysis" else self.forecasts
        return X.mean(axis=2)

    def covariances(self, which: str = "analysis") -> np.ndarray:
        X = self.analyses if which == "analysis" else self.forecasts
        E = X - X.mean(axis=2, keepdims=True)
        P = np.einsum("kim,kjm->kij", E, E) / (X.shape[2] - 1)
        return 0.5 * (P + np.swapaxes(P, 1, 2))

    def write_diagnostics_csv(self, file) -> None:
        """One row per step, columns :data:`DIAGNOSTIC_COLUMNS`."""
        with open(file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DIAGNOSTIC_COLUMNS)
            L = self.grid.L
            for k in range(L):
                row = [k + 1, repr(float((k + 1) * self.h))]
                row += [repr(float(self.diagnostics[c][k])) for c in DIAGNOSTIC_COLUMNS[2:]]
                w.writerow(row)


def run_filter(variant: EsrfVariant, model: StateSpaceModel, path: ObservationPath, h: float,
               init: Ensemble, rng: np.random.Generator | int | None = None) -> FilterTrajectory:
    """Run ``L = T/h`` forecast/analysis cycles on the aggregated observation path."""
    dY = aggregate_increments(path, h)
    L = dY.shape[0]
    grid = TimeGrid(h, L)
    if variant.kind == "stoch-enkf":
        rng = np.random.default_rng(rng)
    d, M = init.dim, init.size
    analyses = np.empty((L + 1, d, M))
    forecasts = np.empty((L, d, M))
    analyses[0] = init.members
    p = model.dim_obs
    gains = np.empty((L, d, p))
    half_gains = np.empty((L, d, p))
    perts = np.full((L, d, M), np.nan)
    Xa = init
    for k in range(L):
        if variant.kind == "stoch-enkf":
            Xf = stochastic_forecast(Xa, model, h, rng)
        else:
            W = compute_perturbation(variant.perturbation, Xa, model, h)
            Xf = forecast_step(Xa, model, h, variant.perturbation, W)
            if variant.perturbation.kind != "none":
                perts[k] = W
        Xa, K, K_hat = _analysis(Xf, variant, model, h, dY[k], rng)
        if not np.all(np.isfinite(Xa.members)) or np.linalg.norm(Xa.mean) > DIVERGENCE_THRESHOLD:
            raise DivergenceError(f"{variant.kind} diverged", step=k + 1)
        forecasts[k] = Xf.members
        analyses[k + 1] = Xa.members
        gains[k] = K
        half_gains[k] = K_hat
    traj = FilterTrajectory(variant, grid, analyses, forecasts, {})
    traj.diagnostics.update(_diagnostics(traj, model, gains, half_gains, perts))
    return traj


def _diagnostics(traj: FilterTrajectory, model: StateSpaceModel, gains, half_gains, perts) -> dict:
    """Per-step diagnostics, computed batched after the run."""
    Pf = traj.covariances("forecast")
    Pa = traj.covariances("analysis")[1:]
    lf = np.linalg.eigvalsh(Pf)
    la = np.linalg.eigvalsh(Pa)
    with np.errstate(divide="ignore"):
        inv_a = np.where(la[:, 0] > 0, 1.0 / np.where(la[:, 0] > 0, la[:, 0], 1.0), np.inf)
    M = traj.analyses.shape[2]
    Ea = traj.analyses[:-1] - traj.analyses[:-1].mean(axis=2, keepdims=True)
    Q = model.Q
    cross = np.einsum("kim,kjm->kij", Ea, perts) @ model.Q_sqrt / (M - 1)
    cross_res = np.linalg.norm(cross - 0.5 * Q, axis=(1, 2)) / (0.5 * np.linalg.norm(Q))
    center_res = np.linalg.norm(perts.sum(axis=2), axis=1)
    return {
        "norm_Pf": lf[:, -1],
        "norm_Pa": la[:, -1],
        "norm_Pa_inv": inv_a,
        "min_eig_Pf_minus_Pa": np.linalg.eigvalsh(Pf - Pa)[:, 0],
        "spread_f": lf.sum(axis=1),
        "spread_a": la.sum(axis=1),
        "norm_K": np.linalg.norm(gains, ord=2, axis=(1, 2)),
        "norm_K_hat": np.linalg.norm(half_gains, ord=2, axis=(1, 2)),
        "a1_cross_residual": cross_res,
        "a1_center_residual": center_res,
    }
