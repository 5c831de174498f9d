"""State-space model, ensembles, time grids and the shared observation path."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateEnsembleError,
    ModelValidationError,
    UnsupportedModelError,
)
from .linalg import opnorm, sqrt_psd


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LinearDrift:
    A: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(np.atleast_2d(self.A)))

    def __call__(self, X):
        return self.A @ X

    @property
    def lipschitz_bound(self) -> float:
        return opnorm(self.A)


@dataclass(frozen=True)
class LipschitzDrift:
    """Nonlinear drift ``f``; ``f`` must act column-wise on ``(d, ...)`` arrays."""

    f: Callable[[np.ndarray], np.ndarray]
    lipschitz_bound: float
    name: str = "custom"

    def __call__(self, X):
        return self.f(X)


def tanh_damped(X):
    """``f(x) = -x + tanh(x)``, Lipschitz with constant 1."""
    return -X + np.tanh(X)


NAMED_DRIFTS = {"tanh_damped": (tanh_damped, 1.0)}


def named_drift(name: str) -> LipschitzDrift:
    try:
        f, lip = NAMED_DRIFTS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown drift {name!r}; known: {sorted(NAMED_DRIFTS)}"
        ) from None
    return LipschitzDrift(f, lip, name)


def _check_spd(name, M, dim):
    if M.shape != (dim, dim):
        raise ModelValidationError(f"{name} must be {dim}x{dim}, got {M.shape}")
    scale = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > 1e-12 * scale:
        raise ModelValidationError(f"{name} is not symmetric")
    lam = np.linalg.eigvalsh(0.5 * (M + M.T))
    if lam[0] <= 0.0:
        raise ModelValidationError(f"{name} is not positive definite (min eigenvalue {lam[0]:.3e})")


@dataclass(frozen=True)
class StateSpaceModel:
    """``dX = drift(X) dt + Q^{1/2} dW``, ``dY = G X dt + C^{1/2} dV``.

    ``init_mean`` / ``init_cov`` define the Gaussian law used for the
    reference start value and for default initial ensembles.
    """

    drift: LinearDrift | LipschitzDrift
    G: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    horizon: float = 1.0
    init_mean: np.ndarray | None = None
    init_cov: np.ndarray | None = None

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        d, p = G.shape[1], G.shape[0]
        if isinstance(self.drift, LinearDrift) and self.drift.A.shape != (d, d):
            raise ModelValidationError(f"A must be {d}x{d}, got {self.drift.A.shape}")
        _check_spd("Q", Q, d)
        _check_spd("C", C, p)
        if not self.horizon > 0:
            raise ModelValidationError("horizon must be positive")
        m0 = np.zeros(d) if self.init_mean is None else np.asarray(self.init_mean, float).reshape(-1)
        P0 = np.eye(d) if self.init_cov is None else np.atleast_2d(np.asarray(self.init_cov, float))
        if m0.shape != (d,):
            raise ModelValidationError(f"init_mean must have length {d}")
        if P0.shape != (d, d) or np.linalg.eigvalsh(0.5 * (P0 + P0.T))[0] < -1e-12:
            raise ModelValidationError("init_cov must be a d x d PSD matrix")
        for name, val in (("G", G), ("Q", Q), ("C", C), ("init_mean", m0), ("init_cov", P0)):
            object.__setattr__(self, name, _frozen(val))
        if isinstance(self.drift, LipschitzDrift):
            self._spot_check_lipschitz()

    def _spot_check_lipschitz(self, n_pairs: int = 256):
        lip = self.drift.lipschitz_bound
        if not (np.isfinite(lip) and lip > 0):
            raise ModelValidationError("LipschitzDrift needs a finite positive lipschitz_bound")
        rng = np.random.default_rng(12345)
        X = 3.0 * rng.standard_normal((self.dim_state, n_pairs))
        Y = X + rng.standard_normal((self.dim_state, n_pairs)) * rng.uniform(1e-3, 3.0, n_pairs)
        num = np.linalg.norm(self.drift(X) - self.drift(Y), axis=0)
        den = np.linalg.norm(X - Y, axis=0)
        if np.any(num > lip * den * (1 + 1e-9)):
            raise ModelValidationError("drift violates its declared Lipschitz bound")

    @property
    def dim_state(self) -> int:
        return self.G.shape[1]

    @property
    def dim_obs(self) -> int:
        return self.G.shape[0]

    @property
    def is_linear(self) -> bool:
        return isinstance(self.drift, LinearDrift)

    @property
    def A(self) -> np.ndarray:
        if not self.is_linear:
            raise UnsupportedModelError("model has a nonlinear drift")
        return self.drift.A

    @cached_property
    def Q_sqrt(self) -> np.ndarray:
        return sqrt_psd(self.Q)

    @cached_property
    def C_sqrt(self) -> np.ndarray:
        return sqrt_psd(self.C)

    @cached_property
    def C_inv(self) -> np.ndarray:
        return np.linalg.inv(self.C)

    @cached_property
    def Theta(self) -> np.ndarray:
        """``G^T C^{-1} G``."""
        T = self.G.T @ self.C_inv @ self.G
        return 0.5 * (T + T.T)

    def with_(self, **changes) -> "StateSpaceModel":
        kw = dict(drift=self.drift, G=self.G, Q=self.Q, C=self.C, horizon=self.horizon,
                  init_mean=self.init_mean, init_cov=self.init_cov)
        kw.update(changes)
        return StateSpaceModel(**kw)


@dataclass(frozen=True)
class Ensemble:
    """``d x M`` matrix whose columns are the members."""

    members: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.members, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2:
            raise DegenerateEnsembleError(f"members must be d x M, got shape {X.shape}")
        if X.shape[1] < 2:
            raise DegenerateEnsembleError(f"ensemble needs M >= 2 members, got {X.shape[1]}")
        object.__setattr__(self, "members", _frozen(X))

    @property
    def dim(self) -> int:
        return self.members.shape[0]

    @property
    def size(self) -> int:
        return self.members.shape[1]

    @cached_property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=1)

    @cached_property
    def deviations(self) -> np.ndarray:
        return self.members - self.mean[:, None]

    @cached_property
    def covariance(self) -> np.ndarray:
        E = self.deviations
        P = E @ E.T / (self.size - 1)
        return 0.5 * (P + P.T)

    @property
    def spread(self) -> float:
        return float(np.trace(self.covariance))

    @classmethod
    def from_mean_deviations(cls, mean, deviations) -> "Ensemble":
        return cls(np.asarray(mean, float).reshape(-1, 1) + deviations)

    @classmethod
    def sample(cls, mean, cov, size: int, rng: np.random.Generator) -> "Ensemble":
        mean = np.asarray(mean, float).reshape(-1)
        Z = rng.standard_normal((mean.size, size))
        return cls(mean[:, None] + sqrt_psd(cov) @ Z)


def ensemble_stats(e: Ensemble):
    """``(mean, deviations, covariance, spread)`` of an ensemble."""
    return e.mean, e.deviations, e.covariance, e.spread


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``t_k = k h``, ``k = 0..L``; the fine step is ``h / fine_refinement``."""

    h: float
    L: int
    fine_refinement: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigurationError("step h must be positive")
        if int(self.L) != self.L or self.L < 0:
            raise ConfigurationError("step count L must be a nonnegative integer")
        if int(self.fine_refinement) != self.fine_refinement or self.fine_refinement < 1:
            raise ConfigurationError("fine_refinement must be an integer >= 1")

    @classmethod
    def from_horizon(cls, T: float, h: float, fine_refinement: int = 1) -> "TimeGrid":
        L = int(round(T / h))
        if L < 1 or abs(L * h - T) > 1e-10 * T:
            raise ConfigurationError(f"horizon {T} is not an integer multiple of h={h}")
        return cls(h, L, fine_refinement)

    @property
    def T(self) -> float:
        return self.L * self.h

    @property
    def fine_step(self) -> float:
        return self.h / self.fine_refinement

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.L + 1) * self.h

    def nu(self, t: float) -> int:
        return min(int(math.floor(t / self.h + 1e-9)), self.L)

    def eta(self, t: float) -> float:
        return self.nu(t) * self.h

    def nu_plus(self, t: float) -> int:
        return self.nu(t) + 1

    def eta_plus(self, t: float) -> float:
        return self.eta(t) + self.h

    def refinement_of(self, h: float) -> int:
        """Integer ``r`` with ``h = r * self.h``; raises if none exists."""
        r = int(round(h / self.h))
        if r < 1 or abs(r * self.h - h) > 1e-9 * h:
            raise ConfigurationError(f"h={h} is not an integer multiple of the grid step {self.h}")
        if self.L % r:
            raise ConfigurationError(f"h={h} does not divide the horizon into whole steps")
        return r


@dataclass(frozen=True)
class ObservationPath:
    """Reference trajectory and observation increments on a fine grid."""

    fine_grid: TimeGrid
    ref_trajectory: np.ndarray  # (N+1, d)
    obs_increments: np.ndarray  # (N, p)
    obs_noise_increments: np.ndarray  # (N, p), the C^{1/2} dV part
    rng_seed: int
    ref_second_moment: float = field(default=float("nan"))

    @property
    def h_fine(self) -> float:
        return self.fine_grid.h

    @property
    def n_steps(self) -> int:
        return self.obs_increments.shape[0]

    @property
    def Y(self) -> np.ndarray:
        """Cumulative observation process on the fine grid, ``Y_0 = 0``."""
        out = np.zeros((self.n_steps + 1, self.obs_increments.shape[1]))
        np.cumsum(self.obs_increments, axis=0, out=out[1:])
        return out


def simulate_reference(model: StateSpaceModel, grid: TimeGrid, seed: int,
                       coarse_h: Sequence[float] = ()) -> ObservationPath:
    """Euler-Maruyama reference trajectory plus observation increments.

    Each fine increment is ``h_fine G X_n + C^{1/2} dV_n`` (left-endpoint
    quadrature of the signal integral). ``coarse_h`` lists the step sizes
    the path will later be aggregated to; each must be a multiple of the
    fine step.
    """
    for h in coarse_h:
        grid.refinement_of(h)
    hf, N = grid.h, grid.L
    d, p = model.dim_state, model.dim_obs
    ss_x0, ss_w, ss_v = np.random.SeedSequence(seed).spawn(3)
    x = model.init_mean + sqrt_psd(model.init_cov) @ np.random.default_rng(ss_x0).standard_normal(d)
    dW = np.sqrt(hf) * np.random.default_rng(ss_w).standard_normal((N, d)) @ model.Q_sqrt.T
    dV = np.sqrt(hf) * np.random.default_rng(ss_v).standard_normal((N, p)) @ model.C_sqrt.T

    X = np.empty((N + 1, d))
    X[0] = x
    drift = model.drift
    if model.is_linear:
        B = np.eye(d) + hf * model.A
        for n in range(N):
            X[n + 1] = B @ X[n] + dW[n]
    else:
        for n in range(N):
            X[n + 1] = X[n] + hf * drift(X[n]) + dW[n]
    dY = hf * X[:-1] @ model.G.T + dV
    second = float(np.mean(np.sum(X ** 2, axis=1)))
    return ObservationPath(grid, _frozen(X), _frozen(dY), _frozen(dV), int(seed), second)


def aggregate_increments(path: ObservationPath, h: float) -> np.ndarray:
    """Coarse increments ``Delta Y_k`` as sums of ``r = h / h_fine`` fine increments."""
    r = path.fine_grid.refinement_of(h)
    dY = path.obs_increments
    return dY.reshape(dY.shape[0] // r, r, dY.shape[1]).sum(axis=1)
