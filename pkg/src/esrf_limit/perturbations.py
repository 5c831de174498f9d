"""Deterministic model perturbations replacing the forecast noise.

Conventions: a perturbation is a ``d x M`` matrix ``W`` whose column ``i``
enters the forecast as ``h Q^{1/2} W[:, i]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, SingularCovarianceError
from .linalg import inv_sqrt_psd, opnorm, pinv_psd, sqrt_psd
from .model import Ensemble, StateSpaceModel

KINDS = ("reich", "reich-pinv", "quadratic", "none")
# reciprocal condition number below which P^a counts as singular
SINGULAR_RCOND = 1e-13


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str = "reich"
    kappa_bound: float | None = None
    rank_tol: float | None = None
    sign: int = 1  # branch of the quadratic solution, +J or -J

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown perturbation kind {self.kind!r}; expected one of {KINDS}")
        if self.sign not in (1, -1):
            raise ConfigurationError("sign must be +1 or -1")
        if self.kappa_bound is not None and not (0 < self.kappa_bound < math.inf):
            raise ConfigurationError("kappa_bound must be finite and positive")


def _solve_cov(P, E, what="P^a"):
    P = np.atleast_2d(P)
    lam = np.linalg.eigvalsh(P)
    if lam[0] <= SINGULAR_RCOND * max(lam[-1], np.finfo(float).tiny):
        raise SingularCovarianceError(
            f"{what} is singular (eigenvalues {lam[0]:.3e}..{lam[-1]:.3e}); "
            "use the 'reich-pinv' perturbation for rank-deficient ensembles")
    return np.linalg.solve(P, E)


def perturb_reich(analysis: Ensemble, Q, Q_sqrt=None) -> np.ndarray:
    """``W_i = 1/2 Q^{1/2} (P^a)^{-1} (X_i - mean)``."""
    Qs = sqrt_psd(Q) if Q_sqrt is None else Q_sqrt
    return 0.5 * Qs @ _solve_cov(analysis.covariance, analysis.deviations)


def perturb_reich_pinv(analysis: Ensemble, Q, rank_tol: float | None = None, Q_sqrt=None) -> np.ndarray:
    """Same as :func:`perturb_reich` with the pseudo-inverse of ``P^a``."""
    Qs = sqrt_psd(Q) if Q_sqrt is None else Q_sqrt
    return 0.5 * Qs @ pinv_psd(analysis.covariance, rank_tol) @ analysis.deviations


def perturb_continuous(ensemble: Ensemble, Q, P_t=None, Q_sqrt=None) -> np.ndarray:
    """Continuous-time counterpart ``1/2 Q^{1/2} P_t^{-1} (X_i - mean)``.

    ``P_t`` defaults to the ensemble's own covariance.
    """
    Qs = sqrt_psd(Q) if Q_sqrt is None else Q_sqrt
    P = ensemble.covariance if P_t is None else P_t
    return 0.5 * Qs @ _solve_cov(P, ensemble.deviations, "P_t")


def _scaled_forecast_deviations(analysis: Ensemble, model: StateSpaceModel, h: float):
    M = analysis.size
    B = np.eye(analysis.dim) + h * model.A
    return B @ analysis.deviations / np.sqrt(M - 1)


def quadratic_root(analysis: Ensemble, model: StateSpaceModel, h: float) -> np.ndarray:
    """Symmetric root of ``(Id+hA) P^a (Id+hA)^T / h^2 + Q / h``."""
    if not h > 0:
        raise ConfigurationError("h must be positive")
    Et = _scaled_forecast_deviations(analysis, model, h)
    return sqrt_psd(Et @ Et.T / h ** 2 + model.Q / h)


def _centered_row_frame(Et: np.ndarray) -> np.ndarray:
    """``d x M`` matrix with orthonormal rows orthogonal to ``1``, aligned with ``Et`` (polar factor)."""
    d, M = Et.shape
    if M - 1 < d:
        raise ConfigurationError(f"quadratic perturbation needs M >= d+1 (d={d}, M={M})")
    # orthonormal basis of the complement of the ones vector
    Bq, _ = np.linalg.qr(np.hstack([np.ones((M, 1)), np.eye(M)[:, : M - 1]]))
    B = Bq[:, 1:]
    U, _, Vt = np.linalg.svd(Et @ B, full_matrices=True)
    return U @ Vt[:d] @ B.T


def quadratic_w_matrix(analysis: Ensemble, model: StateSpaceModel, h: float, sign: int = 1) -> np.ndarray:
    """Solution of ``Et W^T + W Et^T + h W W^T = Q`` with ``Et = (Id+hA) E^a / sqrt(M-1)``.

    ``W = -Et/h + sign * J`` with ``J = S^{1/2} Phi``, ``S`` the right side of
    the root equation and ``Phi`` the centered polar factor of ``Et``, so that
    ``J J^T = S`` and ``W 1 = 0``.
    """
    Et = _scaled_forecast_deviations(analysis, model, h)
    J = quadratic_root(analysis, model, h) @ _centered_row_frame(Et)
    return -Et / h + sign * J


def solve_quadratic_perturbation(analysis: Ensemble, model: StateSpaceModel, h: float,
                                 sign: int = 1) -> np.ndarray:
    """Perturbations making the forecast covariance exactly ``(Id+hA)P^a(Id+hA)^T + hQ``."""
    if not h > 0:
        raise ConfigurationError("h must be positive")
    W = quadratic_w_matrix(analysis, model, h, sign)
    return np.sqrt(analysis.size - 1) * inv_sqrt_psd(model.Q) @ W


def quadratic_residual(W, analysis: Ensemble, model: StateSpaceModel, h: float) -> float:
    """Frobenius residual of the quadratic matrix equation for a given ``W`` matrix."""
    Et = _scaled_forecast_deviations(analysis, model, h)
    R = Et @ W.T + W @ Et.T + h * W @ W.T - model.Q
    return float(np.linalg.norm(R))


def compute_perturbation(spec: PerturbationSpec, analysis: Ensemble, model: StateSpaceModel,
                         h: float) -> np.ndarray:
    if spec.kind == "reich":
        return perturb_reich(analysis, model.Q, model.Q_sqrt)
    if spec.kind == "reich-pinv":
        return perturb_reich_pinv(analysis, model.Q, spec.rank_tol, model.Q_sqrt)
    if spec.kind == "quadratic":
        return solve_quadratic_perturbation(analysis, model, h, spec.sign)
    return np.zeros_like(analysis.members)


@dataclass(frozen=True)
class Assumption1Report:
    cross_residual: float
    cross_ok: bool
    second_moment_norm: float
    kappa_ok: bool
    center_residual: float
    center_ok: bool

    @property
    def passed(self) -> bool:
        return self.cross_ok and self.kappa_ok and self.center_ok


def deviation_projector(analysis: Ensemble) -> np.ndarray:
    P = analysis.covariance
    return P @ pinv_psd(P)


def check_assumption1(perturbation, analysis: Ensemble, Q, kappa: float,
                      projected: bool = False, rtol: float = 1e-9) -> Assumption1Report:
    """Cross moment ``= Q/2`` (or ``Pi Q / 2``), second moment ``<= kappa``, centering."""
    W = np.asarray(perturbation, float)
    Q = np.atleast_2d(Q)
    Qs = sqrt_psd(Q)
    M = analysis.size
    Wc = W - W.mean(axis=1, keepdims=True)
    cross = analysis.deviations @ Wc.T @ Qs / (M - 1)
    target = 0.5 * (deviation_projector(analysis) @ Q if projected else Q)
    cross_res = float(np.linalg.norm(cross - target))
    second = Qs @ Wc @ Wc.T @ Qs / (M - 1)
    second_norm = float(np.linalg.norm(second))
    center = float(np.linalg.norm(W.sum(axis=1)))
    return Assumption1Report(
        cross_residual=cross_res,
        cross_ok=cross_res <= rtol * np.linalg.norm(0.5 * Q),
        second_moment_norm=second_norm,
        kappa_ok=second_norm <= kappa,
        center_residual=center,
        center_ok=center <= rtol * max(np.linalg.norm(W), np.finfo(float).tiny) or center == 0.0,
    )


def check_assumption3(discrete_pert, continuous_pert, discrete_ens: Ensemble,
                      continuous_ens: Ensemble, h: float):
    """Return ``(sum_i |dW_i|^2, (h^2, sum_i |dX_i|^2))``; no pass/fail."""
    dW = np.asarray(discrete_pert) - np.asarray(continuous_pert)
    dX = discrete_ens.members - continuous_ens.members
    return float(np.sum(dW ** 2)), (h * h, float(np.sum(dX ** 2)))


def fit_assumption3_constant(samples: Sequence) -> float:
    """Least-squares ``R_T`` in ``lhs ~ R_T (h^2 + gap)`` over ``(lhs, (h2, gap))`` samples."""
    lhs = np.array([s[0] for s in samples], float)
    x = np.array([s[1][0] + s[1][1] for s in samples], float)
    den = float(x @ x)
    if den == 0.0:
        return 0.0 if np.all(lhs == 0) else math.inf
    return float(lhs @ x / den)


# -- constants from the forecast-covariance and inverse-covariance bounds --

def h_star(A, Q) -> float:
    """``sqrt(lambda_min(Q) / lambda_max(Q)) / ||A||`` (infinite for ``A = 0``)."""
    nA = opnorm(A)
    lam = np.linalg.eigvalsh(np.atleast_2d(Q))
    if nA == 0.0:
        return math.inf
    return math.sqrt(lam[0] / lam[-1]) / nA


def alpha_T(A, Q, T: float, h: float | None = None) -> float:
    """``exp(2 T ||A|| / (1 - h ||A||))`` with ``h = h*`` unless a step is given.

    The default ``h = h*`` covers every admissible step; it is infinite when ``Q``
    is a multiple of the identity. Passing the actual step gives a tighter,
    still valid constant for that step.
    """
    nA = opnorm(A)
    if nA == 0.0:
        return 1.0
    hh = h_star(A, Q) if h is None else h
    denom = 1.0 - hh * nA
    if denom <= 0.0:
        return math.inf
    return math.exp(2.0 * T * nA / denom)


def inverse_cov_bound(model: StateSpaceModel, P0a, h: float | None = None) -> float:
    """``alpha_T ||(P_0^a)^{-1}|| + T alpha_T ||G||^2 lambda_max(C^{-1})``."""
    a = alpha_T(model.A, model.Q, model.horizon, h)
    return (a * opnorm(np.linalg.inv(P0a))
            + model.horizon * a * opnorm(model.G) ** 2 * float(np.linalg.eigvalsh(model.C_inv)[-1]))


def default_kappa(model: StateSpaceModel, P0a, h: float | None = None) -> float:
    """``1/4 ||Q||_F^2`` times the inverse-covariance bound."""
    return 0.25 * float(np.linalg.norm(model.Q)) ** 2 * inverse_cov_bound(model, P0a, h)


def forecast_cov_bound(model: StateSpaceModel, P0a_norm: float, kappa: float, h: float, L: int) -> float:
    """Gronwall-type bound on ``sup_k ||P_k^f||`` by iterating the one-step estimate

    ``b_k = (1 + h||A||)^2 b_{k-1} + 2h(1 + h||A||)||Q|| + h^2 ||Q^{1/2}||^2 kappa``.
    """
    nA = opnorm(model.A)
    nQ = opnorm(model.Q)
    a = (1.0 + h * nA) ** 2
    c = 2.0 * h * (1.0 + h * nA) * nQ + h * h * nQ * kappa
    b = best = P0a_norm
    for _ in range(L):
        b = a * b + c
        best = max(best, b)
    return best
