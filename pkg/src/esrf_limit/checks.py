"""Identity and bound checks on random instances.

Each check returns a :class:`CheckResult`; the ``check`` CLI subcommand and
the acceptance tests both run them.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .filters import (
    EsrfVariant,
    analysis_step,
    eakf_transform,
    etkf_transform,
    forecast_step,
    remainder_bound,
    run_filter,
    whitaker_gain,
)
from .harness import fit_rate
from .kalman import kalman_gain
from .linalg import inv_sqrt_psd, opnorm, sqrt_inv_integral, sqrt_psd
from .model import Ensemble, LinearDrift, StateSpaceModel, TimeGrid, simulate_reference
from .perturbations import (
    PerturbationSpec,
    h_star,
    inverse_cov_bound,
    perturb_reich,
    quadratic_residual,
    quadratic_w_matrix,
    solve_quadratic_perturbation,
)
from .presets import anisotropic_model


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float  # largest normalized residual, or the fitted slope
    threshold: float
    trials: int
    violations: int
    seconds: float

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: worst={self.worst:.3e} "
                f"threshold={self.threshold:.1e} trials={self.trials} violations={self.violations} "
                f"({self.seconds:.1f}s)")


def random_spd(rng: np.random.Generator, n: int, cond: float | None = None) -> np.ndarray:
    if cond is None:
        B = rng.standard_normal((n, n))
        return B @ B.T + 0.1 * np.eye(n)
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(0.0, math.log(cond), n))
    lam[0], lam[-1] = 1.0, cond
    lam *= math.exp(rng.uniform(-2, 2))
    return (U * lam) @ U.T


def random_model(rng: np.random.Generator, d: int, p: int) -> StateSpaceModel:
    return StateSpaceModel(LinearDrift(0.5 * rng.standard_normal((d, d))),
                           G=rng.standard_normal((p, d)), Q=random_spd(rng, d), C=random_spd(rng, p))


def random_instance(rng: np.random.Generator, full_rank: bool = False):
    """``(model, forecast ensemble, h)`` with ``d <= 4``, ``p <= 3``, ``M in {d+2, 2d}``, ``h in {0, .1, .5}``."""
    d = int(rng.integers(1, 5))
    p = int(rng.integers(1, 4))
    M = int(rng.choice([d + 2, max(2 * d, d + 2 if full_rank else 2)]))
    h = float(rng.choice([0.0, 0.1, 0.5]))
    scale = math.exp(rng.uniform(-1, 1))
    X = Ensemble(rng.standard_normal((d, 1)) + scale * rng.standard_normal((d, M)))
    return random_model(rng, d, p), X, h


def _run(name: str, trials: int, threshold: float, fn: Callable[[np.random.Generator], float],
         seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    vals = np.array([fn(rng) for _ in range(trials)])
    viol = int(np.sum(~(vals <= threshold)))
    return CheckResult(name, viol == 0, float(np.max(vals)), threshold, trials, viol,
                       time.perf_counter() - t0)


def check_adjointness(trials: int = 500, seed: int = 1) -> CheckResult:
    """``|A E - E T|_F / (1 + |E|_F)``."""
    def one(rng):
        model, X, h = random_instance(rng)
        E = X.deviations
        R = eakf_transform(X, model, h) @ E - E @ etkf_transform(X, model, h)
        return np.linalg.norm(R) / (1.0 + np.linalg.norm(E))
    return _run("eakf/etkf adjointness", trials, 1e-9, one, seed)


def check_covariance_law(trials: int = 500, seed: int = 2) -> CheckResult:
    """``|P^a - (Id - hKG) P^f|_F / (1 + |P^f|_F)`` for EAKF, ETKF and WH."""
    variants = [EsrfVariant(k) for k in ("eakf", "etkf", "wh2002")]

    def one(rng):
        model, X, h = random_instance(rng)
        Pf = X.covariance
        K = kalman_gain(Pf, model.G, model.C, h)
        target = (np.eye(X.dim) - h * K @ model.G) @ Pf
        dy = rng.standard_normal(model.dim_obs)
        worst = 0.0
        for v in variants:
            Pa = analysis_step(X, v, model, h, dy).covariance
            worst = max(worst, np.linalg.norm(Pa - target) / (1.0 + np.linalg.norm(Pf)))
        return worst
    return _run("exact covariance law", trials, 1e-9, one, seed)


def check_whitaker_ansatz(trials: int = 500, seed: int = 2) -> CheckResult:
    def one(rng):
        model, X, h = random_instance(rng)
        Pf = X.covariance
        G = model.G
        I = np.eye(X.dim)
        Kt = whitaker_gain(Pf, model, h)
        K = kalman_gain(Pf, G, model.C, h)
        R = (I - h * Kt @ G) @ Pf @ (I - h * Kt @ G).T - (I - h * K @ G) @ Pf
        return np.linalg.norm(R) / (1.0 + np.linalg.norm(Pf))
    return _run("whitaker-hamill ansatz", trials, 1e-9, one, seed)


def check_reich_moments(trials: int = 500, seed: int = 4) -> CheckResult:
    """Cross moment ``Q/2``, centering and second moment ``Q (P^a)^{-1} Q / 4``, all relative."""
    def one(rng):
        d = int(rng.integers(1, 5))
        M = int(rng.integers(d + 2, 3 * d + 4))
        X = Ensemble(rng.standard_normal((d, M)) * math.exp(rng.uniform(-1, 1)))
        Q = random_spd(rng, d)
        Qs = sqrt_psd(Q)
        W = perturb_reich(X, Q, Qs)
        cross = X.deviations @ W.T @ Qs / (M - 1)
        second = Qs @ W @ W.T @ Qs / (M - 1)
        target2 = 0.25 * Q @ np.linalg.solve(X.covariance, Q)
        return max(np.linalg.norm(cross - 0.5 * Q) / np.linalg.norm(0.5 * Q),
                   np.linalg.norm(W.sum(axis=1)) / np.linalg.norm(W),
                   np.linalg.norm(second - target2) / np.linalg.norm(target2))
    return _run("reich perturbation moments", trials, 1e-10, one, seed)


# relative round-off allowance; the bound itself vanishes at h = 0
REMAINDER_SLACK = 1e-12


def check_remainder_bound(trials: int = 1000, seed: int = 5) -> CheckResult:
    """``|A E - (Id - h/2 P Theta) E|_2 <= 3h^2/8 |P|^2 |Theta|^2 |E|_2``; reports the bound ratio."""
    def one(rng):
        model, X, h = random_instance(rng)
        E = X.deviations
        lin = np.eye(X.dim) - 0.5 * h * X.covariance @ model.Theta
        R = eakf_transform(X, model, h) @ E - lin @ E
        nE = opnorm(E)
        bound = remainder_bound(X.covariance, model, h) * nE + REMAINDER_SLACK * nE
        return opnorm(R) / bound if bound > 0 else 0.0
    return _run("transform remainder bound", trials, 1.0, one, seed)


def check_inverse_cov_bound(seed: int = 11, h: float = 2.0 ** -6, M: int = 8) -> CheckResult:
    """Modified filter with ``h < h*``: ``|(P_k^a)^{-1}| <= bound`` and ``P_k^a <= P_k^f`` at every step.

    ``worst`` is the largest ratio ``|(P_k^a)^{-1}| / bound``; a PSD-order violation
    (min eigenvalue of ``P^f - P^a`` below ``-1e-10``) sets it to infinity.
    """
    t0 = time.perf_counter()
    model = anisotropic_model()
    hs = h_star(model.A, model.Q)
    if not h < hs:
        raise ValueError(f"h={h} must be below h*={hs}")
    path = simulate_reference(model, TimeGrid.from_horizon(model.horizon, h), seed)
    init = Ensemble.sample(model.init_mean, model.init_cov, M, np.random.default_rng(seed))
    tr = run_filter(EsrfVariant("modified"), model, path, h, init)
    bound = inverse_cov_bound(model, init.covariance)
    ratio = np.concatenate([[opnorm(np.linalg.inv(init.covariance))],
                            tr.diagnostics["norm_Pa_inv"]]) / bound
    order_bad = int(np.sum(tr.diagnostics["min_eig_Pf_minus_Pa"] < -1e-10))
    viol = int(np.sum(ratio > 1.0)) + order_bad
    worst = float(ratio.max()) if not order_bad else math.inf
    return CheckResult("inverse covariance bound (modified filter)", viol == 0, worst, 1.0,
                       tr.grid.L, viol, time.perf_counter() - t0)


def check_integral_representation(trials: int = 200, seed: int = 12, max_cond: float = 1e4) -> CheckResult:
    def one(rng):
        n = int(rng.integers(1, 5))
        P = random_spd(rng, n, float(rng.uniform(1.0, max_cond)) if n > 1 else None)
        ref = inv_sqrt_psd(P)
        return np.linalg.norm(sqrt_inv_integral(P) - ref) / np.linalg.norm(ref)
    return _run("integral representation of P^{-1/2}", trials, 1e-6, one, seed)


def check_quadratic_residual(trials: int = 200, seed: int = 13) -> CheckResult:
    """Residual of the quadratic matrix equation, relative to ``|Q|_F``."""
    def one(rng):
        d = int(rng.integers(1, 5))
        M = int(rng.integers(d + 1, 3 * d + 3))
        model = random_model(rng, d, 1)
        X = Ensemble(rng.standard_normal((d, M)) * math.exp(rng.uniform(-1, 1)))
        h = float(rng.choice([1e-3, 1e-2, 0.1, 0.5]))
        W = quadratic_w_matrix(X, model, h)
        return quadratic_residual(W, X, model, h) / np.linalg.norm(model.Q)
    return _run("quadratic perturbation residual", trials, 1e-8, one, seed)


def recursion_residuals(h_values, kind: str = "quadratic", seed: int = 14):
    """``|P_k^f - [P^f + h(A P^f + P^f A^T + Q - K G P^f)]|`` after one EAKF cycle at each ``h``."""
    rng = np.random.default_rng(seed)
    model = anisotropic_model()
    Xf = Ensemble(rng.standard_normal((2, 6)))
    Pf = Xf.covariance
    A, G = model.A, model.G
    out = []
    for h in h_values:
        Xa = analysis_step(Xf, EsrfVariant("eakf"), model, h, np.zeros(model.dim_obs))
        Xn = forecast_step(Xa, model, h, PerturbationSpec(kind))
        K = kalman_gain(Pf, G, model.C, h)
        pred = Pf + h * (A @ Pf + Pf @ A.T + model.Q - K @ G @ Pf)
        out.append(float(np.linalg.norm(Xn.covariance - pred)))
    return out


def check_quadratic_recursion(seed: int = 14) -> CheckResult:
    """Slope of the one-step recursion residual in ``h``; must be at least 1.8."""
    t0 = time.perf_counter()
    hs = [2.0 ** -k for k in range(3, 10)]
    slope, _, _ = fit_rate(zip(hs, recursion_residuals(hs, "quadratic", seed)))
    return CheckResult("quadratic perturbation covariance recursion slope", slope >= 1.8, slope, 1.8,
                       len(hs), int(slope < 1.8), time.perf_counter() - t0)


def quadratic_forecast_gap(trials: int = 50, seed: int = 15) -> float:
    """Largest ``|P^f - ((Id+hA) P^a (Id+hA)^T + hQ)|_F`` relative, quadratic perturbations."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 4))
        M = int(rng.integers(d + 1, 3 * d + 3))
        model = random_model(rng, d, 1)
        X = Ensemble(rng.standard_normal((d, M)))
        h = float(rng.choice([1e-2, 0.1, 0.5]))
        W = solve_quadratic_perturbation(X, model, h)
        Xf = forecast_step(X, model, h, PerturbationSpec("quadratic"), W)
        B = np.eye(d) + h * model.A
        target = B @ X.covariance @ B.T + h * model.Q
        worst = max(worst, np.linalg.norm(Xf.covariance - target) / np.linalg.norm(target))
    return worst


ALL_CHECKS = {
    "adjointness": check_adjointness,
    "covariance-law": check_covariance_law,
    "whitaker-ansatz": check_whitaker_ansatz,
    "reich-moments": check_reich_moments,
    "remainder-bound": check_remainder_bound,
    "inverse-cov-bound": check_inverse_cov_bound,
    "integral-representation": check_integral_representation,
    "quadratic-residual": check_quadratic_residual,
    "quadratic-recursion": check_quadratic_recursion,
}


def run_checks(names=None) -> list[CheckResult]:
    return [ALL_CHECKS[n]() for n in (names or ALL_CHECKS)]
