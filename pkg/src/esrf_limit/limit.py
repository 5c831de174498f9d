"""Ensemble Kalman-Bucy equations on the fine grid of an observation path.

Member ``i`` follows

    dX_i = f(X_i) dt + Q^{1/2} W_i dt + P_t G^T C^{-1} (dY - 1/2 G (X_i + xbar) dt)

with ``P_t`` the ensemble's own covariance, integrated by explicit Euler.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateEnsembleError, InputError
from .filters import FilterTrajectory
from .linalg import pinv_psd
from .model import Ensemble, ObservationPath, StateSpaceModel, TimeGrid
from .perturbations import PerturbationSpec, check_assumption3, perturb_continuous

SINGULAR_RCOND = 1e-13


@dataclass(frozen=True)
class LimitTrajectory:
    grid: TimeGrid  # fine grid
    ensembles: np.ndarray  # (N+1, d, M)
    diagnostics: dict

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def ensemble(self, n: int) -> Ensemble:
        return Ensemble(self.ensembles[n])

    def means(self) -> np.ndarray:
        return self.ensembles.mean(axis=2)

    def covariances(self) -> np.ndarray:
        X = self.ensembles
        E = X - X.mean(axis=2, keepdims=True)
        P = np.einsum("nim,njm->nij", E, E) / (X.shape[2] - 1)
        return 0.5 * (P + np.swapaxes(P, 1, 2))

    @property
    def sup_spread(self) -> float:
        return float(self.diagnostics["spread"].max())

    def snapshots(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Ensembles at the coarse times ``k h``."""
        r = self.grid.refinement_of(h)
        return self.times[::r], self.ensembles[::r]

    def write_snapshots_csv(self, file, h: float) -> None:
        """Columns ``t, x_<component>_<member>`` at the coarse times ``k h``."""
        times, ens = self.snapshots(h)
        d, M = ens.shape[1:]
        header = ["t"] + [f"x_{i}_{m}" for m in range(M) for i in range(d)]
        with open(file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, X in zip(times, ens):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in X.T.reshape(-1)])


def integrate_limit(model: StateSpaceModel, path: ObservationPath, init: Ensemble,
                    pert_kind: PerturbationSpec | str = "reich") -> LimitTrajectory:
    """Explicit Euler on the path's fine grid, driven by its fine increments."""
    if isinstance(pert_kind, str):
        pert_kind = PerturbationSpec(pert_kind)
    if pert_kind.kind == "quadratic":
        raise ConfigurationError("the quadratic perturbation has no continuous-time counterpart here")
    hf = path.h_fine
    N = path.n_steps
    dY = path.obs_increments
    d, M = init.dim, init.size
    if init.dim != model.dim_state:
        raise InputError("initial ensemble dimension does not match the model")
    GtCi = model.G.T @ model.C_inv
    G = model.G
    Q = model.Q
    drift = model.drift
    out = np.empty((N + 1, d, M))
    X = np.array(init.members)
    out[0] = X
    kind = pert_kind.kind
    for n in range(N):
        m = X.mean(axis=1, keepdims=True)
        E = X - m
        P = E @ E.T / (M - 1)
        if kind == "reich":
            lam = np.linalg.eigvalsh(P)
            if lam[0] <= SINGULAR_RCOND * max(lam[-1], np.finfo(float).tiny):
                raise DegenerateEnsembleError("ensemble covariance became singular", step=n)
            QW = 0.5 * Q @ np.linalg.solve(P, E)
        elif kind == "reich-pinv":
            QW = 0.5 * Q @ pinv_psd(P, pert_kind.rank_tol) @ E
        else:
            QW = 0.0
        X = X + hf * (drift(X) + QW) + P @ GtCi @ (dY[n][:, None] - 0.5 * hf * G @ (X + m))
        out[n + 1] = X
    traj = LimitTrajectory(path.fine_grid, out, {})
    traj.diagnostics.update(_diagnostics(traj, model, path))
    return traj


def _diagnostics(traj: LimitTrajectory, model: StateSpaceModel, path: ObservationPath) -> dict:
    P = traj.covariances()
    lam = np.linalg.eigvalsh(P)
    means = traj.means()
    diag = {
        "norm_P": lam[:, -1],
        "min_eig_P": lam[:, 0],
        "spread": lam.sum(axis=1),
        "max_center_residual": float(np.max(np.abs(
            (traj.ensembles - means[:, :, None]).sum(axis=2)))),
    }
    if model.is_linear:
        # averaging the member equation with centered perturbations gives the Kalman-Bucy mean step
        hf = path.h_fine
        gains = P[:-1] @ (model.G.T @ model.C_inv)
        x = means[:-1]
        pred = x + hf * x @ model.A.T + np.einsum(
            "nij,nj->ni", gains, path.obs_increments - hf * x @ model.G.T)
        res = np.linalg.norm(means[1:] - pred, axis=1) / (1.0 + np.linalg.norm(x, axis=1))
        diag["mean_identity_residual"] = float(res.max()) if res.size else 0.0
    return diag


def _fine_index(discrete: FilterTrajectory, limit: LimitTrajectory) -> np.ndarray:
    r = limit.grid.refinement_of(discrete.h)
    n = np.arange(limit.grid.L + 1)
    return np.minimum(n // r, discrete.grid.L)


def member_gap(discrete: FilterTrajectory, limit: LimitTrajectory):
    """``(t, gap, running_sup)`` with ``gap(t) = sum_i |X_i^a(eta(t)) - X_i(t)|^2`` on the fine grid."""
    if discrete.analyses.shape[2] != limit.ensembles.shape[2]:
        raise InputError("discrete and limit ensembles have different sizes")
    idx = _fine_index(discrete, limit)
    diff = discrete.analyses[idx] - limit.ensembles
    gap = np.sum(diff ** 2, axis=(1, 2))
    return limit.times, gap, np.maximum.accumulate(gap)


def assumption3_samples(discrete: FilterTrajectory, limit: LimitTrajectory, model: StateSpaceModel):
    """``check_assumption3`` at every coarse time, Reich perturbations on both sides."""
    r = limit.grid.refinement_of(discrete.h)
    out = []
    for k in range(discrete.grid.L):
        Ed = discrete.analysis(k)
        Ec = limit.ensemble(k * r)
        Wd = perturb_continuous(Ed, model.Q, Q_sqrt=model.Q_sqrt)
        Wc = perturb_continuous(Ec, model.Q, Q_sqrt=model.Q_sqrt)
        out.append(check_assumption3(Wd, Wc, Ed, Ec, discrete.h))
    return out
