"""Test models and the sweep configurations used by the acceptance suite."""
from __future__ import annotations

import numpy as np

from .filters import EsrfVariant
from .harness import SweepConfig
from .model import LinearDrift, StateSpaceModel, named_drift

DEFAULT_H = tuple(2.0 ** -k for k in range(4, 10))


def scalar_model() -> StateSpaceModel:
    """``A = -0.5``, ``Q = G = C = 1``, ``T = 2``."""
    return StateSpaceModel(LinearDrift([[-0.5]]), G=[[1.0]], Q=[[1.0]], C=[[1.0]], horizon=2.0)


def oscillator_model() -> StateSpaceModel:
    """Damped oscillator, both components observed with unequal noise.

    With a single observation (or ``C`` commuting with the covariance) EAKF and
    WH produce identical members, so two channels with different noise levels
    are needed for the member distance to be nontrivial.
    """
    return StateSpaceModel(LinearDrift([[0.0, 1.0], [-1.0, -0.5]]), G=np.eye(2),
                           Q=np.eye(2), C=np.diag([1.0, 0.5]), horizon=2.0)


def tanh_model() -> StateSpaceModel:
    """Scalar ``f(x) = -x + tanh(x)``, ``Q = G = C = 1``, ``T = 2``."""
    return StateSpaceModel(named_drift("tanh_damped"), G=[[1.0]], Q=[[1.0]], C=[[1.0]], horizon=2.0)


def anisotropic_model() -> StateSpaceModel:
    """Oscillator with ``Q = diag(1, 1/4)`` so that ``h*`` and ``alpha_T`` are finite."""
    return oscillator_model().with_(Q=np.diag([1.0, 0.25]))


MODELS = {
    "scalar": scalar_model,
    "oscillator": oscillator_model,
    "tanh": tanh_model,
    "anisotropic": anisotropic_model,
}

ESRFS = (EsrfVariant("eakf"), EsrfVariant("etkf"), EsrfVariant("wh2002"))


def covariance_sweep(model: StateSpaceModel, num_seeds: int = 5, **kw) -> SweepConfig:
    return SweepConfig(model, (EsrfVariant("eakf"),), DEFAULT_H, num_seeds=num_seeds,
                       error_kinds=("cov_forecast", "cov_analysis"), name="covariance", **kw)


def limit_sweep(num_seeds: int = 50, **kw) -> SweepConfig:
    """Scalar model, all three ESRFs against the Kalman-Bucy mean and the ensemble limit."""
    return SweepConfig(scalar_model(), ESRFS, DEFAULT_H, num_seeds=num_seeds,
                       error_kinds=("mean", "ensemble"), name="scalar-limit", **kw)


def oscillator_sweep(num_seeds: int = 50, **kw) -> SweepConfig:
    """Oscillator: mean errors and the EAKF/WH member distance."""
    return SweepConfig(oscillator_model(), (EsrfVariant("eakf"), EsrfVariant("wh2002")), DEFAULT_H,
                       num_seeds=num_seeds, error_kinds=("mean", "pairwise_variant"),
                       pairs=(("eakf", "wh2002"),), name="oscillator", **kw)


def nonlinear_sweep(num_seeds: int = 50, **kw) -> SweepConfig:
    return SweepConfig(tanh_model(), (EsrfVariant("etkf"),), DEFAULT_H, num_seeds=num_seeds,
                       error_kinds=("ensemble",), name="tanh-limit", **kw)


def demo_sweep(num_seeds: int = 8, **kw) -> SweepConfig:
    """Small scalar sweep covering every error kind of one ESRF."""
    return SweepConfig(scalar_model(), (EsrfVariant("eakf"),), DEFAULT_H, num_seeds=num_seeds,
                       error_kinds=("cov_forecast", "cov_analysis", "mean", "ensemble"),
                       name="demo", **kw)
