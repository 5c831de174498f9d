import csv
import dataclasses

import numpy as np
import pytest

from esrf_limit.errors import ConfigurationError, DegenerateEnsembleError, InputError
from esrf_limit.filters import EsrfVariant, FilterTrajectory
from esrf_limit.kalman import integrate_riccati, riccati_rhs
from esrf_limit.limit import integrate_limit, member_gap
from esrf_limit.model import (
    Ensemble,
    LinearDrift,
    ObservationPath,
    StateSpaceModel,
    TimeGrid,
    aggregate_increments,
    simulate_reference,
)
from esrf_limit.presets import oscillator_model, scalar_model


def coarsen(path: ObservationPath, r: int) -> ObservationPath:
    g = path.fine_grid
    return ObservationPath(TimeGrid(g.h * r, g.L // r), path.ref_trajectory[::r],
                           aggregate_increments(path, g.h * r), path.obs_noise_increments, path.rng_seed)


def test_static_case_stays_put(rng):
    m = StateSpaceModel(LinearDrift([[0.0]]), G=[[0.0]], Q=[[1e-12]], C=[[1.0]], horizon=1.0)
    path = simulate_reference(m, TimeGrid.from_horizon(1.0, 2.0 ** -8), 0)
    init = Ensemble(rng.standard_normal((1, 5)))
    tr = integrate_limit(m, path, init, "none")
    assert np.array_equal(tr.ensembles[-1], init.members)


def test_covariance_follows_riccati(rng):
    m = oscillator_model()
    hf = 2.0 ** -10
    path = simulate_reference(m, TimeGrid.from_horizon(2.0, hf), 3)
    init = Ensemble.sample(np.zeros(2), np.eye(2), 64, rng)
    tr = integrate_limit(m, path, init)
    # the deviations see no noise, so P_t is the Euler solution of the Riccati equation up to O(hf)
    ric = integrate_riccati(m, init.covariance, hf, path.n_steps)
    rel = np.linalg.norm(tr.covariances()[-1] - ric[-1]) / np.linalg.norm(ric[-1])
    assert rel <= 1e-2
    truth = integrate_riccati(m, np.eye(2), hf, path.n_steps)[-1]
    assert np.linalg.norm(tr.covariances()[-1] - truth) <= 0.25 * np.linalg.norm(truth)


def test_mean_identity_and_centering(rng):
    m = oscillator_model()
    path = simulate_reference(m, TimeGrid.from_horizon(2.0, 2.0 ** -9), 1)
    tr = integrate_limit(m, path, Ensemble.sample(np.zeros(2), np.eye(2), 8, rng))
    assert tr.diagnostics["mean_identity_residual"] <= 1e-12
    assert tr.diagnostics["max_center_residual"] <= 1e-10
    assert tr.sup_spread > 0


def test_self_convergence_of_covariance(rng):
    m = scalar_model()
    path = simulate_reference(m, TimeGrid.from_horizon(2.0, 2.0 ** -12), 2)
    init = Ensemble.sample([0.0], [[1.0]], 16, rng)
    ref = integrate_limit(m, path, init).covariances()[-1]
    errs = [np.linalg.norm(integrate_limit(m, coarsen(path, r), init).covariances()[-1] - ref)
            for r in (16, 8, 4)]
    assert 1.6 <= errs[0] / errs[1] <= 2.4
    assert 1.6 <= errs[1] / errs[2] <= 2.4


def test_local_covariance_increment_is_second_order(rng):
    m = oscillator_model()
    init = Ensemble.sample(np.zeros(2), np.eye(2), 10, rng)
    steps, res = [], []
    for k in range(5, 10):
        hf = 2.0 ** -k
        path = simulate_reference(m, TimeGrid(hf, 1), 0)
        tr = integrate_limit(m, path, init)
        P = tr.covariances()
        res.append(np.linalg.norm(P[1] - P[0] - hf * riccati_rhs(m, P[0])))
        steps.append(hf)
    slope = np.polyfit(np.log(steps), np.log(res), 1)[0]
    assert slope >= 1.8


def test_member_gap(rng):
    m = scalar_model()
    h = 2.0 ** -4
    path = simulate_reference(m, TimeGrid.from_horizon(2.0, h / 4), 0)
    lim = integrate_limit(m, path, Ensemble.sample([0.0], [[1.0]], 6, rng))
    coarse = lim.ensembles[::4]
    disc = FilterTrajectory(EsrfVariant("eakf"), TimeGrid(h, 32), coarse, coarse[1:], {})
    t, gap, sup = member_gap(disc, lim)
    assert gap[::4].max() == 0.0 and np.all(np.diff(sup) >= 0)
    shifted = dataclasses.replace(disc, analyses=coarse + 0.5)
    assert member_gap(shifted, lim)[1][::4] == pytest.approx(np.full(33, 6 * 0.25))
    with pytest.raises(InputError):
        member_gap(dataclasses.replace(disc, analyses=coarse[:, :, :5]), lim)


def test_degenerate_and_rejected_inputs(rng):
    m = oscillator_model()
    path = simulate_reference(m, TimeGrid.from_horizon(2.0, 2.0 ** -6), 0)
    rank_one = Ensemble(np.outer([1.0, 2.0], [-1.0, 1.0]))
    with pytest.raises(DegenerateEnsembleError) as err:
        integrate_limit(m, path, rank_one)
    assert err.value.step == 0
    integrate_limit(m, path, rank_one, "reich-pinv")
    with pytest.raises(ConfigurationError):
        integrate_limit(m, path, rank_one, "quadratic")
    with pytest.raises(InputError):
        integrate_limit(m, path, Ensemble(rng.standard_normal((3, 5))))


def test_snapshot_csv(tmp_path, rng):
    m = oscillator_model()
    path = simulate_reference(m, TimeGrid.from_horizon(2.0, 2.0 ** -6), 0)
    tr = integrate_limit(m, path, Ensemble.sample(np.zeros(2), np.eye(2), 3, rng))
    f = tmp_path / "snap.csv"
    tr.write_snapshots_csv(f, 0.25)
    rows = list(csv.reader(open(f)))
    assert rows[0] == ["t", "x_0_0", "x_1_0", "x_0_1", "x_1_1", "x_0_2", "x_1_2"]
    assert len(rows) == 1 + 9 and float(rows[-1][0]) == 2.0
    assert float(rows[-1][3]) == tr.ensembles[-1][0, 1]
