import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from esrf_limit.errors import ConfigurationError, FitUnavailable
from esrf_limit.filters import EsrfVariant
from esrf_limit.harness import (
    ConvergenceReport,
    ErrorTable,
    SweepConfig,
    check_shared_path,
    emit_report,
    fit_rate,
    parse_report,
    run_sweep,
    variant_label,
)
from esrf_limit.model import LinearDrift, StateSpaceModel, TimeGrid, simulate_reference
from esrf_limit.perturbations import PerturbationSpec
from esrf_limit.presets import scalar_model, tanh_model

H = tuple(2.0 ** -k for k in range(3, 7))


def small(**kw):
    base = dict(model=scalar_model().with_(horizon=1.0), variants=(EsrfVariant("eakf"),), h_values=H,
                num_seeds=3, ensemble_size=6, fine_refinement=2)
    base.update(kw)
    return SweepConfig(**base)


def test_fit_rate_exact_laws():
    h = [2.0 ** -k for k in range(4, 10)]
    s, _, r2 = fit_rate([(x, 3 * x) for x in h])
    assert s == pytest.approx(1.0, abs=1e-12) and r2 == pytest.approx(1.0)
    assert fit_rate([(x, 3 * x * x) for x in h])[0] == pytest.approx(2.0, abs=1e-12)
    s, _, _ = fit_rate([(x, x + 10 * x * x) for x in h])
    assert 1.0 < s < 1.35


@given(st.floats(-3, 3), st.floats(0.1, 10.0))
def test_fit_rate_recovers_power(alpha, c):
    h = [2.0 ** -k for k in range(4, 10)]
    assert fit_rate([(x, c * x ** alpha) for x in h])[0] == pytest.approx(alpha, abs=1e-9)


def test_fit_rate_drops_and_refuses():
    h = [2.0 ** -k for k in range(4, 10)]
    rows = [(x, x) for x in h]
    rows[2] = (rows[2][0], 0.0)
    with pytest.warns(RuntimeWarning, match="dropped 1"):
        assert fit_rate(rows)[0] == pytest.approx(1.0)
    with pytest.warns(RuntimeWarning), pytest.raises(FitUnavailable):
        fit_rate(rows[:3])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(FitUnavailable):
            fit_rate([(x, math.nan) for x in h])


def test_single_step_has_no_slope():
    t = ErrorTable("eakf", "mean", [0.1], [0.01], [0.0], (0.7, 1.3))
    t.refit()
    assert t.slope is None and "needs" in t.fit_note and not t.passed


def test_empty_report_writes_headers(tmp_path):
    emit_report(ConvergenceReport([], {"name": "x"}), tmp_path)
    assert (tmp_path / "errors.csv").read_text() == "variant,error_kind,h,error,std_error\n"
    assert not ConvergenceReport([], {}).passed


def test_config_validation():
    with pytest.raises(ConfigurationError, match="decreasing"):
        small(h_values=(0.0625, 0.125))
    with pytest.raises(ConfigurationError, match="error kind"):
        small(error_kinds=("bias",))
    with pytest.raises(ConfigurationError, match="linear drift"):
        small(model=tanh_model(), error_kinds=("mean",))
    with pytest.raises(ConfigurationError, match="pair"):
        small(error_kinds=("pairwise_variant",), pairs=(("eakf", "etkf"),))
    with pytest.raises(ConfigurationError, match="duplicate"):
        small(variants=(EsrfVariant("eakf"), EsrfVariant("eakf")))
    with pytest.raises(ConfigurationError):
        small(h_values=(0.3,))
    with pytest.raises(ConfigurationError, match="window"):
        small(windows={"mean": (1.3, 0.7)})


def test_labels():
    assert variant_label(EsrfVariant("eakf")) == "eakf"
    assert variant_label(EsrfVariant("etkf", PerturbationSpec("none"), mode="expansion")) == "etkf[none]+expansion"
    cfg = small(variants=(EsrfVariant("eakf"), EsrfVariant("wh2002")), pairs=(("eakf", "wh2002"),),
                error_kinds=("mean", "pairwise_variant"))
    assert cfg.table_keys() == [("eakf", "mean"), ("wh2002", "mean"), ("eakf~wh2002", "pairwise_variant")]


def test_shared_path_check():
    m = scalar_model().with_(horizon=1.0)
    path = simulate_reference(m, TimeGrid.from_horizon(1.0, 2.0 ** -6), 0)
    check_shared_path(path, H)


def test_small_sweep_shapes_and_roundtrip(tmp_path):
    cfg = small(error_kinds=("cov_forecast", "cov_analysis", "mean", "ensemble"))
    rep = run_sweep(cfg)
    assert [(t.variant, t.error_kind) for t in rep.tables] == cfg.table_keys()
    for t in rep.tables:
        assert len(t.error) == len(H) and all(e > 0 for e in t.error) and t.n_ok == [3] * len(H)
    assert rep.metadata["seeds"] == [0, 1, 2] and rep.metadata["h_fine"] == H[-1] / 2
    for fmt in ("csv", "jsonl"):
        out = tmp_path / fmt
        emit_report(rep, out, fmt)
        back = parse_report(out, fmt)
        for a, b in zip(rep.tables, back.tables):
            assert (a.variant, a.error_kind, a.h, a.error, a.std_error) == \
                   (b.variant, b.error_kind, b.h, b.error, b.std_error)
            assert a.slope == b.slope and a.passed == b.passed
        assert back.metadata == rep.metadata
    with pytest.raises(ConfigurationError):
        emit_report(rep, tmp_path / "x", "xml")


def test_reruns_are_byte_identical(tmp_path):
    cfg = small(num_seeds=2, error_kinds=("mean",))
    for name in ("a", "b"):
        emit_report(run_sweep(cfg), tmp_path / name)
    for f in ("errors.csv", "summary.csv", "metadata.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_parallel_matches_serial():
    cfg = small(num_seeds=2, error_kinds=("ensemble",))
    a, b = run_sweep(cfg), run_sweep(cfg, parallel=2)
    assert [t.error for t in a.tables] == [t.error for t in b.tables]


def test_coarse_sup_never_exceeds_fine():
    a = run_sweep(small(error_kinds=("mean",)))
    b = run_sweep(small(error_kinds=("mean",), sup_grid="coarse"))
    assert all(x >= y for x, y in zip(a.tables[0].error, b.tables[0].error))


def test_divergent_cells_are_recorded():
    m = StateSpaceModel(LinearDrift([[50.0]]), G=[[1.0]], Q=[[1.0]], C=[[1.0]], horizon=1.0)
    cfg = small(model=m, variants=(EsrfVariant("eakf", PerturbationSpec("none")),), error_kinds=("mean",),
                num_seeds=1)
    with np.errstate(all="ignore"):
        rep = run_sweep(cfg)
    assert rep.failures and not rep.passed
    assert "step" in rep.failures[0]["message"] and rep.tables[0].n_ok[0] == 0
