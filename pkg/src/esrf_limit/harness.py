"""Convergence sweeps on shared observation paths, rate fits and reports.

For every seed one fine observation path is simulated; each step size and
variant consumes aggregations of that path. Errors are sups over time of

* ``cov_forecast`` / ``cov_analysis``: ``||P_t - P^{f/a}_{nu(t)}||_2`` against the Riccati solution,
* ``mean``: ``|xbar_t - xbar^a_{nu(t)}|^2`` against the Kalman-Bucy mean,
* ``ensemble``: the member gap against the ensemble Kalman-Bucy trajectory,
* ``pairwise_variant``: ``sum_i |X_i^a(v1) - X_i^a(v2)|^2`` between two variants,

averaged over seeds.
"""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, EsrfError, FitUnavailable
from .filters import EsrfVariant, run_filter
from .kalman import integrate_kalman_bucy
from .limit import assumption3_samples, integrate_limit
from .model import Ensemble, StateSpaceModel, TimeGrid, aggregate_increments, simulate_reference
from .perturbations import PerturbationSpec, fit_assumption3_constant

ERROR_KINDS = ("cov_forecast", "cov_analysis", "mean", "ensemble", "pairwise_variant")
LINEAR_ONLY = ("cov_forecast", "cov_analysis", "mean")
DEFAULT_WINDOWS = {
    "cov_forecast": (0.8, 1.2),
    "cov_analysis": (0.8, 1.2),
    "mean": (0.7, 1.3),
    "ensemble": (0.7, 1.3),
    "pairwise_variant": (0.7, math.inf),
}
MIN_FIT_ROWS = 4
MONOTONE_FRACTION = 0.9
SHARED_PATH_TOL = 1e-13


def variant_label(v: EsrfVariant) -> str:
    label = v.kind
    if v.perturbation.kind != "reich" and v.kind != "stoch-enkf":
        label += f"[{v.perturbation.kind}]"
    if v.mode != "exact":
        label += f"+{v.mode}"
    return label


@dataclass(frozen=True)
class SweepConfig:
    model: StateSpaceModel
    variants: tuple[EsrfVariant, ...]
    h_values: tuple[float, ...]
    num_seeds: int = 50
    error_kinds: tuple[str, ...] = ("cov_forecast", "cov_analysis", "mean", "ensemble")
    pairs: tuple[tuple[str, str], ...] = ()  # variant labels for pairwise_variant
    ensemble_size: int = 16
    fine_refinement: int = 16  # h_fine = min(h_values) / fine_refinement
    base_seed: int = 0
    sup_grid: str = "fine"  # "fine": every fine time with eta(t); "coarse": t_k only
    initial_offset: float = 0.0  # discrete members start shifted by offset * h
    limit_perturbation: str = "reich"
    windows: dict = field(default_factory=lambda: dict(DEFAULT_WINDOWS))
    parallel: int = 1
    name: str = "sweep"
    output_path: str | None = None

    def __post_init__(self):
        hs = tuple(float(h) for h in self.h_values)
        object.__setattr__(self, "h_values", hs)
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "error_kinds", tuple(self.error_kinds))
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        if not hs:
            raise ConfigurationError("h_values must not be empty")
        if any(not h > 0 for h in hs):
            raise ConfigurationError("h_values must be positive")
        if any(a <= b for a, b in zip(hs, hs[1:])):
            raise ConfigurationError("h_values must be strictly decreasing")
        if int(self.num_seeds) != self.num_seeds or self.num_seeds < 1:
            raise ConfigurationError("num_seeds must be an integer >= 1")
        if int(self.parallel) != self.parallel or self.parallel < 1:
            raise ConfigurationError("parallel must be an integer >= 1")
        if self.sup_grid not in ("fine", "coarse"):
            raise ConfigurationError("sup_grid must be 'fine' or 'coarse'")
        if self.ensemble_size < 2:
            raise ConfigurationError("ensemble_size must be >= 2")
        for k in self.error_kinds:
            if k not in ERROR_KINDS:
                raise ConfigurationError(f"unknown error kind {k!r}; expected one of {ERROR_KINDS}")
        if not self.model.is_linear:
            bad = [k for k in self.error_kinds if k in LINEAR_ONLY]
            if bad:
                raise ConfigurationError(f"error kinds {bad} need a linear drift")
        labels = [variant_label(v) for v in self.variants]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"duplicate variants {labels}")
        for a, b in self.pairs:
            if a not in labels or b not in labels:
                raise ConfigurationError(f"pair ({a}, {b}) names a variant not in {labels}")
        if "pairwise_variant" in self.error_kinds and not self.pairs:
            raise ConfigurationError("pairwise_variant needs at least one pair")
        PerturbationSpec(self.limit_perturbation)
        grid = self.fine_grid
        for h in hs:
            grid.refinement_of(h)
        for k, w in self.windows.items():
            if k not in ERROR_KINDS or len(w) != 2 or not w[0] <= w[1]:
                raise ConfigurationError(f"bad slope window for {k!r}: {w}")

    @property
    def h_fine(self) -> float:
        return self.h_values[-1] / self.fine_refinement

    @property
    def fine_grid(self) -> TimeGrid:
        return TimeGrid.from_horizon(self.model.horizon, self.h_values[-1] / self.fine_refinement)

    @property
    def labels(self) -> list[str]:
        return [variant_label(v) for v in self.variants]

    def window(self, kind: str) -> tuple[float, float]:
        return tuple(self.windows.get(kind, DEFAULT_WINDOWS[kind]))

    def table_keys(self) -> list[tuple[str, str]]:
        keys = []
        for kind in self.error_kinds:
            if kind == "pairwise_variant":
                keys += [(f"{a}~{b}", kind) for a, b in self.pairs]
            else:
                keys += [(lab, kind) for lab in self.labels]
        return keys


# -- rate fitting ---------------------------------------------------------------

def fit_rate(table: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """OLS of ``log(error)`` on ``log(h)``: ``(slope, intercept, r_squared)``."""
    rows = [(float(h), float(e)) for h, e in table]
    good = [(h, e) for h, e in rows if h > 0 and e > 0 and math.isfinite(e)]
    if len(good) < len(rows):
        warnings.warn(f"dropped {len(rows) - len(good)} nonpositive or non-finite rows from the rate fit",
                      RuntimeWarning, stacklevel=2)
    if len(good) < MIN_FIT_ROWS:
        raise FitUnavailable(f"rate fit needs {MIN_FIT_ROWS} usable rows, got {len(good)}")
    x = np.log([h for h, _ in good])
    y = np.log([e for _, e in good])
    X = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ np.array([slope, icpt])
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    return float(slope), float(icpt), r2


# -- report types -------------------------------------------------------------------

@dataclass
class ErrorTable:
    variant: str
    error_kind: str
    h: list[float]
    error: list[float]
    std_error: list[float]
    window: tuple[float, float]
    n_ok: list[int] = field(default_factory=list)
    monotone_fraction: float = float("nan")
    slope: float | None = None
    intercept: float | None = None
    r_squared: float | None = None
    fit_note: str = ""

    def refit(self) -> None:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                self.slope, self.intercept, self.r_squared = fit_rate(zip(self.h, self.error))
            self.fit_note = ""
        except FitUnavailable as exc:
            self.slope = self.intercept = self.r_squared = None
            self.fit_note = str(exc)

    @property
    def slope_ok(self) -> bool:
        return self.slope is not None and self.window[0] <= self.slope <= self.window[1]

    @property
    def monotone_ok(self) -> bool:
        return self.monotone_fraction >= MONOTONE_FRACTION

    @property
    def passed(self) -> bool:
        return self.slope_ok and self.monotone_ok


@dataclass
class ConvergenceReport:
    tables: list[ErrorTable]
    metadata: dict
    failures: list[dict] = field(default_factory=list)

    def table(self, variant: str, error_kind: str) -> ErrorTable:
        for t in self.tables:
            if t.variant == variant and t.error_kind == error_kind:
                return t
        raise KeyError((variant, error_kind))

    @property
    def passed(self) -> bool:
        return bool(self.tables) and not self.failures and all(t.passed for t in self.tables)

    def summary_lines(self) -> list[str]:
        out = []
        for t in self.tables:
            s = "n/a" if t.slope is None else f"{t.slope:.3f}"
            out.append(f"{'PASS' if t.passed else 'FAIL'} {t.variant:<20} {t.error_kind:<16} slope={s} "
                       f"window=[{t.window[0]}, {t.window[1]}] monotone={t.monotone_fraction:.2f}")
        return out


# -- per-seed work ----------------------------------------------------------------

def _sup(values_on_fine: np.ndarray, r: int, sup_grid: str) -> float:
    return float(values_on_fine[::r].max() if sup_grid == "coarse" else values_on_fine.max())


def initial_ensemble(config: SweepConfig, seed: int) -> Ensemble:
    rng = np.random.default_rng([config.base_seed, seed, 1])
    m = config.model
    return Ensemble.sample(m.init_mean, m.init_cov, config.ensemble_size, rng)


def check_shared_path(path, h_values) -> None:
    """Every aggregation must carry the same total increment."""
    total = path.obs_increments.sum(axis=0)
    scale = max(1.0, float(np.abs(path.obs_increments).sum()))
    for h in h_values:
        agg = aggregate_increments(path, h).sum(axis=0)
        if np.max(np.abs(agg - total)) > SHARED_PATH_TOL * scale:
            raise AssertionError(f"aggregated increments at h={h} disagree with the fine path")


def run_seed(config: SweepConfig, seed: int) -> dict:
    """All cells of one seed: ``{"errors": {(label, kind): [per h]}, "failures": [...], ...}``."""
    model = config.model
    path_seed = config.base_seed * 1_000_003 + seed
    path = simulate_reference(model, config.fine_grid, path_seed, config.h_values)
    check_shared_path(path, config.h_values)
    init = initial_ensemble(config, seed)
    kinds = set(config.error_kinds)
    nH = len(config.h_values)
    errors = {key: [math.nan] * nH for key in config.table_keys()}
    failures = []
    spread_violations = {}
    a3 = {}

    kb = None
    if kinds & set(LINEAR_ONLY):
        kb = integrate_kalman_bucy(model, path, init.mean, init.covariance)
    limit = None
    if "ensemble" in kinds:
        try:
            limit = integrate_limit(model, path, init, PerturbationSpec(config.limit_perturbation))
        except EsrfError as exc:
            failures.append({"seed": seed, "variant": "limit", "h": None, "message": str(exc)})

    for j, h in enumerate(config.h_values):
        r = config.fine_grid.refinement_of(h)
        L = path.n_steps // r
        idx = np.minimum(np.arange(path.n_steps + 1) // r, L)
        start = init if config.initial_offset == 0.0 else Ensemble(
            init.members + config.initial_offset * h)
        runs = {}
        for vi, v in enumerate(config.variants):
            label = variant_label(v)
            try:
                tr = run_filter(v, model, path, h, start, rng=[config.base_seed, seed, 2, vi, j])
            except EsrfError as exc:
                failures.append({"seed": seed, "variant": label, "h": h, "message": str(exc)})
                continue
            runs[label] = tr
            d = tr.diagnostics
            spread_violations[label] = spread_violations.get(label, 0) + int(
                np.sum(d["spread_a"] > d["spread_f"] * (1 + 1e-12) + 1e-14))
            if kb is not None:
                Pa = tr.covariances("analysis")
                Pf = np.concatenate([Pa[:1], tr.covariances("forecast")])
                if "cov_forecast" in kinds:
                    g = np.linalg.norm(kb.covs - Pf[idx], ord=2, axis=(1, 2))
                    errors[(label, "cov_forecast")][j] = _sup(g, r, config.sup_grid)
                if "cov_analysis" in kinds:
                    g = np.linalg.norm(kb.covs - Pa[idx], ord=2, axis=(1, 2))
                    errors[(label, "cov_analysis")][j] = _sup(g, r, config.sup_grid)
                if "mean" in kinds:
                    g = np.sum((kb.means - tr.means()[idx]) ** 2, axis=1)
                    errors[(label, "mean")][j] = _sup(g, r, config.sup_grid)
            if limit is not None:
                g = np.sum((tr.analyses[idx] - limit.ensembles) ** 2, axis=(1, 2))
                errors[(label, "ensemble")][j] = _sup(g, r, config.sup_grid)
                if seed == 0 and v.perturbation.kind == "reich" and v.kind != "stoch-enkf":
                    try:
                        a3.setdefault(label, []).extend(assumption3_samples(tr, limit, model))
                    except EsrfError:
                        pass
        for a, b in config.pairs if "pairwise_variant" in kinds else ():
            if a in runs and b in runs:
                g = np.sum((runs[a].analyses - runs[b].analyses) ** 2, axis=(1, 2))
                errors[(f"{a}~{b}", "pairwise_variant")][j] = float(g.max())
    return {"seed": seed, "errors": errors, "failures": failures,
            "spread_violations": spread_violations, "assumption3": a3}


def _aggregate(config: SweepConfig, results: list[dict]) -> ConvergenceReport:
    results = sorted(results, key=lambda r: r["seed"])
    tables = []
    for key in config.table_keys():
        E = np.array([res["errors"][key] for res in results], float)  # (seeds, nH)
        ok = np.isfinite(E)
        n_ok = ok.sum(axis=0)
        mean = np.array([E[ok[:, j], j].mean() if n_ok[j] else math.nan for j in range(E.shape[1])])
        se = np.array([E[ok[:, j], j].std(ddof=1) / math.sqrt(n_ok[j]) if n_ok[j] > 1 else 0.0
                       for j in range(E.shape[1])])
        both = ok[:, 0] & ok[:, -1]
        mono = float(np.mean(E[both, -1] < E[both, 0])) if both.any() and E.shape[1] > 1 else math.nan
        t = ErrorTable(key[0], key[1], list(config.h_values), [float(v) for v in mean],
                       [float(v) for v in se], config.window(key[1]), [int(n) for n in n_ok], mono)
        t.refit()
        tables.append(t)
    failures = [f for res in results for f in res["failures"]]
    spread = {}
    for res in results:
        for lab, n in res["spread_violations"].items():
            spread[lab] = spread.get(lab, 0) + n
    a3 = {}
    for res in results:
        for lab, samples in res["assumption3"].items():
            a3[lab] = fit_assumption3_constant(samples)
    meta = {
        "name": config.name,
        "seeds": [r["seed"] for r in results],
        "base_seed": config.base_seed,
        "h_fine": config.h_fine,
        "M": config.ensemble_size,
        "T": config.model.horizon,
        "d": config.model.dim_state,
        "sup_grid": config.sup_grid,
        "initial_offset": config.initial_offset,
        "spread_violations": spread,
        "assumption3_constant": a3,
    }
    return ConvergenceReport(tables, meta, failures)


def run_sweep(config: SweepConfig, parallel: int | None = None) -> ConvergenceReport:
    """Run every (seed, h, variant) cell and fit rates per table."""
    workers = config.parallel if parallel is None else parallel
    seeds = range(config.num_seeds)
    if workers > 1 and config.num_seeds > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_seed, [config] * config.num_seeds, seeds))
    else:
        results = [run_seed(config, s) for s in seeds]
    return _aggregate(config, results)


# -- output -------------------------------------------------------------------------

ERROR_COLUMNS = ("variant", "error_kind", "h", "error", "std_error")
SUMMARY_COLUMNS = ("variant", "error_kind", "slope", "intercept", "r_squared", "window_lo",
                   "window_hi", "monotone_fraction", "slope_ok", "monotone_ok", "passed", "fit_note")
FORMATS = ("csv", "jsonl")


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _unnum(s: str):
    return None if s == "" else float(s)


def report_files(out_dir, fmt: str) -> tuple[Path, Path, Path]:
    out = Path(out_dir)
    return out / f"errors.{fmt}", out / f"summary.{fmt}", out / "metadata.json"


def emit_report(report: ConvergenceReport, out_dir, fmt: str = "csv") -> list[Path]:
    """Write ``errors.<fmt>``, ``summary.<fmt>`` and ``metadata.json``; byte-deterministic."""
    if fmt not in FORMATS:
        raise ConfigurationError(f"format must be one of {FORMATS}")
    os.makedirs(out_dir, exist_ok=True)
    ef, sf, mf = report_files(out_dir, fmt)
    rows = [(t.variant, t.error_kind, _num(h), _num(e), _num(s))
            for t in report.tables for h, e, s in zip(t.h, t.error, t.std_error)]
    summ = [(t.variant, t.error_kind, _num(t.slope), _num(t.intercept), _num(t.r_squared),
             _num(t.window[0]), _num(t.window[1]), _num(t.monotone_fraction),
             str(t.slope_ok), str(t.monotone_ok), str(t.passed), t.fit_note) for t in report.tables]
    if fmt == "csv":
        for file, header, body in ((ef, ERROR_COLUMNS, rows), (sf, SUMMARY_COLUMNS, summ)):
            with open(file, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(body)
    else:
        for file, header, body in ((ef, ERROR_COLUMNS, rows), (sf, SUMMARY_COLUMNS, summ)):
            with open(file, "w") as fh:
                for row in body:
                    fh.write(json.dumps(dict(zip(header, row))) + "\n")
    meta = dict(report.metadata, failures=report.failures, n_ok={
        f"{t.variant}|{t.error_kind}": t.n_ok for t in report.tables})
    with open(mf, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1, default=_json_default)
        fh.write("\n")
    return [ef, sf, mf]


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _read_rows(file: Path, fmt: str, header) -> list[dict]:
    if fmt == "csv":
        with open(file, newline="") as fh:
            r = csv.reader(fh)
            got = next(r)
            if tuple(got) != tuple(header):
                raise ConfigurationError(f"{file}: unexpected header {got}")
            return [dict(zip(header, row)) for row in r]
    with open(file) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def parse_report(out_dir, fmt: str = "csv") -> ConvergenceReport:
    """Inverse of :func:`emit_report`."""
    ef, sf, mf = report_files(out_dir, fmt)
    with open(mf) as fh:
        meta = json.load(fh)
    failures = meta.pop("failures", [])
    n_ok = meta.pop("n_ok", {})
    tables: dict[tuple[str, str], ErrorTable] = {}
    for row in _read_rows(sf, fmt, SUMMARY_COLUMNS):
        key = (row["variant"], row["error_kind"])
        tables[key] = ErrorTable(
            key[0], key[1], [], [], [], (float(row["window_lo"]), float(row["window_hi"])),
            n_ok.get(f"{key[0]}|{key[1]}", []), float(row["monotone_fraction"]),
            _unnum(row["slope"]), _unnum(row["intercept"]), _unnum(row["r_squared"]), row["fit_note"])
    for row in _read_rows(ef, fmt, ERROR_COLUMNS):
        t = tables[(row["variant"], row["error_kind"])]
        t.h.append(float(row["h"]))
        t.error.append(float(row["error"]))
        t.std_error.append(float(row["std_error"]))
    return ConvergenceReport(list(tables.values()), meta, failures)
