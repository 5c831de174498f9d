"""YAML sweep configuration.

Schema (every key except ``model`` and ``h_values``/``h_exponents`` optional)::

    name: scalar                 # report label
    model:
      A: [[-0.5]]                # linear drift, d x d; or
      drift: tanh_damped         # or a named Lipschitz drift (d taken from G)
      G: [[1.0]]                 # p x d
      Q: [[1.0]]                 # d x d, SPD
      C: [[1.0]]                 # p x p, SPD
      horizon: 2.0
      init_mean: [0.0]           # default zeros
      init_cov: [[1.0]]          # default identity
    variants:                    # default [eakf]
      - kind: eakf               # eakf | etkf | wh2002 | modified | stoch-enkf
        perturbation: reich      # reich | reich-pinv | quadratic | none, or a mapping
        mode: exact              # exact | expansion
    h_values: [0.0625, 0.03125]  # strictly decreasing; or
    h_exponents: [4, 9]          # h = 2^-4 .. 2^-9
    num_seeds: 50
    error_kinds: [cov_forecast, cov_analysis, mean, ensemble, pairwise_variant]
    pairs: [[eakf, wh2002]]      # variant labels compared by pairwise_variant
    ensemble_size: 16
    fine_refinement: 16          # h_fine = min(h) / fine_refinement
    base_seed: 0
    sup_grid: fine               # fine | coarse
    initial_offset: 0.0
    limit_perturbation: reich
    windows: {mean: [0.7, 1.3]}  # per error kind, overrides the defaults
    parallel: 1

Errors carry the file name, line and dotted field path.
"""
from __future__ import annotations

import numpy as np
import yaml

from .errors import ConfigurationError, EsrfError
from .filters import EsrfVariant
from .harness import DEFAULT_WINDOWS, SweepConfig
from .model import LinearDrift, StateSpaceModel, named_drift
from .perturbations import PerturbationSpec

TOP_KEYS = {
    "name", "model", "variants", "h_values", "h_exponents", "num_seeds", "error_kinds", "pairs",
    "ensemble_size", "fine_refinement", "base_seed", "sup_grid", "initial_offset",
    "limit_perturbation", "windows", "parallel", "output_path",
}
MODEL_KEYS = {"A", "drift", "G", "Q", "C", "horizon", "init_mean", "init_cov"}
VARIANT_KEYS = {"kind", "perturbation", "mode"}
PERT_KEYS = {"kind", "kappa_bound", "rank_tol", "sign"}


class _Locator:
    """Maps dotted field paths to 1-based line numbers of the YAML source."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.lines: dict[str, int] = {}
        try:
            root = yaml.compose(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = f":{mark.line + 1}" if mark is not None else ""
            raise ConfigurationError(f"{source}{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
        if root is not None:
            self._walk(root, "")

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self._walk(v, f"{path}.{k.value}" if path else str(k.value))
                self.lines.setdefault(f"{path}.{k.value}" if path else str(k.value), k.start_mark.line + 1)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, f"{path}[{i}]")

    def error(self, path: str, msg: str) -> ConfigurationError:
        p = path
        while p and p not in self.lines:
            p = p.rsplit(".", 1)[0] if "." in p else ""
        line = self.lines.get(p)
        where = f"{self.source}:{line}" if line else self.source
        return ConfigurationError(f"{where}: {path}: {msg}")


def _matrix(loc, path, value, shape=None):
    try:
        a = np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError):
        raise loc.error(path, "expected a numeric matrix") from None
    if a.ndim != 2 or (shape is not None and a.shape != shape):
        raise loc.error(path, f"expected shape {shape}, got {a.shape}")
    return a


def _check_keys(loc, path, mapping, allowed):
    if not isinstance(mapping, dict):
        raise loc.error(path, "expected a mapping")
    for k in mapping:
        if k not in allowed:
            sub = f"{path}.{k}" if path else str(k)
            raise loc.error(sub, f"unknown key; allowed: {sorted(allowed)}")


def _model(loc, raw) -> StateSpaceModel:
    _check_keys(loc, "model", raw, MODEL_KEYS)
    for k in ("G", "Q", "C"):
        if k not in raw:
            raise loc.error("model", f"missing required key {k!r}")
    G = _matrix(loc, "model.G", raw["G"])
    d = G.shape[1]
    if "A" in raw and "drift" in raw:
        raise loc.error("model.drift", "give either A or drift, not both")
    if "A" in raw:
        drift = LinearDrift(_matrix(loc, "model.A", raw["A"], (d, d)))
    elif "drift" in raw:
        try:
            drift = named_drift(str(raw["drift"]))
        except ConfigurationError as exc:
            raise loc.error("model.drift", str(exc)) from None
    else:
        raise loc.error("model", "missing drift: give A or drift")
    kw = dict(drift=drift, G=G, Q=_matrix(loc, "model.Q", raw["Q"]), C=_matrix(loc, "model.C", raw["C"]))
    if "horizon" in raw:
        kw["horizon"] = raw["horizon"]
    if "init_mean" in raw:
        kw["init_mean"] = np.asarray(raw["init_mean"], float)
    if "init_cov" in raw:
        kw["init_cov"] = _matrix(loc, "model.init_cov", raw["init_cov"])
    try:
        return StateSpaceModel(**kw)
    except (EsrfError, TypeError, ValueError) as exc:
        msg = str(exc)
        key = next((k for k in ("init_mean", "init_cov", "horizon", "G", "Q", "C", "A")
                    if msg.startswith(k + " ") and k in raw), None)
        raise loc.error(f"model.{key}" if key else "model", msg) from None


def _perturbation(loc, path, raw) -> PerturbationSpec:
    if isinstance(raw, str):
        raw = {"kind": raw}
    _check_keys(loc, path, raw, PERT_KEYS)
    try:
        return PerturbationSpec(**raw)
    except (EsrfError, TypeError) as exc:
        raise loc.error(path, str(exc)) from None


def _variants(loc, raw) -> tuple[EsrfVariant, ...]:
    if not isinstance(raw, list) or not raw:
        raise loc.error("variants", "expected a non-empty list")
    out = []
    for i, item in enumerate(raw):
        path = f"variants[{i}]"
        if isinstance(item, str):
            item = {"kind": item}
        _check_keys(loc, path, item, VARIANT_KEYS)
        kw = {"kind": item.get("kind", "eakf"), "mode": item.get("mode", "exact")}
        if "perturbation" in item:
            kw["perturbation"] = _perturbation(loc, f"{path}.perturbation", item["perturbation"])
        try:
            out.append(EsrfVariant(**kw))
        except EsrfError as exc:
            raise loc.error(path, str(exc)) from None
    return tuple(out)


# substrings of SweepConfig validation messages -> offending field
_MESSAGE_FIELDS = (
    ("h_values", "h_values"), ("horizon", "h_values"), ("grid step", "h_values"),
    ("num_seeds", "num_seeds"), ("parallel", "parallel"), ("sup_grid", "sup_grid"),
    ("ensemble_size", "ensemble_size"), ("error kind", "error_kinds"), ("linear drift", "error_kinds"),
    ("pair", "pairs"), ("window", "windows"), ("perturbation kind", "limit_perturbation"),
    ("duplicate variants", "variants"),
)


def parse_config(text: str, source: str = "<config>") -> SweepConfig:
    loc = _Locator(text, source)
    raw = yaml.safe_load(text)
    if raw is None:
        raw = {}
    _check_keys(loc, "", raw, TOP_KEYS)
    if "model" not in raw:
        raise loc.error("model", "missing required section")
    kw = {"model": _model(loc, raw["model"])}
    kw["variants"] = _variants(loc, raw.get("variants", ["eakf"]))
    if ("h_values" in raw) == ("h_exponents" in raw):
        raise loc.error("h_values", "give exactly one of h_values or h_exponents")
    if "h_exponents" in raw:
        e = raw["h_exponents"]
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(v, int) for v in e) and e[0] <= e[1]):
            raise loc.error("h_exponents", "expected [first, last] integers, first <= last")
        kw["h_values"] = tuple(2.0 ** -k for k in range(e[0], e[1] + 1))
    else:
        hv = raw["h_values"]
        if not isinstance(hv, list) or not all(isinstance(v, (int, float)) for v in hv):
            raise loc.error("h_values", "expected a list of numbers")
        kw["h_values"] = tuple(float(v) for v in hv)
    simple = {"name": str, "num_seeds": int, "ensemble_size": int, "fine_refinement": int,
              "base_seed": int, "sup_grid": str, "initial_offset": float,
              "limit_perturbation": str, "parallel": int, "output_path": str}
    for key, typ in simple.items():
        if key in raw:
            v = raw[key]
            if typ is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if not isinstance(v, typ) or isinstance(v, bool):
                raise loc.error(key, f"expected {typ.__name__}, got {type(v).__name__}")
            kw[key] = v
    if "error_kinds" in raw:
        if not isinstance(raw["error_kinds"], list):
            raise loc.error("error_kinds", "expected a list")
        kw["error_kinds"] = tuple(raw["error_kinds"])
    if "pairs" in raw:
        pr = raw["pairs"]
        if not isinstance(pr, list) or not all(isinstance(p, list) and len(p) == 2 for p in pr):
            raise loc.error("pairs", "expected a list of [label, label] pairs")
        kw["pairs"] = tuple(tuple(map(str, p)) for p in pr)
    if "windows" in raw:
        w = raw["windows"]
        _check_keys(loc, "windows", w, set(DEFAULT_WINDOWS))
        windows = dict(DEFAULT_WINDOWS)
        for k, v in w.items():
            if not (isinstance(v, list) and len(v) == 2):
                raise loc.error(f"windows.{k}", "expected [low, high]")
            windows[k] = (float(v[0]), float(v[1]))
        kw["windows"] = windows
    try:
        return SweepConfig(**kw)
    except ConfigurationError as exc:
        msg = str(exc)
        field = next((f for needle, f in _MESSAGE_FIELDS if needle in msg), "")
        raise loc.error(field, msg) from None


def load_config(path) -> SweepConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))
