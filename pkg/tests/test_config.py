from pathlib import Path

import pytest

from esrf_limit.config import load_config, parse_config
from esrf_limit.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

GOOD = """\
name: tiny
model:
  A: [[-0.5]]
  G: [[1.0]]
  Q: [[1.0]]
  C: [[1.0]]
  horizon: 1.0
variants:
  - eakf
  - kind: wh2002
    perturbation: {kind: reich-pinv, rank_tol: 1.0e-10}
h_exponents: [3, 6]
num_seeds: 4
initial_offset: 1
windows: {mean: [0.5, 1.5]}
"""


def test_parse_good():
    cfg = parse_config(GOOD)
    assert cfg.name == "tiny" and cfg.num_seeds == 4
    assert cfg.h_values == (0.125, 0.0625, 0.03125, 0.015625)
    assert cfg.labels == ["eakf", "wh2002[reich-pinv]"]
    assert cfg.initial_offset == 1.0 and cfg.window("mean") == (0.5, 1.5)
    assert cfg.window("ensemble") == (0.7, 1.3)


@pytest.mark.parametrize("name", ["scalar.yaml", "oscillator.yaml", "tanh.yaml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert len(cfg.h_values) == 6 and cfg.num_seeds == 50


@pytest.mark.parametrize("old,new,where", [
    ("  Q: [[1.0]]", "  Q: [[-1.0]]", ":5: model.Q"),
    ("num_seeds: 4", "num_seeds: 4\ncolour: red", ":14: colour: unknown key"),
    ("num_seeds: 4", "num_seeds: four", ":13: num_seeds: expected int"),
    ("h_exponents: [3, 6]", "h_exponents: [6, 3]", ":12: h_exponents"),
    ("h_exponents: [3, 6]", "h_values: [0.1, 0.2]", ":12: h_values: h_values must be strictly decreasing"),
    ("  - eakf", "  - ukf", ":9: variants[0]"),
    ("kind: reich-pinv", "kind: gaussian", ":11: variants[1].perturbation"),
    ("  A: [[-0.5]]", "  A: [[-0.5, 1.0]]", ":3: model.A: expected shape"),
    ("windows: {mean: [0.5, 1.5]}", "windows: {bias: [0.5, 1.5]}", ":15: windows.bias"),
])
def test_errors_name_line_and_field(old, new, where):
    with pytest.raises(ConfigurationError) as err:
        parse_config(GOOD.replace(old, new), "cfg.yaml")
    assert where in str(err.value)


def test_structural_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="invalid YAML"):
        parse_config("model: [", "x.yaml")
    with pytest.raises(ConfigurationError, match="missing required section"):
        parse_config("name: x\n")
    with pytest.raises(ConfigurationError, match="exactly one"):
        parse_config(GOOD.replace("h_exponents: [3, 6]", ""))
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
