import json

from esrf_limit.cli import main

TINY = """\
name: tiny
model:
  A: [[-0.5]]
  G: [[1.0]]
  Q: [[1.0]]
  C: [[1.0]]
  horizon: 1.0
h_exponents: [3, 6]
fine_refinement: 2
ensemble_size: 6
error_kinds: [mean]
"""


def test_check_subset(capsys):
    assert main(["check", "adjointness", "whitaker-ansatz"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 2 and all(line.startswith("PASS") for line in out)


def test_sweep_writes_report(tmp_path, capsys):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(TINY)
    code = main(["sweep", "--config", str(cfg), "--seeds", "2", "--out", str(tmp_path / "o"),
                 "--format", "jsonl"])
    out = capsys.readouterr().out
    assert code in (0, 1) and ("PASS eakf" in out or "FAIL eakf" in out)
    rows = [json.loads(x) for x in (tmp_path / "o" / "errors.jsonl").read_text().splitlines()]
    assert len(rows) == 4 and rows[0]["variant"] == "eakf"
    assert json.loads((tmp_path / "o" / "metadata.json").read_text())["seeds"] == [0, 1]


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(TINY.replace("ensemble_size: 6", "ensemble_size: 1"))
    assert main(["sweep", "--config", str(cfg)]) == 2
    assert "ensemble_size" in capsys.readouterr().err
    assert main(["sweep", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_failed_sweep_exit_code(tmp_path, capsys):
    cfg = tmp_path / "t.yaml"
    cfg.write_text(TINY + "windows: {mean: [5.0, 6.0]}\n")
    assert main(["sweep", "--config", str(cfg), "--seeds", "2"]) == 1
    assert "FAIL" in capsys.readouterr().out
