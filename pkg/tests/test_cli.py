import json

import pytest
import yaml

from dpgeo import cli
from dpgeo import presets


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_list_and_describe(capsys):
    code, out, _ = _run(["list"], capsys)
    assert code == 0
    assert [ln.split()[0] for ln in out.splitlines()] == list(presets.PRESETS)
    code, out, _ = _run(["describe", "lq-scalar", "--schema"], capsys)
    doc = yaml.safe_load(out)
    assert code == 0 and doc["defaults"] == presets.defaults("lq-scalar")
    assert doc["schema"]["additionalProperties"] is False
    assert _run(["describe", "nope"], capsys)[0] == 2


def test_schema_accepts_defaults():
    for name in presets.PRESETS:
        raw = {"version": 1, "experiment": name, **presets.defaults(name)}
        cfg = cli.resolve_config(raw)
        assert cfg["experiment"] == name and cfg["seed"] == 0


@pytest.mark.parametrize("raw", [
    {"experiment": "lq-scalar", "grid": {"cells": 16, "colour": 1}},
    {"experiment": "lq-scalar", "extra": 1},
    {"experiment": "lq-scalar", "grid": {"cells": "many"}},
    {"experiment": "lq-scalar", "version": 2},
    {"experiment": "no-such-thing"},
    ["not", "a", "mapping"],
])
def test_bad_configs_rejected(raw):
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(raw)


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: lq-scalar\ngrid:\n  cells: 16\n  bogus: 3\n")
    code, _, err = _run(["run", "--config", str(cfg), "--output-dir", str(tmp_path)], capsys)
    assert code == 2 and "bogus" in err
    cfg.write_text("experiment: [unclosed\n")
    assert _run(["run", "--config", str(cfg)], capsys)[0] == 2
    assert _run(["run"], capsys)[0] == 2
    assert _run(["run", "entropy-flat-torus", "--alpha", "0.5"], capsys)[0] == 2
    cfg.write_text("experiment: lq-scalar\n")
    assert _run(["run", "taxicab", "--config", str(cfg)], capsys)[0] == 2


def test_run_writes_artifacts(tmp_path, capsys):
    code, out, _ = _run(["run", "lq-scalar", "--cells", "16", "--output-dir", str(tmp_path)],
                        capsys)
    assert code == 0 and "wrote" in out
    doc = json.loads((tmp_path / "lq-scalar" / "summary.json").read_text())
    assert doc["status"] == "ok" and doc["schema_version"] == 1
    assert doc["config"]["grid"]["cells"] == 16
    rows = (tmp_path / "lq-scalar" / "lq.csv").read_text().splitlines()
    assert len(rows) == 5


def test_output_dir_precedence(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"experiment: lq-scalar\noutput_dir: {tmp_path / 'from_cfg'}\n"
                   "grid:\n  cells: 16\n")
    monkeypatch.delenv(cli.ENV_OUTPUT, raising=False)
    cli.main(["run", "--config", str(cfg)])
    assert (tmp_path / "from_cfg" / "lq-scalar" / "summary.json").exists()
    monkeypatch.setenv(cli.ENV_OUTPUT, str(tmp_path / "from_env"))
    cli.main(["run", "--config", str(cfg)])
    assert (tmp_path / "from_env" / "lq-scalar" / "summary.json").exists()
    cli.main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "from_flag")])
    assert (tmp_path / "from_flag" / "lq-scalar" / "summary.json").exists()
    monkeypatch.delenv(cli.ENV_OUTPUT)
    cli.main(["run", "lq-scalar", "--cells", "16"])
    assert (tmp_path / "dpgeo-out" / "lq-scalar" / "summary.json").exists()
    capsys.readouterr()


def test_runs_are_reproducible(tmp_path, capsys):
    argv = ["run", "entropy-flat-torus", "--cells", "16", "--seed", "7"]
    cli.main(argv + ["--output-dir", str(tmp_path / "a")])
    cli.main(argv + ["--output-dir", str(tmp_path / "b")])
    capsys.readouterr()
    for name in ("summary.json", "mu.csv"):
        a = (tmp_path / "a" / "entropy-flat-torus" / name).read_bytes()
        b = (tmp_path / "b" / "entropy-flat-torus" / name).read_bytes()
        assert a == b


def test_check_exit_codes(tmp_path, capsys):
    out = ["--output-dir", str(tmp_path)]
    code, text, _ = _run(["check", "building-block-curvature"] + out, capsys)
    assert code == 1 and "[FAIL]" in text
    assert _run(["run", "building-block-curvature"] + out, capsys)[0] == 0
    assert _run(["run", "building-block-curvature", "--check"] + out, capsys)[0] == 1
    assert _run(["check", "entropy-flat-torus", "--cells", "16"] + out, capsys)[0] == 0


def test_overrides(tmp_path, capsys):
    out = ["--output-dir", str(tmp_path)]
    cli.main(["run", "lq-scalar", "--cells", "16", "--delta", "0.05", "--eps", "0.02"] + out)
    capsys.readouterr()
    cfg = json.loads((tmp_path / "lq-scalar" / "summary.json").read_text())["config"]
    assert cfg["sweep"]["deltas"] == [0.05] and cfg["sweep"]["epsilons"] == [0.02]
    # a refinement list stays a list, a per-axis count is broadcast
    args = cli.build_parser().parse_args(["run", "euclid-scaling", "--cells", "32"])
    assert cli._apply_overrides({"experiment": "euclid-scaling"}, args)["grid"]["cells"] == [32]
    args = cli.build_parser().parse_args(["run", "taxicab", "--cells", "32"])
    assert cli._apply_overrides({"experiment": "taxicab"}, args)["grid"]["cells"] == [32] * 3
    args = cli.build_parser().parse_args(["run", "flow-warped", "--delta", "0.1", "--p", "3"])
    with pytest.raises(cli.ConfigError):
        cli._apply_overrides({"experiment": "flow-warped"}, args)


def test_non_convergence_exit_code(tmp_path, monkeypatch, capsys):
    def boom(name, cfg, workers=1):
        raise presets.ConvergenceError("stalled", {"summary": {"iterations": 5}})

    monkeypatch.setattr(presets, "run_preset", boom)
    code, _, err = _run(["run", "lq-scalar", "--output-dir", str(tmp_path)], capsys)
    assert code == 3 and "did not converge" in err
    doc = json.loads((tmp_path / "lq-scalar" / "summary.json").read_text())
    assert doc["status"] == "not-converged" and doc["summary"]["iterations"] == 5
