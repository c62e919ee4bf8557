import json
import subprocess
import sys
from pathlib import Path

import pytest

import extremo.cli as cli
from extremo.cli import CliConfig, effective_config, main, parse_config
from extremo.errors import NumericalError, PartialFailureError, ValidationError

THETA = {"C1": 0.8, "C2": 0.4, "alpha1": 1.5, "alpha2": 1.0}
SMALL_LAGS = [[0, 0, 1], [0, 0, 2], [1, 0, 0], [2, 0, 0], [1, 1, 1], [2, 1, 0], [1, 2, 0]]


def small(**kw):
    cfg = {"family": "ISO_FRAC", "theta": THETA, "grid": {"fixed_grid": [3, 3], "n": 30}, "lags": SMALL_LAGS,
           "weights": "IDENTITY", "starts": 2, "quantile_level": 0.9, "bias_correct": "off"}
    cfg.update(kw)
    return cfg


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


# -- config -------------------------------------------------------------------


def test_scenario_defaults():
    cfg = parse_config({"scenario": "i"})
    assert cfg.quantile_level == 0.96 and cfg.replicates == 20 and cfg.theta == THETA
    assert cfg.scenario_config().domain().n_sites == 64 * 150
    assert parse_config({"scenario": "ii"}).quantile_level == 0.97
    assert parse_config({"scenario": "iii"}).quantile_level == 0.95


def test_overrides_win():
    cfg = parse_config({"scenario": "i", "quantile_level": 0.9}, quantile_level=0.95, seed=7)
    assert cfg.quantile_level == 0.95 and cfg.seed == 7


@pytest.mark.parametrize(
    "data, match",
    [
        ({"scenario": "i", "theta": {**THETA, "alpha1": 2.5}}, "alpha"),
        ({"scenario": "i", "alpha_4": 1.0}, "Extra inputs"),
        ({"scenario": "i", "lags": "H9"}, "unknown lag set"),
        ({"grid": {"n": 4}}, "exactly one"),
        ({"scenario": "i", "seed": -1}, "seed"),
        ({"scenario": "i", "quantile_level": 1.0}, "quantile_level"),
    ],
)
def test_invalid_configs(data, match):
    with pytest.raises(ValidationError, match=match):
        parse_config(data)


def test_config_file_errors(tmp_path):
    with pytest.raises(ValidationError, match="does not exist"):
        parse_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ValidationError, match="JSON"):
        parse_config(tmp_path / "bad.json")


def test_effective_config_round_trip():
    cfg = parse_config(small(subsampling={"block_length": 10}))
    again = CliConfig.model_validate(json.loads(json.dumps(effective_config(cfg))))
    assert effective_config(again) == effective_config(cfg)


# -- commands -----------------------------------------------------------------


def test_pipeline(tmp_path, capsys):
    cfg_path = write(tmp_path, small())
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "sim"), "--seed", "3"]) == 0
    assert (tmp_path / "sim" / "field.csv").exists()
    eff = json.loads((tmp_path / "sim" / "effective_config.json").read_text())
    assert eff["seed"] == 3

    cfg_path = write(tmp_path, small(field=str(tmp_path / "sim" / "field.csv"), levels=[0.85, 0.9]), "c2.json")
    assert main(["extremogram", "--config", str(cfg_path), "--out", str(tmp_path / "ext")]) == 0
    th = json.loads((tmp_path / "ext" / "threshold.json").read_text())
    assert th["quantile_level"] == 0.9 and th["regime"] == "NONE"
    assert (tmp_path / "ext" / "sweep.csv").read_text().startswith("level,threshold,lag,value,change")

    cfg_path = write(tmp_path, small(estimates=str(tmp_path / "ext" / "estimates.csv")), "c3.json")
    assert main(["fit", "--config", str(cfg_path), "--out", str(tmp_path / "fit")]) == 0
    fit = json.loads((tmp_path / "fit" / "fit.json").read_text())
    assert set(fit["theta_hat"]) == set(THETA)


def test_simulate_count(tmp_path):
    cfg_path = write(tmp_path, small())
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path), "--count", "3"]) == 0
    assert sorted(p.name for p in tmp_path.glob("field_*.csv")) == ["field_000.csv", "field_001.csv",
                                                                    "field_002.csv"]


def test_ci_command(tmp_path):
    cfg_path = write(tmp_path, small(grid={"fixed_grid": [3, 3], "n": 60}))
    main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path), "--seed", "1"])
    cfg_path = write(tmp_path, small(grid={"fixed_grid": [3, 3], "n": 60}, field=str(tmp_path / "field.csv"),
                                     subsampling={"block_length": 30, "stride": 3}), "c2.json")
    assert main(["ci", "--config", str(cfg_path), "--out", str(tmp_path / "ci")]) == 0
    ci = json.loads((tmp_path / "ci" / "ci.json").read_text())
    assert ci["n_blocks"] == 11


@pytest.mark.parametrize(
    "cfg, code",
    [
        ({"scenario": "i", "theta": {**THETA, "alpha1": 2.5}}, 2),
        ({"scenario": "i", "alpha_4": 1.0}, 2),
    ],
)
def test_exit_codes(tmp_path, cfg, code, capsys):
    assert main(["study", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == code
    assert "error:" in capsys.readouterr().err


def test_undefined_estimate_exit_code(tmp_path, capsys):
    # a constant field has no exceedances, so the extremogram is undefined
    (tmp_path / "field.csv").write_text("i1,value\n" + "".join(f"{t},1.0\n" for t in range(1, 31)))
    cfg = small(grid={"fixed_grid": [], "n": 30, "w": 1}, lags=[[1]], field=str(tmp_path / "field.csv"))
    with pytest.warns(RuntimeWarning, match="equal"):
        assert main(["extremogram", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 2
    assert "undefined" in capsys.readouterr().err


@pytest.mark.parametrize("exc, code", [(NumericalError("factor"), 3), (PartialFailureError("dropped", 9, 10), 4)])
def test_runtime_exit_codes(tmp_path, monkeypatch, exc, code):
    def boom(*args, **kwargs):
        raise exc

    monkeypatch.setattr(cli, "run_scenario", boom)
    assert main(["study", "--config", str(write(tmp_path, small())), "--out", str(tmp_path / "o")]) == code


def test_negative_threads(tmp_path):
    assert main(["study", "--config", str(write(tmp_path, small())), "--threads", "-1",
                 "--out", str(tmp_path / "o")]) == 2


def test_ratecheck_from_table(tmp_path, capsys):
    cfg = {"rmse": {"90": {"C1": 1.0}, "300": {"C1": 0.7}}}
    assert main(["ratecheck", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "ratecheck.json").read_text())["rows"]
    assert rows[-1]["status"] == "in"


def test_lagscan(tmp_path, capsys):
    cfg = small(replicates=2, lag_sets={"a": SMALL_LAGS, "b": SMALL_LAGS + [[0, 0, 3]]})
    assert main(["lagscan", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "lagscan.csv").exists() and not (tmp_path / "timings.json").exists()


@pytest.mark.parametrize("threads", ["2", "0"])
def test_study_byte_identical_across_threads(tmp_path, threads):
    cfg_path = write(tmp_path, small(replicates=3, seed=5))
    outs = {}
    for t in ("1", threads):
        out = tmp_path / f"t{t}"
        assert main(["study", "--config", str(cfg_path), "--threads", t, "--out", str(out)]) == 0
        outs[t] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert outs["1"] == outs[threads]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "extremo.cli", "study", "--config",
                           str(write(tmp_path, {"scenario": "i", "alpha_4": 1})), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "alpha_4" in proc.stderr


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.json")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    cfg = parse_config(path)
    assert cfg.family is not None and cfg.scenario_config().replicates == cfg.replicates
