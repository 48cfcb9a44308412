import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from quadcancel.cli import dumps_json, main
from quadcancel.spectroscopy import FringeDataset
from quadcancel.config import PRESETS, ConfigError, RunConfig, derive_rng


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, command, cfg, out="out", seed=None):
    argv = [command, "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / out)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    return main(argv)


def tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


# ---------------------------------------------------------------- config

def test_hz_converted_once():
    cfg = RunConfig({"omega0_hz": 50e3, "chain": {"q_hz": [1.0, 2.0]}, "T_s": 0.3})
    assert cfg.params["omega0_rad"] == 2 * math.pi * 50e3
    assert cfg.params["chain"]["q_rad"] == [2 * math.pi, 4 * math.pi]
    assert cfg.params["T_s"] == 0.3


def test_config_round_trip_is_lossless(tmp_path):
    raw = {"version": 1, "preset": "paper-3ion", "seed": 9, "chain": {"q_hz": [0.1, 0.2, 0.30000000000000004]}}
    cfg = RunConfig(raw)
    path = tmp_path / "c.json"
    path.write_text(cfg.dumps())
    again = RunConfig.load(path)
    assert again.to_dict() == raw
    assert again.params == cfg.params and again.seed == 9


def test_presets_load():
    for name in PRESETS:
        assert RunConfig.from_preset(name).params


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown preset"):
        RunConfig({"preset": "nope"})
    with pytest.raises(ConfigError, match="version"):
        RunConfig({"version": 7})
    with pytest.raises(ConfigError, match="seed"):
        RunConfig({"seed": -1})
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        RunConfig.load(bad)
    with pytest.raises(ConfigError, match="omega0_hz"):
        RunConfig({}).require("omega0_rad")


def test_derived_generators_are_independent_and_reproducible():
    a = derive_rng(5, "fringe/ramsey/1-2").random(4)
    assert np.array_equal(a, derive_rng(5, "fringe/ramsey/1-2").random(4))
    assert not np.array_equal(a, derive_rng(5, "fringe/ramsey/2-3").random(4))
    assert not np.array_equal(a, derive_rng(6, "fringe/ramsey/1-2").random(4))


def test_json_formatting():
    text = dumps_json({"x": 0.1, "n": 3, "ok": True, "none": None, "nan": float("nan"), "arr": np.array([1.5])})
    assert '"x": 0.10000000000000001' in text
    assert '"nan": null' in text and '"ok": true' in text
    assert json.loads(text)["arr"] == [1.5]


# ---------------------------------------------------------------- commands

def test_scan_residual_zero_p_row(tmp_path):
    cfg = {"omega0_hz": 50e3, "t_max_s": 2.0, "n_t": 41, "m_values": [2.5], "p_values": [0.0]}
    assert run(tmp_path, "scan-residual", cfg) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "residual_frequencies.csv")))
    assert len(rows) == 1 and abs(float(rows[0]["f_r_hz"])) < 1e-14
    header = (tmp_path / "out" / "scan.csv").read_text().splitlines()[0]
    assert header == "p_delta,p_q,m,T_s,phase_diff_rad,pop_loss,f_r_hz"


def test_scan_residual_tables_preset(tmp_path):
    assert run(tmp_path, "scan-residual", {"preset": "paper-residual-tables"}) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    tables = summary["residual_tables_mhz"]
    assert tables["experiment"]["2.5"]["ion1"] == pytest.approx(0.63, rel=0.15)
    assert tables["typical"]["0.5"]["ion2"] == pytest.approx(-2.4, rel=0.15)
    for m in ("2.5", "1.5", "0.5"):
        assert summary["cubic_fit"][m]["log_log_slope"] == pytest.approx(3.0, abs=0.1)


def test_missing_field_exit_code(tmp_path, capsys):
    assert run(tmp_path, "scan-residual", {"t_max_s": 2.0, "n_t": 41, "p_values": [1e-3]}) == 2
    assert "omega0_hz" in capsys.readouterr().err
    assert run(tmp_path, "sequence", {"omega0_hz": 50e3}) == 2
    assert "T_s" in capsys.readouterr().err
    assert run(tmp_path, "fringe", {"mode": "simulate"}) == 2
    assert "missing config field: chain" in capsys.readouterr().err


def test_invalid_grid_and_omega(tmp_path, capsys):
    assert run(tmp_path, "scan-residual", {"omega0_hz": 50e3, "t_max_s": 2.0, "n_t": 3, "p_values": [1e-3]}) == 2
    assert "n_t" in capsys.readouterr().err
    assert run(tmp_path, "sequence", {"T_s": 0.3, "omega0_hz": -1}) == 2
    assert "omega0_hz" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    # too few samples to fit a fringe
    data = FringeDataset(np.linspace(0, 0.1, 5), np.zeros(5), np.full(5, 100))
    (tmp_path / "short.csv").write_text(data.to_csv())
    assert run(tmp_path, "fringe", {"mode": "fit", "input": str(tmp_path / "short.csv")}) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_sequence_preset_outputs(tmp_path):
    assert run(tmp_path, "sequence", {"preset": "sr88-echo"}) == 0
    out = tmp_path / "out"
    assert (out / "quad_cancel_ideal.csv").exists() and (out / "quad_cancel_finite.csv").exists()
    report = json.loads((out / "echo.json").read_text())
    check = report["modes"]["magnetic_only"]["tau_check"]
    assert check["within_1e-3"] and check["value"] == pytest.approx(0.8, abs=1e-3)
    for mode in report["modes"].values():
        assert abs(mode["ledger_residual_rad"]) <= 1e-9 * max(1.0, abs(mode["unechoed_phase_rad"]) / 1e3)


def test_echo_and_chain_commands(tmp_path):
    assert run(tmp_path, "echo", {"preset": "sr88-echo"}, out="e") == 0
    assert run(tmp_path, "chain", {"preset": "paper-7ion"}, out="c") == 0
    rows = list(csv.DictReader(open(tmp_path / "c" / "chain.csv")))
    assert list(rows[0]) == ["ion_index", "position_m", "q_hz", "zeeman_hz"]
    z = np.array([float(r["position_m"]) for r in rows])
    assert np.allclose(z, -z[::-1], atol=1e-18)


def test_unresolvable_echo_is_config_error(tmp_path, capsys):
    cfg = {"T_s": 1.0, "echo": {"chi_g_hz_per_gauss": 1.0, "chi_e_hz_per_gauss": 100.0, "m_g": 0.5, "m_e": 2.5,
                                "modes": ["magnetic_only"]}}
    assert run(tmp_path, "echo", cfg) == 2
    assert "echo" in capsys.readouterr().err


def test_fringe_round_trip_and_fit_only(tmp_path):
    assert run(tmp_path, "fringe", {"preset": "paper-3ion"}, seed=3) == 0
    out = tmp_path / "out"
    fits = json.loads((out / "fits.json").read_text())
    pairs = fits["results"]["ramsey"]["pairs"]
    assert set(pairs) == {"1-2", "1-3", "2-3"}
    for entry in pairs.values():
        assert entry["truth_within_errors"]["2_sigma"]
    dat = (out / "ramsey" / "fringe_1-2.dat").read_text().splitlines()
    assert len(dat[1].split()) == 2
    cfg = {"mode": "fit", "inputs": {"pair12": str(out / "ramsey" / "fringe_1-2.csv")}}
    assert run(tmp_path, "fringe", cfg, out="fit") == 0
    refit = json.loads((tmp_path / "fit" / "fits.json").read_text())["fits"]["pair12"]
    assert set(refit) - {"truth_within_errors"} == set(pairs["1-2"]) - {"truth_within_errors"}
    assert refit["estimates"] == pairs["1-2"]["estimates"]


def test_seven_ion_preset_emits_21_fits(tmp_path):
    assert run(tmp_path, "fringe", {"preset": "paper-7ion"}) == 0
    fits = json.loads((tmp_path / "out" / "fits.json").read_text())
    assert len(fits["results"]["ramsey"]["pairs"]) == 21
    ext = fits["results"]["ramsey"]["extraction"]
    assert ext["zeeman_gradient_hz_per_um"] == pytest.approx(16.4, rel=0.02)


@pytest.mark.parametrize("command,preset", [
    ("scan-residual", "paper-residual-tables"),
    ("fringe", "paper-3ion"),
    ("sequence", "sr88-echo"),
    ("echo", "sr88-echo"),
    ("chain", "paper-7ion"),
])
def test_byte_identical_reruns(tmp_path, command, preset):
    assert run(tmp_path, command, {"preset": preset}, out="a", seed=11) == 0
    assert run(tmp_path, command, {"preset": preset}, out="b", seed=11) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_seed_changes_fringe_output(tmp_path):
    run(tmp_path, "fringe", {"preset": "paper-3ion"}, out="a", seed=1)
    run(tmp_path, "fringe", {"preset": "paper-3ion"}, out="b", seed=2)
    assert tree(tmp_path / "a") != tree(tmp_path / "b")


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path, {"preset": "sr88-echo"})
    proc = subprocess.run([sys.executable, "-m", "quadcancel.cli", "echo", "--config", cfg, "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "echo.json").exists()
