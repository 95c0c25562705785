import csv
import json

import pytest
import tomli

from ltev2x import cli
from ltev2x.config import ConfigError, RunConfig, default_config_toml, parse_config, prbs_for_bandwidth

SMALL = """
[scenario]
density_per_km2 = 150.0

[run]
horizon_s = 0.2
warmup_s = 0.1
"""


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_file_gives_defaults(tmp_path):
    assert parse_config(_write(tmp_path, "")) == RunConfig()


def test_range_error_has_line(tmp_path):
    with pytest.raises(ConfigError) as e:
        parse_config(_write(tmp_path, "[scenario]\n\ndensity_per_km2 = -1.0\n"))
    assert e.value.code == ConfigError.RANGE
    assert e.value.line == 3


def test_bandwidths():
    assert [prbs_for_bandwidth(b) for b in (10, 20, 40, 100)] == [50, 100, 200, 500]
    with pytest.raises(ConfigError) as e:
        prbs_for_bandwidth(15)
    assert e.value.code == ConfigError.RANGE
    assert prbs_for_bandwidth(15, allow_custom=True) == 72
    cfg = RunConfig().replace(run={"bandwidth_dl_mhz": 15.0, "allow_custom_bw": True})
    assert cfg.prbs_dl == 72 and cfg.prbs_ul == 50
    with pytest.raises(ConfigError):
        RunConfig().replace(run={"bandwidth_dl_mhz": 15.0})


@pytest.mark.parametrize("text, code", [
    ("[scenario]\ndensity = 3.0\n", ConfigError.UNKNOWN_KEY),
    ("[nonsense]\n", ConfigError.UNKNOWN_KEY),
    ("[scenario\n", ConfigError.SYNTAX),
    ("[run]\nhorizon_s = \"long\"\n", ConfigError.TYPE),
    ("[mac]\ndl_rr_quantum = \"byte\"\n", ConfigError.RANGE),
])
def test_config_errors(tmp_path, text, code):
    with pytest.raises(ConfigError) as e:
        parse_config(_write(tmp_path, text))
    assert e.value.code == code


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError) as e:
        parse_config(tmp_path / "nope.toml")
    assert e.value.code == ConfigError.MISSING_FILE


def test_default_config_round_trip(tmp_path):
    text = default_config_toml()
    tomli.loads(text)
    assert parse_config(_write(tmp_path, text)) == RunConfig()


def test_parse_seeds():
    assert cli.parse_seeds("1..5") == [1, 2, 3, 4, 5]
    assert cli.parse_seeds("1..3,9,2") == [1, 2, 3, 9]
    for bad in ("", " , ", "a", "5..1"):
        with pytest.raises(ConfigError):
            cli.parse_seeds(bad)


def test_sweep_points():
    pts = cli.sweep_points("bandwidth", ["10", "20"], ["unicast", "multicast"])
    assert [p.key for p in pts] == ["bandwidth=10/unicast", "bandwidth=10/multicast",
                                    "bandwidth=20/unicast", "bandwidth=20/multicast"]
    assert cli.sweep_points("mode", ["unicast"], ["multicast"])[0].overrides == {"downlink_mode": "unicast"}
    with pytest.raises(ConfigError):
        cli.sweep_points("mcs", ["0.877"], ["unicast"])
    with pytest.raises(ConfigError):
        cli.sweep_points("power", ["1"], ["unicast"])


def test_run_writes_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--seed", "2", "--out", str(out), "--dump-scenario"]) == 0
    for name in ("records.csv", "summary.json", "cdf.csv", "scenario.csv"):
        assert (out / name).is_file()
    data = json.loads((out / "summary.json").read_text())
    assert data["seed"] == 2
    assert data["config"]["scenario"]["density_per_km2"] == 150.0
    assert "success_rate=" in capsys.readouterr().out


def test_output_root_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "envroot"))
    assert cli.main(["run", "--config", str(_write(tmp_path, SMALL))]) == 0
    assert (tmp_path / "envroot" / "records.csv").is_file()


def test_sweep_rows(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "sw"
    rc = cli.main(["sweep", "--config", str(cfg), "--axis", "bandwidth=10,20", "--modes", "unicast,multicast",
                   "--seeds", "1..2", "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader(open(out / "sweep_summary.csv")))
    assert len(rows) == 2 * 2 * 2
    assert rows[0]["point"] == "bandwidth=10/unicast" and rows[0]["seed"] == "1"
    assert (out / "bandwidth-10_unicast" / "seed_1" / "records.csv").is_file()


def test_sweep_config_errors(tmp_path):
    cfg = str(_write(tmp_path, SMALL))
    assert cli.main(["sweep", "--config", cfg, "--axis", "bandwidth=10", "--seeds", ",", "--out",
                     str(tmp_path)]) == 2
    assert cli.main(["sweep", "--config", cfg, "--axis", "bandwidth=15", "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.toml")]) == 2


def test_sweep_partial_failure(tmp_path, monkeypatch):
    real = cli.execute

    def flaky(cfg, seed, out, dump_scenario=False):
        if seed == 2:
            raise RuntimeError("boom")
        return real(cfg, seed, out, dump_scenario)

    monkeypatch.setattr(cli, "execute", flaky)
    out = tmp_path / "sw"
    rc = cli.main(["sweep", "--config", str(_write(tmp_path, SMALL)), "--axis", "mode=multicast",
                   "--seeds", "1,2", "--out", str(out)])
    assert rc == 3
    rows = list(csv.DictReader(open(out / "sweep_summary.csv")))
    assert [r["seed"] for r in rows] == ["1", "2"]
    assert rows[0]["success_rate"] != "" and rows[1]["success_rate"] == ""


def test_print_default_config(capsys):
    assert cli.main(["--print-default-config"]) == 0
    assert tomli.loads(capsys.readouterr().out)["run"]["downlink_mode"] == "multicast"
