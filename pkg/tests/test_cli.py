"""Config ingestion, command execution, and output-file contracts."""

import json

import numpy as np
import pytest
from scipy import stats

from nomalink.channel import ChannelParams, generate_fading
from nomalink.cli import (
    SWEEP_COLUMNS,
    TIMESERIES_COLUMNS,
    config_to_dict,
    execute,
    load_config,
    main,
)
from nomalink.scenario import ScenarioConfig


SHORT = {
    "timing": {
        "stationary_duration": 0.05,
        "travel_duration": 0.06,
        "total_duration": 0.11,
    }
}


class TestLoadConfig:
    def test_empty_file_gives_testbed_defaults(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        cfg = load_config(path)
        assert cfg.power_coefficients == (0.761, 0.191, 0.048)
        assert cfg.frame.carrier_frequency == 2.34e9
        assert cfg.frame.bandwidth == 8.0e5
        assert cfg.frame.sample_rate == 5.0e5
        assert cfg.speed == 0.876
        assert cfg.stationary_duration == 2.165
        assert cfg.total_duration == 5.74
        assert cfg.channel.rician_k == 10.92
        assert [u.start_distance for u in cfg.users] == [4.27, 4.02, 3.90]
        assert [u.end_distance for u in cfg.users] == [1.25, 1.12, 0.57]

    def test_roundtrip_of_defaults(self, tmp_path):
        path = tmp_path / "defaults.json"
        path.write_text(json.dumps(config_to_dict(ScenarioConfig())))
        assert load_config(path) == ScenarioConfig()

    def test_bad_coefficient_sum_is_diagnosed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"power": {"coefficients": [0.7, 0.15, 0.05]}}))
        with pytest.raises(ValueError, match="sum to 1"):
            load_config(path)

    def test_negative_distance_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"users": [[4.0, 1.0], [-3.0, 0.5], [2.0, 0.4]]}))
        with pytest.raises(ValueError, match="positive"):
            load_config(path)

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"bandwith": 1e6}))
        with pytest.raises(ValueError, match="bandwith"):
            load_config(path)

    def test_partial_override(self, tmp_path):
        path = tmp_path / "partial.json"
        path.write_text(json.dumps({"seed": 77, "channel": {"cfo_hz": 250.0}}))
        cfg = load_config(path)
        assert cfg.seed == 77
        assert cfg.channel.cfo_hz == 250.0
        assert cfg.channel.rician_k == 10.92


class TestRunScenarioCommand:
    def test_writes_timeseries_with_expected_rows(self, tmp_path):
        cfg = load_config(self._cfg_file(tmp_path))
        manifest = execute("run-scenario", cfg, tmp_path / "out")
        data = (tmp_path / "out" / "timeseries.csv").read_text().splitlines()
        assert data[0] == ",".join(TIMESERIES_COLUMNS)
        frames = int(0.11 / cfg.frame.frame_duration)
        assert len(data) - 1 == frames * 5 * 3
        assert manifest.outputs == (str(tmp_path / "out" / "timeseries.csv"),)
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_byte_identical_reruns(self, tmp_path):
        cfg = load_config(self._cfg_file(tmp_path))
        execute("run-scenario", cfg, tmp_path / "a")
        execute("run-scenario", cfg, tmp_path / "b")
        assert (tmp_path / "a" / "timeseries.csv").read_bytes() == (
            tmp_path / "b" / "timeseries.csv"
        ).read_bytes()
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert ma["config_digest"] == mb["config_digest"]

    def test_records_format(self, tmp_path):
        cfg = load_config(self._cfg_file(tmp_path))
        execute("run-scenario", cfg, tmp_path / "out", fmt="records")
        lines = (tmp_path / "out" / "timeseries.jsonl").read_text().splitlines()
        record = json.loads(lines[0])
        assert set(record) == set(TIMESERIES_COLUMNS)
        assert isinstance(record["detected"], bool)

    @staticmethod
    def _cfg_file(tmp_path):
        path = tmp_path / "short.json"
        path.write_text(json.dumps(SHORT))
        return path


class TestSweepCommand:
    def test_sorted_output_and_schema(self, tmp_path):
        cfg = ScenarioConfig()
        execute(
            "sweep-ber",
            cfg,
            tmp_path / "out",
            snr_grid=[24.0, 12.0],
            min_bits=100_000,
        )
        lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
        assert lines[0] == ",".join(SWEEP_COLUMNS)
        rows = [line.split(",") for line in lines[1:]]
        keys = [(float(r[0]), int(r[1])) for r in rows]
        assert keys == sorted(keys)
        assert len(rows) == 2 * 3

    def test_requires_grid(self, tmp_path):
        with pytest.raises(ValueError, match="snr-grid"):
            execute("sweep-ber", ScenarioConfig(), tmp_path / "out")


class TestEstimateKCommand:
    def test_recovers_k_from_npy(self, tmp_path):
        params = ChannelParams(rician_k=10.92, doppler_hz=0.4)
        env = np.abs(generate_fading(params, 300_000, 1.0, seed=17))
        source = tmp_path / "envelopes.npy"
        np.save(source, env)
        execute("estimate-k", ScenarioConfig(), tmp_path / "out", input_path=source)
        result = json.loads((tmp_path / "out" / "k_estimate.json").read_text())
        assert 10.4 <= result["k_factor"] <= 11.5
        assert result["samples"] == 300_000

    def test_full_scale_envelope_file(self, tmp_path):
        # 6.2 million envelopes, the measurement campaign's sample count;
        # drawn from an independent Rician generator
        k = 10.92
        nu = np.sqrt(k / (k + 1.0))
        sigma = np.sqrt(1.0 / (2.0 * (k + 1.0)))
        env = stats.rice.rvs(
            nu / sigma,
            scale=sigma,
            size=6_200_000,
            random_state=np.random.default_rng(40),
        )
        source = tmp_path / "envelopes.npy"
        np.save(source, env)
        execute("estimate-k", ScenarioConfig(), tmp_path / "out", input_path=source)
        result = json.loads((tmp_path / "out" / "k_estimate.json").read_text())
        assert 10.4 <= result["k_factor"] <= 11.5
        assert result["samples"] == 6_200_000

    def test_reads_plain_text(self, tmp_path):
        params = ChannelParams(rician_k=10.92, doppler_hz=0.4)
        env = np.abs(generate_fading(params, 20_000, 1.0, seed=23))
        source = tmp_path / "envelopes.txt"
        np.savetxt(source, env)
        execute("estimate-k", ScenarioConfig(), tmp_path / "out", input_path=source)
        result = json.loads((tmp_path / "out" / "k_estimate.json").read_text())
        assert 9.0 < result["k_factor"] < 13.0

    def test_requires_input(self, tmp_path):
        with pytest.raises(ValueError, match="input"):
            execute("estimate-k", ScenarioConfig(), tmp_path / "out")


class TestMainEntry:
    def test_selftest_exits_zero(self, tmp_path, capsys):
        assert main(["selftest", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_run_scenario_cli(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(SHORT))
        code = main(
            [
                "run-scenario",
                "--config",
                str(cfg_path),
                "--seed",
                "3",
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert code == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert manifest["command"] == "run-scenario"

    def test_invalid_config_exits_nonzero(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = main(["run-scenario", "--config", str(bad), "--out", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err
