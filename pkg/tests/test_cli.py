import asyncio
import json
import signal
import subprocess
import sys
import time

import pytest
from click.testing import CliRunner

from plantpulse.orchestrator.cli import main


def write_config(tmp_path, extra=None):
    config = {
        "broker": {"bind": "127.0.0.1:18831"},
        "meter": {"bind": "127.0.0.1:15021"},
        "devices": {"periods": {"esp32": 0.5, "industrial": 0.5, "environment": 0.5}},
        "ingest": {"data_dir": str(tmp_path / "data"), "fsync": False},
        "api": {
            "bind": "127.0.0.1:18080",
            "users": [{"user": "admin", "password": "pw", "role": "admin"}],
            "password_iterations": 10,
        },
    }
    if extra:
        config.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


class TestCheckConfig:
    def test_ok(self, tmp_path):
        result = CliRunner().invoke(main, ["check-config", str(write_config(tmp_path))])
        assert result.exit_code == 0
        assert "config ok" in result.output

    def test_invalid_lists_problems(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"api": {"users": []}, "devices": {"qos": 9}}))
        result = CliRunner().invoke(main, ["check-config", str(path)])
        assert result.exit_code == 2
        assert "api.users" in result.output
        assert "qos" in result.output

    def test_missing_file(self, tmp_path):
        result = CliRunner().invoke(main, ["check-config", str(tmp_path / "no.json")])
        assert result.exit_code == 2


class TestSeedCommand:
    def test_seed_and_refuse_second(self, tmp_path):
        config = str(write_config(tmp_path))
        first = CliRunner().invoke(main, ["seed", "--config", config])
        assert first.exit_code == 0, first.output
        second = CliRunner().invoke(main, ["seed", "--config", config])
        assert second.exit_code == 2
        forced = CliRunner().invoke(main, ["seed", "--config", config, "--force"])
        assert forced.exit_code == 0

    def test_seed_with_fixture(self, tmp_path):
        config = str(write_config(tmp_path))
        result = CliRunner().invoke(
            main, ["seed", "--config", config, "--fixture", "fig7-8.csv"]
        )
        assert result.exit_code == 0, result.output
        assert "'esp32_energy': 8" in result.output
        assert "'industrial_energy': 9" in result.output


class TestRunCommand:
    def test_conflicting_flags(self, tmp_path):
        result = CliRunner().invoke(
            main,
            ["run", "--config", str(write_config(tmp_path)), "--all", "--only", "broker"],
        )
        assert result.exit_code == 2

    def test_unknown_component(self, tmp_path):
        result = CliRunner().invoke(
            main, ["run", "--config", str(write_config(tmp_path)), "--only", "ghost"]
        )
        assert result.exit_code == 2

    def test_sigterm_exits_zero_within_two_seconds(self, tmp_path):
        config = write_config(tmp_path)
        process = subprocess.Popen(
            [sys.executable, "-m", "plantpulse", "run",
             "--only", "broker,esp32", "--config", str(config)],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
        )
        try:
            deadline = time.monotonic() + 15
            import socket
            while time.monotonic() < deadline:
                try:
                    socket.create_connection(("127.0.0.1", 18831), timeout=0.2).close()
                    break
                except OSError:
                    time.sleep(0.1)
            else:
                pytest.fail("broker never came up")

            process.send_signal(signal.SIGTERM)
            t0 = time.monotonic()
            code = process.wait(timeout=10)
            elapsed = time.monotonic() - t0
            assert code == 0
            assert elapsed < 2.0
        finally:
            if process.poll() is None:
                process.kill()
