from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from globalyaw.cli import REQUIRED, ConfigError, build_parser, load_config, main, schema_keys

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def help_text(command: str) -> str:
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    return sub.format_help()


def read_kv(path: Path) -> dict[str, str]:
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


class TestHelp:
    @pytest.mark.parametrize("command", ["plan", "bench", "track"])
    def test_every_key_documented(self, command):
        text = help_text(command)
        for key, default in schema_keys(command).items():
            shown = "REQUIRED" if default is REQUIRED else json.dumps(default)
            assert f"{key} = {shown}" in text

    def test_top_level_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "plan" in capsys.readouterr().out


class TestConfig:
    def test_defaults_and_override(self):
        cfg = load_config("bench", None, ["--limits.v_psi_max=1.5"])
        assert cfg["limits"]["v_psi_max"] == 1.5
        assert cfg["bench"]["n"] == 100

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="limits.bogus"):
            load_config("bench", None, ["--limits.bogus=1"])

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("nonsense: {a: 1}\n")
        with pytest.raises(ConfigError, match="nonsense"):
            load_config("bench", str(path), [])

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="target.kind"):
            load_config("track", None, [])


class TestPlan:
    def test_hover_rotation(self, tmp_path, capsys):
        out = tmp_path / "plan.csv"
        code = main(["plan", "--config", str(CONFIGS / "plan_hover_rotation.yaml"), "--out", str(out)])
        assert code == 0
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        assert out.read_text().splitlines()[0] == "t,px,py,pz,yaw,omega,alpha"
        assert np.all(np.diff(data[:, 0]) > 0)
        summary = read_kv(tmp_path / "plan_summary.txt")
        assert summary["converged"] == "1"
        assert "converged: True" in capsys.readouterr().out

    def test_negative_weight(self, tmp_path, capsys):
        code = main(
            ["plan", "--config", str(CONFIGS / "plan_hover_rotation.yaml"), "--out", str(tmp_path / "p.csv"), "--weights.fov=-1"]
        )
        assert code == 1
        assert "weights.fov" in capsys.readouterr().err

    def test_fov_override_disables_cost(self, tmp_path):
        out = tmp_path / "p.csv"
        code = main(["plan", "--config", str(CONFIGS / "plan_look_behind.yaml"), "--out", str(out), "--weights.fov=0"])
        assert code in (0, 2)
        assert float(read_kv(tmp_path / "p_summary.txt")["cost.fov"]) == 0.0

    def test_space_separated_override(self, tmp_path):
        out = tmp_path / "p.csv"
        assert main(["plan", "--config", str(CONFIGS / "plan_hover_rotation.yaml"), "--out", str(out), "--output.rate", "10"]) == 0
        assert len(out.read_text().splitlines()) == 1 + 11

    def test_bad_keyframe(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text("problem:\n  keyframes:\n    - {position: [0, 0], yaw_deg: 0}\n    - {position: [1, 0, 0], yaw_deg: 0}\n")
        assert main(["plan", "--config", str(path), "--out", str(tmp_path / "p.csv")]) == 1
        assert "keyframes" in capsys.readouterr().err

    def test_non_converged_exit(self, tmp_path):
        out = tmp_path / "p.csv"
        code = main(["plan", "--config", str(CONFIGS / "plan_look_behind.yaml"), "--out", str(out), "--solver.max_iters=1"])
        assert code == 2
        assert read_kv(tmp_path / "p_summary.txt")["converged"] == "0"


class TestBench:
    def test_deterministic(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            assert main(["bench", "-n", "10", "--seed", "7", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_single_method(self, tmp_path, capsys):
        assert main(["bench", "-n", "3", "--methods", "virtual", "--out", str(tmp_path / "r.csv")]) == 0
        table = capsys.readouterr().out.splitlines()
        assert len(table) == 2 and table[1].startswith("virtual")

    def test_unknown_method(self, tmp_path):
        assert main(["bench", "-n", "3", "--methods", "spline", "--out", str(tmp_path / "r.csv")]) == 1

    def test_unwritable(self, tmp_path):
        assert main(["bench", "-n", "1", "--out", str(tmp_path / "missing" / "r.csv")]) == 1

    def test_config_file(self, tmp_path):
        assert main(["bench", "--config", str(CONFIGS / "bench.yaml"), "-n", "2", "--out", str(tmp_path / "r.csv")]) == 0


class TestTrack:
    def test_static(self, tmp_path, capsys):
        code = main(["track", "--config", str(CONFIGS / "track_static.yaml"), "--out", str(tmp_path), "--tracking.duration=3"])
        assert code == 0
        metrics = read_kv(tmp_path / "track_metrics.txt")
        assert float(metrics["out_of_fov_pct"]) == 0.0
        assert "0.00" in capsys.readouterr().out
        assert len((tmp_path / "track_log.csv").read_text().splitlines()) == 1 + 300

    def test_missing_target(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text("tracking:\n  duration: 1.0\n")
        assert main(["track", "--config", str(path), "--out", str(tmp_path)]) == 1
        assert "target.kind" in capsys.readouterr().err

    def test_bad_kind(self, tmp_path, capsys):
        assert main(["track", "--target.kind=spiral", "--out", str(tmp_path)]) == 1
        assert "target" in capsys.readouterr().err
