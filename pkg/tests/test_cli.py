"""Command-line interface: subcommands, flags, exit codes, output files."""

import pytest

from cablelift import cli, harness

FAST_CONFIG = """\
schema_version: 1
preset: hover-nominal
name: quick
scenario:
  duration_s: 1.0
"""

SWEEP_CONFIG = """\
schema_version: 1
preset: hover-nominal
name: grid
scenario:
  duration_s: 0.5
sweep:
  alphas: [0.2, 0.02]
  betas: [0.05]
"""

# hover-nominal starts inside this clearance ball, so the very first forced
# solve is infeasible and the run aborts
ABORT_CONFIG = """\
schema_version: 1
preset: hover-nominal
name: doomed
obstacle:
  center_m: [0.0, 0.0, 1.0]
  clearance_m: 0.5
"""


def write(tmp_path, text, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestPresets:
    def test_lists_every_scenario(self, capsys):
        assert cli.main(["presets"]) == 0
        out = capsys.readouterr().out
        for name in harness.preset_names():
            assert name in out
        for name in ("loose", "medium", "tight"):
            assert name in out


class TestRun:
    def test_config_file(self, tmp_path, capsys):
        config = write(tmp_path, FAST_CONFIG)
        out_dir = tmp_path / "out"
        assert cli.main(["run", "--config", config, "--out-dir", str(out_dir)]) == 0
        assert (out_dir / "quick.csv").exists()
        assert (out_dir / "quick_summary.txt").exists()
        assert "nmpc_executions" in capsys.readouterr().out

    def test_preset_flag(self, tmp_path, capsys):
        code = cli.main(
            ["run", "--preset", "hover-recovery", "--out-dir", str(tmp_path)]
        )
        assert code == 0
        assert (tmp_path / "hover-recovery.csv").exists()
        assert "[hover-recovery]" in capsys.readouterr().out

    def test_config_and_preset_conflict(self, tmp_path, capsys):
        config = write(tmp_path, FAST_CONFIG)
        code = cli.main(
            ["run", "--config", config, "--preset", "hover", "--out-dir", str(tmp_path)]
        )
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_preset(self, tmp_path, capsys):
        assert cli.main(["run", "--preset", "barrel-roll", "--out-dir", str(tmp_path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_config_key(self, tmp_path, capsys):
        config = write(tmp_path, "schema_version: 1\nwind: strong\n")
        assert cli.main(["run", "--config", config, "--out-dir", str(tmp_path)]) == 2

    def test_aborted_run_exits_one(self, tmp_path, capsys):
        config = write(tmp_path, ABORT_CONFIG)
        assert cli.main(["run", "--config", config, "--out-dir", str(tmp_path)]) == 1
        assert "run aborted" in capsys.readouterr().err

    def test_seed_override_changes_the_log(self, tmp_path, capsys):
        config = write(
            tmp_path,
            FAST_CONFIG
            + "disturbance:\n  eta: 1.0e-3\n  kind: uniform-bounded\n",
        )
        for seed, name in ((3, "a"), (3, "b"), (4, "c")):
            out_dir = tmp_path / name
            assert (
                cli.main(
                    ["run", "--config", config, "--out-dir", str(out_dir), "--seed", str(seed)]
                )
                == 0
            )
        same = (tmp_path / "a" / "quick.csv").read_bytes()
        again = (tmp_path / "b" / "quick.csv").read_bytes()
        other = (tmp_path / "c" / "quick.csv").read_bytes()
        assert same == again
        assert same != other

    def test_missing_subcommand_is_a_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2


class TestSweep:
    def test_grid_from_config(self, tmp_path, capsys):
        config = write(tmp_path, SWEEP_CONFIG)
        out_dir = tmp_path / "out"
        assert cli.main(["sweep", "--config", config, "--out-dir", str(out_dir)]) == 0
        table = (out_dir / "sweep.csv").read_text().splitlines()
        assert table[0].startswith("name,alpha,beta,nmpc_executions")
        assert len(table) == 3  # two alphas, one beta
        assert (out_dir / "grid_a0.2_b0.05.csv").exists()
        assert (out_dir / "grid_a0.02_b0.05.csv").exists()

    def test_default_grid_is_the_three_conditions(self, tmp_path, capsys):
        config = write(tmp_path, FAST_CONFIG)
        out_dir = tmp_path / "out"
        assert cli.main(["sweep", "--config", config, "--out-dir", str(out_dir)]) == 0
        table = (out_dir / "sweep.csv").read_text().splitlines()
        assert len(table) == 4
        names = [row.split(",")[0] for row in table[1:]]
        assert names == ["quick_loose", "quick_medium", "quick_tight"]
