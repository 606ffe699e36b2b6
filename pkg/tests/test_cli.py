import subprocess
import sys

import pytest

from trialrank import __version__, cli

from conftest import FIXTURES

CONFIG = str(FIXTURES / "config.yaml")


class TestCli:
    def test_run_exit_zero(self, tmp_path, capsys):
        assert cli.main(["run", "--config", CONFIG, "--out", str(tmp_path / "r")]) == 0
        assert (tmp_path / "r" / "evaluation" / "summary.csv").is_file()
        assert "run: wrote" in capsys.readouterr().out

    def test_stage_by_stage_matches_run(self, tmp_path):
        for stage in ("ingest", "featurize", "reduce", "split", "rank", "evaluate"):
            assert cli.main([stage, "--config", CONFIG, "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["run", "--config", CONFIG, "--out", str(tmp_path / "b")]) == 0
        for name in ("manifest.json", "evaluation/summary.csv", "model.trc"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_override_changes_result(self, tmp_path):
        cli.main(["run", "--config", CONFIG, "--out", str(tmp_path / "a")])
        cli.main(["run", "--config", CONFIG, "--out", str(tmp_path / "b"), "--seed", "8"])
        assert (tmp_path / "a" / "model.trc").read_bytes() != (tmp_path / "b" / "model.trc").read_bytes()

    def test_status_filter(self, tmp_path, capsys):
        code = cli.main(["ingest", "--config", CONFIG, "--out", str(tmp_path / "a"), "--status", "Withdrawn"])
        assert code == 1 and "no records" in capsys.readouterr().err

    def test_sweep_three_directories(self, tmp_path):
        assert cli.main(["sweep", "--config", CONFIG, "--out", str(tmp_path / "s"), "--jobs", "2"]) == 0
        assert len([p for p in (tmp_path / "s").iterdir() if p.is_dir()]) == 3

    def test_bad_jobs(self, tmp_path):
        assert cli.main(["sweep", "--config", CONFIG, "--out", str(tmp_path / "s"), "--jobs", "0"]) == 1

    def test_vocabulary_mismatch_exit_code(self, tmp_path, capsys):
        out = str(tmp_path / "r")
        cli.main(["run", "--config", CONFIG, "--out", out])
        edited = tmp_path / "edited.yaml"
        edited.write_text((FIXTURES / "config.yaml").read_text().replace("min_df: 3", "min_df: 2")
                          .replace("corpus: corpus", f"corpus: {FIXTURES / 'corpus'}")
                          .replace("links: links.csv", f"links: {FIXTURES / 'links.csv'}"))
        assert cli.main(["featurize", "--config", str(edited), "--out", out]) == 0
        capsys.readouterr()
        assert cli.main(["rank", "--config", CONFIG, "--out", out]) == 1
        err = capsys.readouterr().err
        assert "vocabulary hash mismatch" in err and err.count("built from") == 1

    def test_missing_config(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(tmp_path / "nope.yaml")]) == 1
        assert "cannot read config" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["run", "--config", CONFIG, "--seed", "x"]])
    def test_usage_errors_exit_one(self, argv):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 1

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0 and __version__ in capsys.readouterr().out

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "trialrank.cli", "split", "--config", CONFIG,
                               "--out", str(tmp_path / "r")], capture_output=True, text=True)
        assert proc.returncode == 1 and "run the upstream stages first" in proc.stderr
