import csv
import json

import pytest
import yaml

from trialrank import pipeline
from trialrank.config import RunConfig, expand_sweep, from_dict, load_config
from trialrank.errors import ArtifactMismatchError, ValidationError

from conftest import FIXTURES


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != pipeline.TIMINGS}


@pytest.fixture
def cfg():
    return load_config(FIXTURES / "config.yaml")


@pytest.fixture
def fixture_run(cfg, tmp_path):
    out = tmp_path / "run"
    pipeline.run_pipeline(cfg, out)
    return out


class TestPipeline:
    def test_manifest_lists_stages_in_order(self, fixture_run):
        manifest = json.loads((fixture_run / "manifest.json").read_text())
        assert manifest["format"] == pipeline.MANIFEST_FORMAT
        assert [s["stage"] for s in manifest["stages"]] == list(pipeline.STAGES)
        for s in manifest["stages"]:
            for rel, sha in s["outputs"].items():
                assert len(sha) == 64 and (fixture_run / rel).is_file()
        assert manifest["stages"][0]["settings"]["seed"] == 7

    def test_timings_kept_apart(self, fixture_run):
        timings = json.loads((fixture_run / "timings.json").read_text())
        assert set(timings) == set(pipeline.STAGES)
        assert "seconds" not in (fixture_run / "manifest.json").read_text()

    def test_byte_identical_rerun(self, cfg, fixture_run, tmp_path):
        again = tmp_path / "again"
        pipeline.run_pipeline(cfg, again)
        assert tree_bytes(fixture_run) == tree_bytes(again)

    def test_stage_rerun_in_place_is_stable(self, cfg, fixture_run):
        before = tree_bytes(fixture_run)
        pipeline.run_stage("rank", cfg, fixture_run)
        pipeline.run_stage("evaluate", cfg, fixture_run)
        assert tree_bytes(fixture_run) == before

    def test_rerun_drops_downstream_entries(self, cfg, fixture_run):
        pipeline.run_stage("featurize", cfg, fixture_run)
        stages = [s["stage"] for s in json.loads((fixture_run / "manifest.json").read_text())["stages"]]
        assert stages == ["ingest", "featurize"]

    def test_vocabulary_mismatch_names_both_hashes(self, cfg, fixture_run):
        edited = cfg.override(**{"features.min_df": 2})
        pipeline.run_stage("featurize", edited, fixture_run)
        with pytest.raises(ArtifactMismatchError, match=r"vocabulary hash mismatch: .* has [0-9a-f]{64} "
                                                        r"but reduced.trc was built from [0-9a-f]{64}"):
            pipeline.run_stage("rank", cfg, fixture_run)

    def test_tampered_artifact_detected(self, cfg, fixture_run):
        split = fixture_run / "split.json"
        split.write_text(split.read_text() + "\n")
        with pytest.raises(ArtifactMismatchError, match="split.json was modified after stage split"):
            pipeline.run_stage("rank", cfg, fixture_run)

    def test_missing_upstream(self, cfg, tmp_path):
        with pytest.raises(ValidationError, match="run the upstream stages first"):
            pipeline.run_stage("split", cfg, tmp_path / "empty")

    def test_simrank_and_no_reduction(self, cfg, tmp_path):
        simple = cfg.override(**{"method.name": "simrank", "reduction.method": "none"})
        out = pipeline.run_pipeline(simple, tmp_path / "s")
        with open(out / "evaluation" / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["method"] == "simrank-full-cosine-mean"
        assert not (out / "model.trc").exists()

    def test_status_filter_empty_corpus(self, cfg, tmp_path):
        with pytest.raises(ValidationError, match="no records"):
            pipeline.run_stage("ingest", cfg.override(**{"ingest.status": "Withdrawn"}), tmp_path / "x")

    def test_sweep(self, cfg, tmp_path):
        runs = expand_sweep(cfg)
        dirs = pipeline.run_sweep(runs, tmp_path / "sweep")
        assert sorted(d.name for d in dirs) == ["matfac-lda3-k10", "matfac-lda3-k5", "simrank-lda3-cosine-mean"]
        with open(tmp_path / "sweep" / "sweep_summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3 and {r["run"] for r in rows} == {d.name for d in dirs}

    def test_parallel_sweep_matches_serial(self, cfg, tmp_path):
        runs = expand_sweep(cfg)
        pipeline.run_sweep(runs, tmp_path / "a", jobs=1)
        pipeline.run_sweep(runs, tmp_path / "b", jobs=2)
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


BASE = {"corpus": "c", "links": "l.csv"}


class TestConfig:
    def test_defaults(self):
        cfg = from_dict(BASE)
        assert cfg.features.min_df == 5 and cfg.method.matfac.reg == 0.001
        assert cfg.method.matfac.link_weight == 0.01 and cfg.method.matfac.max_iterations == 5000

    @pytest.mark.parametrize("raw, match", [
        ({**BASE, "colour": 1}, "top-level"),
        ({**BASE, "features": {"min_dF": 2}}, "min_dF"),
        ({**BASE, "method": {"matfac": {"rank": 3}}}, "rank"),
        ({"corpus": "c"}, "links"),
        ({**BASE, "reduction": {"method": "nmf"}}, "reduction.method"),
        ({**BASE, "sweep": {"colour": [1]}}, "colour"),
        ({**BASE, "sweep": {"matfac.k": []}}, "non-empty"),
    ])
    def test_rejects(self, raw, match):
        with pytest.raises(ValidationError, match=match):
            from_dict(raw)

    def test_paths_relative_to_config(self, tmp_path):
        (tmp_path / "run.yaml").write_text(yaml.safe_dump(BASE))
        cfg = load_config(tmp_path / "run.yaml")
        assert cfg.path("corpus") == tmp_path / "c"

    def test_json_config(self, tmp_path):
        (tmp_path / "run.json").write_text(json.dumps({**BASE, "seed": 4}))
        assert load_config(tmp_path / "run.json").seed == 4

    def test_unparseable(self, tmp_path):
        (tmp_path / "bad.yaml").write_text("corpus: [unclosed")
        with pytest.raises(ValidationError, match="cannot parse"):
            load_config(tmp_path / "bad.yaml")

    def test_override(self):
        cfg = from_dict(BASE).override(seed=3, **{"method.matfac.k": 7})
        assert cfg.seed == 3 and cfg.method.matfac.k == 7 and cfg.matfac_seed == 3
        with pytest.raises(ValidationError, match="unknown config key"):
            from_dict(BASE).override(**{"method.matfac.q": 1})

    def test_sweep_arithmetic(self):
        cfg = from_dict({**BASE, "sweep": {"methods": ["simrank", "matfac"], "matfac.k": [5, 10, 20],
                                           "simrank.metric": ["cosine", "euclidean"], "reduction.k": [2, 4]}})
        runs = expand_sweep(cfg)
        # (2 simrank + 3 matfac) x 2 shared values
        assert len(runs) == 10
        assert sum(r.method.name == "matfac" for r in runs) == 6
        assert len({r.output for r in runs}) == 10 and all(not r.sweep for r in runs)

    def test_sweep_defaults_to_configured_method(self):
        runs = expand_sweep(from_dict({**BASE, "sweep": {"features.min_df": [1, 2]}}))
        assert [r.features.min_df for r in runs] == [1, 2]
        assert runs[0].output != runs[1].output

    def test_settings_exclude_locations(self):
        a = from_dict({**BASE, "output": "x"}, base_dir="/a")
        b = from_dict({**BASE, "output": "y"}, base_dir="/b")
        assert a.settings() == b.settings() and isinstance(a, RunConfig)
