"""Staged batch pipeline with a hash-chained run manifest.

Stages run in the order ingest, featurize, reduce, split, rank, evaluate.
Each stage checks that its upstream artifacts still carry the hashes the
manifest recorded for them, writes its outputs atomically, then records its
own inputs, outputs and settings. Wall-clock times go to ``timings.json`` so
that ``manifest.json`` is byte-identical across repeated runs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Callable, Sequence

from . import __version__, container, lda, matfac, pca, simrank
from . import evaluate as ev
from .config import RunConfig
from .container import atomic_write_text, canonical_json, sha256_bytes, sha256_file
from .errors import ArtifactMismatchError, ValidationError
from .ranking import RankedList
from .records import load_corpus, load_links, load_snapshot, save_snapshot
from .text import FeatureMatrix, Tokenizer, Vocabulary, build_vocabulary, vectorize

log = logging.getLogger(__name__)

STAGES = ("ingest", "featurize", "reduce", "split", "rank", "evaluate")
MANIFEST = "manifest.json"
TIMINGS = "timings.json"
MANIFEST_FORMAT = "trialrank-run-manifest"
MANIFEST_VERSION = 1

CORPUS = "corpus.zip"
VOCAB = "vocabulary.txt"
FEATURES = "features.trc"
REDUCED = "reduced.trc"
REDUCTION_MODEL = "reduction_model.trc"
SPLIT = "split.json"
RANKINGS = "rankings"
EVALUATION = "evaluation"
MODEL = "model.trc"
TRACE = "trace.csv"

_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


# ---------------------------------------------------------------------------
# Manifest


def _input_digest(path: Path) -> str:
    """File hash, or for a directory the hash of its sorted (name, file hash) list."""
    if path.is_dir():
        parts = [f"{p.relative_to(path).as_posix()}\t{sha256_file(p)}"
                 for p in sorted(path.rglob("*")) if p.is_file()]
        return sha256_bytes("\n".join(parts).encode())
    if path.is_file():
        return sha256_file(path)
    raise ValidationError(f"input {path} does not exist")


class Run:
    """One run directory and its manifest."""

    def __init__(self, cfg: RunConfig, out_dir: str | Path):
        self.cfg = cfg
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = self._read_manifest()

    def path(self, rel: str) -> Path:
        return self.dir / rel

    def _read_manifest(self) -> dict:
        p = self.path(MANIFEST)
        if not p.exists():
            return {"format": MANIFEST_FORMAT, "format_version": MANIFEST_VERSION, "stages": []}
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read manifest {p}: {exc}") from exc
        if doc.get("format") != MANIFEST_FORMAT or doc.get("format_version") != MANIFEST_VERSION:
            raise ValidationError(f"{p}: not a trialrank run manifest")
        return doc

    def stage(self, name: str) -> dict | None:
        for entry in self.manifest["stages"]:
            if entry["stage"] == name:
                return entry
        return None

    def producer(self, rel: str) -> tuple[str, str]:
        for entry in self.manifest["stages"]:
            if rel in entry["outputs"]:
                return entry["stage"], entry["outputs"][rel]
        raise ValidationError(f"{self.dir}: no stage has produced {rel}; run the upstream stages first")

    def verify(self, rels: Sequence[str]) -> dict[str, str]:
        """Check upstream artifacts against the manifest; return their hashes."""
        out = {}
        for rel in rels:
            stage, recorded = self.producer(rel)
            p = self.path(rel)
            if not p.is_file():
                raise ArtifactMismatchError(f"{p} is recorded by stage {stage} but missing on disk")
            actual = sha256_file(p)
            if actual != recorded:
                raise ArtifactMismatchError(
                    f"{rel} was modified after stage {stage} wrote it "
                    f"(manifest sha256 {recorded}, file sha256 {actual})")
            out[rel] = actual
        return out

    def outputs_under(self, prefix: str) -> list[str]:
        stage = next((e for e in self.manifest["stages"] if any(k.startswith(prefix + "/") for k in e["outputs"])),
                     None)
        if stage is None:
            raise ValidationError(f"{self.dir}: no stage has produced {prefix}/; run the upstream stages first")
        return sorted(k for k in stage["outputs"] if k.startswith(prefix + "/"))

    def record(self, name: str, inputs: dict, outputs: Sequence[str], settings: dict, seconds: float) -> None:
        idx = STAGES.index(name)
        # a rerun invalidates everything downstream of it
        kept = [e for e in self.manifest["stages"] if STAGES.index(e["stage"]) < idx]
        entry = {
            "stage": name,
            "inputs": inputs,
            "outputs": {rel: sha256_file(self.path(rel)) for rel in sorted(outputs)},
            "settings": settings,
        }
        self.manifest["stages"] = kept + [entry]
        self.manifest["package_version"] = __version__
        atomic_write_text(self.path(MANIFEST), json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        timings = {}
        tp = self.path(TIMINGS)
        if tp.exists():
            try:
                timings = json.loads(tp.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                timings = {}
        timings = {k: v for k, v in timings.items() if k in STAGES and STAGES.index(k) < idx}
        timings[name] = round(seconds, 6)
        atomic_write_text(tp, json.dumps(timings, indent=2, sort_keys=True) + "\n")


def _replace_dir(tmp: Path, final: Path) -> None:
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def _staging_dir(run: Run, name: str) -> Path:
    return Path(tempfile.mkdtemp(prefix=f".{name}.", dir=run.dir))


# ---------------------------------------------------------------------------
# Stages


def stage_ingest(run: Run) -> tuple[dict, list[str], dict]:
    cfg = run.cfg
    src = cfg.path("corpus")
    corpus = load_corpus(src, markup=cfg.ingest.markup, status=cfg.ingest.status,
                         snapshot_date=cfg.ingest.snapshot_date, source_note=cfg.corpus)
    if len(corpus) == 0:
        raise ValidationError(f"corpus {src} has no records after filtering")
    save_snapshot(corpus, run.path(CORPUS))
    log.info("ingest: %d records", len(corpus))
    inputs = {"corpus": {"path": cfg.corpus, "sha256": _input_digest(src)}}
    return inputs, [CORPUS], {**asdict(cfg.ingest), "records": len(corpus), "records_sha256": corpus.digest()}


def stage_featurize(run: Run) -> tuple[dict, list[str], dict]:
    cfg = run.cfg.features
    inputs = run.verify([CORPUS])
    corpus = load_snapshot(run.path(CORPUS))
    tokenizer = Tokenizer(stopwords=cfg.stopwords)
    docs = list(corpus)
    vocab = build_vocabulary(docs, min_df=cfg.min_df, tokenizer=tokenizer)
    if len(vocab) == 0:
        raise ValidationError(f"no term reaches min_df={cfg.min_df}")
    features = vectorize(docs, vocab, cfg.weighting, smooth_idf=cfg.smooth_idf, normalize=cfg.normalize)
    vocab.save(run.path(VOCAB))
    features.save(run.path(FEATURES))
    log.info("featurize: %d documents x %d terms", *features.shape)
    return inputs, [VOCAB, FEATURES], {**asdict(cfg), "vocab_hash": vocab.digest(), "terms": len(vocab)}


def stage_reduce(run: Run) -> tuple[dict, list[str], dict]:
    cfg = run.cfg.reduction
    seed = run.cfg.reduction_seed
    inputs = run.verify([CORPUS, VOCAB, FEATURES])
    features = FeatureMatrix.load(run.path(FEATURES))
    settings = {**asdict(cfg), "seed": seed}
    if cfg.method == "none":
        reduced = replace(features, meta={**features.meta, "reduction": "none"})
        container.save(run.path(REDUCTION_MODEL), {"kind": "no_reduction"}, {})
    elif cfg.method == "pca":
        model = pca.fit_pca(features, cfg.k, seed=seed, solver=cfg.solver)
        reduced = pca.transform_pca(model, features)
        model.save(run.path(REDUCTION_MODEL), {"vocab_hash": features.vocab_hash})
    else:
        corpus = load_snapshot(run.path(CORPUS))
        vocab = Vocabulary.load(run.path(VOCAB))
        counts = vectorize(list(corpus), vocab, "frequency")
        model = lda.fit_lda(counts, cfg.k, alpha=cfg.alpha, beta=cfg.beta, sweeps=cfg.sweeps, seed=seed)
        reduced = lda.training_topics(model, counts)
        model.save(run.path(REDUCTION_MODEL), {"vocab_hash": vocab.digest()})
        settings["alpha"] = model.alpha
    reduced.save(run.path(REDUCED))
    log.info("reduce: %s -> %d columns", cfg.method, reduced.shape[1])
    return inputs, [REDUCED, REDUCTION_MODEL], settings


def stage_split(run: Run) -> tuple[dict, list[str], dict]:
    cfg = run.cfg
    inputs = run.verify([CORPUS])
    corpus = load_snapshot(run.path(CORPUS))
    src = cfg.path("links")
    links = load_links(src, corpus)
    split = ev.make_split(links, corpus, cfg.split.min_train, cfg.split.train_fraction)
    if not split.reviews:
        raise ValidationError(f"no review in {src} has more than {cfg.split.min_train} links")
    for rid in split.review_ids:
        if not _SAFE_ID.match(rid):
            raise ValidationError(f"review id {rid!r} cannot be used as a file name")
    split.save(run.path(SPLIT))
    inputs["links"] = {"path": cfg.links, "sha256": _input_digest(src)}
    settings = {**asdict(cfg.split), "reviews": len(split.reviews), "excluded_reviews": list(split.excluded_reviews)}
    return inputs, [SPLIT], settings


def _check_vocabulary(run: Run, reduced: FeatureMatrix) -> str:
    vocab_hash = Vocabulary.load(run.path(VOCAB)).digest()
    if reduced.vocab_hash != vocab_hash:
        raise ArtifactMismatchError(
            f"vocabulary hash mismatch: {VOCAB} has {vocab_hash} but {REDUCED} was built from "
            f"{reduced.vocab_hash}; rerun the reduce stage")
    return vocab_hash


def stage_rank(run: Run) -> tuple[dict, list[str], dict]:
    cfg = run.cfg
    reduced = FeatureMatrix.load(run.path(REDUCED))
    vocab_hash = _check_vocabulary(run, reduced)
    inputs = run.verify([CORPUS, VOCAB, REDUCED, SPLIT])
    split = ev.SplitSpec.load(run.path(SPLIT))
    corpus_digest = run.stage("ingest")["settings"]["records_sha256"]
    if split.corpus_digest not in (None, corpus_digest):
        raise ArtifactMismatchError(
            f"{SPLIT} was made for corpus {split.corpus_digest} but {CORPUS} holds {corpus_digest}")

    staging = _staging_dir(run, "rank")
    try:
        outputs = []
        if cfg.method.name == "simrank":
            m = cfg.method.simrank
            settings = {"method": "simrank", **asdict(m)}
            rankings = {rs.review_id: simrank.rank_review(reduced, rs.review_id, rs.train, m.metric, m.aggregation)
                        for rs in split.reviews}
        else:
            hp = matfac.Hyperparams(**{**asdict(cfg.method.matfac), "seed": cfg.matfac_seed})
            settings = {"method": "matfac", **asdict(hp)}
            links = split.link_matrix(reduced.rows)
            model = matfac.fit(reduced, links, hp)
            model.save(run.path(MODEL), {"vocab_hash": vocab_hash})
            matfac.trace_to_csv(model, run.path(TRACE))
            outputs += [MODEL, TRACE]
            settings["best_iteration"] = model.best_iteration
            rankings = matfac.rank_all(model, links, {"k": hp.k, "vocab_hash": vocab_hash})
        for rid, rl in rankings.items():
            rl.save(staging / f"{rid}.csv")
        _replace_dir(staging, run.path(RANKINGS))
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    outputs += [f"{RANKINGS}/{rid}.csv" for rid in sorted(rankings)]
    return inputs, outputs, settings


def stage_evaluate(run: Run) -> tuple[dict, list[str], dict]:
    cfg = run.cfg
    ranking_files = run.outputs_under(RANKINGS)
    inputs = run.verify([SPLIT, *ranking_files])
    split = ev.SplitSpec.load(run.path(SPLIT))
    rankings = {}
    for rel in ranking_files:
        rl = RankedList.load(run.path(rel))
        rankings[rl.review_id] = rl
    report = ev.evaluate(rankings, split, label=cfg.label(), recall_level=cfg.evaluate.recall_level)
    staging = _staging_dir(run, "evaluate")
    try:
        written = ev.emit_report([report], staging)
        _replace_dir(staging, run.path(EVALUATION))
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    outputs = [f"{EVALUATION}/{p.name}" for p in written.values()]
    log.info("evaluate: %s median rank %.1f, WSS@95 %.3f", report.label, report.median_rank, report.wss95)
    return inputs, outputs, {**asdict(cfg.evaluate), "label": report.label}


_STAGE_FUNCS: dict[str, Callable[[Run], tuple]] = {
    "ingest": stage_ingest,
    "featurize": stage_featurize,
    "reduce": stage_reduce,
    "split": stage_split,
    "rank": stage_rank,
    "evaluate": stage_evaluate,
}


def run_stage(name: str, cfg: RunConfig, out_dir: str | Path) -> Path:
    if name not in _STAGE_FUNCS:
        raise ValidationError(f"unknown stage {name!r}")
    run = Run(cfg, out_dir)
    start = time.perf_counter()
    inputs, outputs, settings = _STAGE_FUNCS[name](run)
    settings = {**settings, "seed": cfg.seed}
    settings["config_sha256"] = sha256_bytes(canonical_json(cfg.settings()).encode())
    run.record(name, inputs, outputs, settings, time.perf_counter() - start)
    return run.dir


def run_pipeline(cfg: RunConfig, out_dir: str | Path, stages: Sequence[str] = STAGES) -> Path:
    for name in stages:
        run_stage(name, cfg, out_dir)
    return Path(out_dir)


# ---------------------------------------------------------------------------
# Sweeps


def _sweep_one(job: tuple[RunConfig, str]) -> str:
    cfg, out = job
    run_pipeline(cfg, out)
    return out


def _read_summary(run_dir: Path) -> list[list[str]]:
    with open(run_dir / EVALUATION / "summary.csv", newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))[1:]


def run_sweep(runs: Sequence[RunConfig], out_dir: str | Path, *, jobs: int = 1) -> list[Path]:
    """Run every config in its own subdirectory; write ``sweep_summary.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = [Path(r.output).name for r in runs]
    if len(set(names)) != len(names):
        raise ValidationError("sweep run names collide")
    jobs_list = [(r, str(out_dir / n)) for r, n in zip(runs, names)]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_sweep_one, jobs_list))
    else:
        for job in jobs_list:
            _sweep_one(job)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "method", "wss_at_95", "median_rank", "recall_at_100"])
    for name in names:
        for row in _read_summary(out_dir / name):
            w.writerow([name, *row])
    atomic_write_text(out_dir / "sweep_summary.csv", buf.getvalue())
    return [out_dir / n for n in names]
