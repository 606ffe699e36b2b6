"""Declarative run configuration (YAML or JSON)."""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ValidationError
from .matfac import MODES, RMSE_TARGETS
from .simrank import Aggregation, SimilarityMetric
from .text import STOPWORDS_VERSION

REDUCTIONS = ("none", "pca", "lda")
METHODS = ("simrank", "matfac")


@dataclass(frozen=True)
class IngestConfig:
    status: str | None = None
    markup: bool = True
    snapshot_date: str | None = None


@dataclass(frozen=True)
class FeatureConfig:
    weighting: str = "tfidf"
    min_df: int = 5
    stopwords: str = STOPWORDS_VERSION
    smooth_idf: bool = True
    normalize: bool = True


@dataclass(frozen=True)
class ReductionConfig:
    method: str = "none"
    k: int = 20
    seed: int | None = None
    alpha: float | None = None
    beta: float = 0.01
    sweeps: int = 1000
    solver: str = "auto"


@dataclass(frozen=True)
class SplitConfig:
    min_train: int = 3
    train_fraction: float | None = 0.6


@dataclass(frozen=True)
class SimrankConfig:
    metric: str = "cosine"
    aggregation: str = "mean"


@dataclass(frozen=True)
class MatfacConfig:
    k: int = 10
    reg: float = 0.001
    link_weight: float = 0.01
    learning_rate: float = 1e-3
    max_iterations: int = 5000
    seed: int | None = None
    init_scale: float = 0.1
    rmse: str = "both"
    mode: str = "batch"


@dataclass(frozen=True)
class MethodConfig:
    name: str = "simrank"
    simrank: SimrankConfig = field(default_factory=SimrankConfig)
    matfac: MatfacConfig = field(default_factory=MatfacConfig)


@dataclass(frozen=True)
class EvaluateConfig:
    recall_level: float = 0.95


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run. Paths are resolved against ``base_dir``."""

    corpus: str
    links: str
    output: str = "run"
    seed: int = 0
    ingest: IngestConfig = field(default_factory=IngestConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    method: MethodConfig = field(default_factory=MethodConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    sweep: dict = field(default_factory=dict)
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        _check(self)

    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def reduction_seed(self) -> int:
        return self.seed if self.reduction.seed is None else self.reduction.seed

    @property
    def matfac_seed(self) -> int:
        return self.seed if self.method.matfac.seed is None else self.method.matfac.seed

    def settings(self) -> dict:
        """Canonical settings (no paths to output or base dir), for manifests."""
        d = asdict(self)
        for key in ("base_dir", "output", "sweep"):
            d.pop(key)
        return d

    def label(self) -> str:
        if self.method.name == "simrank":
            m = self.method.simrank
            tail = f"{m.metric}-{m.aggregation}"
        else:
            tail = f"k{self.method.matfac.k}"
        red = "full" if self.reduction.method == "none" else f"{self.reduction.method}{self.reduction.k}"
        return f"{self.method.name}-{red}-{tail}"

    def override(self, **changes) -> "RunConfig":
        """``override(seed=3, **{"method.matfac.k": 5})`` with dotted paths."""
        d = asdict(self)
        for dotted, value in changes.items():
            node = d
            *parents, leaf = dotted.split(".")
            for p in parents:
                if not isinstance(node.get(p), dict):
                    raise ValidationError(f"unknown config key {dotted!r}")
                node = node[p]
            if leaf not in node:
                raise ValidationError(f"unknown config key {dotted!r}")
            node[leaf] = value
        return from_dict(d, base_dir=self.base_dir)


_SECTIONS = {
    "ingest": IngestConfig,
    "features": FeatureConfig,
    "reduction": ReductionConfig,
    "split": SplitConfig,
    "evaluate": EvaluateConfig,
}


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ValidationError(f"config section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"unknown key(s) in {where!r}: {', '.join(unknown)}")
    return cls(**raw)


def from_dict(raw: Mapping, *, base_dir: str | Path = ".") -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ValidationError("config must be a mapping")
    raw = copy.deepcopy(dict(raw))
    raw.pop("base_dir", None)
    top = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ValidationError(f"unknown top-level config key(s): {', '.join(unknown)}")
    for key in ("corpus", "links"):
        if key not in raw:
            raise ValidationError(f"config is missing {key!r}")
    for name, cls in _SECTIONS.items():
        raw[name] = _build(cls, raw.get(name), name)
    method = raw.get("method") or {}
    if not isinstance(method, Mapping):
        raise ValidationError("config section 'method' must be a mapping")
    extra = sorted(set(method) - {"name", "simrank", "matfac"})
    if extra:
        raise ValidationError(f"unknown key(s) in 'method': {', '.join(extra)}")
    raw["method"] = MethodConfig(
        name=method.get("name", "simrank"),
        simrank=_build(SimrankConfig, method.get("simrank"), "method.simrank"),
        matfac=_build(MatfacConfig, method.get("matfac"), "method.matfac"),
    )
    try:
        return RunConfig(**raw, base_dir=str(base_dir))
    except TypeError as exc:
        raise ValidationError(f"bad config: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValidationError(f"{path}: cannot parse config: {exc}") from exc
    return from_dict(raw or {}, base_dir=path.parent)


def _one_of(value, allowed, where):
    if value not in allowed:
        raise ValidationError(f"{where} must be one of {tuple(allowed)}, got {value!r}")


def _check(cfg: RunConfig) -> None:
    _one_of(cfg.features.weighting, ("binary", "frequency", "tfidf"), "features.weighting")
    if cfg.features.min_df < 1:
        raise ValidationError("features.min_df must be >= 1")
    _one_of(cfg.reduction.method, REDUCTIONS, "reduction.method")
    if cfg.reduction.k < 1:
        raise ValidationError("reduction.k must be >= 1")
    _one_of(cfg.method.name, METHODS, "method.name")
    _one_of(cfg.method.simrank.metric, [m.value for m in SimilarityMetric], "method.simrank.metric")
    _one_of(cfg.method.simrank.aggregation, [a.value for a in Aggregation], "method.simrank.aggregation")
    _one_of(cfg.method.matfac.rmse, RMSE_TARGETS, "method.matfac.rmse")
    _one_of(cfg.method.matfac.mode, MODES, "method.matfac.mode")
    if cfg.split.min_train < 1:
        raise ValidationError("split.min_train must be >= 1")
    if not isinstance(cfg.sweep, Mapping):
        raise ValidationError("sweep must be a mapping of dotted keys to value lists")
    for key, values in cfg.sweep.items():
        if key != "methods" and not key.startswith(("simrank.", "matfac.", "reduction.", "features.", "split.")):
            raise ValidationError(f"sweep key {key!r} must start with simrank., matfac. or a shared section")
        if not isinstance(values, list) or not values:
            raise ValidationError(f"sweep key {key!r} must map to a non-empty list")


def expand_sweep(cfg: RunConfig) -> list[RunConfig]:
    """One config per grid point.

    ``sweep.methods`` lists the methods to run (default: the configured one).
    ``simrank.*`` and ``matfac.*`` lists only multiply their own method's
    runs; lists under shared sections multiply every run.
    """
    sweep = dict(cfg.sweep)
    methods = sweep.pop("methods", [cfg.method.name])
    for m in methods:
        _one_of(m, METHODS, "sweep.methods")
    shared = {k: v for k, v in sweep.items() if not k.startswith(("simrank.", "matfac."))}
    runs = []
    for m in methods:
        own = {k: v for k, v in sweep.items() if k.startswith(m + ".")}
        grid = {**shared, **{"method." + k: v for k, v in own.items()}}
        keys = sorted(grid)
        for combo in itertools.product(*(grid[k] for k in keys)):
            changes = dict(zip(keys, combo))
            changes["method.name"] = m
            run = cfg.override(**changes)
            runs.append(replace(run, sweep={}))
    labels = [r.label() for r in runs]
    dupes = sorted({x for x in labels if labels.count(x) > 1})
    if dupes:
        # labels name run directories, so extra swept keys need a suffix
        counts: dict[str, int] = {}
        named = []
        for r in runs:
            counts[r.label()] = counts.get(r.label(), 0) + 1
            named.append((r, f"{r.label()}-{counts[r.label()]}" if r.label() in dupes else r.label()))
        return [replace(r, output=str(Path(cfg.output) / name)) for r, name in named]
    return [replace(r, output=str(Path(cfg.output) / r.label())) for r in runs]
