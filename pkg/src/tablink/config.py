"""Pipeline configuration: one JSON file plus per-stage training sections.

Stage checkpoints and prediction files are content-addressed by a signature
hashed over every semantic setting (seed, budgets, backend, training
sections; paths and the decision threshold are excluded). Stages refuse to
mix artifacts produced under a different signature.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from tablink.encoder import TrainingConfig
from tablink.errors import ConfigError

STAGES = ("ctc", "asm", "dr", "ed")


@dataclass
class PipelineConfig:
    kb_dir: Path
    corpus_dir: Path
    work_dir: Path
    seed: int = 0
    n_sentences: int = 5
    k_candidates: int = 50
    threshold: float = 0.5
    max_tokens: int = 512
    validation_topic: str = "image classification"
    backend: dict = field(default_factory=lambda: {"name": "stub"})
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.k_candidates < 1:
            raise ConfigError("k_candidates must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.n_sentences < 0 or self.max_tokens < 1:
            raise ConfigError("n_sentences must be >= 0 and max_tokens >= 1")
        for stage in self.train:
            if stage not in STAGES:
                raise ConfigError(f"unknown training stage {stage!r}")

    def training_config(self, stage: str) -> TrainingConfig:
        """Stage TrainingConfig; the pipeline seed applies unless overridden."""
        overrides = dict(self.train.get(stage, {}))
        overrides.setdefault("seed", self.seed)
        try:
            return TrainingConfig(**overrides)
        except TypeError as exc:
            raise ConfigError(f"bad training section for {stage!r}: {exc}") from None

    def require_paths(self) -> None:
        for name in ("kb_dir", "corpus_dir"):
            path = getattr(self, name)
            if not Path(path).exists():
                raise ConfigError(f"{name} does not exist: {path}")

    def signature(self) -> str:
        semantic = {
            "seed": self.seed,
            "n_sentences": self.n_sentences,
            "k_candidates": self.k_candidates,
            "max_tokens": self.max_tokens,
            "validation_topic": self.validation_topic,
            "backend": self.backend,
            "train": {stage: asdict(self.training_config(stage)) for stage in STAGES},
        }
        blob = json.dumps(semantic, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def stage_dir(self, stage: str) -> Path:
        return Path(self.work_dir) / stage

    @property
    def predictions_dir(self) -> Path:
        return Path(self.work_dir) / "predictions"

    @property
    def report_dir(self) -> Path:
        return Path(self.work_dir) / "report"


def load_config(path: str | Path, **overrides) -> PipelineConfig:
    """Read the JSON config; relative paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    unknown = set(raw) - {f.name for f in PipelineConfig.__dataclass_fields__.values()}
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    for key in ("kb_dir", "corpus_dir", "work_dir"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required key {key!r}")
        value = Path(raw[key])
        raw[key] = value if value.is_absolute() else (path.parent / value)
    return PipelineConfig(**raw)
