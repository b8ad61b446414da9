"""Encoder core: pluggable text backends, segment-tag embeddings, training.

An :class:`EncoderModel` adds a trainable per-segment-tag embedding to every
token embedding, runs the backend's contextual layers, and mean-pools the
last layer into one vector per sequence. Three objectives are provided on
top: cross-entropy classification, binary cross-entropy pairwise matching
and a Euclidean triplet objective for the bi-encoder.

Two backends ship:

* ``stub`` -- deterministic hash-bucket embeddings followed by a small
  trainable MLP, in float64. It has no cross-token interaction and exists so
  the full training/inference machinery can be exercised at desk scale.
* ``transformer`` -- a pretrained HuggingFace encoder (defaults to a
  scientific-text BERT). Requires the optional ``transformers`` dependency
  and downloaded weights; none of the standard tests touch it.

All optimizers are AdamW with a linear warmup then linear decay to zero at
the last step; the realized schedule and per-step losses are recorded on the
returned model under ``model.history``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import torch
from torch import nn

from tablink.context import SEGMENT_TAGS, TaggedSequence
from tablink.errors import ConfigError, MissingArtifactError

logger = logging.getLogger(__name__)

MODEL_CACHE_ENV = "TABLINK_MODEL_CACHE"
DEFAULT_TRANSFORMER = "allenai/scibert_scivocab_uncased"


@dataclass
class TrainingConfig:
    epochs: int = 2
    batch_size: int = 32
    learning_rate: float = 2e-5
    warmup_fraction: float = 0.1
    triplet_margin: float = 1.0
    negatives_per_positive: int = 50
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.negatives_per_positive) <= 0:
            raise ConfigError("epochs, batch_size and negatives_per_positive must be positive")
        if self.learning_rate <= 0 or self.triplet_margin <= 0:
            raise ConfigError("learning_rate and triplet_margin must be positive")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in (0, 1)")


def _seeded_normal(tensor: torch.Tensor, std: float, generator: torch.Generator) -> None:
    with torch.no_grad():
        tensor.copy_(
            torch.randn(tensor.shape, generator=generator, dtype=tensor.dtype) * std
        )


class StubBackend(nn.Module):
    """Hash-bucket token embeddings plus a trainable per-token MLP (float64)."""

    name = "stub"

    def __init__(
        self,
        hidden_size: int = 32,
        n_buckets: int = 4096,
        n_layers: int = 1,
        seed: int = 0,
    ):
        super().__init__()
        self.hidden_size = hidden_size
        self.n_buckets = n_buckets
        self.n_layers = n_layers
        self.seed = seed
        self.dtype = torch.float64
        gen = torch.Generator().manual_seed(seed)
        table = torch.randn(n_buckets, hidden_size, generator=gen, dtype=self.dtype) * 0.5
        self.register_buffer("bucket_table", table)
        self.layers = nn.ModuleList(
            nn.Linear(hidden_size, hidden_size, dtype=self.dtype) for _ in range(n_layers)
        )
        std = 1.0 / math.sqrt(hidden_size)
        for layer in self.layers:
            _seeded_normal(layer.weight, std, gen)
            _seeded_normal(layer.bias, std, gen)

    def spec(self) -> dict:
        return {
            "name": self.name,
            "hidden_size": self.hidden_size,
            "n_buckets": self.n_buckets,
            "n_layers": self.n_layers,
            "seed": self.seed,
        }

    def expand(self, sequence: TaggedSequence) -> tuple[list[int], list[int]]:
        """Token ids (hash buckets) and positions of their segment tags."""
        ids = [zlib.crc32(tok.encode("utf-8")) % self.n_buckets for tok in sequence.tokens]
        tag_ids = [SEGMENT_TAGS.index(tag) for tag in sequence.tags]
        return ids, tag_ids

    def input_embeddings(self, ids: torch.Tensor) -> torch.Tensor:
        return self.bucket_table[ids]

    def contextualize(self, embeds: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = embeds
        for i, layer in enumerate(self.layers):
            if i:
                h = torch.tanh(h)
            h = layer(h)
        return h


class TransformerBackend(nn.Module):
    """Pretrained HuggingFace encoder; word tokens expand to subword pieces.

    Piece sequences longer than the model's positional limit are truncated at
    that limit. The leading/trailing special tokens inherit the first/last
    segment tag.
    """

    name = "transformer"

    def __init__(self, model_name: str = DEFAULT_TRANSFORMER):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ConfigError(
                "the transformer backend needs the optional 'transformers' dependency"
            ) from exc
        cache_dir = os.environ.get(MODEL_CACHE_ENV)
        self.model_name = model_name
        self.tokenizer = AutoTokenizer.from_pretrained(model_name, cache_dir=cache_dir)
        self.model = AutoModel.from_pretrained(model_name, cache_dir=cache_dir)
        self.hidden_size = self.model.config.hidden_size
        self.dtype = torch.float32

    def spec(self) -> dict:
        return {"name": self.name, "model": self.model_name}

    def expand(self, sequence: TaggedSequence) -> tuple[list[int], list[int]]:
        ids: list[int] = []
        tag_ids: list[int] = []
        for token, tag in zip(sequence.tokens, sequence.tags):
            pieces = self.tokenizer.tokenize(token) or [self.tokenizer.unk_token]
            piece_ids = self.tokenizer.convert_tokens_to_ids(pieces)
            ids.extend(piece_ids)
            tag_ids.extend([SEGMENT_TAGS.index(tag)] * len(piece_ids))
        limit = self.tokenizer.model_max_length - 2
        ids, tag_ids = ids[:limit], tag_ids[:limit]
        ids = [self.tokenizer.cls_token_id, *ids, self.tokenizer.sep_token_id]
        tag_ids = [tag_ids[0], *tag_ids, tag_ids[-1]]
        return ids, tag_ids

    def input_embeddings(self, ids: torch.Tensor) -> torch.Tensor:
        return self.model.get_input_embeddings()(ids)

    def contextualize(self, embeds: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.model(inputs_embeds=embeds, attention_mask=mask).last_hidden_state


def make_backend(spec: Mapping | None) -> nn.Module:
    """Build a backend from its spec dict ({"name": "stub"|"transformer", ...})."""
    spec = dict(spec or {"name": "stub"})
    name = spec.pop("name", "stub")
    if name == "stub":
        return StubBackend(**spec)
    if name == "transformer":
        return TransformerBackend(spec.get("model", DEFAULT_TRANSFORMER))
    raise ConfigError(f"unknown encoder backend {name!r}")


class EncoderModel(nn.Module):
    """Backend + trainable segment-tag table + mean pooling."""

    def __init__(self, backend: nn.Module, max_tokens: int = 512, seed: int = 0):
        super().__init__()
        self.backend = backend
        self.max_tokens = max_tokens
        self.tag_vocabulary = SEGMENT_TAGS
        self.segment_table = nn.Embedding(
            len(SEGMENT_TAGS), backend.hidden_size, dtype=backend.dtype
        )
        gen = torch.Generator().manual_seed(seed ^ 0x5E6)
        _seeded_normal(self.segment_table.weight, 0.1, gen)

    @property
    def hidden_size(self) -> int:
        return self.backend.hidden_size

    def forward_batch(self, sequences: Sequence[TaggedSequence]) -> torch.Tensor:
        """Pooled vectors with gradients, shape [batch, hidden]."""
        expanded = []
        for seq in sequences:
            if len(seq) > self.max_tokens:
                raise ValueError(
                    f"sequence of {len(seq)} tokens exceeds the encoder limit "
                    f"of {self.max_tokens}"
                )
            expanded.append(self.backend.expand(seq))
        width = max(len(ids) for ids, _ in expanded)
        ids = torch.zeros(len(expanded), width, dtype=torch.long)
        tags = torch.zeros_like(ids)
        mask = torch.zeros(len(expanded), width, dtype=self.backend.dtype)
        for i, (seq_ids, tag_ids) in enumerate(expanded):
            ids[i, : len(seq_ids)] = torch.tensor(seq_ids, dtype=torch.long)
            tags[i, : len(tag_ids)] = torch.tensor(tag_ids, dtype=torch.long)
            mask[i, : len(seq_ids)] = 1.0
        embeds = self.backend.input_embeddings(ids) + self.segment_table(tags)
        hidden = self.backend.contextualize(embeds, mask)
        pooled = (hidden * mask.unsqueeze(-1)).sum(dim=1) / mask.sum(dim=1, keepdim=True)
        return pooled

    @torch.no_grad()
    def encode_batch(self, sequences: Sequence[TaggedSequence]) -> torch.Tensor:
        return self.forward_batch(sequences).detach()

    @torch.no_grad()
    def encode(self, sequence: TaggedSequence) -> torch.Tensor:
        return self.forward_batch([sequence])[0].detach()


class SequenceClassifier(nn.Module):
    """Encoder plus a linear output layer over class logits."""

    def __init__(self, encoder: EncoderModel, n_classes: int, seed: int = 0):
        super().__init__()
        self.encoder = encoder
        self.n_classes = n_classes
        self.output = nn.Linear(encoder.hidden_size, n_classes, dtype=encoder.backend.dtype)
        gen = torch.Generator().manual_seed(seed ^ 0xC1A55)
        _seeded_normal(self.output.weight, 1.0 / math.sqrt(encoder.hidden_size), gen)
        _seeded_normal(self.output.bias, 0.01, gen)

    def logits_batch(self, sequences: Sequence[TaggedSequence]) -> torch.Tensor:
        return self.output(self.encoder.forward_batch(sequences))

    @torch.no_grad()
    def logits(self, sequence: TaggedSequence) -> list[float]:
        return [float(v) for v in self.logits_batch([sequence])[0]]


class PairwiseScorer(nn.Module):
    """Encoder over fused pairs plus a logistic output."""

    def __init__(self, encoder: EncoderModel, seed: int = 0):
        super().__init__()
        self.encoder = encoder
        self.output = nn.Linear(encoder.hidden_size, 1, dtype=encoder.backend.dtype)
        gen = torch.Generator().manual_seed(seed ^ 0x9A12)
        _seeded_normal(self.output.weight, 1.0 / math.sqrt(encoder.hidden_size), gen)
        _seeded_normal(self.output.bias, 0.01, gen)

    def logit_batch(self, pairs: Sequence[TaggedSequence]) -> torch.Tensor:
        return self.output(self.encoder.forward_batch(pairs)).squeeze(-1)

    @torch.no_grad()
    def probability_batch(self, pairs: Sequence[TaggedSequence]) -> list[float]:
        if not pairs:
            return []
        return [float(v) for v in torch.sigmoid(self.logit_batch(pairs))]

    @torch.no_grad()
    def probability(self, pair: TaggedSequence) -> float:
        return self.probability_batch([pair])[0]


class BiEncoder(nn.Module):
    """Two-tower embedder: one tower for cells, one for KB entities."""

    def __init__(self, anchor: EncoderModel, item: EncoderModel):
        super().__init__()
        self.anchor = anchor
        self.item = item

    def embed_anchor_batch(self, sequences: Sequence[TaggedSequence]) -> torch.Tensor:
        return self.anchor.forward_batch(sequences)

    def embed_item_batch(self, sequences: Sequence[TaggedSequence]) -> torch.Tensor:
        return self.item.forward_batch(sequences)


def euclidean_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise Euclidean distance, exact zero (with zero gradient) at a == b."""
    sq = ((a - b) ** 2).sum(dim=-1)
    out = torch.zeros_like(sq)
    positive = sq > 0
    if positive.any():
        out[positive] = torch.sqrt(sq[positive])
    return out


def triplet_loss(
    anchor: torch.Tensor, positive: torch.Tensor, negative: torch.Tensor, margin: float
) -> torch.Tensor:
    """Per-triplet hinge loss max(0, d(a,p) - d(a,n) + margin)."""
    return torch.clamp(
        euclidean_distance(anchor, positive) - euclidean_distance(anchor, negative) + margin,
        min=0.0,
    )


# -- training loop -----------------------------------------------------------

def lr_schedule(n_steps: int, warmup_fraction: float) -> list[float]:
    """Multiplier per step: linear rise to 1, then linear decay to 0."""
    warmup = max(1, round(warmup_fraction * n_steps))
    factors = []
    for step in range(n_steps):
        if step < warmup:
            factors.append((step + 1) / warmup)
        else:
            factors.append((n_steps - 1 - step) / max(1, n_steps - warmup))
    return factors


def _run_training(
    model: nn.Module,
    dataset: list,
    batch_loss: Callable[[list], torch.Tensor],
    config: TrainingConfig,
    label: str,
) -> nn.Module:
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    factors = lr_schedule(config.epochs * steps_per_epoch, config.warmup_fraction)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    rng = random.Random(config.seed)
    history = {"loss": [], "lr": []}
    step = 0
    for epoch in range(config.epochs):
        order = list(range(len(dataset)))
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start : start + config.batch_size]]
            lr = config.learning_rate * factors[step]
            for group in optimizer.param_groups:
                group["lr"] = lr
            loss = batch_loss(batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_value = float(loss.detach())
            history["loss"].append(loss_value)
            history["lr"].append(lr)
            logger.debug("%s step %d: loss=%.6f lr=%.3g", label, step, loss_value, lr)
            epoch_loss += loss_value
            step += 1
        logger.info("%s epoch %d/%d: mean loss %.6f", label, epoch + 1, config.epochs,
                    epoch_loss / steps_per_epoch)
    model.history = history
    return model


def fit_classifier(
    model: SequenceClassifier,
    examples: Sequence[tuple[TaggedSequence, int]],
    config: TrainingConfig,
) -> SequenceClassifier:
    """Cross-entropy training over (sequence, class index) examples."""
    if not examples:
        raise ValueError("no training examples")
    if len({label for _, label in examples}) < 2:
        raise ValueError("classifier training needs at least two classes")
    ce = nn.CrossEntropyLoss()

    def batch_loss(batch):
        logits = model.logits_batch([seq for seq, _ in batch])
        target = torch.tensor([label for _, label in batch], dtype=torch.long)
        return ce(logits, target)

    return _run_training(model, list(examples), batch_loss, config, "classifier")


def fit_pairwise(
    model: PairwiseScorer,
    positives: Sequence[TaggedSequence],
    negatives: Sequence[TaggedSequence],
    config: TrainingConfig,
) -> PairwiseScorer:
    """Binary cross-entropy training over fused positive/negative pairs."""
    if not positives or not negatives:
        raise ValueError("pairwise training needs both positive and negative pairs")
    bce = nn.BCEWithLogitsLoss()
    dataset = [(seq, 1.0) for seq in positives] + [(seq, 0.0) for seq in negatives]

    def batch_loss(batch):
        logits = model.logit_batch([seq for seq, _ in batch])
        target = torch.tensor([y for _, y in batch], dtype=logits.dtype)
        return bce(logits, target)

    return _run_training(model, dataset, batch_loss, config, "pairwise")


def fit_triplet(
    model: BiEncoder,
    triplets: Sequence[tuple[TaggedSequence, TaggedSequence, TaggedSequence]],
    config: TrainingConfig,
) -> BiEncoder:
    """Triplet training of the two-tower embedder (Euclidean, hinge margin)."""
    if not triplets:
        raise ValueError("no training triplets")

    def batch_loss(batch):
        anchors = model.embed_anchor_batch([a for a, _, _ in batch])
        positives = model.embed_item_batch([p for _, p, _ in batch])
        negatives = model.embed_item_batch([n for _, _, n in batch])
        return triplet_loss(anchors, positives, negatives, config.triplet_margin).mean()

    return _run_training(model, list(triplets), batch_loss, config, "triplet")


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: nn.Module, directory: str | Path, manifest: dict) -> None:
    """Write the weight blob plus a plain-text sidecar manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), directory / "weights.pt")
    manifest = dict(manifest, tag_vocabulary=list(SEGMENT_TAGS))
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_manifest(directory: str | Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise MissingArtifactError(f"missing checkpoint manifest: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_weights(model: nn.Module, directory: str | Path) -> nn.Module:
    path = Path(directory) / "weights.pt"
    if not path.exists():
        raise MissingArtifactError(f"missing checkpoint weights: {path}")
    model.load_state_dict(torch.load(path, weights_only=True))
    model.eval()
    return model


def training_config_from(manifest: dict) -> TrainingConfig:
    return TrainingConfig(**manifest["training_config"])


def manifest_for(kind: str, backend: nn.Module, config: TrainingConfig, **extra) -> dict:
    return {
        "kind": kind,
        "backend": backend.spec(),
        "training_config": asdict(config),
        **extra,
    }
