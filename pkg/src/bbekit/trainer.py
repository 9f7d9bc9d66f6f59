"""Two-stage training: multi-corpus round-robin, then single-corpus
transfer fine-tuning with optional depth expansion."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import functional as F
from .corpus import CorpusIterator, CorpusManifest, next_batch, round_robin_schedule
from .errors import ConfigError, EvalError, InvariantViolation, NumericalAbort, NumericalError
from .expansion import ExpansionSpec, apply_freeze_policy, expand, verify_preservation
from .metrics import ConfusionMatrix, confusion, uar
from .model import EncoderModel
from .optim import AdamWConfig, adamw_step
from .rngutil import derive_seed

LOSS_TAIL = 5
PRESERVE_PROBES = 8


@dataclass
class TrainConfig:
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    n_steps: int = 3000
    batch_size: int = 16
    frame_cap: int | None = 512
    eval_every: int = 100
    seed: int = 0
    stage: str = "multi_corpus"  # "multi_corpus" | "single_corpus"
    freeze_policy: str | None = None  # None leaves the model's flags alone
    expansion: ExpansionSpec | None = None
    selection: str = "best"  # "best" | "last"

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.stage not in ("multi_corpus", "single_corpus"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.selection not in ("best", "last"):
            raise ConfigError(f"unknown selection rule {self.selection!r}")


@dataclass
class TrainLog:
    losses: list[tuple[int, str, float]] = field(default_factory=list)
    vals: list[tuple[int, str, float]] = field(default_factory=list)
    wall_clock_s: float = 0.0  # in-memory only, never serialized
    best_step: int | None = None
    best_val_uar: float | None = None

    def add_loss(self, step: int, corpus_id: str, loss: float) -> None:
        if self.losses and step <= self.losses[-1][0]:
            raise InvariantViolation(f"non-increasing step {step} in loss log")
        self.losses.append((step, corpus_id, loss))

    def add_val(self, step: int, corpus_id: str, val_uar: float) -> None:
        self.vals.append((step, corpus_id, val_uar))

    def loss_csv(self) -> str:
        lines = ["step,corpus,loss"]
        lines += [f"{s},{c},{repr(v)}" for s, c, v in self.losses]
        return "\n".join(lines) + "\n"

    def val_csv(self) -> str:
        lines = ["step,corpus,val_uar"]
        lines += [f"{s},{c},{repr(v)}" for s, c, v in self.vals]
        return "\n".join(lines) + "\n"

    def val_curve(self, corpus_id: str) -> list[tuple[int, float]]:
        return [(s, v) for s, c, v in self.vals if c == corpus_id]


def evaluate(model: EncoderModel, manifest: CorpusManifest,
             split: str = "test") -> dict:
    """Argmax over per-sample logits; returns {"uar", "confusion", "n_samples"}."""
    samples = manifest.split_samples(split)
    if not samples:
        raise EvalError(f"{manifest.corpus_id}: split {split!r} is empty")
    preds, labels = [], []
    for sample in samples:
        logits = model.logits(manifest.features(sample))
        preds.append(int(np.argmax(logits)))
        labels.append(sample.mapped_class)
    cm = confusion(preds, labels, model.config.n_classes)
    return {"uar": uar(cm), "confusion": cm, "n_samples": len(samples)}


def _batch_loss(model: EncoderModel, batch) -> ad.Tensor:
    """Unweighted mean cross-entropy over the batch."""
    total = None
    for i in range(batch.size):
        frames = batch.features[i]
        mask = batch.pad_mask[i]
        loss = F.softmax_cross_entropy(model.forward(frames, mask), batch.labels[i])
        total = loss if total is None else total + loss
    return total * (1.0 / batch.size)


def _eval_all(model: EncoderModel, manifests: list[CorpusManifest], step: int,
              log: TrainLog, split: str = "val") -> float:
    """Record one val-UAR row per corpus; returns the mean over corpora."""
    scores = []
    for manifest in manifests:
        try:
            score = evaluate(model, manifest, split)["uar"]
        except NumericalAbort:
            raise
        except NumericalError as exc:
            tail = [v for _, _, v in log.losses[-LOSS_TAIL:]]
            raise NumericalAbort(f"evaluation failed: {exc}", step=step,
                                 corpus_id=manifest.corpus_id, loss_tail=tail) from exc
        log.add_val(step, manifest.corpus_id, score)
        scores.append(score)
    return float(np.mean(scores))


def _train_loop(model: EncoderModel, manifests: list[CorpusManifest],
                schedule: list[str], cfg: TrainConfig) -> TrainLog:
    if model.store.n_params(only_trainable=True) == 0:
        raise ConfigError("no trainable parameters under the active freeze flags")
    iterators = {m.corpus_id: CorpusIterator(m, "train", derive_seed(cfg.seed, i))
                 for i, m in enumerate(manifests)}
    log = TrainLog()
    started = time.monotonic()

    def maybe_snapshot(step: int, mean_uar: float) -> None:
        if log.best_val_uar is None or mean_uar > log.best_val_uar:
            log.best_step = step
            log.best_val_uar = mean_uar
            snapshots["best"] = model.store.copy_values()

    snapshots: dict = {}
    maybe_snapshot(0, _eval_all(model, manifests, 0, log))

    for step, corpus_id in enumerate(schedule, start=1):
        batch = next_batch(iterators[corpus_id], cfg.batch_size, cfg.frame_cap)
        try:
            loss = _batch_loss(model, batch)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value}")
            loss.backward()
            adamw_step(model.store, cfg.adamw)
        except NumericalError as exc:
            tail = [v for _, _, v in log.losses[-LOSS_TAIL:]]
            raise NumericalAbort(str(exc), step=step, corpus_id=corpus_id,
                                 loss_tail=tail) from exc
        log.add_loss(step, corpus_id, value)
        if step % cfg.eval_every == 0 or step == len(schedule):
            maybe_snapshot(step, _eval_all(model, manifests, step, log))

    if cfg.selection == "best" and "best" in snapshots:
        model.store.load_values(snapshots["best"])
    log.wall_clock_s = time.monotonic() - started
    return log


def train_multi(model: EncoderModel, manifests: list[CorpusManifest],
                cfg: TrainConfig) -> tuple[EncoderModel, TrainLog]:
    """Round-robin over the corpus list, one batch per step."""
    if cfg.stage != "multi_corpus":
        raise ConfigError(f"train_multi needs stage multi_corpus, got {cfg.stage!r}")
    if not manifests:
        raise ConfigError("train_multi needs at least one corpus")
    if cfg.freeze_policy is not None:
        apply_freeze_policy(model, cfg.freeze_policy)
    schedule = round_robin_schedule([m.corpus_id for m in manifests], cfg.n_steps)
    log = _train_loop(model, manifests, schedule, cfg)
    return model, log


def train_transfer(model: EncoderModel, target: CorpusManifest,
                   cfg: TrainConfig,
                   reinit_head: str | bool = "auto") -> tuple[EncoderModel, TrainLog]:
    """Single-corpus fine-tuning of a loaded model, optionally expanding it
    first.  The expansion's preservation check must come back exactly 0.0.

    reinit_head "auto" reinitializes only when the head's class count
    differs from the target inventory, so an unchanged head keeps the
    loaded model's zero-shot behaviour at step 0.
    """
    if cfg.stage != "single_corpus":
        raise ConfigError(f"train_transfer needs stage single_corpus, got {cfg.stage!r}")
    n_classes = int(max(s.mapped_class for s in target.samples)) + 1
    if reinit_head is True or (reinit_head == "auto"
                               and n_classes != model.config.n_classes):
        model.reinit_head(max(n_classes, 2))

    if cfg.expansion is not None:
        expanded = expand(model, cfg.expansion)
        probes = _preservation_probes(model, target)
        worst = verify_preservation(model, expanded, probes)
        if worst != 0.0:
            raise InvariantViolation(
                f"expansion changed outputs: max |delta| = {worst!r}")
        model = expanded
    elif cfg.freeze_policy is not None:
        apply_freeze_policy(model, cfg.freeze_policy)

    schedule = round_robin_schedule([target.corpus_id], cfg.n_steps)
    log = _train_loop(model, [target], schedule, cfg)
    return model, log


def _preservation_probes(model: EncoderModel, target: CorpusManifest) -> list:
    """Real target samples where available, synthetic frames otherwise."""
    samples = (target.split_samples("val") or target.samples)[:PRESERVE_PROBES]
    probes = [target.features(s) for s in samples]
    if not probes:
        rng = np.random.default_rng(0)
        d = model.config.d_model if model.config.frontend == "identity" \
            else model.config.conv_in_dim
        probes = [rng.normal(0.0, 1.0, (20, d)) for _ in range(PRESERVE_PROBES)]
    return probes
