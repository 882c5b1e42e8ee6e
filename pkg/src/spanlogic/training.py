"""Loss stack and optimization loop.

Each head owns three loss terms over one example: a squared error on
the squashed sentence logit, a squared error pulling the largest raw
attention toward the sentence target, and an optional rationale term
pulling attention on human-highlighted spans toward that target. The
gold label decides which heads contribute: contradiction gold trains
the contradiction head alone, every other gold trains both.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch
from torch import Tensor

from .corpus import DatasetSplit, NLIExample
from .errors import TrainingError
from .logic import SupervisionTarget, aggregate_prediction, training_targets
from .model import SpanModel, SpanPairEncoder, save_checkpoint
from .segmenter import (
    RationaleAlignment,
    Segmenter,
    SpanSet,
    align_rationale,
    apply_composite_dropout,
    tokenize,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    The defaults are the full-data configuration without rationale
    supervision; see PRESETS for the other published setups.
    """

    # optimization
    learning_rate: float = 7.5e-6
    epochs: int = 2
    warmup_epochs: int = 1
    warmdown_epochs: int = 1
    batch_size: int = 32
    weight_decay: float = 0.01
    grad_clip_norm: float = 1.0
    seed: int = 0

    # segmentation
    max_run_length: int = 3
    composite_dropout_rate: float = 0.0

    # supervision
    use_rationales: bool = False
    rationale_loss_weight: float = 0.1

    # model
    head_hidden: int | None = None

    # early stopping (reduced-data runs)
    early_stopping: bool = False
    patience: int = 3

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise TrainingError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.warmup_epochs < 0 or self.warmdown_epochs < 0:
            raise TrainingError("warmup/warmdown epochs cannot be negative")
        if self.warmup_epochs + self.warmdown_epochs > self.epochs:
            raise TrainingError(
                f"warmup ({self.warmup_epochs}) + warmdown "
                f"({self.warmdown_epochs}) exceed {self.epochs} epochs"
            )
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.composite_dropout_rate <= 1.0:
            raise TrainingError(
                f"composite_dropout_rate {self.composite_dropout_rate} outside [0, 1]"
            )
        if self.rationale_loss_weight < 0:
            raise TrainingError("rationale_loss_weight cannot be negative")
        if self.max_run_length < 1:
            raise TrainingError("max_run_length must be >= 1")
        if self.patience < 1:
            raise TrainingError("patience must be >= 1")


PRESETS: dict[str, TrainConfig] = {
    "snli": TrainConfig(),
    "snli-rationales": TrainConfig(learning_rate=5e-6, use_rationales=True),
    "sick": TrainConfig(learning_rate=1e-5, epochs=6, warmup_epochs=3, warmdown_epochs=3),
    "reduced": TrainConfig(
        learning_rate=1e-5,
        epochs=10,
        warmup_epochs=1,
        warmdown_epochs=9,
        early_stopping=True,
        patience=3,
    ),
}


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------


def sentence_loss(
    logit: Tensor, target: float, scale: Tensor | float = 1.0, bias: Tensor | float = 0.0
) -> Tensor:
    """Squared error between the squashed sentence logit and its target."""
    return (torch.sigmoid(scale * logit + bias) - target) ** 2


def span_loss(raw_attention: Tensor, target: float) -> Tensor:
    """Squared error between the largest raw attention and the target.

    Gradients flow through the maximizing span only.
    """
    if raw_attention.numel() == 0:
        raise TrainingError("span loss needs at least one span")
    return (raw_attention.max() - target) ** 2


def rationale_loss(
    raw_attention: Tensor,
    containment_mask: Sequence[int],
    target: float,
    weight: float,
) -> Tensor:
    """Weighted squared error on spans covering the human rationale."""
    if len(containment_mask) != raw_attention.numel():
        raise TrainingError(
            f"mask length {len(containment_mask)} != {raw_attention.numel()} spans"
        )
    mask = torch.as_tensor(
        containment_mask, dtype=raw_attention.dtype, device=raw_attention.device
    )
    return weight * (mask * (raw_attention - target) ** 2).sum()


@dataclass(frozen=True)
class LossBreakdown:
    """All loss components for one example, as 0-d tensors."""

    sentence_neutral: Tensor
    sentence_contradiction: Tensor
    span_neutral: Tensor
    span_contradiction: Tensor
    rationale_neutral: Tensor
    rationale_contradiction: Tensor
    total: Tensor

    def to_floats(self) -> dict[str, float]:
        return {
            f.name: float(getattr(self, f.name).detach())
            for f in dataclasses.fields(self)
        }


def total_example_loss(
    scores,
    target: SupervisionTarget,
    alignment: RationaleAlignment | None,
    config: TrainConfig,
) -> LossBreakdown:
    """Compose per-head losses according to the supervision target.

    An unsupervised neutral head (contradiction gold) contributes exact
    zeros that carry no gradient to any parameter.
    """

    def head_terms(head_scores, y: float) -> tuple[Tensor, Tensor, Tensor]:
        sent = (head_scores.sentence_probability - y) ** 2
        span = span_loss(head_scores.raw_attention, y)
        if config.use_rationales and alignment is not None:
            rat = rationale_loss(
                head_scores.raw_attention,
                alignment.mask,
                y,
                config.rationale_loss_weight,
            )
        else:
            rat = torch.zeros((), dtype=sent.dtype, device=sent.device)
        return sent, span, rat

    sent_c, span_c, rat_c = head_terms(scores.contradiction, target.contradiction)
    if target.neutral is None:
        zero = torch.zeros((), dtype=sent_c.dtype, device=sent_c.device)
        sent_n, span_n, rat_n = zero, zero, zero
    else:
        sent_n, span_n, rat_n = head_terms(scores.neutral, target.neutral)
    total = sent_n + span_n + rat_n + sent_c + span_c + rat_c
    return LossBreakdown(
        sentence_neutral=sent_n,
        sentence_contradiction=sent_c,
        span_neutral=span_n,
        span_contradiction=span_c,
        rationale_neutral=rat_n,
        rationale_contradiction=rat_c,
        total=total,
    )


# ---------------------------------------------------------------------------
# Learning-rate schedule
# ---------------------------------------------------------------------------


def build_schedule(
    config: TrainConfig, steps_per_epoch: int
) -> Callable[[int], float]:
    """Per-step learning rate: linear 0 to peak over the warmup epochs,
    flat in between, linear peak to 0 over the warmdown epochs."""
    if steps_per_epoch < 1:
        raise TrainingError("steps_per_epoch must be >= 1")
    total = config.epochs * steps_per_epoch
    warm = config.warmup_epochs * steps_per_epoch
    down = config.warmdown_epochs * steps_per_epoch
    peak = config.learning_rate

    def lr_at(step: int) -> float:
        if step <= 0:
            return 0.0 if warm > 0 else peak
        if step < warm:
            return peak * step / warm
        if step >= total:
            return 0.0 if down > 0 else peak
        if step > total - down:
            return peak * (total - step) / down
        return peak

    return lr_at


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Prepared:
    """Segmentation and targets computed once per example."""

    example: NLIExample
    premise_tokens: tuple[str, ...]
    full: SpanSet
    granular_only: SpanSet
    align_full: RationaleAlignment
    align_granular: RationaleAlignment
    target: SupervisionTarget


def _prepare(
    split: DatasetSplit, segmenter: Segmenter
) -> list[_Prepared]:
    out = []
    for ex in split:
        full = segmenter.segment(ex.hypothesis, ex.id)
        granular = SpanSet(full.text, full.hypothesis_tokens, full.granular, ())
        out.append(
            _Prepared(
                example=ex,
                premise_tokens=tuple(t.text for t in tokenize(ex.premise)),
                full=full,
                granular_only=granular,
                align_full=align_rationale(full, ex.rationale),
                align_granular=align_rationale(granular, ex.rationale),
                target=training_targets(ex.gold),
            )
        )
    return out


@dataclass(frozen=True)
class TrainResult:
    model: SpanModel
    history: tuple[dict, ...]
    best_epoch: int | None
    best_dev_accuracy: float | None
    stopped_early: bool


def _dev_accuracy(model: SpanModel, prepared: Sequence[_Prepared]) -> float:
    hits = 0
    for item in prepared:
        a_n, a_c = model.score(item.example, item.full)
        if aggregate_prediction(a_n, a_c) == item.example.gold:
            hits += 1
    return hits / len(prepared)


def train(
    train_split: DatasetSplit,
    config: TrainConfig,
    encoder: SpanPairEncoder,
    dev_split: DatasetSplit | None = None,
    chunker=None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Run the optimization loop and return the trained model.

    Reproducible per (seed, device): shuffling, composite dropout, and
    head initialization all derive from config.seed. The encoder is
    used as passed in; seed it at construction for end-to-end
    determinism.
    """
    if len(train_split) == 0:
        raise TrainingError("training split is empty")
    torch.manual_seed(config.seed)
    segmenter = Segmenter(max_run_length=config.max_run_length, chunker=chunker)
    model = SpanModel(encoder, segmenter, head_hidden=config.head_hidden)
    prepared = _prepare(train_split, segmenter)
    dev_prepared = _prepare(dev_split, segmenter) if dev_split is not None else None

    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    steps_per_epoch = (len(prepared) + config.batch_size - 1) // config.batch_size
    schedule = build_schedule(config, steps_per_epoch)

    history: list[dict] = []
    best_state: dict | None = None
    best_epoch: int | None = None
    best_acc: float | None = None
    epochs_since_best = 0
    stopped_early = False
    global_step = 0

    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            order = list(range(len(prepared)))
            random.Random(f"{config.seed}:shuffle:{epoch}").shuffle(order)
            dropout_rng = random.Random(f"{config.seed}:dropout:{epoch}")

            model.train()
            sums: dict[str, float] = {}
            for lo in range(0, len(order), config.batch_size):
                batch = [prepared[i] for i in order[lo : lo + config.batch_size]]
                lr = schedule(global_step)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.zero_grad()
                batch_total = None
                for item in batch:
                    chosen = apply_composite_dropout(
                        item.full, config.composite_dropout_rate, dropout_rng
                    )
                    if chosen is item.full:
                        spanset, align = item.full, item.align_full
                    else:
                        spanset, align = item.granular_only, item.align_granular
                    scores = model(
                        item.premise_tokens, spanset.token_strings(), spanset
                    )
                    breakdown = total_example_loss(scores, item.target, align, config)
                    if not torch.isfinite(breakdown.total):
                        raise TrainingError(
                            f"non-finite loss on example {item.example.id!r} "
                            f"at epoch {epoch}"
                        )
                    for key, value in breakdown.to_floats().items():
                        sums[key] = sums.get(key, 0.0) + value
                    batch_total = (
                        breakdown.total
                        if batch_total is None
                        else batch_total + breakdown.total
                    )
                (batch_total / len(batch)).backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip_norm)
                optimizer.step()
                global_step += 1

            record = {
                "epoch": epoch,
                "examples": len(prepared),
                "lr_last": schedule(global_step - 1),
            }
            for key, value in sums.items():
                record[f"mean_{key}"] = value / len(prepared)

            if dev_prepared is not None:
                acc = _dev_accuracy(model, dev_prepared)
                record["dev_sentence_accuracy"] = acc
                if best_acc is None or acc > best_acc:
                    best_acc = acc
                    best_epoch = epoch
                    epochs_since_best = 0
                    best_state = {
                        k: v.detach().clone() for k, v in model.state_dict().items()
                    }
                else:
                    epochs_since_best += 1

            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            logger.info("epoch %d done: %s", epoch, record)

            if (
                config.early_stopping
                and dev_prepared is not None
                and epochs_since_best >= config.patience
            ):
                stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()

    if config.early_stopping and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(
        model=model,
        history=tuple(history),
        best_epoch=best_epoch,
        best_dev_accuracy=best_acc,
        stopped_early=stopped_early,
    )


def train_and_save(
    train_split: DatasetSplit,
    config: TrainConfig,
    encoder: SpanPairEncoder,
    checkpoint_path: str | Path,
    **kwargs,
) -> TrainResult:
    result = train(train_split, config, encoder, **kwargs)
    save_checkpoint(result.model, checkpoint_path)
    return result


# ---------------------------------------------------------------------------
# Config files: plain "key = value" text
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(name: str, raw: str):
    field = _CONFIG_FIELDS[name]
    hints = typing.get_type_hints(TrainConfig)
    target = hints[field.name]
    raw = raw.strip()
    if target is bool:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise TrainingError(f"config key {name}: expected a boolean, got {raw!r}")
    if target is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise TrainingError(f"config key {name}: expected an integer") from exc
    if target is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise TrainingError(f"config key {name}: expected a number") from exc
    # int | None (head_hidden)
    if raw.lower() in ("none", ""):
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise TrainingError(f"config key {name}: expected an integer or none") from exc


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise TrainingError(f"config line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_FIELDS:
            raise TrainingError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    base = base if base is not None else TrainConfig()
    return dataclasses.replace(base, **values)


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def format_config(config: TrainConfig) -> str:
    lines = []
    for field in dataclasses.fields(TrainConfig):
        value = getattr(config, field.name)
        if value is None:
            value = "none"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{field.name} = {value}")
    return "\n".join(lines) + "\n"
