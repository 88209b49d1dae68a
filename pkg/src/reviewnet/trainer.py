"""SGD training loop: plain parameter updates at a fixed learning rate.

A training instance is one (image, label, comment) triple, so an epoch walks
six instances per image. Validation loss doubles as the checkpoint selection
metric: the joint loss for multi-task variants, the task loss otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import ReviewDataset, ReviewExample, Vocabulary, encode_caption, tokenize
from .errors import ConfigError, ContractError, NumericError
from .inference import greedy_decode, predict_class, strip_end
from .metrics import EvalPair, bleu
from .model import ReviewerModel
from .tensor import Tensor, backward, mean_stack


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    dropout_keep: float = 0.7
    epochs: int = 30
    seed: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    max_caption_len: int = 30
    clip_norm: float | None = None  # off by default; long unrolls can spike

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError(f"dropout_keep must be in (0, 1], got {self.dropout_keep}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.max_caption_len < 1:
            raise ConfigError(f"max_caption_len must be >= 1, got {self.max_caption_len}")


@dataclass(frozen=True)
class Instance:
    example_id: str
    inputs: np.ndarray
    label: int
    caption: tuple[int, ...]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_loss: float
    valid_accuracy: float | None


@dataclass
class TrainResult:
    log: list[EpochStats]
    best_epoch: int
    best_valid_loss: float
    best_state: dict[str, np.ndarray]


def make_instances(examples: list[ReviewExample], vocab: Vocabulary | None,
                   max_caption_len: int) -> list[Instance]:
    """One instance per (image, comment); captions are encoded and length-capped.

    With a vocabulary present, comments that tokenize to nothing are dropped
    (an empty caption has no next-token targets).
    """
    instances = []
    for ex in examples:
        for comment in ex.comments:
            caption: tuple[int, ...] = ()
            if vocab is not None:
                caption = tuple(encode_caption(tokenize(comment), vocab)[:max_caption_len])
                if not caption:
                    continue
            instances.append(Instance(ex.example_id, ex.inputs(), int(ex.label), caption))
    return instances


def instance_loss(model: ReviewerModel, inst: Instance, config: TrainConfig,
                  rng: np.random.Generator | None) -> Tensor:
    keep = config.dropout_keep if rng is not None else 1.0
    if model.variant.multi_task:
        return model.joint_loss(inst.inputs, inst.label, list(inst.caption),
                                config.alpha, config.beta, dropout_keep=keep, rng=rng)
    out = model.forward(inst.inputs,
                        label=inst.label if model.variant.has_classifier else None,
                        caption=list(inst.caption) if model.variant.has_generator else None,
                        dropout_keep=keep, rng=rng)
    return out.aesthetics if model.variant.has_classifier else out.language


def sgd_step(model: ReviewerModel, batch: list[Instance], config: TrainConfig,
             rng: np.random.Generator | None = None) -> float:
    """One update: p <- p - lr * grad of the mean batch loss."""
    if not batch:
        raise ContractError("sgd_step needs a non-empty batch")
    model.zero_grad()
    losses = [instance_loss(model, inst, config, rng) for inst in batch]
    total = mean_stack(losses)
    value = float(total.data)
    if not np.isfinite(value):
        ids = sorted({inst.example_id for inst in batch})
        raise NumericError(f"non-finite loss {value} on batch of examples {ids}")
    backward(total)
    params = model.trainable_parameters()
    if config.clip_norm is not None:
        norm = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params.values())))
        if norm > config.clip_norm:
            factor = config.clip_norm / norm
            for p in params.values():
                p.grad *= factor
    for p in params.values():
        p.data -= config.learning_rate * p.grad
    return value


def _mean_valid_loss(model: ReviewerModel, instances: list[Instance],
                     config: TrainConfig) -> float:
    total = 0.0
    for inst in instances:
        total += float(instance_loss(model, inst, config, None).data)
    return total / len(instances)


def _valid_accuracy(model: ReviewerModel, examples: list[ReviewExample]) -> float | None:
    if not model.variant.has_classifier:
        return None
    correct = sum(int(predict_class(model, ex.inputs())[0]) == int(ex.label) for ex in examples)
    return correct / len(examples)


def train(model: ReviewerModel, dataset: ReviewDataset, config: TrainConfig) -> TrainResult:
    """Seeded epochs over shuffled instances; restores the best-validation state.

    With ``epochs == 0`` the model is returned untouched and the log is empty.
    """
    vocab = dataset.vocab if model.variant.has_generator else None
    if model.variant.has_generator and vocab is None:
        raise ConfigError("training a captioning variant needs a vocabulary (run build-vocab)")
    train_examples = dataset.split("train")
    valid_examples = dataset.split("valid")
    if not train_examples:
        raise ConfigError("the train split is empty")
    if not valid_examples:
        raise ConfigError("the valid split is empty")
    train_instances = make_instances(train_examples, vocab, config.max_caption_len)
    valid_instances = make_instances(valid_examples, vocab, config.max_caption_len)
    if not train_instances or not valid_instances:
        raise ConfigError("no usable training instances (are all comments empty?)")

    rng = np.random.default_rng(config.seed)
    log: list[EpochStats] = []
    best_state = model.param_state()
    best_valid = float("inf")
    best_epoch = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_instances))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_instances[i] for i in order[start:start + config.batch_size]]
            batch_losses.append(sgd_step(model, batch, config, rng))
        valid_loss = _mean_valid_loss(model, valid_instances, config)
        stats = EpochStats(epoch, float(np.mean(batch_losses)), valid_loss,
                           _valid_accuracy(model, valid_examples))
        log.append(stats)
        if valid_loss < best_valid:
            best_valid = valid_loss
            best_epoch = epoch
            best_state = model.param_state()
    if config.epochs == 0:
        best_valid = float("nan")
    model.load_param_state(best_state)
    return TrainResult(log, best_epoch, best_valid, best_state)


def write_metrics_csv(log: list[EpochStats], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_loss", "valid_accuracy"])
        for row in log:
            acc = "" if row.valid_accuracy is None else repr(row.valid_accuracy)
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.valid_loss), acc])


def _valid_bleu1(model: ReviewerModel, examples: list[ReviewExample], vocab: Vocabulary,
                 max_len: int) -> float:
    if not model.variant.has_generator:
        return 0.0
    pairs = []
    for ex in examples:
        decoded = vocab.decode(strip_end(greedy_decode(model, ex.inputs(), max_len)))
        pairs.append(EvalPair(decoded, [tokenize(c) for c in ex.comments]))
    return bleu(pairs, 1)


def tune_alpha_beta(model_factory, dataset: ReviewDataset,
                    grid: list[tuple[float, float]], config: TrainConfig
                    ) -> tuple[float, float]:
    """Short training run per grid point; picks the pair with the best
    validation accuracy, ties broken by validation BLEU-1, then grid order."""
    if not grid:
        raise ConfigError("the alpha/beta grid is empty")
    valid_examples = dataset.split("valid")
    best_pair = None
    best_key: tuple[float, float] | None = None
    for alpha, beta in grid:
        model = model_factory()
        train(model, dataset, replace(config, alpha=alpha, beta=beta))
        accuracy = _valid_accuracy(model, valid_examples)
        bleu1 = (_valid_bleu1(model, valid_examples, dataset.vocab, config.max_caption_len)
                 if dataset.vocab is not None else 0.0)
        key = (accuracy if accuracy is not None else 0.0, bleu1)
        if best_key is None or key > best_key:
            best_key = key
            best_pair = (alpha, beta)
    return best_pair
