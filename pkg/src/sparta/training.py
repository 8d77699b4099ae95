"""Standard and adversarial training with a step-decay SGD schedule."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import attacks as A
from . import autodiff as ad
from . import data as D
from . import models as M
from . import seeding


class UnknownParameterError(KeyError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    base_lr: float = 0.1
    lr_decay_epochs: tuple[int, ...] = (30, 60)
    lr_decay_factor: float = 0.1
    weight_decay: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 128
    mode: str = "standard"
    attack: A.AttackConfig = field(default_factory=lambda: A.AttackConfig(random_start=True))
    seed: int = 0
    augment: bool = True
    eval_attack: A.AttackConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        d = self.lr_decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"lr_decay_epochs must be strictly increasing, got {d}")
        if self.mode not in ("standard", "adversarial"):
            raise ValueError(f"mode must be 'standard' or 'adversarial', got {self.mode!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must lie in [0, 1) and weight_decay be >= 0")


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    clean_err: float
    adv_err: float | None
    seconds: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "EpochReport":
        return cls(**json.loads(line))


def write_reports(path, reports: list[EpochReport]) -> None:
    with open(path, "w") as f:
        for r in reports:
            f.write(r.to_json() + "\n")


def read_reports(path) -> list[EpochReport]:
    with open(path) as f:
        return [EpochReport.from_json(line) for line in f if line.strip()]


def cross_entropy(logits, labels) -> float:
    """Mean softmax cross-entropy of a logits array."""
    tape = ad.Tape()
    z = tape.leaf(np.asarray(logits, dtype=np.float64), requires_grad=False)
    return float(ad.cross_entropy(z, labels).value[0])


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    decays = sum(1 for d in cfg.lr_decay_epochs if epoch >= d)
    return cfg.base_lr * cfg.lr_decay_factor ** decays


def sgd_step(model: M.ModelState, grads: dict[str, np.ndarray], epoch: int, cfg: TrainConfig) -> M.ModelState:
    """One momentum-SGD update, applied in place; frozen keys are skipped."""
    unknown = sorted(set(grads) - set(model.params))
    if unknown:
        raise UnknownParameterError(f"gradient for unknown parameter(s): {', '.join(unknown)}")
    lr = lr_at(epoch, cfg)
    for k, g in grads.items():
        if not model.trainable[k]:
            continue
        p = model.params[k]
        v = model.velocity.get(k)
        step = g + cfg.weight_decay * p
        v = step if v is None else cfg.momentum * v + step
        model.velocity[k] = v
        model.params[k] = p - lr * v
    return model


def evaluate(model, dataset, batch_size: int = 256) -> float:
    """Clean top-1 error (eval mode; ties go to the lowest class index)."""
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    return float(np.mean(A.predict(model, dataset.images, batch_size) != dataset.labels))


def train(model: M.ModelState, dataset: D.Dataset, cfg: TrainConfig,
          eval_dataset: D.Dataset | None = None,
          on_epoch: Callable[[EpochReport], None] | None = None) -> tuple[M.ModelState, list[EpochReport]]:
    """Train a copy of ``model``.

    Adversarial mode replaces every batch by targeted PGD examples (random
    targets each batch) generated against the current parameters.  Clean and
    adversarial errors in the reports use ``eval_dataset`` (default: the
    training set).
    """
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    model = model.copy()
    reports = []
    eval_ds = eval_dataset if eval_dataset is not None else dataset
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        shuffle = seeding.subseed(cfg.seed, "shuffle", epoch)
        for b, (x, y) in enumerate(D.batches(dataset, cfg.batch_size, shuffle, cfg.augment)):
            if cfg.mode == "adversarial":
                s = seeding.subseed(cfg.seed, "attack", epoch, b)
                labels = A.random_targets(y, dataset.class_count, s) if cfg.attack.targeted else y
                before = model.checksum()
                x, _ = A.pgd(model, x, labels, cfg.attack, seed=s)
                if model.checksum() != before:
                    raise RuntimeError("parameters changed during the inner attack")
            loss, grads, _ = M.loss_and_param_grads(model, x, y, "train")
            sgd_step(model, grads, epoch, cfg)
            total += loss * len(y)
            count += len(y)
        clean = evaluate(model, eval_ds)
        adv = None
        if cfg.eval_attack is not None:
            adv = A.evaluate_robustness(model, eval_ds, cfg.eval_attack, seeding.subseed(cfg.seed, "eval", epoch))
        rep = EpochReport(epoch, total / count, clean, adv, time.perf_counter() - t0)
        reports.append(rep)
        if on_epoch is not None:
            on_epoch(rep)
    return model, reports
