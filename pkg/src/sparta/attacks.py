"""L-infinity PGD in pixel space, with per-iteration loss traces.

Targeted PGD descends the cross-entropy toward a chosen class; untargeted
PGD ascends the loss of the true label.  Each step is a signed-gradient
move of ``step_size`` pixels, followed by projection onto the epsilon ball
around the clean image and clipping to [0, 255].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from . import models as M
from . import seeding

PIXEL_MIN, PIXEL_MAX = 0.0, 255.0


class PixelRangeError(ValueError):
    pass


class Classifier(Protocol):
    """Anything PGD can attack: logits plus per-example loss gradients."""

    def logits(self, x: np.ndarray) -> np.ndarray: ...

    def loss_grad(self, x: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class ModelClassifier:
    """Eval-mode view of a :class:`~sparta.models.ModelState`."""

    def __init__(self, model: M.ModelState):
        self.model = model

    def logits(self, x):
        return M.forward(self.model, x, "eval")

    def loss_grad(self, x, labels):
        return M.input_grad(self.model, x, labels, "eval")


def as_classifier(model) -> Classifier:
    return ModelClassifier(model) if isinstance(model, M.ModelState) else model


@dataclass(frozen=True)
class AttackConfig:
    """PGD hyperparameters in pixel units.

    ``step_size=None`` picks epsilon/4 below 30 steps and epsilon/10 from 30
    steps on.  With ``epsilon == 0`` the step size is 0 (a null attack).
    """

    epsilon: float = 16.0
    steps: int = 10
    step_size: float | None = None
    targeted: bool = True
    random_start: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon / (4.0 if self.steps < 30 else 10.0))
        s = float(self.step_size)
        object.__setattr__(self, "step_size", s)
        if self.epsilon == 0:
            if s != 0:
                raise ValueError("step_size must be 0 when epsilon is 0")
        elif not 0 < s <= self.epsilon:
            raise ValueError(f"step_size must satisfy 0 < step_size <= epsilon, got {s} for epsilon {self.epsilon}")

    def with_epsilon(self, epsilon: float) -> "AttackConfig":
        """Same schedule at another budget (step size rescaled when defaulted)."""
        ratio = self.step_size / self.epsilon if self.epsilon else (1 / 4 if self.steps < 30 else 1 / 10)
        return AttackConfig(epsilon, self.steps, epsilon * ratio, self.targeted, self.random_start)

    def label(self) -> str:
        return f"PGD-{self.steps}@{self.epsilon:g}"


@dataclass
class LossTrace:
    """Loss of every example at every iterate: shape (steps + 1) x N."""

    losses: np.ndarray

    @property
    def steps(self) -> int:
        return self.losses.shape[0] - 1

    def mean(self) -> np.ndarray:
        return self.losses.mean(axis=1)

    def std(self) -> np.ndarray:
        return self.losses.std(axis=1)

    def concat(self, other: "LossTrace") -> "LossTrace":
        return LossTrace(np.concatenate([self.losses, other.losses], axis=1))

    def rows(self) -> list[tuple[int, float, float]]:
        return [(i, float(m), float(s)) for i, (m, s) in enumerate(zip(self.mean(), self.std()))]

    def to_csv(self, path) -> None:
        write_trace_csv(path, self.rows())


def write_trace_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iter", "mean_loss", "std_loss"])
        for i, m, s in rows:
            w.writerow([i, repr(m), repr(s)])


def read_trace_csv(path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        if next(r) != ["iter", "mean_loss", "std_loss"]:
            raise ValueError(f"{path}: unexpected loss-trace header")
        return [(int(i), float(m), float(s)) for i, m, s in r]


def random_targets(labels, num_classes: int, seed: int) -> np.ndarray:
    """For each label, a uniformly random class different from it."""
    if num_classes < 2:
        raise ValueError("targeted attacks need at least 2 classes")
    labels = np.asarray(labels, dtype=np.int64)
    shift = seeding.rng(seed, "targets").integers(1, num_classes, size=labels.shape)
    return (labels + shift) % num_classes


def _check_pixels(x: np.ndarray) -> None:
    if x.size and (x.min() < PIXEL_MIN or x.max() > PIXEL_MAX or not np.isfinite(x).all()):
        raise PixelRangeError(f"pixels must lie in [0, 255], got range [{x.min()}, {x.max()}]")


def _box(x0: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel bounds with |bound - x0| <= eps holding exactly in floating point."""
    lo = np.maximum(x0 - eps, PIXEL_MIN)
    hi = np.minimum(x0 + eps, PIXEL_MAX)
    # x0 +- eps can round one ulp too far; step such bounds back toward x0.
    while np.any(bad := hi - x0 > eps):
        hi = np.where(bad, np.nextafter(hi, x0), hi)
    while np.any(bad := x0 - lo > eps):
        lo = np.where(bad, np.nextafter(lo, x0), lo)
    return lo, hi


def pgd(model, x, labels, cfg: AttackConfig, seed: int = 0) -> tuple[np.ndarray, LossTrace]:
    """Run PGD; ``labels`` are attack targets (targeted) or true labels.

    Returns the adversarial batch and the loss of ``labels`` at every iterate
    (index 0 is the starting point, the clean image unless ``random_start``).
    """
    clf = as_classifier(model)
    x0 = np.array(x, dtype=np.float64)
    _check_pixels(x0)
    labels = np.asarray(labels, dtype=np.int64)
    eps, alpha = cfg.epsilon, cfg.step_size
    lo, hi = _box(x0, eps)
    xa = x0.copy()
    if cfg.random_start and eps > 0:
        xa = np.clip(x0 + seeding.rng(seed, "random_start").uniform(-eps, eps, size=x0.shape), lo, hi)
    direction = -1.0 if cfg.targeted else 1.0
    trace = []
    for _ in range(cfg.steps):
        loss, g = clf.loss_grad(xa, labels)
        trace.append(loss)
        xa = np.clip(xa + direction * alpha * np.sign(g), lo, hi)
    loss, _ = clf.loss_grad(xa, labels)
    trace.append(loss)
    return xa, LossTrace(np.stack(trace))


def predict(model, x, batch_size: int = 256) -> np.ndarray:
    clf = as_classifier(model)
    return np.concatenate([np.argmax(clf.logits(x[i:i + batch_size]), axis=1)
                           for i in range(0, len(x), batch_size)])


def attack_dataset(model, dataset, cfg: AttackConfig, seed: int = 0,
                   batch_size: int = 256) -> tuple[np.ndarray, np.ndarray, LossTrace]:
    """Attack every example; returns (adversarial images, attack labels, trace)."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    x, y = dataset.images, dataset.labels
    labels = random_targets(y, dataset.class_count, seed) if cfg.targeted else y
    advs, trace = [], None
    for b, i in enumerate(range(0, len(x), batch_size)):
        xa, tr = pgd(model, x[i:i + batch_size], labels[i:i + batch_size], cfg, seeding.subseed(seed, "batch", b))
        advs.append(xa)
        trace = tr if trace is None else trace.concat(tr)
    return np.concatenate(advs), labels, trace


def evaluate_robustness(model, dataset, cfg: AttackConfig, seed: int = 0, batch_size: int = 256) -> float:
    """Top-1 error on freshly generated adversarial examples."""
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    xa, _, _ = attack_dataset(model, dataset, cfg, seed, batch_size)
    return float(np.mean(predict(model, xa, batch_size) != dataset.labels))
