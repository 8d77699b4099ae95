"""Flat ``key = value`` experiment configuration.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines
are ignored; keys are dotted names from :data:`SCHEMA`; later lines
override earlier ones.  Lists are comma separated.  Unknown keys and
malformed values raise :class:`ConfigError` naming the key (and line).

Exactly one dataset source must be given: ``data.synth = true``,
``data.cifar10 = PATH`` or ``data.file = PATH``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .activations import ActivationKind
from .attacks import AttackConfig
from .data import SynthSpec
from .seeding import subseed
from .models import BackboneConfig, ReplacementStrategy, Slot, parse_slots
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_str(s: str) -> str | None:
    s = s.strip()
    return None if s.lower() in ("", "none") else s


def _opt_int(s: str) -> int | None:
    s = s.strip()
    return None if s.lower() in ("", "none") else int(s)


def _opt_float(s: str) -> float | None:
    s = s.strip()
    return None if s.lower() in ("", "none") else float(s)


def _ints(s: str) -> tuple[int, ...]:
    s = s.strip()
    return () if s.lower() in ("", "none") else tuple(int(p) for p in s.split(","))


def parse_floats(s: str) -> tuple[float, ...]:
    s = s.strip()
    return () if s.lower() in ("", "none") else tuple(float(p) for p in s.split(","))


def _extent(s: str) -> tuple[int, ...]:
    dims = tuple(int(p) for p in s.lower().split("x"))
    if len(dims) != 3:
        raise ValueError(f"expected HxWxC, got {s!r}")
    return dims


def _groups(s: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in s.split(","):
        b, c = part.strip().lower().split("x")
        out.append((int(b), int(c)))
    return tuple(out)


def _attacks(s: str) -> tuple[tuple[float, int], ...]:
    s = s.strip()
    if s.lower() in ("", "none"):
        return ()
    out = []
    for part in s.split(","):
        eps, _, steps = part.strip().partition(":")
        out.append((float(eps), int(steps) if steps else 10))
    return tuple(out)


def parse_slot_map(s: str) -> tuple[tuple[str, str], ...]:
    s = s.strip()
    if s.lower() in ("", "none", "auto"):
        return ()
    pairs = []
    for part in s.split(","):
        a, sep, b = part.partition("->")
        if not sep:
            raise ValueError(f"expected DONOR->RECIPIENT slot pairs, got {part.strip()!r}")
        pairs.append((a.strip(), b.strip()))
    return tuple(pairs)


# key -> (parser, default text)
SCHEMA: dict[str, tuple[Callable[[str], Any], str]] = {
    "seed": (int, "0"),
    "out": (str, "runs/default"),
    "data.synth": (_bool, "false"),
    "data.cifar10": (_opt_str, "none"),
    "data.cifar10_test": (_opt_str, "none"),
    "data.file": (_opt_str, "none"),
    "data.test_file": (_opt_str, "none"),
    "synth.classes": (int, "10"),
    "synth.train_per_class": (int, "200"),
    "synth.test_per_class": (int, "50"),
    "synth.extent": (_extent, "10x10x3"),
    "synth.margin": (float, "120"),
    "synth.noise": (float, "25"),
    "synth.texture": (float, "0.0625"),
    "synth.marker_pixels": (int, "2"),
    "synth.seed": (_opt_int, "none"),
    "backbone.groups": (_groups, "1x16,1x32,1x64"),
    "backbone.batch_norm": (_bool, "true"),
    "strategy.slots": (str, "none"),
    "strategy.activation": (str, "ReLU"),
    "strategy.share_n": (_opt_int, "none"),
    "strategy.k": (int, "1"),
    "strategy.c_o_cap": (int, "256"),
    "train.epochs": (int, "20"),
    "train.base_lr": (float, "0.1"),
    "train.lr_decay_epochs": (_ints, "30,60"),
    "train.lr_decay_factor": (float, "0.1"),
    "train.weight_decay": (float, "1e-4"),
    "train.momentum": (float, "0.9"),
    "train.batch_size": (int, "128"),
    "train.mode": (str, "standard"),
    "train.augment": (_bool, "true"),
    "train.attack.epsilon": (float, "16"),
    "train.attack.steps": (int, "10"),
    "train.attack.step_size": (_opt_float, "none"),
    "train.attack.targeted": (_bool, "true"),
    "train.attack.random_start": (_bool, "true"),
    "eval.attacks": (_attacks, "16:10"),
    "eval.targeted": (_bool, "true"),
    "eval.random_start": (_bool, "false"),
    "eval.batch_size": (int, "256"),
    "transfer.donor": (_opt_str, "none"),
    "transfer.slots": (parse_slot_map, "auto"),
    "dump.layer": (_opt_str, "none"),
    "dump.images": (int, "1"),
    "sweep.epsilons": (parse_floats, "0,4,8,16,32"),
    "sweep.steps": (int, "10"),
}


@dataclass
class ExperimentConfig:
    raw: dict[str, str]
    seed: int
    out_dir: Path
    backbone_groups: tuple[tuple[int, int], ...]
    batch_norm: bool
    strategy_slots: str
    activation: ActivationKind
    train: TrainConfig
    eval_attacks: list[AttackConfig]
    eval_batch_size: int
    source: str
    synth: SynthSpec | None
    synth_test_per_class: int
    paths: dict[str, str | None] = field(default_factory=dict)
    donor: str | None = None
    slot_map: tuple[tuple[str, str], ...] = ()
    dump_layer: str | None = None
    dump_images: int = 1
    sweep_epsilons: tuple[float, ...] = ()
    sweep_steps: int = 10

    def backbone(self, input_shape, num_classes) -> BackboneConfig:
        return BackboneConfig(self.backbone_groups, tuple(input_shape), num_classes, self.batch_norm)

    def strategy(self, cfg: BackboneConfig) -> ReplacementStrategy:
        return ReplacementStrategy(parse_slots(self.strategy_slots, cfg), self.activation)

    def slot_pairs(self, cfg: BackboneConfig) -> list[tuple[Slot, Slot]] | None:
        if not self.slot_map:
            return None
        out = []
        for a, b in self.slot_map:
            (da,), (rb,) = parse_slots(a, cfg), parse_slots(b, cfg)
            out.append((da, rb))
        return out

    def to_text(self) -> str:
        """Canonical text: every key with its resolved value."""
        return "".join(f"{k} = {self.raw[k]}\n" for k in SCHEMA)


def parse_text(text: str, overrides: dict[str, str] | None = None, origin: str = "<config>") -> ExperimentConfig:
    raw = {k: d for k, (_, d) in SCHEMA.items()}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {line!r}")
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{n}: {key}: unknown key")
        raw[key] = value.strip()
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"{key}: unknown key")
        raw[key] = str(value)
    return _build(raw)


def load(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from None
    return parse_text(text, overrides, str(p))


def _build(raw: dict[str, str]) -> ExperimentConfig:
    v: dict[str, Any] = {}
    for key, (parse, _) in SCHEMA.items():
        try:
            v[key] = parse(raw[key])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{key}: {e}") from None

    def field_guard(prefix, fn):
        try:
            return fn()
        except ValueError as e:
            raise ConfigError(f"{prefix}: {e}") from None

    sources = [s for s, on in (("synth", v["data.synth"]), ("cifar10", v["data.cifar10"]),
                               ("file", v["data.file"])) if on]
    if len(sources) != 1:
        raise ConfigError(f"data: exactly one dataset source required (data.synth, data.cifar10, data.file), "
                          f"got {len(sources)}")
    seed = v["seed"]
    synth = None
    if sources[0] == "synth":
        sseed = v["synth.seed"] if v["synth.seed"] is not None else subseed(seed, "synth") % 2**31
        synth = field_guard("synth", lambda: SynthSpec(v["synth.classes"], v["synth.train_per_class"],
                                                       v["synth.extent"], sseed, v["synth.margin"],
                                                       v["synth.noise"], v["synth.texture"],
                                                       v["synth.marker_pixels"]))
    activation = field_guard("strategy.activation", lambda: ActivationKind.parse(
        v["strategy.activation"], v["strategy.share_n"], v["strategy.k"], v["strategy.c_o_cap"]))
    attack = field_guard("train.attack", lambda: AttackConfig(
        v["train.attack.epsilon"], v["train.attack.steps"], v["train.attack.step_size"],
        v["train.attack.targeted"], v["train.attack.random_start"]))
    train = field_guard("train", lambda: TrainConfig(
        v["train.epochs"], v["train.base_lr"], v["train.lr_decay_epochs"], v["train.lr_decay_factor"],
        v["train.weight_decay"], v["train.momentum"], v["train.batch_size"], v["train.mode"], attack,
        subseed(seed, "train"), v["train.augment"]))
    evals = field_guard("eval.attacks", lambda: [
        AttackConfig(e, s, 0.0 if e == 0 else None, v["eval.targeted"], v["eval.random_start"])
        for e, s in v["eval.attacks"]])
    eps = v["sweep.epsilons"]
    if eps and any(b < a for a, b in zip(eps, eps[1:])):
        raise ConfigError("sweep.epsilons: grid must be ascending")
    if any(e < 0 for e in eps):
        raise ConfigError("sweep.epsilons: values must be >= 0")
    return ExperimentConfig(
        raw=dict(raw), seed=seed, out_dir=Path(v["out"]), backbone_groups=v["backbone.groups"],
        batch_norm=v["backbone.batch_norm"], strategy_slots=v["strategy.slots"], activation=activation,
        train=train, eval_attacks=evals, eval_batch_size=v["eval.batch_size"], source=sources[0],
        synth=synth, synth_test_per_class=v["synth.test_per_class"],
        paths={k.split(".", 1)[1]: v[k] for k in ("data.cifar10", "data.cifar10_test", "data.file",
                                                  "data.test_file")},
        donor=v["transfer.donor"], slot_map=v["transfer.slots"], dump_layer=v["dump.layer"],
        dump_images=v["dump.images"], sweep_epsilons=eps, sweep_steps=v["sweep.steps"])
