"""Residual CNN backbones with replaceable block activations.

A backbone is a stem (3x3 conv, BN, ReLU) followed by groups of basic
residual blocks and a global-pool + dense head.  Group ``i`` block ``j``
(both 1-based, written ``G{i}.B{j}``) ends with the post-addition
activation; these are the slots a :class:`ReplacementStrategy` can swap
for another activation.  Pixels enter in [0, 255] and are normalized by a
fixed affine map inside the model.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import seeding
from . import tensor as T
from .activations import RELU, ActivationKind, DSCANetParams, apply_var, dscanet_shapes, init_dscanet, reduced_width

Slot = tuple[int, int]

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class InvalidSlotError(ValueError):
    pass


class NoSpartaSlotsError(ValueError):
    pass


class WidthMismatchError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    """``groups`` lists (blocks, channels) per group; input is H x W x C."""

    groups: tuple[tuple[int, int], ...] = ((1, 16), (1, 32), (1, 64))
    input_shape: tuple[int, int, int] = (32, 32, 3)
    num_classes: int = 10
    batch_norm: bool = True
    input_mean: float = 127.5
    input_std: float = 64.0

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple((int(b), int(c)) for b, c in self.groups))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if not self.groups:
            raise ValueError("backbone needs at least one group")
        chans = [c for _, c in self.groups]
        if any(b < 1 for b, _ in self.groups) or any(c < 1 for c in chans):
            raise ValueError(f"group blocks and channels must be positive: {self.groups}")
        if chans != sorted(chans):
            raise ValueError(f"group channels must be nondecreasing: {chans}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @classmethod
    def resnet8(cls, input_shape=(32, 32, 3), num_classes: int = 10) -> "BackboneConfig":
        return cls(((1, 16), (1, 32), (1, 64)), input_shape, num_classes)

    @classmethod
    def resnet18(cls, input_shape=(32, 32, 3), num_classes: int = 10) -> "BackboneConfig":
        return cls(((2, 64), (2, 128), (2, 256), (2, 512)), input_shape, num_classes)

    def slots(self) -> list[Slot]:
        return [(i, j) for i, (blocks, _) in enumerate(self.groups, 1) for j in range(1, blocks + 1)]

    def slot_channels(self, slot: Slot) -> int:
        return self.groups[slot[0] - 1][1]

    def to_dict(self) -> dict:
        return {"groups": [list(g) for g in self.groups], "input_shape": list(self.input_shape),
                "num_classes": self.num_classes, "batch_norm": self.batch_norm,
                "input_mean": self.input_mean, "input_std": self.input_std}

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(tuple(tuple(g) for g in d["groups"]), tuple(d["input_shape"]), d["num_classes"],
                   d["batch_norm"], d["input_mean"], d["input_std"])


def slot_name(slot: Slot) -> str:
    return f"G{slot[0]}.B{slot[1]}"


_SLOT_RE = re.compile(r"^G(\d+|\*)\.B(\d+|\*|last)$", re.IGNORECASE)


def parse_slots(text: str, cfg: BackboneConfig) -> frozenset[Slot]:
    """Parse ``G1.B2, G2.B2`` style slot lists; ``*`` and ``last`` are allowed.

    ``none`` or an empty string gives the empty set.
    """
    text = text.strip()
    if text.lower() in ("", "none"):
        return frozenset()
    out = set()
    for part in text.split(","):
        m = _SLOT_RE.match(part.strip())
        if not m:
            raise InvalidSlotError(f"cannot parse slot {part.strip()!r}; expected G<i>.B<j>")
        g, b = m.group(1), m.group(2).lower()
        groups = range(1, len(cfg.groups) + 1) if g == "*" else [int(g)]
        for i in groups:
            if not 1 <= i <= len(cfg.groups):
                raise InvalidSlotError(f"slot (G{i}.B{b}) names a group that does not exist")
            blocks = cfg.groups[i - 1][0]
            js = range(1, blocks + 1) if b == "*" else [blocks] if b == "last" else [int(b)]
            for j in js:
                if not 1 <= j <= blocks:
                    raise InvalidSlotError(f"invalid slot ({i},{j}): group {i} has {blocks} block(s)")
                out.add((i, j))
    return frozenset(out)


@dataclass(frozen=True)
class ReplacementStrategy:
    """Which block-output activations are replaced, and by what."""

    slots: frozenset[Slot] = frozenset()
    activation: ActivationKind = RELU

    def __post_init__(self):
        object.__setattr__(self, "slots", frozenset(tuple(s) for s in self.slots))

    def validate(self, cfg: BackboneConfig) -> None:
        valid = set(cfg.slots())
        for s in sorted(self.slots):
            if s not in valid:
                raise InvalidSlotError(f"invalid slot ({s[0]},{s[1]}): backbone has no {slot_name(s)}")

    def describe(self) -> str:
        if not self.slots or self.activation == RELU:
            return "ReLU"
        return f"{self.activation}@{'+'.join(slot_name(s) for s in sorted(self.slots))}"


# ----------------------------------------------------------------- the state


@dataclass
class ModelState:
    """Parameters keyed by layer path, with trainable flags and BN statistics.

    ``slot_kinds`` records the activation in every block slot; DSCANet
    parameters of slot ``G{i}.B{j}`` live under ``G{i}.B{j}.act.``.
    ``velocity`` holds SGD momentum buffers.
    """

    cfg: BackboneConfig
    slot_kinds: dict[Slot, ActivationKind]
    params: dict[str, np.ndarray]
    trainable: dict[str, bool]
    stats: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelState":
        return ModelState(self.cfg, dict(self.slot_kinds),
                          {k: v.copy() for k, v in self.params.items()}, dict(self.trainable),
                          {k: v.copy() for k, v in self.stats.items()},
                          {k: v.copy() for k, v in self.velocity.items()})

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def sparta_slots(self) -> list[Slot]:
        return sorted(s for s, k in self.slot_kinds.items() if k.is_sparta)

    def activation_keys(self, slot: Slot | None = None) -> list[str]:
        if slot is None:
            return sorted(k for k in self.params if ".act." in k)
        prefix = slot_name(slot) + ".act."
        return sorted(k for k in self.params if k.startswith(prefix))

    def slot_params(self, slot: Slot) -> dict[str, np.ndarray]:
        prefix = slot_name(slot) + ".act."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def slot_dscanet(self, slot: Slot) -> DSCANetParams:
        kind = self.slot_kinds[slot]
        if not kind.is_sparta:
            raise InvalidSlotError(f"slot {slot_name(slot)} holds {kind.tag}, not a SPARTA activation")
        c = self.cfg.slot_channels(slot)
        return DSCANetParams(c, reduced_width(c, kind.c_o_cap), kind.k, kind.use_dpnet, self.slot_params(slot))

    def checksum(self, keys=None) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params if keys is None else keys):
            h.update(k.encode())
            h.update(self.params[k].tobytes())
        return h.hexdigest()

    def strategy_tag(self) -> str:
        sp = self.sparta_slots()
        if not sp:
            return "ReLU"
        kinds = sorted({str(self.slot_kinds[s]) for s in sp})
        return f"{'/'.join(kinds)}@{'+'.join(slot_name(s) for s in sp)}"


def _layer_specs(cfg: BackboneConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(key, shape, init) for every backbone parameter, in a fixed order."""
    specs = []
    bn = cfg.batch_norm

    def conv(prefix, k, cin, cout, bn_name):
        specs.append((f"{prefix}.w", (k, k, cin, cout), "he"))
        if bn:
            specs.append((f"{bn_name}.gamma", (cout,), "one"))
            specs.append((f"{bn_name}.beta", (cout,), "zero"))
        else:
            specs.append((f"{prefix}.b", (cout,), "zero"))

    c_in = cfg.input_shape[2]
    c0 = cfg.groups[0][1]
    conv("stem.conv", 3, c_in, c0, "stem.bn")
    prev = c0
    for i, (blocks, ch) in enumerate(cfg.groups, 1):
        for j in range(1, blocks + 1):
            p = f"G{i}.B{j}"
            cin = prev if j == 1 else ch
            stride = 2 if (i > 1 and j == 1) else 1
            conv(f"{p}.conv1", 3, cin, ch, f"{p}.bn1")
            conv(f"{p}.conv2", 3, ch, ch, f"{p}.bn2")
            if stride != 1 or cin != ch:
                conv(f"{p}.shortcut", 1, cin, ch, f"{p}.shortcut_bn")
        prev = ch
    specs.append(("fc.w", (prev, cfg.num_classes), "fc"))
    specs.append(("fc.b", (cfg.num_classes,), "zero"))
    return specs


def build_model(cfg: BackboneConfig, strategy: ReplacementStrategy = ReplacementStrategy(),
                seed: int = 0) -> ModelState:
    """Initialize a backbone; each tensor draws from its own named seed stream."""
    strategy.validate(cfg)
    params, trainable, stats = {}, {}, {}
    for key, shape, init in _layer_specs(cfg):
        if init == "he":
            fan_in = int(np.prod(shape[:-1]))
            v = seeding.rng(seed, "init", key).normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif init == "fc":
            v = seeding.rng(seed, "init", key).normal(0.0, np.sqrt(1.0 / shape[0]), size=shape)
        elif init == "one":
            v = np.ones(shape)
        else:
            v = np.zeros(shape)
        params[key] = v
        trainable[key] = True
        if key.endswith(".gamma"):
            base = key[: -len(".gamma")]
            stats[base + ".mean"] = np.zeros(shape)
            stats[base + ".var"] = np.ones(shape)
    kinds = {s: RELU for s in cfg.slots()}
    model = ModelState(cfg, kinds, params, trainable, stats)
    if strategy.activation.is_sparta:
        for slot in sorted(strategy.slots):
            _install(model, slot, strategy.activation, seed)
    else:
        for slot in strategy.slots:
            kinds[slot] = strategy.activation
    return model


def _install(model: ModelState, slot: Slot, kind: ActivationKind, seed: int,
             tensors: dict[str, np.ndarray] | None = None, trainable: bool = True) -> None:
    for k in model.activation_keys(slot):
        del model.params[k]
        del model.trainable[k]
        model.velocity.pop(k, None)
    model.slot_kinds[slot] = kind
    if not kind.is_sparta:
        return
    c = model.cfg.slot_channels(slot)
    if tensors is None:
        tensors = init_dscanet(c, seeding.rng(seed, "init", slot_name(slot), "dscanet"),
                               kind.use_dpnet, kind.k, kind.c_o_cap).tensors
    prefix = slot_name(slot) + ".act."
    for k, v in tensors.items():
        model.params[prefix + k] = v.copy()
        model.trainable[prefix + k] = trainable


def dscanet_param_count(c: int, kind: ActivationKind) -> int:
    shapes = dscanet_shapes(c, kind.k, kind.use_dpnet, reduced_width(c, kind.c_o_cap))
    return int(sum(np.prod(s) for s in shapes.values()))


# ------------------------------------------------------------------- forward


def _bn(tape_vars, model, name, h, mode, update):
    g, b = tape_vars[f"{name}.gamma"], tape_vars[f"{name}.beta"]
    if mode == "train":
        out = ad.batch_norm(h, g, b, BN_EPS)
        if update:
            v = h.value
            axes = tuple(range(v.ndim - 1))
            m = int(np.prod([v.shape[a] for a in axes]))
            mu = v.mean(axis=axes)
            var = v.var(axis=axes) * (m / (m - 1) if m > 1 else 1.0)
            model.stats[f"{name}.mean"] = BN_MOMENTUM * model.stats[f"{name}.mean"] + (1 - BN_MOMENTUM) * mu
            model.stats[f"{name}.var"] = BN_MOMENTUM * model.stats[f"{name}.var"] + (1 - BN_MOMENTUM) * var
        return out
    return ad.batch_norm(h, g, b, BN_EPS, stats=(model.stats[f"{name}.mean"], model.stats[f"{name}.var"]))


def graph(model: ModelState, x: ad.Var, mode: str = "eval", params: dict[str, ad.Var] | None = None,
          capture: dict | None = None, update_stats: bool = True) -> ad.Var:
    """Build the forward pass on ``x``'s tape and return the logits node.

    ``params`` maps keys to tape nodes; missing keys become constants.
    ``capture`` receives {slot name: (activation input, activation output)}.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = model.cfg
    tape = x.tape
    pv = dict(params or {})
    for k, v in model.params.items():
        if k not in pv:
            pv[k] = tape.constant(v)
    bn = cfg.batch_norm

    def conv_bn(h, prefix, bn_name, stride, pad):
        h = ad.conv2d(h, pv[f"{prefix}.w"], None if bn else pv[f"{prefix}.b"], stride=stride, pad=pad)
        return _bn(pv, model, bn_name, h, mode, update_stats) if bn else h

    h = ad.mul(ad.sub(x, cfg.input_mean), 1.0 / cfg.input_std)
    h = ad.relu(conv_bn(h, "stem.conv", "stem.bn", 1, 1))
    prev = cfg.groups[0][1]
    for i, (blocks, ch) in enumerate(cfg.groups, 1):
        for j in range(1, blocks + 1):
            p = f"G{i}.B{j}"
            cin = prev if j == 1 else ch
            stride = 2 if (i > 1 and j == 1) else 1
            out = ad.relu(conv_bn(h, f"{p}.conv1", f"{p}.bn1", stride, 1))
            out = conv_bn(out, f"{p}.conv2", f"{p}.bn2", 1, 1)
            sc = conv_bn(h, f"{p}.shortcut", f"{p}.shortcut_bn", stride, 0) if (stride != 1 or cin != ch) else h
            pre = ad.add(out, sc)
            kind = model.slot_kinds[(i, j)]
            act_params = None
            if kind.is_sparta:
                prefix = p + ".act."
                act_params = {k[len(prefix):]: v for k, v in pv.items() if k.startswith(prefix)}
            h = apply_var(kind, pre, act_params)
            if capture is not None:
                capture[p] = (pre.value, h.value)
        prev = ch
    n = x.shape[0]
    pooled = ad.reshape(ad.global_avg_pool(h), (n, prev))
    return ad.dense(pooled, pv["fc.w"], pv["fc.b"])


def _check_input(model: ModelState, x) -> np.ndarray:
    x = T.as_tensor(x)
    if x.ndim != 4 or x.shape[1:] != model.cfg.input_shape:
        raise T.ShapeError(f"input shape {x.shape} does not match N x {'x'.join(map(str, model.cfg.input_shape))}")
    return x


def forward(model: ModelState, x, mode: str = "eval", capture: dict | None = None) -> np.ndarray:
    """Logits (N x num_classes).  Train mode updates BN running statistics."""
    x = _check_input(model, x)
    tape = ad.Tape()
    return graph(model, tape.leaf(x, name="x", requires_grad=False), mode, capture=capture).value


def predict(model: ModelState, x, batch_size: int = 256) -> np.ndarray:
    """Eval-mode argmax predictions (ties resolve to the lowest class index)."""
    x = _check_input(model, x)
    out = [np.argmax(forward(model, x[i:i + batch_size]), axis=1) for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def loss_and_param_grads(model: ModelState, x, labels, mode: str = "train"):
    """Mean cross-entropy and its gradient w.r.t. every trainable parameter."""
    x = _check_input(model, x)
    tape = ad.Tape()
    xv = tape.leaf(x, name="x", requires_grad=False)
    leaves = {k: tape.leaf(v, name=k, requires_grad=model.trainable[k]) for k, v in model.params.items()}
    logits = graph(model, xv, mode, params=leaves)
    loss = ad.cross_entropy(logits, labels)
    grads = tape.backward(loss)
    return float(loss.value[0]), dict(grads), logits.value


def input_grad(model: ModelState, x, labels, mode: str = "eval"):
    """Per-example cross-entropy and d(sum of losses)/dx, parameters held fixed."""
    x = _check_input(model, x)
    tape = ad.Tape()
    xv = tape.leaf(x, name="x")
    per = ad.cross_entropy(graph(model, xv, mode, update_stats=False), labels, reduction="none")
    grads = tape.backward(ad.sum(per))
    return per.value, grads["x"]


# ----------------------------------------------------- freezing and transfer


def freeze_activations(model: ModelState) -> ModelState:
    """Copy of ``model`` with every DSCANet parameter marked non-trainable."""
    if not model.sparta_slots():
        raise NoSpartaSlotsError("model has no SPARTA slots to freeze")
    out = model.copy()
    for k in out.activation_keys():
        out.trainable[k] = False
        out.velocity.pop(k, None)
    return out


def transplant_activations(donor: ModelState, recipient: ModelState,
                           slot_map: list[tuple[Slot, Slot]] | None = None) -> ModelState:
    """Copy donor DSCANets into recipient slots (frozen).

    ``slot_map`` pairs (donor slot, recipient slot); by default every donor
    SPARTA slot maps to the same-named recipient slot.
    """
    if slot_map is None:
        slot_map = [(s, s) for s in donor.sparta_slots()]
    bad = []
    for ds, rs in slot_map:
        if ds not in donor.slot_kinds or not donor.slot_kinds[ds].is_sparta:
            raise InvalidSlotError(f"donor slot {slot_name(ds)} holds no SPARTA activation")
        if rs not in recipient.slot_kinds:
            raise InvalidSlotError(f"recipient has no slot {slot_name(rs)}")
        cd, cr = donor.cfg.slot_channels(ds), recipient.cfg.slot_channels(rs)
        if cd != cr:
            bad.append(f"{slot_name(ds)}({cd})->{slot_name(rs)}({cr})")
    if bad:
        raise WidthMismatchError("channel width mismatch for slots: " + ", ".join(bad))
    out = recipient.copy()
    for ds, rs in slot_map:
        _install(out, rs, donor.slot_kinds[ds], 0, tensors=donor.slot_params(ds), trainable=False)
    return out


# --------------------------------------------------------------- checkpoints

_MAGIC = "sparta-checkpoint 1"


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape)


def checkpoint_bytes(model: ModelState) -> bytes:
    meta = {"backbone": model.cfg.to_dict(),
            "slots": {slot_name(s): {"tag": k.tag, "n": k.share_n, "k": k.k, "c_o_cap": k.c_o_cap}
                      for s, k in sorted(model.slot_kinds.items())}}
    lines = [_MAGIC, "meta " + json.dumps(meta, sort_keys=True)]
    payload = io.BytesIO()
    for k in sorted(model.params):
        lines.append(f"param {k} {_shape_str(model.params[k].shape)} {int(model.trainable[k])}")
        T.write_tensor(payload, model.params[k])
    for k in sorted(model.stats):
        lines.append(f"stat {k} {_shape_str(model.stats[k].shape)}")
        T.write_tensor(payload, model.stats[k])
    body = payload.getvalue()
    lines.append("sha256 " + hashlib.sha256(body).hexdigest())
    lines.append("end")
    return ("\n".join(lines) + "\n").encode() + body


def save_checkpoint(model: ModelState, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> ModelState:
    data = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = data.find(marker)
    if not data.startswith(_MAGIC.encode()) or cut < 0:
        raise CheckpointError(f"{path}: not a checkpoint file")
    lines = data[:cut].decode().split("\n")
    body = data[cut + len(marker):]
    meta, entries, digest = None, [], None
    for line in lines[1:]:
        tag, _, rest = line.partition(" ")
        if tag == "meta":
            meta = json.loads(rest)
        elif tag in ("param", "stat"):
            entries.append((tag, rest.split(" ")))
        elif tag == "sha256":
            digest = rest.strip()
    if meta is None or digest is None:
        raise CheckpointError(f"{path}: incomplete manifest")
    if hashlib.sha256(body).hexdigest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    cfg = BackboneConfig.from_dict(meta["backbone"])
    kinds = {}
    for name, d in meta["slots"].items():
        i, j = re.match(r"G(\d+)\.B(\d+)", name).groups()
        kinds[(int(i), int(j))] = ActivationKind(d["tag"], d["n"], d["k"], d["c_o_cap"])
    fp = io.BytesIO(body)
    params, trainable, stats = {}, {}, {}
    for tag, fields in entries:
        arr = T.read_tensor(fp)
        if _shape_str(arr.shape) != fields[1]:
            raise CheckpointError(f"{path}: shape mismatch for {fields[0]}")
        if tag == "param":
            params[fields[0]] = arr
            trainable[fields[0]] = fields[2] == "1"
        else:
            stats[fields[0]] = arr
    return ModelState(cfg, kinds, params, trainable, stats)
