"""Activation catalog: ReLU, ELU, GELU, Softplus, Swish, Swish-ReLU and SPARTA.

SPARTA gates ReLU with a learned per-element attention map,
``y = max(x, 0) * phi(x)``, where ``phi`` is the spatial-channel attention
network (DSCANet)::

    CANet  gap(x) -> conv1 (C->Co) -> relu -> conv2 (Co->C)         v: N,1,1,C
    SANet  x -> conv3 (C->Co) -> relu -> conv4 (Co->Co) -> relu
             -> conv5 (Co->1)                                       s: N,H,W,1
    DPNet  relu(conv1(gap(x))) -> dense (Co -> K*K*Co + 1)          conv5 weights+bias
    phi    sigmoid(s (outer) v)

``Co = min(c_o_cap, C)``.  DPNet reads the pooled CANet projection and
emits one conv5 kernel per sample; the no-DPNet variant gives conv5 its own
static weights.  The kernel size K applies to the SANet convolutions; the
CANet convolutions act on a 1 x 1 pooled map and are always 1 x 1.

Two interfaces are provided: ``*_var`` functions build on an autodiff tape,
and the plain functions take and return numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tensor as T

SPARTA_TAGS = ("Sparta", "SpartaNoDPNet", "SpartaOnActFeat", "SpartaShared")
PLAIN_TAGS = ("ReLU", "ELU", "GELU", "Softplus", "Swish", "SwishReLU")
ALL_TAGS = PLAIN_TAGS + SPARTA_TAGS

_ALIASES = {t.lower(): t for t in ALL_TAGS}
_ALIASES.update({
    "sparta-no-dpnet": "SpartaNoDPNet", "sparta-wo-dpnet": "SpartaNoDPNet",
    "sparta-on-actfeat": "SpartaOnActFeat", "sparta-shared": "SpartaShared",
    "swish-relu": "SwishReLU",
})


@dataclass(frozen=True)
class ActivationKind:
    """Which activation occupies a slot, plus the SPARTA knobs."""

    tag: str = "ReLU"
    share_n: int | None = None
    k: int = 1
    c_o_cap: int = 256

    def __post_init__(self):
        if self.tag not in ALL_TAGS:
            raise ValueError(f"unknown activation tag {self.tag!r}; expected one of {ALL_TAGS}")
        if self.tag == "SpartaShared":
            if self.share_n is None or self.share_n < 1:
                raise ValueError("SpartaShared requires a positive share_n")
        elif self.share_n is not None:
            raise ValueError(f"share_n is only valid for SpartaShared, not {self.tag}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size k must be odd and positive, got {self.k}")
        if self.c_o_cap < 1:
            raise ValueError("c_o_cap must be positive")

    @property
    def is_sparta(self) -> bool:
        return self.tag in SPARTA_TAGS

    @property
    def use_dpnet(self) -> bool:
        return self.tag in ("Sparta", "SpartaOnActFeat", "SpartaShared")

    @classmethod
    def parse(cls, text: str, n: int | None = None, k: int = 1, c_o_cap: int = 256) -> "ActivationKind":
        """Parse a config tag such as ``sparta``, ``swish-relu`` or ``SpartaShared:2``."""
        name, _, arg = text.strip().partition(":")
        try:
            tag = _ALIASES[name.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown activation tag {text!r}") from None
        if arg:
            n = int(arg)
        return cls(tag, n if tag == "SpartaShared" else None, k, c_o_cap)

    def __str__(self) -> str:
        return f"{self.tag}:{self.share_n}" if self.share_n else self.tag


RELU = ActivationKind("ReLU")


# -------------------------------------------------------------- DSCANet state


@dataclass
class DSCANetParams:
    """Weights of one DSCANet attached to a C-channel activation slot."""

    c: int
    c_o: int
    k: int
    use_dpnet: bool
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return dscanet_shapes(self.c, self.k, self.use_dpnet, self.c_o)

    def count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def copy(self) -> "DSCANetParams":
        return DSCANetParams(self.c, self.c_o, self.k, self.use_dpnet,
                             {k: v.copy() for k, v in self.tensors.items()})


def reduced_width(c: int, c_o_cap: int = 256) -> int:
    return min(c_o_cap, c)


def dscanet_shapes(c: int, k: int = 1, use_dpnet: bool = True, c_o: int | None = None) -> dict[str, tuple[int, ...]]:
    c_o = reduced_width(c) if c_o is None else c_o
    shapes = {
        "canet.conv1.w": (1, 1, c, c_o), "canet.conv1.b": (c_o,),
        "canet.conv2.w": (1, 1, c_o, c), "canet.conv2.b": (c,),
        "sanet.conv3.w": (k, k, c, c_o), "sanet.conv3.b": (c_o,),
        "sanet.conv4.w": (k, k, c_o, c_o), "sanet.conv4.b": (c_o,),
    }
    if use_dpnet:
        shapes["dpnet.fc.w"] = (c_o, k * k * c_o + 1)
        shapes["dpnet.fc.b"] = (k * k * c_o + 1,)
    else:
        shapes["sanet.conv5.w"] = (k, k, c_o, 1)
        shapes["sanet.conv5.b"] = (1,)
    return shapes


def init_dscanet(c: int, rng: np.random.Generator, use_dpnet: bool = True, k: int = 1,
                 c_o_cap: int = 256, zero_dpnet: bool = True) -> DSCANetParams:
    """He-normal weights, zero biases; DPNet's output layer starts at zero."""
    c_o = reduced_width(c, c_o_cap)
    tensors = {}
    for name, shape in dscanet_shapes(c, k, use_dpnet, c_o).items():
        if name.endswith(".b") or (zero_dpnet and name.startswith("dpnet.")):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return DSCANetParams(c, c_o, k, use_dpnet, tensors)


# ------------------------------------------------------------ tape functions


def dscanet_attention_var(x: ad.Var, p: dict[str, ad.Var], use_dpnet: bool, k: int = 1,
                          share_n: int = 1) -> ad.Var:
    n, h, w, c = x.shape
    if p["canet.conv1.w"].shape[2] != c:
        raise T.ShapeError(f"channel mismatch: attention net built for "
                           f"{p['canet.conv1.w'].shape[2]} channels, input has {c}")
    if share_n > 1 and (h % share_n or w % share_n):
        raise T.ShapeError(f"share size {share_n} must divide spatial extents {h}x{w}")
    pad = k // 2
    hid = ad.relu(ad.conv2d(ad.global_avg_pool(x), p["canet.conv1.w"], p["canet.conv1.b"]))
    v = ad.conv2d(hid, p["canet.conv2.w"], p["canet.conv2.b"])
    xs = ad.avg_pool(x, share_n) if share_n > 1 else x
    s = ad.relu(ad.conv2d(xs, p["sanet.conv3.w"], p["sanet.conv3.b"], pad=pad))
    s = ad.relu(ad.conv2d(s, p["sanet.conv4.w"], p["sanet.conv4.b"], pad=pad))
    if use_dpnet:
        c_o = hid.shape[3]
        m = k * k * c_o
        theta = ad.dense(ad.reshape(hid, (n, c_o)), p["dpnet.fc.w"], p["dpnet.fc.b"])
        w5 = ad.reshape(ad.getitem(theta, (slice(None), slice(0, m))), (n, k, k, c_o, 1))
        b5 = ad.getitem(theta, (slice(None), slice(m, m + 1)))
        s = ad.conv2d_per_sample(s, w5, b5, pad=pad)
    else:
        s = ad.conv2d(s, p["sanet.conv5.w"], p["sanet.conv5.b"], pad=pad)
    att = ad.sigmoid(ad.outer_fuse(s, v))
    if share_n > 1:
        att = ad.upsample_nearest(att, share_n)
    return att


def apply_var(kind: ActivationKind, x: ad.Var, params: dict[str, ad.Var] | None = None,
              detach_attention: bool = False, capture: dict | None = None) -> ad.Var:
    """Apply an activation on the tape.

    ``detach_attention`` treats the SPARTA attention as a constant.
    ``capture`` (optional dict) receives the attention map under "attention".
    """
    tag = kind.tag
    if tag == "ReLU":
        return ad.relu(x)
    if tag == "ELU":
        return ad.elu(x)
    if tag == "GELU":
        return ad.gelu(x)
    if tag == "Softplus":
        return ad.softplus(x)
    if tag == "Swish":
        return ad.mul(x, ad.sigmoid(x))
    if tag == "SwishReLU":
        return ad.mul(ad.relu(x), ad.sigmoid(x))
    if params is None:
        raise ValueError(f"{tag} requires DSCANet parameters")
    r = ad.relu(x)
    source = r if tag == "SpartaOnActFeat" else x
    n = kind.share_n if tag == "SpartaShared" else 1
    att = dscanet_attention_var(source, params, kind.use_dpnet, kind.k, n)
    if capture is not None:
        capture["attention"] = att.value
    if detach_attention:
        att = ad.detach(att)
    return ad.mul(r, att)


# ----------------------------------------------------------- array functions


def _run(kind: ActivationKind, x, p: DSCANetParams | None = None, **kw) -> np.ndarray:
    tape = ad.Tape()
    xv = tape.leaf(T.as_tensor(x), name="x", requires_grad=False)
    leaves = None
    if p is not None:
        leaves = {k: tape.leaf(v, name=k, requires_grad=False) for k, v in p.tensors.items()}
    return apply_var(kind, xv, leaves, **kw).value


def relu(x) -> np.ndarray:
    return np.maximum(T.as_tensor(x), 0.0)


def swish(x) -> np.ndarray:
    x = T.as_tensor(x)
    return x * T.sigmoid(x)


def swish_relu(x) -> np.ndarray:
    x = T.as_tensor(x)
    return np.maximum(x, 0.0) * T.sigmoid(x)


def baseline(x, tag: str) -> np.ndarray:
    """ELU (alpha=1), GELU (tanh approximation) or Softplus."""
    if tag not in ("ELU", "GELU", "Softplus"):
        raise ValueError(f"baseline tag must be ELU, GELU or Softplus, got {tag!r}")
    return _run(ActivationKind(tag), x)


def dscanet_attention(x, p: DSCANetParams, use_dpnet: bool | None = None) -> np.ndarray:
    """Attention map in (0, 1) with the same shape as ``x``."""
    use_dpnet = p.use_dpnet if use_dpnet is None else use_dpnet
    if use_dpnet != p.use_dpnet:
        raise ValueError("parameters were built for use_dpnet=%s" % p.use_dpnet)
    x = T.as_tensor(x)
    tape = ad.Tape()
    leaves = {k: tape.leaf(v, name=k, requires_grad=False) for k, v in p.tensors.items()}
    return dscanet_attention_var(tape.leaf(x, requires_grad=False), leaves, use_dpnet, p.k).value


def dpnet_weights(x, p: DSCANetParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample conv5 kernels (N,K,K,Co,1) and biases (N,1) predicted by DPNet."""
    if not p.use_dpnet:
        raise ValueError("parameters have no DPNet")
    x = T.as_tensor(x)
    t = p.tensors
    hid = np.maximum(T.conv2d(T.global_avg_pool(x), t["canet.conv1.w"], t["canet.conv1.b"]), 0.0)
    theta = hid.reshape(len(x), -1) @ t["dpnet.fc.w"] + t["dpnet.fc.b"]
    m = p.k * p.k * p.c_o
    return theta[:, :m].reshape(len(x), p.k, p.k, p.c_o, 1), theta[:, m:]


def sparta_forward(x, p: DSCANetParams, variant: ActivationKind | str = "Sparta") -> np.ndarray:
    kind = ActivationKind.parse(variant) if isinstance(variant, str) else variant
    if not kind.is_sparta:
        raise ValueError(f"sparta_forward needs a SPARTA variant, got {kind.tag}")
    return _run(kind, x, p)


def sparta_shared_forward(x, p: DSCANetParams, n: int) -> np.ndarray:
    """SPARTA whose attention is shared by every n x n spatial block."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = T.as_tensor(x)
    if x.shape[1] % n or x.shape[2] % n:
        raise T.ShapeError(f"n={n} must divide spatial extents {x.shape[1]}x{x.shape[2]}")
    return _run(ActivationKind("SpartaShared", n, p.k), x, p)
