"""Reverse-mode differentiation on a recording tape.

A :class:`Tape` stores nodes in creation order, so parents always precede
children.  Each node keeps its forward value, the ids of its parents, a
vector-Jacobian product rule and (for replay) the function that produced
the value from its parents' values.

    tape = Tape()
    x = tape.leaf(np.array([-1.0, 2.0, 0.0]), name="x")
    loss = ad.sum(ad.relu(x))
    grads = tape.backward(loss)
    grads["x"]      # array([0., 1., 1.])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as T


class NonScalarLossError(ValueError):
    """Raised when backward() is asked to differentiate a non-scalar node."""


Vjp = Callable[[np.ndarray, Sequence[bool]], Sequence[np.ndarray | None]]


@dataclass
class Node:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    requires_grad: bool
    vjp: Vjp | None = None
    forward: Callable[..., np.ndarray] | None = None
    name: str | None = None


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def node(self) -> Node:
        return self.tape.nodes[self.index]

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape.nodes[self.index].requires_grad

    def __repr__(self) -> str:
        return f"Var(#{self.index} {self.node.op} shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


class GradientMap(dict):
    """Leaf name -> gradient array.  Also indexable by the leaf :class:`Var`."""

    def __init__(self, tape: "Tape", items: dict[str, np.ndarray]):
        super().__init__(items)
        self._tape = tape

    def __getitem__(self, key):
        if isinstance(key, Var):
            key = key.node.name
        return super().__getitem__(key)


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self._names: set[str] = set()

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def outputs(self) -> dict[int, np.ndarray]:
        return {i: n.value for i, n in enumerate(self.nodes)}

    def leaf(self, value, name: str | None = None, requires_grad: bool = True) -> Var:
        value = np.asarray(value, dtype=np.float64)
        if name is None:
            name = f"#{len(self.nodes)}"
        if name in self._names:
            raise ValueError(f"duplicate leaf name {name!r}")
        self._names.add(name)
        self.nodes.append(Node("leaf", (), value, requires_grad, name=name))
        return Var(self, len(self.nodes) - 1)

    def constant(self, value) -> Var:
        self.nodes.append(Node("const", (), np.asarray(value, dtype=np.float64), False))
        return Var(self, len(self.nodes) - 1)

    def record(self, op: str, parents: Sequence[Var], value: np.ndarray, vjp: Vjp,
               forward: Callable[..., np.ndarray] | None = None) -> Var:
        req = any(p.requires_grad for p in parents)
        self.nodes.append(Node(op, tuple(p.index for p in parents), value, req,
                               vjp if req else None, forward))
        return Var(self, len(self.nodes) - 1)

    def backward(self, loss: Var) -> GradientMap:
        """Gradient of the scalar ``loss`` with respect to every differentiable leaf.

        Leaves that the loss does not depend on get zero gradients.
        """
        if loss.tape is not self:
            raise ValueError("loss belongs to a different tape")
        if any(d != 1 for d in loss.shape):
            raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            needs = [self.nodes[p].requires_grad for p in node.parents]
            for p, pg, need in zip(node.parents, node.vjp(g, needs), needs):
                if not need or pg is None:
                    continue
                grads[p] = pg if grads[p] is None else grads[p] + pg
        out = {}
        for i, node in enumerate(self.nodes):
            if node.op == "leaf" and node.requires_grad:
                out[node.name] = grads[i] if grads[i] is not None else np.zeros_like(node.value)
        return GradientMap(self, out)

    def replay(self) -> list[int]:
        """Recompute every op from its parents' saved values.

        Returns the ids of nodes whose recomputed value differs bitwise from
        the recorded one (empty when the tape is consistent).
        """
        values = [n.value for n in self.nodes]
        bad = []
        for i, node in enumerate(self.nodes):
            if node.forward is None:
                continue
            v = node.forward(*(values[p] for p in node.parents))
            if v.shape != node.value.shape or v.tobytes() != node.value.tobytes():
                bad.append(i)
            values[i] = v
        return bad


# --------------------------------------------------------------------- helpers


def _tape_of(*args) -> Tape:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    raise TypeError("at least one operand must be a Var")


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return tape.constant(x)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _unary(op: str, x: Var, fwd: Callable[[np.ndarray], np.ndarray],
           local: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Var:
    """Pointwise op; ``local(x, y)`` returns dy/dx elementwise."""
    xv = x.value
    y = fwd(xv)
    return x.tape.record(op, [x], y, lambda g, needs: (g * local(xv, y),), fwd)


def _binary(op: str, a, b, fwd, vjp_a, vjp_b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    T.broadcast_shape(av.shape, bv.shape)
    out = fwd(av, bv)

    def vjp(g, needs):
        ga = unbroadcast(vjp_a(g, av, bv, out), av.shape) if needs[0] else None
        gb = unbroadcast(vjp_b(g, av, bv, out), bv.shape) if needs[1] else None
        return ga, gb

    return tape.record(op, [a, b], out, vjp, fwd)


# ----------------------------------------------------------------- arithmetic


def add(a, b) -> Var:
    return _binary("add", a, b, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)


def sub(a, b) -> Var:
    return _binary("sub", a, b, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)


def mul(a, b) -> Var:
    return _binary("mul", a, b, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)


def div(a, b) -> Var:
    return _binary("div", a, b, np.divide,
                   lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b)


def neg(x: Var) -> Var:
    return _unary("neg", x, np.negative, lambda x, y: -np.ones_like(x))


def exp(x: Var) -> Var:
    return _unary("exp", x, np.exp, lambda x, y: y)


def log(x: Var) -> Var:
    return _unary("log", x, np.log, lambda x, y: 1.0 / x)


def tanh(x: Var) -> Var:
    return _unary("tanh", x, np.tanh, lambda x, y: 1.0 - y * y)


def square(x: Var) -> Var:
    return _unary("square", x, np.square, lambda x, y: 2.0 * x)


def detach(x: Var) -> Var:
    """Constant copy of ``x``: gradients do not flow through it."""
    return x.tape.constant(x.value)


# ---------------------------------------------------------------- activations


def relu(x: Var) -> Var:
    # derivative is 1 at exactly zero
    return _unary("relu", x, lambda v: np.maximum(v, 0.0), lambda x, y: (x >= 0).astype(np.float64))


def sigmoid(x: Var) -> Var:
    return _unary("sigmoid", x, T.sigmoid, lambda x, y: y * (1.0 - y))


def elu(x: Var) -> Var:
    return _unary("elu", x,
                  lambda v: np.where(v >= 0, v, np.expm1(np.minimum(v, 0.0))),
                  lambda x, y: np.where(x >= 0, 1.0, y + 1.0))


def softplus(x: Var) -> Var:
    return _unary("softplus", x,
                  lambda v: np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v))),
                  lambda x, y: T.sigmoid(x))


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def _gelu_fwd(v: np.ndarray) -> np.ndarray:
    return 0.5 * v * (1.0 + np.tanh(_GELU_C * (v + _GELU_A * v ** 3)))


def _gelu_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def gelu(x: Var) -> Var:
    """GELU, tanh approximation."""
    return _unary("gelu", x, _gelu_fwd, _gelu_grad)


# ----------------------------------------------------------------- reductions


def sum(x: Var, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    xv = x.value

    def fwd(v):
        out = v.sum(axis=axis, keepdims=keepdims)
        return np.asarray(out, dtype=np.float64).reshape(np.shape(out) or (1,))

    out = fwd(xv)

    def vjp(g, needs):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), xv.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g.reshape(np.sum(xv, axis=axis).shape), axis)
        return (np.broadcast_to(gg, xv.shape).copy(),)

    return x.tape.record("sum", [x], out, vjp, fwd)


def mean(x: Var, axis=None, keepdims: bool = False) -> Var:
    n = x.value.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Var, shape: tuple[int, ...]) -> Var:
    old = x.shape
    fwd = lambda v: v.reshape(shape)
    return x.tape.record("reshape", [x], fwd(x.value), lambda g, needs: (g.reshape(old),), fwd)


def getitem(x: Var, idx) -> Var:
    old = x.shape
    fwd = lambda v: np.array(v[idx])

    def vjp(g, needs):
        out = np.zeros(old)
        out[idx] = g
        return (out,)

    return x.tape.record("getitem", [x], fwd(x.value), vjp, fwd)


# --------------------------------------------------------------- linear maps


def dense(x: Var, w, b=None) -> Var:
    """Affine map ``x @ w + b`` for x of shape N x D_in."""
    tape = _tape_of(x, w, b)
    parents = [_lift(tape, x), _lift(tape, w)] + ([_lift(tape, b)] if b is not None else [])
    xv, wv = parents[0].value, parents[1].value
    if xv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise T.ShapeError(f"dense: input {xv.shape} incompatible with weight {wv.shape}")

    def fwd(xv, wv, bv=None):
        out = xv @ wv
        return out if bv is None else out + bv

    def vjp(g, needs):
        gx = g @ wv.T if needs[0] else None
        gw = xv.T @ g if needs[1] else None
        gb = (g.sum(axis=0),) if len(needs) == 3 else ()
        return (gx, gw) + gb

    return tape.record("dense", parents, fwd(*(p.value for p in parents)), vjp, fwd)


def conv2d(x: Var, w, b=None, stride: int = 1, pad: int = 0) -> Var:
    tape = _tape_of(x, w, b)
    parents = [_lift(tape, x), _lift(tape, w)] + ([_lift(tape, b)] if b is not None else [])
    xv, wv = parents[0].value, parents[1].value
    k = wv.shape[0]
    fwd = lambda xv, wv, bv=None: T.conv2d(xv, wv, bv, stride=stride, pad=pad)
    out = fwd(*(p.value for p in parents))
    c_in, c_out = wv.shape[2], wv.shape[3]

    def vjp(g, needs):
        n, ho, wo, _ = g.shape
        g2 = g.reshape(-1, c_out)
        gx = gw = None
        if k == 1 and pad == 0:
            xs = xv[:, ::stride, ::stride, :]
            if needs[1]:
                gw = (xs.reshape(-1, c_in).T @ g2).reshape(wv.shape)
            if needs[0]:
                gs = (g2 @ wv.reshape(c_in, c_out).T).reshape(xs.shape)
                if stride == 1:
                    gx = gs
                else:
                    gx = np.zeros_like(xv)
                    gx[:, ::stride, ::stride, :] = gs
        else:
            if needs[1]:
                cols = T.im2col(xv, k, stride, pad).reshape(n * ho * wo, -1)
                gw = (cols.T @ g2).reshape(wv.shape)
            if needs[0]:
                gcols = (g2 @ wv.reshape(-1, c_out).T).reshape(n, ho, wo, k, k, c_in)
                gx = T.col2im(gcols, xv.shape, k, stride, pad)
        gb = (g2.sum(axis=0),) if len(needs) == 3 else ()
        return (gx, gw) + gb

    return tape.record("conv2d", parents, out, vjp, fwd)


def conv2d_per_sample(x: Var, w: Var, b: Var | None = None, pad: int = 0) -> Var:
    """Stride-1 convolution with a separate kernel per batch element."""
    tape = _tape_of(x, w, b)
    parents = [_lift(tape, x), _lift(tape, w)] + ([_lift(tape, b)] if b is not None else [])
    xv, wv = parents[0].value, parents[1].value
    k = wv.shape[1]
    fwd = lambda xv, wv, bv=None: T.conv2d_per_sample(xv, wv, bv, pad=pad)
    out = fwd(*(p.value for p in parents))

    def vjp(g, needs):
        gx = gw = None
        if k == 1 and pad == 0:
            w0 = wv[:, 0, 0]
            if needs[0]:
                gx = np.einsum("nhwd,ncd->nhwc", g, w0, optimize=True)
            if needs[1]:
                gw = np.einsum("nhwc,nhwd->ncd", xv, g, optimize=True)[:, None, None]
        else:
            cols = T.im2col(xv, k, 1, pad)
            if needs[0]:
                gcols = np.einsum("nhwd,nijcd->nhwijc", g, wv, optimize=True)
                gx = T.col2im(gcols, xv.shape, k, 1, pad)
            if needs[1]:
                gw = np.einsum("nhwijc,nhwd->nijcd", cols, g, optimize=True)
        gb = (g.sum(axis=(1, 2)),) if len(needs) == 3 else ()
        return (gx, gw) + gb

    return tape.record("conv2d_per_sample", parents, out, vjp, fwd)


# -------------------------------------------------------------------- pooling


def global_avg_pool(x: Var) -> Var:
    xv = x.value
    hw = xv.shape[1] * xv.shape[2]

    def vjp(g, needs):
        return (np.broadcast_to(g / hw, xv.shape).copy(),)

    return x.tape.record("global_avg_pool", [x], T.global_avg_pool(xv), vjp, T.global_avg_pool)


def avg_pool(x: Var, n: int) -> Var:
    fwd = lambda v: T.avg_pool(v, n)
    return x.tape.record("avg_pool", [x], fwd(x.value),
                         lambda g, needs: (T.upsample_nearest(g, n) / (n * n),), fwd)


def upsample_nearest(x: Var, n: int) -> Var:
    fwd = lambda v: T.upsample_nearest(v, n)
    return x.tape.record("upsample", [x], fwd(x.value),
                         lambda g, needs: (T.avg_pool(g, n) * (n * n),), fwd)


def outer_fuse(s: Var, v: Var) -> Var:
    tape = _tape_of(s, v)
    s, v = _lift(tape, s), _lift(tape, v)
    sv, vv = s.value, v.value
    out = T.outer_fuse(sv, vv)

    def vjp(g, needs):
        gs = (g * vv).sum(axis=3, keepdims=True) if needs[0] else None
        gv = (g * sv).sum(axis=(1, 2), keepdims=True) if needs[1] else None
        return gs, gv

    return tape.record("outer_fuse", [s, v], out, vjp, T.outer_fuse)


# -------------------------------------------------------------- normalization


def batch_norm(x: Var, gamma, beta, eps: float = 1e-5,
               stats: tuple[np.ndarray, np.ndarray] | None = None) -> Var:
    """Per-channel batch normalization over all axes but the last.

    With ``stats=None`` the batch mean/variance are used (training mode);
    otherwise ``stats`` supplies fixed (mean, var) as in evaluation mode.
    """
    tape = _tape_of(x, gamma, beta)
    x, gamma, beta = _lift(tape, x), _lift(tape, gamma), _lift(tape, beta)
    xv, gv = x.value, gamma.value
    axes = tuple(range(xv.ndim - 1))
    m = int(np.prod([xv.shape[a] for a in axes]))

    def fwd(xv, gv, bv):
        if stats is None:
            mu, var = xv.mean(axis=axes), xv.var(axis=axes)
        else:
            mu, var = stats
        return (xv - mu) / np.sqrt(var + eps) * gv + bv

    if stats is None:
        mu, var = xv.mean(axis=axes), xv.var(axis=axes)
    else:
        mu, var = stats
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    out = xhat * gv + beta.value
    train = stats is None

    def vjp(g, needs):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gx = None
        if needs[0]:
            if train:
                gx = (gv * inv / m) * (m * g - gbeta - xhat * ggamma)
            else:
                gx = g * (gv * inv)
        return gx, ggamma, gbeta

    return tape.record("batch_norm", [x, gamma, beta], out, vjp, fwd)


# ----------------------------------------------------------------------- loss


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def cross_entropy(logits: Var, labels, reduction: str = "mean") -> Var:
    """Softmax cross-entropy, stabilized by max-subtraction.

    ``reduction`` is ``"mean"``, ``"sum"`` or ``"none"`` (per-example vector).
    """
    z = logits.value
    labels = np.asarray(labels, dtype=np.int64)
    n, k = z.shape
    if labels.shape != (n,):
        raise T.ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    rows = np.arange(n)

    def fwd(z):
        per = -log_softmax_np(z)[rows, labels]
        if reduction == "none":
            return per
        total = per.sum() if reduction == "sum" else per.mean()
        return np.array([total])

    out = fwd(z)

    def vjp(g, needs):
        p = np.exp(log_softmax_np(z))
        p[rows, labels] -= 1.0
        if reduction == "none":
            return (p * g[:, None],)
        scale = g.reshape(()) if reduction == "sum" else g.reshape(()) / n
        return (p * scale,)

    return logits.tape.record("cross_entropy", [logits], out, vjp, fwd)


# ------------------------------------------------------------ finite differences


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one tensor."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for p in range(flat.size):
        orig = flat[p]
        flat[p] = orig + h
        fp = float(np.sum(f(x)))
        flat[p] = orig - h
        fm = float(np.sum(f(x)))
        flat[p] = orig
        gflat[p] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradCheck:
    """Outcome of :func:`check_gradients`.

    ``max_rel_error`` covers elements the difference quotient can resolve at
    ``rtol``; elements whose gradient is below the roundoff floor of the
    quotient are compared with the absolute bound ``noise_bound`` instead.
    """

    max_rel_error: float
    checked: int
    skipped: int
    noise_limited: int = 0
    max_noise_error: float = 0.0
    noise_bound: float = 0.0
    errors: dict[str, float] = field(default_factory=dict)

    def passed(self, rtol: float = 1e-4) -> bool:
        return self.max_rel_error < rtol and self.max_noise_error <= self.noise_bound


_EPS = np.finfo(np.float64).eps


def check_gradients(fn: Callable[..., Var], inputs: dict[str, np.ndarray], h: float = 1e-6,
                    kinks: Iterable[float] = (), kink_inputs: Iterable[str] | None = None,
                    rtol: float = 1e-4, scale: float | None = None) -> GradCheck:
    """Compare backward() with central differences for every input of ``fn``.

    ``fn(**vars)`` must build a scalar on the tape of its arguments.  Skipped
    elements: those of ``kink_inputs`` (default all) within 10*h of a value in
    ``kinks``, and those whose one-sided quotients disagree (an internal kink
    lies between x-h and x+h).

    A central difference carries roundoff of about eps*|f|/h, so gradients
    smaller than ``eps*|f|/(h*rtol)`` cannot be resolved to ``rtol``; those
    elements are held to an absolute error of ``16*eps*scale/h``.  ``scale``
    defaults to max(|f|, 1); pass the L1 mass of the summed terms when ``f``
    is a sum with cancellation.
    """
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in inputs.items()}
    analytic = tape.backward(fn(**leaves))
    kinks = list(kinks)
    kink_inputs = set(inputs) if kink_inputs is None else set(kink_inputs)

    def f_at(values: dict[str, np.ndarray]) -> float:
        t = Tape()
        return float(fn(**{k: t.leaf(v, name=k, requires_grad=False) for k, v in values.items()}).value.sum())

    f0 = f_at(inputs)
    scale = max(abs(f0), 1.0) if scale is None else max(scale, abs(f0), 1.0)
    bound = 16 * _EPS * scale / h
    resolvable = _EPS * scale / (h * rtol)
    res = GradCheck(0.0, 0, 0, noise_bound=bound)
    for name, value in inputs.items():
        values = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
        flat = values[name].reshape(-1)
        a = analytic[name].reshape(-1)
        e_name = 0.0
        for p in range(flat.size):
            orig = flat[p]
            if name in kink_inputs and any(abs(orig - c) <= 10 * h for c in kinks):
                res.skipped += 1
                continue
            flat[p] = orig + h
            fp = f_at(values)
            flat[p] = orig - h
            fm = f_at(values)
            flat[p] = orig
            num = (fp - fm) / (2 * h)
            right, left = (fp - f0) / h, (f0 - fm) / h
            if abs(right - left) > 1e-3 * max(abs(right), abs(left), 1.0):
                res.skipped += 1
                continue
            if max(abs(a[p]), abs(num)) < resolvable:
                res.noise_limited += 1
                res.max_noise_error = max(res.max_noise_error, abs(a[p] - num))
                continue
            e_name = max(e_name, float(relative_error(np.array(a[p]), np.array(num))))
            res.checked += 1
        res.errors[name] = e_name
        res.max_rel_error = max(res.max_rel_error, e_name)
    return res


#: Primitive ops with a vector-Jacobian rule, for enumeration in gradient suites.
OPS: dict[str, Callable[..., Var]] = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "exp": exp, "log": log,
    "tanh": tanh, "square": square, "relu": relu, "sigmoid": sigmoid, "elu": elu,
    "softplus": softplus, "gelu": gelu, "sum": sum, "mean": mean, "reshape": reshape,
    "getitem": getitem, "dense": dense, "conv2d": conv2d, "conv2d_per_sample": conv2d_per_sample,
    "global_avg_pool": global_avg_pool, "avg_pool": avg_pool, "upsample_nearest": upsample_nearest,
    "outer_fuse": outer_fuse, "batch_norm": batch_norm, "cross_entropy": cross_entropy,
}
