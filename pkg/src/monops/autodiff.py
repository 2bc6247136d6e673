"""Minimal reverse-mode tape for operator networks and their training losses.

Values are float64 numpy arrays wrapped in :class:`Var` nodes. Recording is
scoped: inside a :class:`no_grad` block operations produce constants, so the
spectral probe can run its power iterations detached and re-enable recording
only for the final Rayleigh quotient. The primitive set is deliberately small:
exactly the operations needed by the residual convolutional network, the
directional-derivative chain used for the monotonicity penalty, and the l1 /
kernel-reparametrization losses. This is not a general autodiff system.
"""

from __future__ import annotations

import numpy as np

_GRAD_STACK = [True]


def grad_enabled() -> bool:
    return _GRAD_STACK[-1]


class no_grad:
    """Context manager that disables derivative recording.

    Values computed inside the block are identical to recorded ones but
    contribute no parameter gradient.
    """

    def __enter__(self):
        _GRAD_STACK.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_STACK.pop()
        return False


class Var:
    """A value plus the reverse-mode edges that produced it.

    ``parents`` is a tuple of ``(Var, vjp)`` pairs where ``vjp`` maps the
    output cotangent to that parent's cotangent contribution.
    """

    __slots__ = ("value", "requires_grad", "parents", "grad")

    def __init__(self, value, requires_grad: bool = False, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


def const(value) -> Var:
    return Var(value, requires_grad=False)


def leaf(value) -> Var:
    """A trainable leaf; ``backward`` deposits gradients on it."""
    return Var(value, requires_grad=True)


def lift(x) -> Var:
    return x if isinstance(x, Var) else const(x)


def _make(value, pairs) -> Var:
    if grad_enabled():
        tracked = [(p, fn) for p, fn in pairs if p.requires_grad]
        if tracked:
            return Var(value, requires_grad=True, parents=tracked)
    return Var(value, requires_grad=False)


def backward(out: Var) -> None:
    """Accumulate d(out)/d(leaf) into ``.grad`` of every reachable leaf.

    ``out`` must be scalar. Grad arrays are added into existing ``.grad``
    buffers (call :func:`zero_grad` between evaluations).
    """
    if out.value.shape != ():
        raise ValueError(f"backward requires a scalar, got shape {out.value.shape}")
    if not out.requires_grad:
        return
    order = []
    seen = set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    cotangent = {id(out): np.asarray(1.0)}
    for node in reversed(order):
        g = cotangent.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)
            node.grad = node.grad + g
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            if key in cotangent:
                cotangent[key] = cotangent[key] + contrib
            else:
                cotangent[key] = np.asarray(contrib, dtype=np.float64)


def zero_grad(leaves) -> None:
    for v in leaves:
        v.grad = None


# ---------------------------------------------------------------------------
# scalar / elementwise primitives
# ---------------------------------------------------------------------------

def _reduce_to(g, shape):
    g = np.asarray(g, dtype=np.float64)
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    raise ValueError(f"cannot reduce cotangent {g.shape} to {shape}")


def add(a, b) -> Var:
    a, b = lift(a), lift(b)
    return _make(
        a.value + b.value,
        [(a, lambda g: _reduce_to(g, a.value.shape)),
         (b, lambda g: _reduce_to(g, b.value.shape))],
    )


def sub(a, b) -> Var:
    a, b = lift(a), lift(b)
    return _make(
        a.value - b.value,
        [(a, lambda g: _reduce_to(g, a.value.shape)),
         (b, lambda g: _reduce_to(-g, b.value.shape))],
    )


def neg(a) -> Var:
    a = lift(a)
    return _make(-a.value, [(a, lambda g: -g)])


def mul(a, b) -> Var:
    """Elementwise product; operands must share shape or one may be scalar."""
    a, b = lift(a), lift(b)
    return _make(
        a.value * b.value,
        [(a, lambda g: _reduce_to(g * b.value, a.value.shape)),
         (b, lambda g: _reduce_to(g * a.value, b.value.shape))],
    )


def smul(c: float, a) -> Var:
    a = lift(a)
    c = float(c)
    return _make(c * a.value, [(a, lambda g: c * g)])


def div_scalar(a, s) -> Var:
    """Divide array ``a`` by scalar Var ``s``."""
    a, s = lift(a), lift(s)
    if s.value.shape != ():
        raise ValueError("div_scalar denominator must be scalar")
    sv = float(s.value)
    return _make(
        a.value / sv,
        [(a, lambda g: g / sv),
         (s, lambda g: -np.sum(g * a.value) / (sv * sv))],
    )


def dot(a, b) -> Var:
    a, b = lift(a), lift(b)
    return _make(
        np.vdot(a.value, b.value),
        [(a, lambda g: g * b.value), (b, lambda g: g * a.value)],
    )


def sum_(a) -> Var:
    a = lift(a)
    return _make(a.value.sum(), [(a, lambda g: g * np.ones_like(a.value))])


def mean(a) -> Var:
    a = lift(a)
    n = a.value.size
    return _make(a.value.mean(), [(a, lambda g: (g / n) * np.ones_like(a.value))])


def abs_(a) -> Var:
    a = lift(a)
    return _make(np.abs(a.value), [(a, lambda g: g * np.sign(a.value))])


def relu(a) -> Var:
    a = lift(a)
    return _make(np.maximum(a.value, 0.0), [(a, lambda g: g * (a.value > 0.0))])


def reshape(a, shape) -> Var:
    a = lift(a)
    orig = a.value.shape
    return _make(a.value.reshape(shape), [(a, lambda g: g.reshape(orig))])


def rot180_var(a) -> Var:
    a = lift(a)
    return _make(a.value[::-1, ::-1].copy(), [(a, lambda g: g[::-1, ::-1].copy())])


# ---------------------------------------------------------------------------
# activations (elementwise, with the derivative itself available as a
# primitive so the penalty's directional-derivative chain is differentiable)
# ---------------------------------------------------------------------------

def _elu(x):
    return np.where(x >= 0.0, x, np.expm1(x))


def _elu_prime(x):
    return np.where(x >= 0.0, 1.0, np.exp(x))


def _elu_second(x):
    return np.where(x >= 0.0, 0.0, np.exp(x))


def elu(a) -> Var:
    a = lift(a)
    return _make(_elu(a.value), [(a, lambda g: g * _elu_prime(a.value))])


def elu_prime(a) -> Var:
    a = lift(a)
    return _make(_elu_prime(a.value), [(a, lambda g: g * _elu_second(a.value))])


def _leaky(x, slope):
    return np.where(x >= 0.0, x, slope * x)


def _leaky_prime(x, slope):
    # subgradient convention: derivative at 0 equals the negative-side slope
    return np.where(x > 0.0, 1.0, slope)


def leaky_relu(a, slope: float) -> Var:
    a = lift(a)
    return _make(_leaky(a.value, slope), [(a, lambda g: g * _leaky_prime(a.value, slope))])


def leaky_relu_prime(a, slope: float) -> Var:
    a = lift(a)
    # piecewise constant: zero second derivative almost everywhere
    return _make(_leaky_prime(a.value, slope), [(a, lambda g: np.zeros_like(a.value))])


ACTIVATIONS = {
    "elu": (_elu, _elu_prime, elu, elu_prime),
    "leaky_relu": (_leaky, _leaky_prime, leaky_relu, leaky_relu_prime),
}


# ---------------------------------------------------------------------------
# multi-channel circular correlation (the convolution layer primitive)
# ---------------------------------------------------------------------------

def corr2d_mc_raw(x: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Circular cross-correlation: x (Cin,H,W), K (Cout,Cin,kh,kw) -> (Cout,H,W)."""
    cout, cin, kh, kw = K.shape
    ci, cj = kh // 2, kw // 2
    out = np.zeros((cout,) + x.shape[1:])
    for i in range(kh):
        for j in range(kw):
            xs = np.roll(x, (-(i - ci), -(j - cj)), axis=(1, 2))
            out += np.einsum("oc,chw->ohw", K[:, :, i, j], xs)
    return out


def corr2d_mc_input_adjoint(g: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Adjoint of ``corr2d_mc_raw`` with respect to the input feature map."""
    cout, cin, kh, kw = K.shape
    ci, cj = kh // 2, kw // 2
    out = np.zeros((cin,) + g.shape[1:])
    for i in range(kh):
        for j in range(kw):
            gs = np.roll(g, (i - ci, j - cj), axis=(1, 2))
            out += np.einsum("oc,ohw->chw", K[:, :, i, j], gs)
    return out


def corr2d_mc_kernel_adjoint(g: np.ndarray, x: np.ndarray, kshape) -> np.ndarray:
    """Adjoint of ``corr2d_mc_raw`` with respect to the kernel bank."""
    cout, cin, kh, kw = kshape
    ci, cj = kh // 2, kw // 2
    out = np.zeros(kshape)
    for i in range(kh):
        for j in range(kw):
            xs = np.roll(x, (-(i - ci), -(j - cj)), axis=(1, 2))
            out[:, :, i, j] = np.einsum("ohw,chw->oc", g, xs)
    return out


def corr2d(x, K) -> Var:
    """Recorded circular correlation, differentiable in both arguments."""
    x, K = lift(x), lift(K)
    xv, Kv = x.value, K.value
    return _make(
        corr2d_mc_raw(xv, Kv),
        [(x, lambda g: corr2d_mc_input_adjoint(g, Kv)),
         (K, lambda g: corr2d_mc_kernel_adjoint(g, xv, Kv.shape))],
    )


def bias_add(x, b) -> Var:
    """Add per-channel bias b (C,) to a feature map x (C,H,W)."""
    x, b = lift(x), lift(b)
    return _make(
        x.value + b.value[:, None, None],
        [(x, lambda g: g), (b, lambda g: g.sum(axis=(1, 2)))],
    )


def param_gradient(net, loss: Var) -> np.ndarray:
    """Flat gradient of a recorded scalar loss w.r.t. ``net``'s parameters.

    Operations executed under :class:`no_grad` contribute nothing. The
    leaves' ``.grad`` buffers are consumed and cleared.
    """
    if loss.value.shape != ():
        raise ValueError("loss must be scalar")
    leaves = net.param_leaves()
    zero_grad(leaves)
    backward(loss)
    segs = []
    for v in leaves:
        g = v.grad if v.grad is not None else np.zeros_like(v.value)
        segs.append(np.asarray(g, dtype=np.float64).ravel())
    zero_grad(leaves)
    return np.concatenate(segs) if segs else np.zeros(0)
