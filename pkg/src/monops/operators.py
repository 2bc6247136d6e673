"""Differentiable operator maps: forward evaluation plus exact linearizations.

A :class:`DifferentiableMap` exposes ``forward``, the Jacobian-vector product
``jvp`` (analytic forward mode), the adjoint product ``vjp`` (reverse mode) and
the symmetrized action ``sym_jacobian_apply``. Maps whose parameters are
trainable additionally provide ``forward_traced`` / ``jvp_traced`` returning
recorded :class:`~monops.autodiff.Var` nodes, which is what the monotonicity
penalty differentiates.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .tensorops import conv2d_adjoint, conv2d_circular


class DifferentiableMap:
    """An operator R^n -> R^n with analytic first-order information."""

    #: expected input array shape, or None when the map is size-generic
    shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jvp(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sym_jacobian_apply(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Apply (J(x) + J(x)^T)/2 to ``u``; requires a square map."""
        out = self.jvp(x, u)
        if out.shape != np.asarray(u).shape:
            raise ValueError("sym_jacobian_apply needs a square map")
        return 0.5 * (out + self.vjp(x, u))

    # --- optional recorded protocol (trainable maps) ---

    def supports_tracing(self) -> bool:
        return hasattr(self, "jvp_traced")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)


class LinearMatrixMap(DifferentiableMap):
    """x -> M x for a dense matrix, acting on flat vectors."""

    def __init__(self, M):
        self.M = np.asarray(M, dtype=np.float64)
        if self.M.ndim != 2:
            raise ValueError("M must be a matrix")
        self.shape = (self.M.shape[1],)

    def forward(self, x):
        return self.M @ np.asarray(x, dtype=np.float64)

    def jvp(self, x, u):
        return self.M @ np.asarray(u, dtype=np.float64)

    def vjp(self, x, v):
        return self.M.T @ np.asarray(v, dtype=np.float64)


class ScaledIdentityMap(DifferentiableMap):
    """x -> c x on arrays of any shape."""

    def __init__(self, c: float, shape=None):
        self.c = float(c)
        self.shape = shape

    def forward(self, x):
        return self.c * np.asarray(x, dtype=np.float64)

    def jvp(self, x, u):
        return self.c * np.asarray(u, dtype=np.float64)

    def vjp(self, x, v):
        return self.c * np.asarray(v, dtype=np.float64)


class KernelConvMap(DifferentiableMap):
    """Linear map given by scaled circular convolution with a fixed kernel.

    With ``adjoint=True`` the map applies the transpose (circular
    correlation) instead.
    """

    def __init__(self, kernel, scale: float = 1.0, adjoint: bool = False, shape=None):
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.scale = float(scale)
        self.adjoint = bool(adjoint)
        self.shape = shape

    def _apply(self, x, transpose):
        op = conv2d_adjoint if (self.adjoint ^ transpose) else conv2d_circular
        return self.scale * op(np.asarray(x, dtype=np.float64), self.kernel)

    def forward(self, x):
        return self._apply(x, transpose=False)

    def jvp(self, x, u):
        return self._apply(u, transpose=False)

    def vjp(self, x, v):
        return self._apply(v, transpose=True)


class ReflectedMap(DifferentiableMap):
    """Reflection 2 T - I of a square map T."""

    def __init__(self, base: DifferentiableMap):
        self.base = base
        self.shape = base.shape

    def forward(self, x):
        return 2.0 * self.base.forward(x) - x

    def jvp(self, x, u):
        return 2.0 * self.base.jvp(x, u) - u

    def vjp(self, x, v):
        return 2.0 * self.base.vjp(x, v) - v

    def supports_tracing(self):
        return self.base.supports_tracing()

    def jvp_traced(self, x, u):
        return ad.sub(ad.smul(2.0, self.base.jvp_traced(x, u)), ad.const(u))

    def forward_traced(self, x):
        return ad.sub(ad.smul(2.0, self.base.forward_traced(x)), ad.const(x))


class AdjointKernelCompose(DifferentiableMap):
    """Composite x -> scale * L^T(inner(x)) with L a fixed convolution kernel.

    This is the operator whose monotonicity the least-squares training variant
    constrains; ``inner`` keeps its own parameters.
    """

    def __init__(self, inner: DifferentiableMap, kernel, scale: float = 1.0):
        self.inner = inner
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.scale = float(scale)
        self.shape = inner.shape

    def forward(self, x):
        return self.scale * conv2d_adjoint(self.inner.forward(x), self.kernel)

    def jvp(self, x, u):
        return self.scale * conv2d_adjoint(self.inner.jvp(x, u), self.kernel)

    def vjp(self, x, v):
        back = self.scale * conv2d_circular(np.asarray(v, dtype=np.float64), self.kernel)
        return self.inner.vjp(x, back)

    def supports_tracing(self):
        return self.inner.supports_tracing()

    def jvp_traced(self, x, u):
        t = self.inner.jvp_traced(x, u)
        t3 = ad.reshape(t, (1,) + t.value.shape)
        kb = ad.const(self.kernel[None, None, :, :])
        out = ad.corr2d(t3, kb)
        return ad.smul(self.scale, ad.reshape(out, t.value.shape))

    def forward_traced(self, x):
        t = self.inner.forward_traced(x)
        t3 = ad.reshape(t, (1,) + t.value.shape)
        kb = ad.const(self.kernel[None, None, :, :])
        out = ad.corr2d(t3, kb)
        return ad.smul(self.scale, ad.reshape(out, t.value.shape))
