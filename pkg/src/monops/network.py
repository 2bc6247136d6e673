"""Residual convolutional operator network with exact JVP/VJP.

The network is fully convolutional with circular padding, so a model trained
on small crops applies unchanged to larger images. Default architecture:
channels 1 -> 8 -> 8 -> 1, 3x3 kernels, smooth ELU activations on the hidden
layers, linear final layer, residual skip connection. The smooth activation
keeps the Jacobian well defined everywhere; LeakyReLU is available behind the
``activation`` flag with the derivative-at-zero = slope convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .operators import DifferentiableMap


@dataclass
class ParameterVector:
    """Flat parameter storage plus the (name, shape) segments that tile it."""

    values: np.ndarray
    layout: list

    def segment(self, name: str) -> np.ndarray:
        offset = 0
        for seg_name, shape in self.layout:
            size = int(np.prod(shape))
            if seg_name == name:
                return self.values[offset:offset + size].reshape(shape)
            offset += size
        raise KeyError(name)


class ResidualConvNet(DifferentiableMap):
    """Small residual CNN acting on single-channel 2-D images."""

    def __init__(self, channels=(1, 8, 8, 1), kernel_size=3, activation="elu",
                 residual=True, leaky_slope=0.1, seed=0):
        if channels[0] != 1 or channels[-1] != 1:
            raise ValueError("network is single-channel in and out")
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.channels = tuple(int(c) for c in channels)
        self.kernel_size = int(kernel_size)
        self.activation = activation
        self.residual = bool(residual)
        self.leaky_slope = float(leaky_slope)
        self.seed = int(seed)
        self.shape = None  # size-generic

        rng = np.random.default_rng(seed)
        self._leaves = []
        self.layout = []
        k = self.kernel_size
        for l in range(len(self.channels) - 1):
            cin, cout = self.channels[l], self.channels[l + 1]
            s = 1.0 / np.sqrt(cin * k * k)
            w = rng.uniform(-s, s, size=(cout, cin, k, k))
            b = rng.uniform(-s, s, size=(cout,))
            self._leaves.append((f"w{l}", ad.leaf(w)))
            self._leaves.append((f"b{l}", ad.leaf(b)))
            self.layout.append((f"w{l}", (cout, cin, k, k)))
            self.layout.append((f"b{l}", (cout,)))

    # --- parameter plumbing ---

    def param_leaves(self):
        return [v for _, v in self._leaves]

    @property
    def n_params(self) -> int:
        return sum(v.value.size for v in self.param_leaves())

    def get_params(self) -> np.ndarray:
        return np.concatenate([v.value.ravel() for v in self.param_leaves()])

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        offset = 0
        for v in self.param_leaves():
            size = v.value.size
            v.value = flat[offset:offset + size].reshape(v.value.shape).copy()
            offset += size

    @property
    def params(self) -> ParameterVector:
        return ParameterVector(values=self.get_params(), layout=list(self.layout))

    def _layer_arrays(self):
        n_layers = len(self.channels) - 1
        out = []
        for l in range(n_layers):
            out.append((self._leaves[2 * l][1], self._leaves[2 * l + 1][1]))
        return out

    # --- numpy fast paths ---

    def _act_fns(self):
        f, fp, _, _ = ad.ACTIVATIONS[self.activation]
        if self.activation == "leaky_relu":
            return (lambda z: f(z, self.leaky_slope),
                    lambda z: fp(z, self.leaky_slope))
        return f, fp

    def _forward_states(self, x: np.ndarray):
        """Run the layers, returning pre-activations and the raw output map."""
        act, _ = self._act_fns()
        layers = self._layer_arrays()
        h = np.asarray(x, dtype=np.float64)[None]
        zs = []
        for l, (w, b) in enumerate(layers):
            z = ad.corr2d_mc_raw(h, w.value) + b.value[:, None, None]
            zs.append(z)
            h = act(z) if l < len(layers) - 1 else z
        return zs, h

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        _, h = self._forward_states(x)
        out = h[0]
        return out + x if self.residual else out

    def jvp(self, x, u):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        _, actp = self._act_fns()
        layers = self._layer_arrays()
        zs, _ = self._forward_states(x)
        t = u[None]
        for l, (w, _) in enumerate(layers):
            s = ad.corr2d_mc_raw(t, w.value)
            t = actp(zs[l]) * s if l < len(layers) - 1 else s
        out = t[0]
        return out + u if self.residual else out

    def vjp(self, x, v):
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        _, actp = self._act_fns()
        layers = self._layer_arrays()
        zs, _ = self._forward_states(x)
        g = v[None]
        for l in reversed(range(len(layers))):
            if l < len(layers) - 1:
                g = actp(zs[l]) * g
            w = layers[l][0]
            g = ad.corr2d_mc_input_adjoint(g, w.value)
        out = g[0]
        return out + v if self.residual else out

    # --- recorded paths (parameters as tape leaves, data as constants) ---

    def _act_vars(self):
        _, _, act_var, actp_var = ad.ACTIVATIONS[self.activation]
        if self.activation == "leaky_relu":
            return (lambda z: act_var(z, self.leaky_slope),
                    lambda z: actp_var(z, self.leaky_slope))
        return act_var, actp_var

    def _forward_states_traced(self, x: np.ndarray):
        act_var, _ = self._act_vars()
        layers = self._layer_arrays()
        h = ad.const(np.asarray(x, dtype=np.float64)[None])
        zs = []
        for l, (w, b) in enumerate(layers):
            z = ad.bias_add(ad.corr2d(h, w), b)
            zs.append(z)
            h = act_var(z) if l < len(layers) - 1 else z
        return zs, h

    def forward_traced(self, x) -> ad.Var:
        x = np.asarray(x, dtype=np.float64)
        _, h = self._forward_states_traced(x)
        out = ad.reshape(h, x.shape)
        return ad.add(out, ad.const(x)) if self.residual else out

    def jvp_traced(self, x, u) -> ad.Var:
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        _, actp_var = self._act_vars()
        layers = self._layer_arrays()
        zs, _ = self._forward_states_traced(x)
        t = ad.const(u[None])
        for l, (w, _) in enumerate(layers):
            s = ad.corr2d(t, w)
            t = ad.mul(actp_var(zs[l]), s) if l < len(layers) - 1 else s
        out = ad.reshape(t, u.shape)
        return ad.add(out, ad.const(u)) if self.residual else out

    def architecture(self) -> dict:
        return {
            "channels": list(self.channels),
            "kernel_size": self.kernel_size,
            "activation": self.activation,
            "residual": self.residual,
            "leaky_slope": self.leaky_slope,
            "seed": self.seed,
        }
