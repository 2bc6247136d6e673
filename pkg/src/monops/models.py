"""Saturated mean-of-blurs measurement operator and dataset simulation.

The measurement model averages K circular convolutions, each passed through a
pixel-wise tanh saturation centered on 0.5. The saturation fixes 0.5 and
compresses the extremes, which is what makes the overall operator
non-monotone for asymmetric kernels. Affine and linear first-order
approximations of the model are provided, as is a Gaussian noise model and a
random-walk motion-kernel generator used in place of real camera kernels.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .operators import DifferentiableMap
from .tensorops import (DimensionError, as_image, conv2d_adjoint,
                        conv2d_circular, delta_kernel, kernel_is_normalized)


@dataclass
class SaturationParams:
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")


def saturate(x, p: SaturationParams) -> np.ndarray:
    """Pixel-wise saturation (tanh(delta * (2x - 1)) + 1) / 2."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (np.tanh(p.delta * (2.0 * x - 1.0)) + 1.0)


def saturate_deriv(x, p: SaturationParams) -> np.ndarray:
    """Diagonal Jacobian of the saturation: delta * (1 - tanh^2(delta(2x-1)))."""
    x = np.asarray(x, dtype=np.float64)
    t = np.tanh(p.delta * (2.0 * x - 1.0))
    return p.delta * (1.0 - t * t)


@dataclass
class NoiseModel:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def add_noise(x, nm: NoiseModel, rng=None) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise with standard deviation ``nm.sigma``.

    Draws come from numpy's Generator (ziggurat normal sampler), seeded with
    ``nm.seed`` when no generator is supplied; identical seeds give identical
    noise within one build.
    """
    x = np.asarray(x, dtype=np.float64)
    if nm.sigma == 0.0:
        return x.copy()
    if rng is None:
        rng = np.random.default_rng(nm.seed)
    return x + nm.sigma * rng.standard_normal(x.shape)


class SaturatedBlurModel(DifferentiableMap):
    """Measurement operator: mean over kernels of saturate(conv(x, L_k))."""

    def __init__(self, kernels, saturation: SaturationParams):
        kernels = [np.asarray(k, dtype=np.float64) for k in kernels]
        if not kernels:
            raise ValueError("need at least one kernel")
        for k in kernels:
            if not kernel_is_normalized(k):
                raise ValueError("kernels must be nonnegative and sum to one")
        self.kernels = kernels
        self.saturation = saturation
        self.shape = None

    def forward(self, x):
        x = as_image(x)
        acc = np.zeros_like(x)
        for k in self.kernels:
            acc += saturate(conv2d_circular(x, k), self.saturation)
        return acc / len(self.kernels)

    def jvp(self, x, u):
        x = as_image(x)
        u = as_image(u)
        acc = np.zeros_like(x)
        for k in self.kernels:
            d = saturate_deriv(conv2d_circular(x, k), self.saturation)
            acc += d * conv2d_circular(u, k)
        return acc / len(self.kernels)

    def vjp(self, x, v):
        x = as_image(x)
        v = as_image(v)
        acc = np.zeros_like(x)
        for k in self.kernels:
            d = saturate_deriv(conv2d_circular(x, k), self.saturation)
            acc += conv2d_adjoint(d * v, k)
        return acc / len(self.kernels)

    def mean_kernel(self) -> np.ndarray:
        """The averaged kernel (1/K) sum_k L_k (all kernels share a size)."""
        sizes = {k.shape for k in self.kernels}
        if len(sizes) != 1:
            raise DimensionError("kernels must share a size to be averaged")
        return sum(self.kernels) / len(self.kernels)


class SaturatedComposite(DifferentiableMap):
    """x -> L^T S_delta(L x) for a single kernel; monotone by construction."""

    def __init__(self, kernel, saturation: SaturationParams):
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.saturation = saturation
        self.shape = None

    def forward(self, x):
        return conv2d_adjoint(saturate(conv2d_circular(x, self.kernel),
                                       self.saturation), self.kernel)

    def jvp(self, x, u):
        d = saturate_deriv(conv2d_circular(x, self.kernel), self.saturation)
        return conv2d_adjoint(d * conv2d_circular(u, self.kernel), self.kernel)

    def vjp(self, x, v):
        d = saturate_deriv(conv2d_circular(x, self.kernel), self.saturation)
        return conv2d_adjoint(d * conv2d_circular(v, self.kernel), self.kernel)


def apply_forward(model: SaturatedBlurModel, x) -> np.ndarray:
    return model.forward(x)


def apply_affine_approx(model: SaturatedBlurModel, x) -> np.ndarray:
    """First-order approximation (delta/K) sum_k L_k x + (1 - delta)/2."""
    x = as_image(x)
    delta = model.saturation.delta
    blur = conv2d_circular(x, model.mean_kernel())
    return delta * blur + (1.0 - delta) / 2.0


def apply_linear_approx(model: SaturatedBlurModel, x) -> np.ndarray:
    """Linear part only: (delta/K) sum_k L_k x."""
    x = as_image(x)
    return model.saturation.delta * conv2d_circular(x, model.mean_kernel())


def generate_motion_kernel(size: int, steps: int, seed: int = 0) -> np.ndarray:
    """Random-walk motion kernel: rasterized trajectory, lightly smoothed.

    ``steps == 0`` degenerates to the centered delta kernel. The result is
    nonnegative and sums to one.
    """
    if size % 2 != 1 or size < 1:
        raise DimensionError(f"kernel side must be odd positive, got {size}")
    if steps == 0:
        return delta_kernel(size)
    rng = np.random.default_rng(seed)
    grid = np.zeros((size, size))
    pos = np.array([size // 2, size // 2], dtype=np.float64)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    grid[int(pos[0]), int(pos[1])] += 1.0
    for _ in range(steps):
        heading += 0.5 * rng.standard_normal()
        pos = pos + np.array([np.sin(heading), np.cos(heading)])
        pos = np.clip(pos, 0, size - 1)
        grid[int(round(pos[0])), int(round(pos[1]))] += 1.0
    tap = np.array([0.25, 0.5, 0.25])
    for axis in (0, 1):
        pad = np.take(grid, [0] + list(range(size)) + [size - 1], axis=axis)
        grid = (tap[0] * np.take(pad, range(0, size), axis=axis)
                + tap[1] * np.take(pad, range(1, size + 1), axis=axis)
                + tap[2] * np.take(pad, range(2, size + 2), axis=axis))
    grid = np.maximum(grid, 0.0)
    return grid / grid.sum()


def simulate_dataset(clean_dir, model: SaturatedBlurModel, noise: NoiseModel,
                     out_dir) -> int:
    """Simulate measurement pairs for every readable image in ``clean_dir``.

    Writes ``clean_NNN.f32t`` / ``meas_NNN.f32t`` pairs (measurements stored
    unclipped), PGM previews, the model kernels, and a ``manifest.json``
    describing the simulation. Returns the number of pairs written.
    """
    clean_dir = Path(clean_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(p for p in clean_dir.iterdir()
                   if p.suffix.lower() in (".pgm", ".f32t"))
    rng = np.random.default_rng(noise.seed)
    kernel_files = []
    for i, k in enumerate(model.kernels):
        kpath = out_dir / f"kernel_{i:02d}.f32t"
        kernel_files.append(kpath.name)
        fileio.save_kernel(kpath, k, normalized=True)
    entries = []
    count = 0
    for p in paths:
        try:
            x = fileio.read_image(p)
        except Exception as exc:  # unreadable inputs are skipped, not fatal
            warnings.warn(f"skipping unreadable {p.name}: {exc}")
            continue
        y = add_noise(model.forward(x), noise, rng=rng)
        cname, mname = f"clean_{count:03d}.f32t", f"meas_{count:03d}.f32t"
        fileio.write_f32t(out_dir / cname, x)
        fileio.write_f32t(out_dir / mname, y)
        fileio.write_pgm(out_dir / f"clean_{count:03d}.pgm", x)
        fileio.write_pgm(out_dir / f"meas_{count:03d}.pgm", y)
        entries.append({"clean": cname, "measurement": mname, "source": p.name})
        count += 1
    if count == 0:
        raise FileNotFoundError(f"no readable images in {clean_dir}")
    manifest = {
        "kernels": kernel_files,
        "delta": model.saturation.delta,
        "sigma": noise.sigma,
        "seed": noise.seed,
        "pairs": entries,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return count
