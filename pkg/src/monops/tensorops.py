"""Dense 2-D array primitives: circular convolution, its exact adjoint, kernels.

All images and kernels are float64 numpy arrays in row-major order. Boundary
handling is periodic (circular) everywhere, which makes the adjoint of the
convolution exact: ``<conv(x, k), y> == <x, adjoint(y, k)>`` holds to rounding
error, a property the least-squares restoration formulation depends on.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Shape or size constraint violated (e.g. kernel larger than image)."""


def as_image(x) -> np.ndarray:
    """Validate and return ``x`` as a 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {a.shape}")
    return a


def as_kernel(k) -> np.ndarray:
    """Validate and return ``k`` as a square, odd-sided float64 kernel."""
    a = np.asarray(k, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"kernel must be square, got shape {a.shape}")
    if a.shape[0] % 2 != 1:
        raise DimensionError(f"kernel side must be odd, got {a.shape[0]}")
    return a


def ensure_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{what} contains non-finite entries")
    return a


def rot180(k: np.ndarray) -> np.ndarray:
    """Rotate a kernel by 180 degrees (reverse both axes)."""
    return k[::-1, ::-1].copy()


def _check_fits(x: np.ndarray, k: np.ndarray) -> None:
    if k.shape[0] > min(x.shape):
        raise DimensionError(
            f"kernel of side {k.shape[0]} does not fit image of shape {x.shape}"
        )


def conv2d_circular(x, k) -> np.ndarray:
    """Circular 2-D convolution of image ``x`` with centered kernel ``k``.

    ``out[p] = sum_q k[q] * x[(p - (q - c)) mod shape]`` with ``c`` the kernel
    center. Output shape equals input shape.
    """
    x = as_image(x)
    k = as_kernel(k)
    _check_fits(x, k)
    c = k.shape[0] // 2
    out = np.zeros_like(x)
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            w = k[i, j]
            if w == 0.0:
                continue
            out += w * np.roll(x, (i - c, j - c), axis=(0, 1))
    return out


def conv2d_adjoint(x, k) -> np.ndarray:
    """Exact adjoint of ``conv2d_circular(., k)``: circular correlation with ``k``.

    Equivalent to convolution with the 180-degree rotated kernel.
    """
    x = as_image(x)
    k = as_kernel(k)
    _check_fits(x, k)
    c = k.shape[0] // 2
    out = np.zeros_like(x)
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            w = k[i, j]
            if w == 0.0:
                continue
            out += w * np.roll(x, (-(i - c), -(j - c)), axis=(0, 1))
    return out


def delta_kernel(size: int) -> np.ndarray:
    """Centered identity kernel of odd side ``size``."""
    if size % 2 != 1 or size < 1:
        raise DimensionError(f"kernel side must be odd positive, got {size}")
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def normalize_kernel(w) -> np.ndarray:
    """Clip to nonnegative and rescale so the weights sum to one."""
    a = as_kernel(w)
    a = np.maximum(a, 0.0)
    s = a.sum()
    if s <= 0.0:
        raise ValueError("kernel has no positive weight to normalize")
    return a / s


def kernel_is_normalized(w, tol: float = 1e-12) -> bool:
    a = as_kernel(w)
    return bool(np.all(a >= 0.0) and abs(a.sum() - 1.0) <= tol)
