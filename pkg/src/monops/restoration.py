"""Inverse-problem assembly (direct and least-squares), metrics, rho sweeps.

The direct formulation solves ``0 in F(x) - y + rho grad_r(x) + N_C(x)``;
the least-squares formulation precomposes with the adjoint of a linear
surrogate kernel L so only the composite ``L^T F`` needs to be monotone:
``0 in L^T F(x) - L^T y + rho grad_r(x) + N_C(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .fbf import (ArmijoConfig, BoxConstraint, MonotoneInclusion, fbf_solve,
                  project_box)
from .operators import AdjointKernelCompose, DifferentiableMap
from .tensorops import as_image, conv2d_adjoint
from .tv import TvConfig, tv_gradient


# --- image quality metrics ---

def mae(x, ref) -> float:
    x, ref = as_image(x), as_image(ref)
    if x.shape != ref.shape:
        raise ValueError("shape mismatch")
    return float(np.mean(np.abs(x - ref)))


def psnr(x, ref) -> float:
    """Peak signal-to-noise ratio in dB for unit peak; inf for equal images."""
    x, ref = as_image(x), as_image(ref)
    if x.shape != ref.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, std: float = 1.5) -> np.ndarray:
    half = size // 2
    g = np.exp(-0.5 * (np.arange(-half, half + 1) / std) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, window_size: int = 11, window_std: float = 1.5) -> float:
    """Mean local SSIM with a Gaussian window; dynamic range 1.

    Images smaller than the window fall back to a single global SSIM over
    whole-image statistics.
    """
    x, ref = as_image(x), as_image(ref)
    if x.shape != ref.shape:
        raise ValueError("shape mismatch")
    c1, c2 = 0.01 ** 2, 0.03 ** 2

    if min(x.shape) < window_size:
        mx, my = x.mean(), ref.mean()
        vx, vy = x.var(), ref.var()
        cxy = float(np.mean((x - mx) * (ref - my)))
        return float(((2 * mx * my + c1) * (2 * cxy + c2))
                     / ((mx * mx + my * my + c1) * (vx + vy + c2)))

    w = _gaussian_window(window_size, window_std)

    def filt(img: np.ndarray) -> np.ndarray:
        view = np.lib.stride_tricks.sliding_window_view(img, w.shape)
        return np.einsum("ijkl,kl->ij", view, w)

    mx, my = filt(x), filt(ref)
    vx = filt(x * x) - mx * mx
    vy = filt(ref * ref) - my * my
    cxy = filt(x * ref) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    mae: float

    @classmethod
    def compute(cls, x, ref) -> "MetricsReport":
        return cls(psnr=psnr(x, ref), ssim=ssim(x, ref), mae=mae(x, ref))

    def to_dict(self) -> dict:
        p = "inf" if math.isinf(self.psnr) else self.psnr
        return {"psnr": p, "ssim": self.ssim, "mae": self.mae}


# --- problem assembly ---

def assemble_direct(operator, y, rho: float, tv_cfg: TvConfig,
                    box: BoxConstraint) -> MonotoneInclusion:
    """Direct regularized inclusion with A = operator + rho * grad_tv."""
    y = as_image(y)
    apply_op = operator.forward if hasattr(operator, "forward") else operator
    return MonotoneInclusion(
        A=apply_op,
        grad_h=lambda x: -y,
        box=box,
        rho=float(rho),
        regularizer_grad=lambda x: tv_gradient(x, tv_cfg),
    )


def assemble_least_squares(inner_operator, lin_kernel, y, rho: float,
                           tv_cfg: TvConfig, box: BoxConstraint) -> MonotoneInclusion:
    """Least-squares inclusion: A = L^T inner(.), data term -L^T y."""
    y = as_image(y)
    lin_kernel = np.asarray(lin_kernel, dtype=np.float64)
    y_tilde = conv2d_adjoint(y, lin_kernel)
    if isinstance(inner_operator, DifferentiableMap):
        composite = AdjointKernelCompose(inner_operator, lin_kernel)
        apply_op = composite.forward
    else:
        apply_op = lambda x: conv2d_adjoint(inner_operator(x), lin_kernel)  # noqa: E731
    return MonotoneInclusion(
        A=apply_op,
        grad_h=lambda x: -y_tilde,
        box=box,
        rho=float(rho),
        regularizer_grad=lambda x: tv_gradient(x, tv_cfg),
    )


@dataclass
class RestorationSpec:
    """Everything needed to restore one measurement."""

    formulation: str
    operator: object
    measurement: np.ndarray
    rho: float = 0.0
    tv: TvConfig = field(default_factory=TvConfig)
    box: BoxConstraint = field(default_factory=BoxConstraint)
    armijo: ArmijoConfig = field(default_factory=ArmijoConfig)
    max_iter: int = 2000
    residual_tol: float = 1e-8
    lin_kernel: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.formulation not in ("direct", "least_squares"):
            raise ValueError("formulation must be 'direct' or 'least_squares'")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.formulation == "least_squares" and self.lin_kernel is None:
            raise ValueError("least_squares needs lin_kernel")


def build_inclusion(spec: RestorationSpec) -> MonotoneInclusion:
    if spec.formulation == "direct":
        return assemble_direct(spec.operator, spec.measurement, spec.rho,
                               spec.tv, spec.box)
    return assemble_least_squares(spec.operator, spec.lin_kernel,
                                  spec.measurement, spec.rho, spec.tv, spec.box)


def initial_point(spec: RestorationSpec) -> np.ndarray:
    y = as_image(spec.measurement)
    if spec.formulation == "direct":
        return project_box(y, spec.box)
    yt = conv2d_adjoint(y, spec.lin_kernel)
    lo, hi = yt.min(), yt.max()
    if hi > lo:
        yt = (yt - lo) / (hi - lo)
    return project_box(yt, spec.box)


def solve_restoration(spec: RestorationSpec):
    """Solve the assembled inclusion; returns (x_hat, trace).

    Trace residuals are normalized by the measurement norm, matching the
    usual convergence-profile convention.
    """
    problem = build_inclusion(spec)
    x0 = initial_point(spec)
    norm_ref = max(float(np.linalg.norm(spec.measurement)), 1e-12)
    return fbf_solve(problem, x0, cfg=spec.armijo, max_iter=spec.max_iter,
                     residual_tol=spec.residual_tol, norm_ref=norm_ref)


@dataclass
class SweepRow:
    rho: float
    psnr: float = math.nan
    ssim: float = math.nan
    mae: float = math.nan
    iterations: int = 0
    error: Optional[str] = None


@dataclass
class SweepResult:
    rows: list

    @property
    def best(self) -> Optional[SweepRow]:
        ok = [r for r in self.rows if r.error is None and not math.isnan(r.psnr)]
        return max(ok, key=lambda r: r.psnr) if ok else None


DEFAULT_RHO_GRID = (0.0, 1e-4, 1e-3, 1e-2, 1e-1)


def rho_sweep(spec: RestorationSpec, rho_list, ground_truth) -> SweepResult:
    """Solve the problem for each rho; failures are recorded, not raised."""
    rho_list = list(rho_list)
    if not rho_list:
        raise ValueError("rho_list must be nonempty")
    ground_truth = as_image(ground_truth)
    rows = []
    for rho in rho_list:
        trial = replace(spec, rho=float(rho))
        try:
            x_hat, trace = solve_restoration(trial)
        except Exception as exc:
            rows.append(SweepRow(rho=float(rho), error=str(exc)))
            continue
        rows.append(SweepRow(
            rho=float(rho),
            psnr=psnr(x_hat, ground_truth),
            ssim=ssim(x_hat, ground_truth),
            mae=mae(x_hat, ground_truth),
            iterations=len(trace),
        ))
    return SweepResult(rows=rows)
