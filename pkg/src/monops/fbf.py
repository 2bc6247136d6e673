"""Forward-backward-forward (Tseng) solver with Armijo-Goldstein step search.

Solves constrained monotone inclusions ``0 in A(x) + grad_h(x) + N_C(x)``
for a continuous operator A, a smooth linear-ish term grad_h, and a box
constraint C, without needing a Lipschitz constant: each iteration runs a
geometric backtracking search ``gamma = sigma * beta^i`` until

    gamma * ||B(z) - B(x)|| <= theta * ||z - x||,   z = proj_C(x - gamma B(x)),

then takes the corrective second forward step. Convergence holds for
monotone continuous B; no cocoercivity is required.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class StepSearchError(RuntimeError):
    """Armijo search exhausted ``max_trials`` without acceptance."""

    def __init__(self, message, gamma=None, trials=None, x=None, z=None):
        super().__init__(message)
        self.gamma = gamma
        self.trials = trials
        self.x = x
        self.z = z


class NonFiniteIterateError(FloatingPointError):
    pass


@dataclass
class BoxConstraint:
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("box needs lower < upper (nonempty interior)")


def project_box(x, box: BoxConstraint) -> np.ndarray:
    """Element-wise clamp onto [lower, upper]."""
    return np.clip(np.asarray(x, dtype=np.float64), box.lower, box.upper)


@dataclass
class ArmijoConfig:
    sigma: float = 1.0
    beta: float = 0.5
    theta: float = 0.9
    max_trials: int = 60

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")


@dataclass
class MonotoneInclusion:
    """The data of ``0 in A(x) + rho * regularizer_grad(x) + grad_h(x) + N_C(x)``."""

    A: Callable
    grad_h: Optional[Callable]
    box: BoxConstraint
    rho: float = 0.0
    regularizer_grad: Optional[Callable] = None

    def field_value(self, x: np.ndarray) -> np.ndarray:
        """The single-valued part B(x) entering the FBF forward steps."""
        out = np.asarray(self.A(x), dtype=np.float64)
        if self.rho != 0.0 and self.regularizer_grad is not None:
            out = out + self.rho * np.asarray(self.regularizer_grad(x))
        if self.grad_h is not None:
            out = out + np.asarray(self.grad_h(x))
        return out


@dataclass
class FbfTrace:
    """Per-iteration records of the solver run."""

    gamma: list = field(default_factory=list)
    trials: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    surrogate: list = field(default_factory=list)

    def __len__(self):
        return len(self.gamma)

    def append(self, gamma, trials, residual, surrogate):
        self.gamma.append(float(gamma))
        self.trials.append(int(trials))
        self.residual.append(float(residual))
        self.surrogate.append(float(surrogate))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,gamma,trials,residual\n")
            for k, (g, t, r) in enumerate(zip(self.gamma, self.trials, self.residual)):
                fh.write(f"{k},{g:.12g},{t},{r:.12g}\n")


def armijo_step(B: Callable, x: np.ndarray, box: BoxConstraint,
                cfg: ArmijoConfig, bx: Optional[np.ndarray] = None):
    """Backtracking step search; returns ``(gamma, z, trials)``.

    ``trials`` is the accepted exponent i with ``gamma = sigma * beta**i``.
    """
    x = np.asarray(x, dtype=np.float64)
    if bx is None:
        bx = np.asarray(B(x), dtype=np.float64)
    gamma = None
    z = None
    for i in range(cfg.max_trials + 1):
        gamma = cfg.sigma * cfg.beta ** i
        z = project_box(x - gamma * bx, box)
        lhs = gamma * np.linalg.norm(np.asarray(B(z)) - bx)
        rhs = cfg.theta * np.linalg.norm(z - x)
        if lhs <= rhs:
            return gamma, z, i
    raise StepSearchError(
        f"no admissible step after {cfg.max_trials} trials",
        gamma=gamma, trials=cfg.max_trials, x=x, z=z,
    )


def fbf_solve(problem: MonotoneInclusion, x0: np.ndarray,
              cfg: Optional[ArmijoConfig] = None, max_iter: int = 1000,
              residual_tol: float = 1e-6, norm_ref: Optional[float] = None):
    """Run the FBF iteration; returns ``(x_hat, trace)``.

    The residual recorded at iteration k is ``||x_{k+1} - x_k|| / norm_ref``,
    with ``norm_ref`` defaulting to ``max(||x0||, 1)``. Every iterate after
    the first projection lies in the box exactly.
    """
    cfg = cfg or ArmijoConfig()
    x = project_box(x0, problem.box)
    denom = float(norm_ref) if norm_ref else max(float(np.linalg.norm(x0)), 1.0)
    trace = FbfTrace()
    B = problem.field_value
    for _ in range(max_iter):
        bx = B(x)
        if not np.all(np.isfinite(bx)):
            raise NonFiniteIterateError("operator value is non-finite")
        gamma, z, trials = armijo_step(B, x, problem.box, cfg, bx=bx)
        x_next = project_box(z - gamma * (B(z) - bx), problem.box)
        if not np.all(np.isfinite(x_next)):
            raise NonFiniteIterateError("iterate became non-finite")
        res = float(np.linalg.norm(x_next - x)) / denom
        natural = np.linalg.norm(x - project_box(x - bx, problem.box))
        trace.append(gamma, trials, res, natural)
        x = x_next
        if res <= residual_tol:
            break
    return x, trace


def invert_operator(op, x_bar: np.ndarray, box: BoxConstraint,
                    cfg: Optional[ArmijoConfig] = None, max_iter: int = 3000,
                    residual_tol: float = 1e-10):
    """Recover ``x_bar`` from ``op(x_bar)`` by solving the inclusion with rho=0.

    For a monotone ``op`` (certified by the caller) and ``x_bar`` interior to
    the box, the solution is the exact preimage. Returns ``(x_hat, trace)``.
    """
    x_bar = np.asarray(x_bar, dtype=np.float64)
    y = np.asarray(op.forward(x_bar) if hasattr(op, "forward") else op(x_bar))
    problem = MonotoneInclusion(
        A=op.forward if hasattr(op, "forward") else op,
        grad_h=lambda x: -y,
        box=box,
        rho=0.0,
    )
    x0 = project_box(y, box)
    return fbf_solve(problem, x0, cfg=cfg, max_iter=max_iter,
                     residual_tol=residual_tol)
