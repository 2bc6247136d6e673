"""Smallest-eigenvalue probe for symmetrized Jacobians, via power iteration.

The smallest eigenvalue of a symmetric matrix M is recovered from two runs of
the plain power method: the first estimates the largest-magnitude eigenvalue
and yields a shift ``rho_hat`` dominating it, the second finds the dominant
eigenvector of ``rho_hat I - M`` (whose top eigenvalue is
``rho_hat - lambda_min(M)``). The final Rayleigh quotient can optionally be
recorded on the autodiff tape so the estimate is differentiable in the map's
parameters: both power iterations run detached, and the gradient flows only
through that last quotient (a one-step approximation started at the converged
eigenvector).

Monotonicity certificates evaluate the probe on the reflected operator
2T - I, for which strict monotonicity of T corresponds to eigenvalues of the
symmetrized Jacobian above -1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .operators import DifferentiableMap, ReflectedMap


class PowerIterationError(RuntimeError):
    """Power iteration collapsed to a numerically zero vector repeatedly."""


@dataclass
class ProbeConfig:
    n_iter: int = 100
    shift_margin: float = 1.05
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if self.shift_margin <= 1.0:
            raise ValueError("shift_margin must exceed 1")


@dataclass
class SpectralEstimate:
    """Result of the two-stage probe; ``lambda_min == rho_hat - chi_hat``."""

    rho_hat: float
    chi_hat: float
    lambda_min: float
    witness: np.ndarray
    iterations: int
    graph: Optional[ad.Var] = field(default=None, repr=False)


def power_max_abs_eig(apply_fn, shape, config: ProbeConfig, rng=None):
    """Dominant eigenvalue estimate of a self-adjoint action.

    Runs ``config.n_iter`` normalized power steps from a Gaussian start and
    returns the final Rayleigh quotient together with the last iterate. The
    caller guarantees ``apply_fn`` is self-adjoint. A numerically zero iterate
    triggers a restart with a fresh random vector, at most three times.
    """
    if isinstance(shape, (int, np.integer)):
        if shape <= 0:
            raise ValueError("dimension must be positive")
        shape = (int(shape),)
    elif int(np.prod(shape)) <= 0:
        raise ValueError("dimension must be positive")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    for _ in range(4):
        v = rng.standard_normal(shape)
        nv = np.linalg.norm(v)
        if nv < 1e-30:
            continue
        v = v / nv
        dead = False
        for _ in range(config.n_iter):
            w = np.asarray(apply_fn(v), dtype=np.float64)
            nw = np.linalg.norm(w)
            if not np.isfinite(nw):
                raise FloatingPointError("power iteration produced non-finite values")
            if nw < 1e-30:
                dead = True
                break
            v = w / nw
        if not dead:
            q = float(np.vdot(v, apply_fn(v)))
            return q, v
    raise PowerIterationError("power iteration hit a zero iterate after 3 restarts")


def lambda_min_sym_jacobian(op: DifferentiableMap, x: np.ndarray,
                            config: ProbeConfig, record_gradient: bool = False,
                            rng=None) -> SpectralEstimate:
    """Estimate lambda_min of the symmetrized Jacobian of ``op`` at ``x``.

    Stage 1 (detached) bounds the spectral radius and sets the shift
    ``rho_hat = shift_margin * |q| + 1e-6``; stage 2 (detached) finds the
    witness eigenvector of the shifted matrix. Only the closing Rayleigh
    quotient is recorded when ``record_gradient`` is set and the map supports
    tracing.
    """
    x = np.asarray(x, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(config.seed)

    def sym_apply(u):
        return op.sym_jacobian_apply(x, u)

    with ad.no_grad():
        try:
            q, _ = power_max_abs_eig(sym_apply, x.shape, config, rng=rng)
        except PowerIterationError:
            q = 0.0
        if abs(q) < 1e-9:
            rho_hat = 1e-3
        else:
            rho_hat = config.shift_margin * abs(q) + 1e-6

        def shifted_apply(u):
            return rho_hat * u - sym_apply(u)

        _, witness = power_max_abs_eig(shifted_apply, x.shape, config, rng=rng)

    nv2 = float(np.vdot(witness, witness))
    graph = None
    if record_gradient and op.supports_tracing():
        # v^T J^s v == v^T J v, so the recorded quotient only needs the JVP
        jv = op.jvp_traced(x, witness)
        quad = ad.dot(ad.const(witness), jv)
        chi_var = ad.smul(1.0 / nv2, ad.sub(ad.const(rho_hat * nv2), quad))
        lam_var = ad.sub(ad.const(rho_hat), chi_var)
        chi_hat = float(chi_var.value)
        graph = lam_var
    else:
        with ad.no_grad():
            w = sym_apply(witness)
        chi_hat = float(np.vdot(witness, rho_hat * witness - w) / nv2)

    lam = rho_hat - chi_hat
    return SpectralEstimate(rho_hat=rho_hat, chi_hat=chi_hat, lambda_min=lam,
                            witness=witness, iterations=2 * config.n_iter,
                            graph=graph)


@dataclass
class CertificateSample:
    sample_id: int
    lambda_min_reflected: float
    lambda_min_map: float
    rho_hat: float
    iterations: int


@dataclass
class CertificateReport:
    samples: list
    beta: float
    tolerance: float

    @property
    def min_lambda(self) -> float:
        return min(s.lambda_min_map for s in self.samples)

    @property
    def passed(self) -> bool:
        return self.min_lambda >= self.beta - self.tolerance

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("sample_id,lambda_min_R,lambda_min_T,iterations,rho_hat\n")
            for s in self.samples:
                fh.write(f"{s.sample_id},{s.lambda_min_reflected:.12g},"
                         f"{s.lambda_min_map:.12g},{s.iterations},{s.rho_hat:.12g}\n")


def monotonicity_certificate(op: DifferentiableMap, probe_set, beta: float,
                             config: ProbeConfig, tolerance: float = 0.0,
                             rng=None) -> CertificateReport:
    """Probe lambda_min of the symmetrized Jacobian over a set of points.

    Each sample is evaluated through the reflected operator
    (lambda_min(J^s_T) = (lambda_min(J^s_{2T-I}) + 1) / 2), which is the same
    quantity the training penalty controls. The report passes when the
    minimum over the set is at least ``beta - tolerance``.
    """
    probe_set = list(probe_set)
    if not probe_set:
        raise ValueError("probe_set must be nonempty")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    reflected = ReflectedMap(op)
    samples = []
    for i, x in enumerate(probe_set):
        est = lambda_min_sym_jacobian(reflected, x, config, rng=rng)
        samples.append(CertificateSample(
            sample_id=i,
            lambda_min_reflected=est.lambda_min,
            lambda_min_map=0.5 * (est.lambda_min + 1.0),
            rho_hat=est.rho_hat,
            iterations=est.iterations,
        ))
    return CertificateReport(samples=samples, beta=beta, tolerance=tolerance)
