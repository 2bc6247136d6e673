"""Penalized training of operator networks and the linear-kernel baseline.

The trainer minimizes an l1 data-fit plus ``xi`` times a monotonicity penalty
evaluated at one convex combination ``nu * x + (1 - nu) * y`` per batch; the
penalty weight grows by ``delta_xi`` after every epoch so the constraint is
enforced progressively. Four variants are supported:

* ``mon``     — penalty on the network itself,
* ``nom``     — no penalty (``xi`` forced to zero),
* ``lsq_mon`` — penalty on the composite ``L_lin^T model`` used by the
  least-squares restoration formulation,
* ``linear``  — the reparametrized normalized-kernel fit (see
  :func:`train_linear_kernel`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .operators import AdjointKernelCompose, ReflectedMap
from .spectral import ProbeConfig, lambda_min_sym_jacobian
from .tensorops import as_image

VARIANTS = ("mon", "nom", "lsq_mon", "linear")


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    xi0: float = 0.1
    delta_xi: float = 0.1
    epsilon: float = 0.01
    learning_rate: float = 2e-3
    lr_decay: float = 0.1
    seed: int = 0
    variant: str = "mon"
    probe_n_iter: int = 20
    penal_crop: int = 64

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.xi0 < 0 or self.delta_xi < 0:
            raise ValueError("xi0 and delta_xi must be nonnegative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class TrainingPair:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = as_image(self.x)
        self.y = as_image(self.y)
        if self.x.shape != self.y.shape:
            raise ValueError("pair members must share a shape")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float):
    """One Adam update with bias correction; returns (new_params, state)."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter/gradient/state layouts do not match")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps), state


def l1_loss(pred, target) -> float:
    """Mean absolute difference (per-element mean)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def sample_penal_point(pair: TrainingPair, rng) -> np.ndarray:
    """Convex combination nu * x + (1 - nu) * y with nu ~ U[0, 1]."""
    nu = float(rng.uniform())
    return nu * pair.x + (1.0 - nu) * pair.y


def penalty(op, x_tilde: np.ndarray, epsilon: float, probe: ProbeConfig,
            rng=None) -> ad.Var:
    """Recorded penalty -min(1 + lambda_min(J^s of 2*op - I at x_tilde), epsilon).

    Positive whenever the reflected operator's smallest symmetrized-Jacobian
    eigenvalue drops below epsilon - 1; clipped at -epsilon once the operator
    is safely monotone. Gradient flows through the probe's final Rayleigh
    quotient only.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    reflected = ReflectedMap(op)
    est = lambda_min_sym_jacobian(reflected, x_tilde, probe,
                                  record_gradient=True, rng=rng)
    lam = est.graph if est.graph is not None else ad.const(est.lambda_min)
    if 1.0 + est.lambda_min < epsilon:
        return ad.neg(ad.add(lam, ad.const(1.0)))
    return ad.const(-epsilon)


@dataclass
class TrainHistory:
    data_loss: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    xi: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def append(self, data_loss, pen, xi, lr):
        self.data_loss.append(float(data_loss))
        self.penalty.append(float(pen))
        self.xi.append(float(xi))
        self.lr.append(float(lr))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,data_loss,penalty,xi,lr\n")
            rows = zip(self.data_loss, self.penalty, self.xi, self.lr)
            for e, (d, p, x, l) in enumerate(rows):
                fh.write(f"{e},{d:.12g},{p:.12g},{x:.12g},{l:.12g}\n")


def _crop_for_penalty(x: np.ndarray, size: int, rng) -> np.ndarray:
    h, w = x.shape
    if h <= size and w <= size:
        return x
    i = int(rng.integers(0, h - size + 1)) if h > size else 0
    j = int(rng.integers(0, w - size + 1)) if w > size else 0
    return x[i:i + min(size, h), j:j + min(size, w)]


def train(model, dataset, cfg: TrainConfig, lsq_kernel=None):
    """Train ``model`` on (clean, measurement) pairs; returns (model, history).

    The model is updated in place. With ``variant='lsq_mon'`` the penalty is
    evaluated on ``x -> L_lin^T model(x)`` where ``L_lin`` is ``lsq_kernel``.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must be nonempty")
    if cfg.variant == "linear":
        raise ValueError("use train_linear_kernel for the linear variant")
    if cfg.variant == "lsq_mon" and lsq_kernel is None:
        raise ValueError("variant 'lsq_mon' needs lsq_kernel")

    xi = 0.0 if cfg.variant == "nom" else cfg.xi0
    delta_xi = 0.0 if cfg.variant == "nom" else cfg.delta_xi
    penalized_map = model
    if cfg.variant == "lsq_mon":
        penalized_map = AdjointKernelCompose(model, lsq_kernel)

    rng = np.random.default_rng(cfg.seed)
    probe = ProbeConfig(n_iter=cfg.probe_n_iter, seed=cfg.seed)
    state = AdamState.for_params(model.n_params)
    lr = cfg.learning_rate
    history = TrainHistory()
    best_loss = np.inf
    stall = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_data, epoch_pen, n_batches = 0.0, 0.0, 0
        for start in range(0, len(dataset), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            terms = []
            for pair in batch:
                pred = model.forward_traced(pair.x)
                terms.append(ad.mean(ad.abs_(ad.sub(pred, ad.const(pair.y)))))
            data_var = terms[0]
            for t in terms[1:]:
                data_var = ad.add(data_var, t)
            data_var = ad.smul(1.0 / len(batch), data_var)

            b0 = int(rng.integers(0, len(batch)))
            x_tilde = sample_penal_point(batch[b0], rng)
            x_tilde = _crop_for_penalty(x_tilde, cfg.penal_crop, rng)
            try:
                pen_var = penalty(penalized_map, x_tilde, cfg.epsilon, probe,
                                  rng=rng)
                pen_value = float(pen_var.value)
            except FloatingPointError as exc:
                raise TrainingDivergedError(
                    f"penalty probe diverged at epoch {epoch}: {exc}",
                    state={"epoch": epoch, "xi": xi, "lr": lr,
                           "data_loss": float(data_var.value),
                           "params": model.get_params()},
                ) from exc

            loss_var = ad.add(data_var, ad.smul(xi, pen_var))
            if not np.isfinite(loss_var.value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}",
                    state={"epoch": epoch, "xi": xi, "lr": lr,
                           "data_loss": float(data_var.value),
                           "penalty": pen_value,
                           "params": model.get_params()},
                )
            grad = ad.param_gradient(model, loss_var)
            new_params, state = adam_step(model.get_params(), grad, state, lr)
            model.set_params(new_params)

            epoch_data += float(data_var.value)
            epoch_pen += float(pen_var.value)
            n_batches += 1

        mean_data = epoch_data / n_batches
        history.append(mean_data, epoch_pen / n_batches, xi, lr)
        xi += delta_xi

        if mean_data < best_loss - 1e-4:
            best_loss = mean_data
            stall = 0
        else:
            stall += 1
            if stall >= 10:
                lr *= cfg.lr_decay
                stall = 0
    return model, history


def train_linear_kernel(dataset, kernel_size: int, cfg: TrainConfig) -> np.ndarray:
    """Fit a normalized, nonnegative convolution kernel to the dataset.

    Raw weights f are reparametrized through relu(f) / sum(relu(f)) so the
    returned kernel always has unit mass; optimization runs full-batch Adam.
    If every raw weight is pushed nonpositive the raw kernel is re-seeded with
    small positive values and training continues.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must be nonempty")
    if kernel_size % 2 != 1:
        raise ValueError("kernel_size must be odd")
    rng = np.random.default_rng(cfg.seed)
    raw = ad.leaf(rng.uniform(0.0, 1.0, (kernel_size, kernel_size)) / kernel_size ** 2)
    state = AdamState.for_params(raw.value.size)

    def reparam(r):
        pos = ad.relu(r)
        return ad.div_scalar(pos, ad.sum_(pos))

    for _ in range(cfg.epochs):
        if float(np.sum(np.maximum(raw.value, 0.0))) < 1e-12:
            raw.value = rng.uniform(0.0, 1.0, raw.value.shape) / kernel_size ** 2
            state = AdamState.for_params(raw.value.size)
        kernel = reparam(raw)
        bank = ad.reshape(ad.rot180_var(kernel), (1, 1, kernel_size, kernel_size))
        terms = []
        for pair in dataset:
            pred = ad.corr2d(ad.const(pair.x[None]), bank)
            diff = ad.sub(ad.reshape(pred, pair.x.shape), ad.const(pair.y))
            terms.append(ad.mean(ad.abs_(diff)))
        loss = terms[0]
        for t in terms[1:]:
            loss = ad.add(loss, t)
        loss = ad.smul(1.0 / len(dataset), loss)
        ad.zero_grad([raw])
        ad.backward(loss)
        grad = raw.grad if raw.grad is not None else np.zeros_like(raw.value)
        new_flat, state = adam_step(raw.value.ravel(), grad.ravel(), state,
                                    cfg.learning_rate)
        raw.value = new_flat.reshape(raw.value.shape)

    pos = np.maximum(raw.value, 0.0)
    total = pos.sum()
    if total < 1e-12:
        pos = np.ones_like(pos)
        total = pos.sum()
    return pos / total


def load_training_pairs(data_dir) -> list:
    """Read (clean, measurement) pairs from a simulated dataset directory."""
    from . import fileio

    data_dir = Path(data_dir)
    with open(data_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    pairs = []
    for entry in manifest["pairs"]:
        x = fileio.read_f32t(data_dir / entry["clean"])
        y = fileio.read_f32t(data_dir / entry["measurement"])
        pairs.append(TrainingPair(x=x, y=y))
    return pairs
