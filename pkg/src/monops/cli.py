"""Command-line interface wiring the pipeline end to end.

Subcommands: simulate, train, audit, restore, invert, metrics. Configuration
is plain JSON with unknown keys rejected; every run writes a resolved-config
snapshot beside its outputs. Exit codes: 0 success, 1 usage/config error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .fbf import (ArmijoConfig, BoxConstraint, NonFiniteIterateError,
                  StepSearchError, invert_operator)
from .models import (NoiseModel, SaturatedBlurModel, SaturationParams,
                     generate_motion_kernel, simulate_dataset)
from .network import ResidualConvNet
from .operators import DifferentiableMap, KernelConvMap
from .restoration import (DEFAULT_RHO_GRID, MetricsReport, RestorationSpec,
                          rho_sweep, solve_restoration)
from .spectral import ProbeConfig, monotonicity_certificate
from .tensorops import normalize_kernel
from .training import (TrainConfig, TrainingDivergedError,
                       load_training_pairs, train, train_linear_kernel)
from .tv import TvConfig


class ConfigError(ValueError):
    pass


def _fail(kind: str, message: str) -> int:
    payload = {"error": message, "kind": kind}
    print(json.dumps(payload), file=sys.stderr)
    return 1 if kind == "config" else 2


def _write_snapshot(out_dir: Path, name: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{name}_config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)


def _load_json_config(path, allowed: set) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return cfg


def _load_kernels(paths) -> list:
    # the F32T blob quantizes to float32; restore exact unit mass when the
    # sidecar records a normalized kernel
    out = []
    for p in paths:
        weights, meta = fileio.load_kernel(p)
        if meta.get("normalized"):
            weights = normalize_kernel(weights)
        out.append(weights)
    return out


class _AffineApproxMap(DifferentiableMap):
    """delta * mean-blur + (1 - delta)/2, as a solver-pluggable map."""

    def __init__(self, kernel, delta):
        self.lin = KernelConvMap(kernel, scale=delta)
        self.offset = (1.0 - delta) / 2.0
        self.shape = None

    def forward(self, x):
        return self.lin.forward(x) + self.offset

    def jvp(self, x, u):
        return self.lin.jvp(x, u)

    def vjp(self, x, v):
        return self.lin.vjp(x, v)


def _build_operator(args):
    if getattr(args, "model", None):
        net, _ = fileio.load_checkpoint(args.model)
        return net
    analytic = getattr(args, "analytic", None)
    if not analytic:
        raise ConfigError("provide --model or --analytic")
    kernels = _load_kernels(args.kernels or [])
    if not kernels:
        raise ConfigError("--analytic requires --kernels")
    sat = SaturationParams(args.delta)
    if analytic == "sat_blur":
        return SaturatedBlurModel(kernels, sat)
    mean_k = sum(kernels) / len(kernels)
    if analytic == "affine":
        return _AffineApproxMap(mean_k, args.delta)
    if analytic == "linear":
        return KernelConvMap(mean_k, scale=args.delta)
    raise ConfigError(f"unknown analytic operator {analytic!r}")


# --- subcommands ---

def cmd_simulate(args) -> int:
    out_dir = Path(args.out_dir)
    if args.kernels:
        kernels = _load_kernels(args.kernels)
    else:
        kernels = [generate_motion_kernel(args.kernel_size, args.kernel_steps,
                                          seed=args.seed + i)
                   for i in range(args.n_kernels)]
    model = SaturatedBlurModel(kernels, SaturationParams(args.delta))
    noise = NoiseModel(sigma=args.sigma, seed=args.seed)
    count = simulate_dataset(args.clean_dir, model, noise, out_dir)
    _write_snapshot(out_dir, "simulate", {
        "clean_dir": str(args.clean_dir), "kernels": args.kernels,
        "n_kernels": args.n_kernels, "kernel_size": args.kernel_size,
        "kernel_steps": args.kernel_steps, "delta": args.delta,
        "sigma": args.sigma, "seed": args.seed, "out_dir": str(out_dir),
        "pairs_written": count,
    })
    print(f"wrote {count} pairs to {out_dir}")
    return 0


_TRAIN_KEYS = {"epochs", "batch_size", "xi0", "delta_xi", "epsilon",
               "learning_rate", "lr_decay", "seed", "variant",
               "probe_n_iter", "penal_crop", "kernel_size", "channels",
               "net_kernel_size", "activation", "residual"}


def cmd_train(args) -> int:
    cfg_dict = _load_json_config(args.config, _TRAIN_KEYS) if args.config else {}
    kernel_size = cfg_dict.pop("kernel_size", 5)
    arch = {
        "channels": tuple(cfg_dict.pop("channels", (1, 8, 8, 1))),
        "kernel_size": cfg_dict.pop("net_kernel_size", 3),
        "activation": cfg_dict.pop("activation", "elu"),
        "residual": cfg_dict.pop("residual", True),
    }
    cfg = TrainConfig(**cfg_dict)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = load_training_pairs(args.data_dir)

    if cfg.variant == "linear":
        kernel = train_linear_kernel(pairs, kernel_size, cfg)
        fileio.save_kernel(out_dir / "linear_kernel.f32t", kernel, normalized=True)
        print(f"wrote {out_dir / 'linear_kernel.f32t'}")
    else:
        lsq_kernel = None
        if cfg.variant == "lsq_mon":
            if not args.lin_kernel:
                raise ConfigError("variant 'lsq_mon' needs --lin-kernel")
            lsq_kernel = fileio.load_kernel(args.lin_kernel)[0]
        net = ResidualConvNet(seed=cfg.seed, **arch)
        net, history = train(net, pairs, cfg, lsq_kernel=lsq_kernel)
        fileio.save_checkpoint(out_dir / "model.json", net, metadata={
            "variant": cfg.variant, "epochs": cfg.epochs,
            "final_data_loss": history.data_loss[-1],
        })
        history.to_csv(out_dir / "history.csv")
        print(f"wrote {out_dir / 'model.json'} and history.csv "
              f"(final data loss {history.data_loss[-1]:.6g})")
    _write_snapshot(out_dir, "train", {
        "config": str(args.config), "data_dir": str(args.data_dir),
        "out_dir": str(out_dir), "lin_kernel": args.lin_kernel,
        "resolved_train_config": vars(cfg) | {"arch": arch} | {"kernel_size": kernel_size},
    })
    return 0


def cmd_audit(args) -> int:
    op = _build_operator(args)
    data_dir = Path(args.data_dir)
    images = sorted(p for p in data_dir.iterdir()
                    if p.suffix.lower() in (".pgm", ".f32t"))
    if args.pattern:
        images = [p for p in images if args.pattern in p.name]
    if not images:
        raise ConfigError(f"no probe images found in {data_dir}")
    probe_set = [fileio.read_image(p) for p in images]
    report = monotonicity_certificate(
        op, probe_set, beta=args.beta,
        config=ProbeConfig(n_iter=args.n_iter, seed=args.seed),
        tolerance=args.tolerance,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    _write_snapshot(out.parent, "audit", {
        "model": getattr(args, "model", None), "analytic": args.analytic,
        "kernels": args.kernels, "delta": args.delta,
        "data_dir": str(data_dir), "beta": args.beta, "n_iter": args.n_iter,
        "tolerance": args.tolerance, "seed": args.seed, "out": str(out),
    })
    print(f"min lambda_min = {report.min_lambda:.6g} "
          f"(beta={args.beta}, pass={report.passed}); wrote {out}")
    return 0


def cmd_restore(args) -> int:
    op = _build_operator(args)
    y = fileio.read_image(args.y)
    lin_kernel = fileio.load_kernel(args.lin_kernel)[0] if args.lin_kernel else None
    spec = RestorationSpec(
        formulation=args.formulation,
        operator=op,
        measurement=y,
        rho=args.rho if args.rho is not None else 0.0,
        tv=TvConfig(epsilon_tv=args.tv_epsilon),
        box=BoxConstraint(args.box_lower, args.box_upper),
        armijo=ArmijoConfig(sigma=args.sigma_step, beta=args.beta_step,
                            theta=args.theta_step),
        max_iter=args.max_iter,
        residual_tol=args.residual_tol,
        lin_kernel=lin_kernel,
    )
    out_prefix = Path(args.out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    ref = fileio.read_image(args.ref) if args.ref else None

    result = {}
    if args.rho_sweep:
        if ref is None:
            raise ConfigError("--rho-sweep needs --ref for scoring")
        grid = [float(v) for v in args.rho_sweep.split(",")] if args.rho_sweep != "default" \
            else list(DEFAULT_RHO_GRID)
        sweep = rho_sweep(spec, grid, ref)
        result["sweep"] = [
            {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
             for k, v in vars(r).items()}
            for r in sweep.rows
        ]
        if sweep.best is None:
            raise NonFiniteIterateError("every rho in the sweep failed")
        spec.rho = sweep.best.rho
        result["best_rho"] = sweep.best.rho

    x_hat, trace = solve_restoration(spec)
    fileio.write_f32t(Path(str(out_prefix) + "_xhat.f32t"), x_hat)
    fileio.write_pgm(Path(str(out_prefix) + "_xhat.pgm"), x_hat)
    trace.to_csv(Path(str(out_prefix) + "_trace.csv"))
    result["rho"] = spec.rho
    result["iterations"] = len(trace)
    result["final_residual"] = trace.residual[-1] if len(trace) else None
    if ref is not None:
        result["metrics"] = MetricsReport.compute(x_hat, ref).to_dict()
        result["metrics_observation"] = MetricsReport.compute(
            np.clip(y, spec.box.lower, spec.box.upper), ref).to_dict()
    with open(str(out_prefix) + "_metrics.json", "w") as fh:
        json.dump(result, fh, indent=2)
    _write_snapshot(out_prefix.parent, "restore", {
        "model": getattr(args, "model", None), "analytic": args.analytic,
        "kernels": args.kernels, "delta": args.delta, "y": str(args.y),
        "ref": args.ref, "formulation": args.formulation, "rho": args.rho,
        "rho_sweep": args.rho_sweep, "lin_kernel": args.lin_kernel,
        "max_iter": args.max_iter, "residual_tol": args.residual_tol,
        "out": str(out_prefix),
    })
    print(json.dumps(result.get("metrics", {"final_residual": result["final_residual"]})))
    return 0


def cmd_invert(args) -> int:
    op = _build_operator(args)
    x_bar = fileio.read_image(args.x_bar)
    x_hat, trace = invert_operator(
        op, x_bar, BoxConstraint(args.box_lower, args.box_upper),
        max_iter=args.max_iter, residual_tol=args.residual_tol,
    )
    out_prefix = Path(args.out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_f32t(Path(str(out_prefix) + "_xhat.f32t"), x_hat)
    fileio.write_pgm(Path(str(out_prefix) + "_xhat.pgm"), x_hat)
    trace.to_csv(Path(str(out_prefix) + "_trace.csv"))
    err = float(np.mean(np.abs(x_hat - x_bar)))
    _write_snapshot(out_prefix.parent, "invert", {
        "model": getattr(args, "model", None), "analytic": args.analytic,
        "kernels": args.kernels, "delta": args.delta,
        "x_bar": str(args.x_bar), "out": str(out_prefix),
        "max_iter": args.max_iter, "residual_tol": args.residual_tol,
    })
    print(json.dumps({"mae_vs_input": err, "iterations": len(trace)}))
    return 0


def cmd_metrics(args) -> int:
    x = fileio.read_image(args.x)
    ref = fileio.read_image(args.ref)
    report = MetricsReport.compute(x, ref).to_dict()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
    print(json.dumps(report))
    return 0


# --- parser ---

def _add_operator_args(p, model=True):
    if model:
        p.add_argument("--model", help="model checkpoint JSON")
    p.add_argument("--analytic", choices=["sat_blur", "affine", "linear"])
    p.add_argument("--kernels", nargs="*", help="kernel F32T files")
    p.add_argument("--delta", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="monops",
        description="Monotone operator learning and inclusion solving",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate measurement pairs")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--kernels", nargs="*")
    p.add_argument("--n-kernels", type=int, default=1)
    p.add_argument("--kernel-size", type=int, default=5)
    p.add_argument("--kernel-steps", type=int, default=8)
    p.add_argument("--delta", type=float, default=0.6)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train an operator network or linear kernel")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--lin-kernel", help="learned linear kernel (lsq_mon variant)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("audit", help="monotonicity certificate over a directory")
    _add_operator_args(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--pattern", default="", help="filter probe files by substring")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--tolerance", type=float, default=0.0)
    p.add_argument("--n-iter", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("restore", help="solve a restoration problem")
    _add_operator_args(p)
    p.add_argument("--formulation", choices=["direct", "least_squares"],
                   default="direct")
    p.add_argument("--y", required=True, help="measurement image")
    p.add_argument("--ref", help="ground truth for metrics")
    p.add_argument("--rho", type=float)
    p.add_argument("--rho-sweep", help="'default' or comma-separated values")
    p.add_argument("--lin-kernel")
    p.add_argument("--tv-epsilon", type=float, default=1e-3)
    p.add_argument("--box-lower", type=float, default=0.0)
    p.add_argument("--box-upper", type=float, default=1.0)
    p.add_argument("--sigma-step", type=float, default=1.0)
    p.add_argument("--beta-step", type=float, default=0.5)
    p.add_argument("--theta-step", type=float, default=0.9)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--residual-tol", type=float, default=1e-8)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("invert", help="invert a monotone operator at a point")
    _add_operator_args(p)
    p.add_argument("--x-bar", required=True)
    p.add_argument("--box-lower", type=float, default=0.0)
    p.add_argument("--box-upper", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=3000)
    p.add_argument("--residual-tol", type=float, default=1e-10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("metrics", help="PSNR/SSIM/MAE between two images")
    p.add_argument("--x", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        return _fail("config", str(exc))
    except (StepSearchError, NonFiniteIterateError, TrainingDivergedError,
            FloatingPointError) as exc:
        return _fail("numerical", str(exc))


if __name__ == "__main__":
    sys.exit(main())
