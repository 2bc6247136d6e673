"""File formats: binary PGM previews, raw F32T tensors, kernels, checkpoints.

F32T is the numeric interchange format: ASCII magic ``F32T\\n``, one ASCII
line ``ndim d0 d1 ...``, then little-endian 32-bit floats in row-major order.
PGM (P5, maxval 255) is for previews only and quantizes through
``round(255 * clamp(v, 0, 1))``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class FileFormatError(ValueError):
    pass


# --- PGM ---

def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise FileFormatError(f"PGM export needs a 2-D image, got {img.shape}")
    q = np.rint(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes(order="C"))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise FileFormatError(f"{path}: not a binary PGM file")
    # header: magic, width, height, maxval, single whitespace, raster
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos: pos + 1].isspace():
            pos += 1
        if data[pos: pos + 1] == b"#":
            while pos < len(data) and data[pos: pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos: pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # the single whitespace byte before the raster
    w, h, maxval = fields
    if maxval != 255:
        raise FileFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    raster = np.frombuffer(data[pos: pos + w * h], dtype=np.uint8)
    if raster.size != w * h:
        raise FileFormatError(f"{path}: truncated raster")
    return raster.reshape(h, w).astype(np.float64) / 255.0


# --- F32T ---

_F32T_MAGIC = b"F32T\n"


def write_f32t(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    header = f"{arr.ndim} " + " ".join(str(d) for d in arr.shape) + "\n"
    with open(path, "wb") as fh:
        fh.write(_F32T_MAGIC)
        fh.write(header.encode("ascii"))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_f32t(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(len(_F32T_MAGIC))
        if magic != _F32T_MAGIC:
            raise FileFormatError(f"{path}: bad F32T magic")
        header = b""
        while not header.endswith(b"\n"):
            c = fh.read(1)
            if not c:
                raise FileFormatError(f"{path}: truncated F32T header")
            header += c
        parts = header.split()
        ndim = int(parts[0])
        shape = tuple(int(d) for d in parts[1:])
        if len(shape) != ndim:
            raise FileFormatError(f"{path}: F32T header dims mismatch")
        n = int(np.prod(shape)) if shape else 1
        payload = fh.read(4 * n)
        if len(payload) != 4 * n:
            raise FileFormatError(f"{path}: truncated F32T payload")
        return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)


def read_image(path) -> np.ndarray:
    """Read a 2-D image from PGM or F32T based on the file suffix."""
    from .tensorops import ensure_finite

    p = Path(path)
    if p.suffix.lower() == ".pgm":
        return read_pgm(p)
    if p.suffix.lower() == ".f32t":
        arr = read_f32t(p)
        if arr.ndim != 2:
            raise FileFormatError(f"{p}: expected a 2-D image, got shape {arr.shape}")
        return ensure_finite(arr, str(p))
    raise FileFormatError(f"{p}: unsupported image suffix")


# --- kernels ---

def save_kernel(path, weights: np.ndarray, normalized: bool) -> None:
    path = Path(path)
    write_f32t(path, np.asarray(weights, dtype=np.float64))
    meta = {"shape": list(np.asarray(weights).shape), "normalized": bool(normalized)}
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(meta, fh)


def load_kernel(path):
    path = Path(path)
    weights = read_f32t(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {"shape": list(weights.shape), "normalized": False}
    if sidecar.exists():
        with open(sidecar) as fh:
            meta = json.load(fh)
    return weights, meta


# --- model checkpoints ---

def save_checkpoint(path, net, metadata: dict | None = None) -> None:
    """Write a checkpoint: JSON header beside an F32T parameter blob."""
    from .network import ResidualConvNet  # local import to avoid a cycle

    if not isinstance(net, ResidualConvNet):
        raise TypeError("checkpoints are defined for ResidualConvNet models")
    path = Path(path)
    blob = path.with_suffix(".f32t")
    write_f32t(blob, net.get_params())
    header = {
        "format": "monops-checkpoint",
        "architecture": net.architecture(),
        "params_file": blob.name,
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(header, fh, indent=2)


def load_checkpoint(path):
    """Load a checkpoint; returns (net, metadata)."""
    from .network import ResidualConvNet

    path = Path(path)
    with open(path) as fh:
        header = json.load(fh)
    if header.get("format") != "monops-checkpoint":
        raise FileFormatError(f"{path}: not a monops checkpoint")
    arch = header["architecture"]
    net = ResidualConvNet(
        channels=tuple(arch["channels"]),
        kernel_size=arch["kernel_size"],
        activation=arch["activation"],
        residual=arch["residual"],
        leaky_slope=arch.get("leaky_slope", 0.1),
        seed=arch.get("seed", 0),
    )
    params = read_f32t(path.parent / header["params_file"])
    net.set_params(params)
    return net, header.get("metadata", {})
