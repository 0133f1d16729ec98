"""Artifact persistence: latent containers, canonical JSON, PNG frames.

All writers go through a temp-then-rename step so an interrupted command
never leaves a partial artifact at the final path, and identical inputs
reproduce bitwise-identical files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np
import torch
from PIL import Image

__all__ = [
    "save_latent",
    "load_latent",
    "write_json_atomic",
    "canonical_json",
    "save_frames_png",
    "save_attention",
    "load_attention",
]

_MAGIC = b"TSL1"


def _write_atomic(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_latent(path, z) -> None:
    """Binary latent container: magic, uint32 ndim, uint32 dims, float32 LE data."""
    arr = np.ascontiguousarray(
        z.detach().numpy() if isinstance(z, torch.Tensor) else z, dtype="<f4"
    )
    header = _MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    _write_atomic(path, header + arr.tobytes())


def load_latent(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a latent container (bad magic)")
    ndim = struct.unpack_from("<I", blob, 4)[0]
    shape = struct.unpack_from(f"<{ndim}I", blob, 8)
    data = np.frombuffer(blob, dtype="<f4", offset=8 + 4 * ndim)
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(f"{path}: payload has {data.size} floats, header says {expected}")
    return data.reshape(shape).copy()


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json_atomic(path, obj) -> None:
    _write_atomic(path, canonical_json(obj).encode())


def save_frames_png(directory, pixels: torch.Tensor) -> list[str]:
    """Write (F, 3, H, W) pixels as frame_###.png with a fixed affine map
    from latent-decoded values to [0, 255]."""
    os.makedirs(directory, exist_ok=True)
    arr = pixels.detach().numpy() if isinstance(pixels, torch.Tensor) else np.asarray(pixels)
    arr = np.clip(0.5 * arr + 0.5, 0.0, 1.0)
    paths = []
    for f in range(arr.shape[0]):
        img = (arr[f].transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
        path = os.path.join(directory, f"frame_{f:03d}.png")
        buf = Image.fromarray(img)
        tmp = path + ".tmp"
        buf.save(tmp, format="PNG")
        os.replace(tmp, path)
        paths.append(path)
    return paths


def save_attention(path_prefix, captured: dict) -> tuple[str, str]:
    """Persist captured attention as <prefix>.npy plus a JSON sidecar.

    ``captured`` maps step index to an AttentionStack; maps are stored
    layer-aggregated as float32 with shape (steps, F, Np, H, W).
    """
    steps = sorted(captured)
    maps = np.stack([captured[s].aggregated().numpy().astype("<f4") for s in steps])
    npy_path = f"{path_prefix}.npy"
    meta_path = f"{path_prefix}_meta.json"
    import io as _io

    buf = _io.BytesIO()
    np.save(buf, maps)
    _write_atomic(npy_path, buf.getvalue())
    write_json_atomic(
        meta_path,
        {
            "step_indices": steps,
            "shape": list(maps.shape),
            "layout": "(step, frame, token, row, col)",
        },
    )
    return npy_path, meta_path


def load_attention(path_prefix) -> tuple[np.ndarray, dict]:
    maps = np.load(f"{path_prefix}.npy")
    with open(f"{path_prefix}_meta.json") as fh:
        meta = json.load(fh)
    return maps, meta
