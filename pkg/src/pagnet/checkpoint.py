"""Binary parameter checkpoints.

Layout: magic b"PAGN", format version (u32 LE), length-prefixed UTF-8 JSON
metadata, a manifest of (name, shape, element count), then the concatenated
float32 little-endian payloads in manifest order.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError

MAGIC = b"PAGN"
FORMAT_VERSION = 1


@dataclass
class ParameterCheckpoint:
    metadata: dict  # format_version, env_hash, mode, step
    arrays: dict[str, np.ndarray]  # name -> float32 array

    @property
    def manifest(self):
        return [
            (name, tuple(a.shape), int(a.size)) for name, a in self.arrays.items()
        ]


def _pack(checkpoint: ParameterCheckpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    meta = dict(checkpoint.metadata)
    meta["format_version"] = FORMAT_VERSION
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)

    names = sorted(checkpoint.arrays)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = checkpoint.arrays[name]
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(struct.pack("<Q", arr.size))
    for name in names:
        arr = np.ascontiguousarray(checkpoint.arrays[name], dtype="<f4")
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_checkpoint(path, arrays: dict[str, np.ndarray], metadata: dict) -> None:
    ckpt = ParameterCheckpoint(
        metadata=metadata,
        arrays={k: np.asarray(v, dtype=np.float32) for k, v in arrays.items()},
    )
    with open(path, "wb") as fh:
        fh.write(_pack(ckpt))


def load_checkpoint(path, expected_env_hash: str | None = None) -> ParameterCheckpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)

    def read(n: int, what: str) -> bytes:
        chunk = buf.read(n)
        if len(chunk) != n:
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        return chunk

    if read(4, "magic") != MAGIC:
        raise CheckpointError("bad magic bytes")
    (version,) = struct.unpack("<I", read(4, "format version"))
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"format version mismatch: file has {version}, expected {FORMAT_VERSION}"
        )
    (meta_len,) = struct.unpack("<I", read(4, "metadata length"))
    metadata = json.loads(read(meta_len, "metadata").decode())
    if expected_env_hash is not None:
        found = metadata.get("env_hash")
        if found != expected_env_hash:
            raise CheckpointError(
                f"env_hash mismatch: checkpoint has {found!r}, "
                f"environment expects {expected_env_hash!r}"
            )

    (count,) = struct.unpack("<I", read(4, "manifest count"))
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", read(2, "manifest name length"))
        name = read(name_len, "manifest name").decode()
        (ndim,) = struct.unpack("<B", read(1, f"ndim of {name}"))
        shape = tuple(
            struct.unpack("<I", read(4, f"shape of {name}"))[0] for _ in range(ndim)
        )
        (numel,) = struct.unpack("<Q", read(8, f"numel of {name}"))
        expected = int(np.prod(shape)) if shape else 1
        if numel != expected:
            raise CheckpointError(
                f"manifest entry {name}: element count {numel} != shape product"
            )
        entries.append((name, shape, numel))

    arrays = {}
    for name, shape, numel in entries:
        raw = read(4 * numel, f"payload of {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if buf.read(1):
        raise CheckpointError("trailing bytes after final payload")
    return ParameterCheckpoint(metadata=metadata, arrays=arrays)


def from_state_dicts(groups: dict[str, dict]) -> dict[str, np.ndarray]:
    """Flatten {namespace: torch state_dict} into checkpoint arrays."""
    out = {}
    for prefix, sd in groups.items():
        for key, tensor in sd.items():
            out[f"{prefix}.{key}"] = tensor.detach().cpu().numpy().astype(np.float32)
    return out


def to_state_dict(ckpt: ParameterCheckpoint, prefix: str) -> dict:
    """Extract one namespace back into a torch-loadable state dict."""
    import torch

    head = prefix + "."
    sd = {
        name[len(head):]: torch.from_numpy(arr.copy())
        for name, arr in ckpt.arrays.items()
        if name.startswith(head)
    }
    if not sd:
        raise CheckpointError(f"checkpoint has no arrays under namespace {prefix!r}")
    return sd
