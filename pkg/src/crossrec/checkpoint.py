"""Binary parameter checkpoints.

Layout: magic, format version, a JSON metadata block (model config and
manifest), then named tensors as (name, shape, raw little-endian float64).
Loading rebuilds the parameter structure from the stored config and
requires the stored tensor names and shapes to match it exactly.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import DataError
from .events import DatasetManifest
from .model import ModelConfig, ModelParameters

MAGIC = b"CRCKPT\x00\x01"
VERSION = 1


def _meta(params: ModelParameters) -> bytes:
    payload = {
        "config": asdict(params.config),
        "manifest": json.loads(params.manifest.to_json()),
    }
    return json.dumps(payload, sort_keys=True).encode("utf-8")


def save_checkpoint(params: ModelParameters, path: str | Path) -> None:
    named = params.named_parameters()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    meta = _meta(params)
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<Q", len(named)))
    for name, tensor in named:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", tensor.ndim))
        for dim in tensor.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read(fh, n: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise DataError(f"truncated checkpoint while reading {what}")
    return raw


def load_checkpoint(path: str | Path, expect_config: ModelConfig | None = None) -> ModelParameters:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read(fh, 4, "version"))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version} (expected {VERSION})")
        (meta_len,) = struct.unpack("<Q", _read(fh, 8, "metadata length"))
        try:
            meta = json.loads(_read(fh, meta_len, "metadata"))
            config = ModelConfig(**meta["config"])
            manifest = DatasetManifest.from_json(json.dumps(meta["manifest"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed checkpoint metadata: {exc}") from exc
        if expect_config is not None and config != expect_config:
            raise DataError("checkpoint model config does not match the requested config")

        params = ModelParameters.init(config, manifest, seed=0)
        expected = dict(params.named_parameters())
        (count,) = struct.unpack("<Q", _read(fh, 8, "tensor count"))
        if count != len(expected):
            raise DataError(f"checkpoint holds {count} tensors, model needs {len(expected)}")
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(fh, 2, "name length"))
            name = _read(fh, name_len, "name").decode("utf-8")
            if name not in expected:
                raise DataError(f"unexpected tensor {name!r} in checkpoint")
            if name in seen:
                raise DataError(f"duplicate tensor {name!r} in checkpoint")
            seen.add(name)
            (ndim,) = struct.unpack("<B", _read(fh, 1, "rank"))
            shape = tuple(
                struct.unpack("<Q", _read(fh, 8, f"{name} dim"))[0] for _ in range(ndim)
            )
            tensor = expected[name]
            if shape != tensor.shape:
                raise DataError(f"tensor {name!r}: shape mismatch (file {shape}, model {tensor.shape})")
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
            raw = _read(fh, n_bytes, f"{name} data")
            tensor.data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise DataError("trailing bytes after final tensor")
    return params


def checkpoint_id(path: str | Path) -> str:
    """Short content hash identifying a checkpoint file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]
