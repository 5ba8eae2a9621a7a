"""Versioned binary checkpoint container.

Layout: 8-byte magic, u32 format version, u64 manifest length, a UTF-8 JSON
manifest, then the payloads. The manifest lists ``(name, shape, dtype,
offset)`` for every tensor plus free-form metadata such as the config echo.
All payloads are little-endian float32; integers stored this way must stay
below 2**24 to survive the round trip.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GRTRKPT\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries, payloads, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float64).astype(_DTYPE))
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name!r} has non-finite entries")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32le", "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"entries": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(manifest)))
        fh.write(manifest)
        for p in payloads:
            fh.write(p)


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Return (float64 arrays by name, metadata)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, n_manifest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = _HEADER.size + n_manifest
    try:
        manifest = json.loads(raw[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    arrays = {}
    for e in manifest["entries"]:
        if e["dtype"] != "float32le":
            raise CheckpointError(f"{path}: unsupported dtype {e['dtype']}")
        count = int(np.prod(e["shape"], dtype=np.int64))
        lo = start + e["offset"]
        if lo + count * 4 > len(raw):
            raise CheckpointError(f"{path}: payload for {e['name']!r} is truncated")
        arr = np.frombuffer(raw, dtype=_DTYPE, count=count, offset=lo)
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return arrays, manifest.get("meta", {})


def save_training(path: str | Path, model, opt, cfg, step: int, extra: dict | None = None) -> None:
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    if opt is not None:
        arrays.update(opt.state_arrays())
    meta = {"config": cfg.to_dict(), "step": int(step), "model_seed": model.seed}
    meta.update(extra or {})
    save(path, arrays, meta)


def split(arrays: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in arrays.items() if k.startswith(prefix + ".")}
