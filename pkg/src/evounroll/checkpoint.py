"""Parameter checkpoint file format.

Single binary file: 8-byte magic/version tag, a length-prefixed JSON
manifest (parameter paths, shapes, trainability, config hash), then each
parameter's payload as little-endian f64 in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .tensor import ParamStore, Tensor

MAGIC = b"EVOCKPT1"


def save_checkpoint(store: ParamStore, path: str | Path, config_hash: str = "") -> None:
    manifest = {
        "config_hash": config_hash,
        "params": [
            {"path": p, "shape": list(e.tensor.data.shape), "trainable": e.trainable}
            for p, e in store.items()
        ],
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p, e in store.items():
            fh.write(np.ascontiguousarray(e.tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParamStore, str]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file (bad magic {raw[:8]!r})")
    (header_len,) = struct.unpack("<I", raw[8:12])
    try:
        manifest = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt checkpoint manifest: {exc}")
    store = ParamStore()
    offset = 12 + header_len
    for spec in manifest["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise ParseError(f"{path}: truncated payload for {spec['path']!r}")
        data = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        store.add(spec["path"], Tensor(data), trainable=bool(spec["trainable"]))
        offset = end
    return store, manifest.get("config_hash", "")
