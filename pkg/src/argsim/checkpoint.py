"""Binary checkpoint container: JSON header plus raw little-endian float64
payload, bit-exact across save/load round trips.

Layout: 4-byte magic, uint32-LE header length, UTF-8 JSON header, payload.
The header carries the format version, encoder dimensions, the vocab file
hash, free-form run metadata, and a tensor manifest (name, shape, byte
offset, byte length) with offsets relative to the payload start.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, EncoderParams
from .errors import IntegrityError
from .numcore import Tensor

MAGIC = b"ASCK"
FORMAT_VERSION = 1


def save_checkpoint(
    path,
    params: EncoderParams,
    config: EncoderConfig,
    vocab_sha256: str,
    meta: dict | None = None,
) -> None:
    """Write atomically (temp file + rename). Payload order follows the manifest."""
    manifest = []
    chunks = []
    offset = 0
    for name, tensor in params.items():
        raw = np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
        manifest.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "encoder": config.to_dict(),
        "vocab_sha256": vocab_sha256,
        "dtype": str(np.dtype(params[manifest[0]["name"]].dtype)) if manifest else "float64",
        "manifest": manifest,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + b"".join(chunks)

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise IntegrityError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(
            f"{path}: unsupported format version {header.get('format_version')}"
        )
    return header


def load_checkpoint(path) -> tuple[EncoderParams, EncoderConfig, str, dict]:
    """Returns (params, encoder config, vocab hash, meta)."""
    header = read_header(path)
    config = EncoderConfig.from_dict(header["encoder"])
    dtype = np.dtype(header.get("dtype", "float64"))
    with open(path, "rb") as f:
        f.seek(4)
        (header_len,) = struct.unpack("<I", f.read(4))
        f.seek(8 + header_len)
        payload = f.read()
    tensors: dict[str, Tensor] = {}
    for entry in header["manifest"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        expected = int(np.prod(entry["shape"])) * 8
        if len(raw) != expected:
            raise IntegrityError(f"{path}: truncated payload for tensor {entry['name']!r}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(dtype)
        tensors[entry["name"]] = Tensor(arr, requires_grad=True)
    params = EncoderParams(tensors)
    return params, config, header["vocab_sha256"], header.get("meta", {})
