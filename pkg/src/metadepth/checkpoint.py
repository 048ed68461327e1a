"""Binary parameter checkpoints.

Layout (little-endian)::

    "MDCK" | version u16 | spec digest (32 bytes) | segment count u32
    per segment: name length u16 | name utf-8 | dtype tag u8 | rank u8 | dims u32 * rank | data
    CRC-32 of everything above, u32

Dtype tags: 1 = float32, 2 = float64.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from metadepth.errors import ChecksumError, ConfigurationError, DataError
from metadepth.numerics.params import ParamVector, Segment

MAGIC = b"MDCK"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def encode(params: ParamVector, spec_digest: bytes) -> bytes:
    if len(spec_digest) != 32:
        raise ConfigurationError("spec digest must be 32 bytes")
    tag = _TAGS.get(params.dtype)
    if tag is None:
        raise ConfigurationError(f"unsupported parameter dtype {params.dtype}")
    parts = [MAGIC, struct.pack("<H", VERSION), spec_digest, struct.pack("<I", len(params.segments))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode(blob: bytes, expected_digest: bytes | None = None):
    """Parse checkpoint bytes into ``(ParamVector, spec_digest)``."""
    if len(blob) < 4 + 2 + 32 + 4 + 4:
        raise ChecksumError("checkpoint is truncated")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise ChecksumError("checkpoint CRC mismatch")
    if payload[:4] != MAGIC:
        raise DataError("not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", payload, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    digest = payload[6:38]
    if expected_digest is not None and digest != expected_digest:
        raise ConfigurationError(
            "checkpoint was written for a different network spec "
            f"(stored {digest.hex()[:12]}, expected {expected_digest.hex()[:12]})"
        )
    (count,) = struct.unpack_from("<I", payload, 38)
    pos = 42
    segments, chunks, dtype, offset = [], [], None, 0
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", payload, pos)
            name = payload[pos + 2: pos + 2 + n].decode("utf-8")
            pos += 2 + n
            tag, rank = struct.unpack_from("<BB", payload, pos)
            pos += 2
            shape = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            if tag not in _DTYPES or (dtype is not None and _DTYPES[tag] != dtype):
                raise DataError(f"segment {name!r}: bad dtype tag {tag}")
            dtype = _DTYPES[tag]
            size = int(np.prod(shape, dtype=np.int64))
            nbytes = size * dtype.itemsize
            if pos + nbytes > len(payload):
                raise DataError(f"segment {name!r} runs past end of file")
            chunks.append(np.frombuffer(payload, dtype=dtype, count=size, offset=pos))
            segments.append(Segment(name, tuple(shape), offset))
            offset += size
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise DataError(f"malformed checkpoint: {exc}") from exc
    if pos != len(payload):
        raise DataError("trailing bytes after last segment")
    values = np.concatenate(chunks).astype(dtype.newbyteorder("=")) if chunks else np.zeros(0)
    return ParamVector(segments, values), digest


def save(path, params: ParamVector, spec_digest: bytes, provenance: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode(params, spec_digest)
    path.write_bytes(blob)
    if provenance is not None:
        side = dict(provenance)
        side["content_digest"] = content_digest(blob)
        side["spec_digest"] = spec_digest.hex()
        sidecar_path(path).write_text(json.dumps(side, indent=1, sort_keys=True))
    return path


def load(path, expected_digest: bytes | None = None):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        return decode(blob, expected_digest)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def content_digest(blob: bytes) -> str:
    """Git-style blob id: sha1 over ``"blob <len>\\0" + bytes``."""
    return hashlib.sha1(b"blob %d\0" % len(blob) + blob).hexdigest()
