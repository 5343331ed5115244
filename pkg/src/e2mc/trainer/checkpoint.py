"""Binary checkpoint format.

Layout (all integers and floats little-endian)::

    b"E2MC"            magic
    u16                format version (1)
    u16                section count S
    S x entry          u8 name length, name (ascii), u64 payload offset, u64 payload length
    payloads           concatenated section bodies
    u32                CRC-32 of every preceding byte

Array sections (encoder, projector, predictor, prototypes, optimizer) hold a
u32 array count followed by ``u32 rows, u32 cols, rows*cols f64`` per array.
The ``rng`` section is ``u64 seed, u64 epoch, u64 step``.  The ``meta``
section is UTF-8 JSON with sorted keys.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .model import SECTIONS, ModelState

MAGIC = b"E2MC"
VERSION = 1


def _pack_arrays(arrays: list[np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        parts.append(struct.pack("<II", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def _unpack_arrays(buf: bytes) -> list[np.ndarray]:
    (count,), pos = struct.unpack_from("<I", buf, 0), 4
    out = []
    for _ in range(count):
        rows, cols = struct.unpack_from("<II", buf, pos)
        pos += 8
        nbytes = rows * cols * 8
        if pos + nbytes > len(buf):
            raise FormatError("array payload overruns its section")
        out.append(np.frombuffer(buf, "<f8", rows * cols, pos).reshape(rows, cols).copy())
        pos += nbytes
    if pos != len(buf):
        raise FormatError("trailing bytes in array section")
    return out


def to_bytes(model: ModelState) -> bytes:
    sections = [(sec, _pack_arrays(getattr(model, sec))) for sec in SECTIONS]
    sections.append(("optimizer", _pack_arrays(model.velocity)))
    sections.append(("rng", struct.pack("<QQQ", model.seed, model.epoch, model.step)))
    sections.append(("meta", json.dumps(model.meta, sort_keys=True).encode()))

    table_size = sum(1 + len(name) + 16 for name, _ in sections)
    offset = 4 + 2 + 2 + table_size
    header = [MAGIC, struct.pack("<HH", VERSION, len(sections))]
    for name, body in sections:
        header.append(struct.pack("<B", len(name)) + name.encode("ascii"))
        header.append(struct.pack("<QQ", offset, len(body)))
        offset += len(body)
    blob = b"".join(header) + b"".join(body for _, body in sections)
    return blob + struct.pack("<I", zlib.crc32(blob))


def from_bytes(blob: bytes) -> ModelState:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError("not an E2MC checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint checksum mismatch (truncated or corrupted)")
    version, count = struct.unpack_from("<HH", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 8
    table = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<B", body, pos)
        name = body[pos + 1:pos + 1 + nlen].decode("ascii")
        pos += 1 + nlen
        off, length = struct.unpack_from("<QQ", body, pos)
        pos += 16
        if off + length > len(body):
            raise FormatError(f"section {name!r} out of bounds")
        table[name] = body[off:off + length]
    missing = set(SECTIONS) | {"optimizer", "rng", "meta"}
    missing -= table.keys()
    if missing:
        raise FormatError(f"missing sections: {sorted(missing)}")
    arrays = {sec: _unpack_arrays(table[sec]) for sec in SECTIONS}
    seed, epoch, step = struct.unpack("<QQQ", table["rng"])
    return ModelState(
        arrays["encoder"], arrays["projector"], arrays["predictor"],
        arrays["prototypes"], _unpack_arrays(table["optimizer"]),
        epoch=epoch, step=step, seed=seed, meta=json.loads(table["meta"]),
    )


def save_checkpoint(model: ModelState, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_checkpoint(path) -> ModelState:
    return from_bytes(Path(path).read_bytes())
