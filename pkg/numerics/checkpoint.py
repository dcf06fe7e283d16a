"""
EGA - Binary checkpoint container

Layout (little-endian):
    magic    4 bytes  b"EGAC"
    version  1 byte   1
    count    uint32   number of records
    record   uint16 name length, UTF-8 name, uint32 rows, uint32 cols,
             uint8 kind (1 = trainable parameter, 0 = buffer),
             rows*cols float64 values in row-major order
"""
import logging
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .exceptions import CheckpointError
from .params import ParamStore

logger = logging.getLogger(__name__)

MAGIC = b"EGAC"
VERSION = 1


def write_checkpoint(path, records: Dict[str, Tuple[np.ndarray, bool]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(records))]
    for name in sorted(records):
        values, trainable = records[name]
        values = np.ascontiguousarray(values, dtype="<f8")
        if values.ndim != 2:
            raise CheckpointError(f"record '{name}' is not 2-D: {values.shape}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<IIB", values.shape[0], values.shape[1], int(trainable)))
        chunks.append(values.tobytes(order="C"))
    path.write_bytes(b"".join(chunks))
    logger.debug(f"Checkpoint written: {path} ({len(records)} records)")
    return path


def read_checkpoint(path) -> Dict[str, Tuple[np.ndarray, bool]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, count = struct.unpack_from("<BI", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        offset = 9
        records = {}
        for _ in range(count):
            (length,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + length].decode("utf-8")
            offset += length
            rows, cols, kind = struct.unpack_from("<IIB", blob, offset)
            offset += 9
            size = rows * cols * 8
            if offset + size > len(blob):
                raise CheckpointError(f"{path}: truncated record '{name}'")
            values = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset)
            records[name] = (values.reshape(rows, cols).astype(np.float64), bool(kind))
            offset += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header ({exc})") from None
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return records


def save_store(path, store: ParamStore) -> Path:
    return write_checkpoint(path, store.state())


def load_store(path, store: ParamStore) -> None:
    """Restore every parameter and buffer of `store`; names and shapes must match exactly."""
    records = read_checkpoint(path)
    expected = set(store.names()) | set(store.buffer_names())
    missing = expected - set(records)
    extra = set(records) - expected
    if missing or extra:
        raise CheckpointError(
            f"{path}: store mismatch, missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}"
        )
    for name, (values, _) in records.items():
        try:
            store.load(name, values)
        except ValueError as exc:
            raise CheckpointError(f"{path}: {exc}") from None
    logger.info(f"Checkpoint loaded: {path} ({len(records)} records)")
