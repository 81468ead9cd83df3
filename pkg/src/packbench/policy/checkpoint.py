"""Versioned binary checkpoints of :class:`PolicyParams`.

Layout, all integers little-endian::

    magic        8 bytes  b"PKBCKPT\\0"
    version      u32
    config       u32 length + UTF-8 JSON of the PolicyConfig
    count        u32
    per tensor:  u16 name length + UTF-8 name, u8 ndim, ndim x u32 dims,
                 prod(dims) x <f8 values
    crc32        u32 over every preceding byte

Nothing in a checkpoint refers to a bin size.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from packbench.config import PolicyConfig
from packbench.errors import CheckpointError
from packbench.helpers import atomic_write_bytes
from packbench.policy.network import PolicyParams
from packbench.policy.tensor import Tensor


logger = logging.getLogger(__name__)

MAGIC = b"PKBCKPT\x00"
VERSION = 1


def dumps_params(params: PolicyParams) -> bytes:
    """Encode parameters into checkpoint bytes.

    Args:
        params: Parameters to encode.

    Returns:
        Checkpoint bytes.
    """
    config = json.dumps(params.config.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(config)), config]
    parts.append(struct.pack("<I", len(params.tensors)))
    for name, tensor in params.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads_params(data: bytes) -> PolicyParams:
    """Decode checkpoint bytes.

    Args:
        data: Checkpoint bytes.

    Returns:
        Parameters with gradients enabled.

    Raises:
        CheckpointError: If the bytes are truncated, corrupt or from another version.
    """
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CheckpointError("not a packbench checkpoint")
    body, (stored_crc,) = data[:-4], struct.unpack("<I", data[-4:])
    reader = _Reader(body)
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    if zlib.crc32(body) != stored_crc:
        raise CheckpointError("checkpoint checksum mismatch; file is truncated or corrupt")

    (config_len,) = reader.unpack("<I")
    try:
        config = PolicyConfig.model_validate(json.loads(reader.take(config_len).decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as e:
        raise CheckpointError(f"checkpoint config record is invalid: {e}") from e

    params = PolicyParams(config)
    (count,) = reader.unpack("<I")
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        params.tensors[name] = Tensor(values, requires_grad=True)
    if reader.offset != len(body):
        raise CheckpointError("checkpoint has trailing bytes")

    expected = PolicyParams.init(config, seed=0)
    if expected.tensors.keys() != params.tensors.keys():
        raise CheckpointError("checkpoint tensors do not match its config")
    for name, tensor in expected.tensors.items():
        if tensor.shape != params.tensors[name].shape:
            raise CheckpointError(f"tensor {name} has shape {params.tensors[name].shape}, expected {tensor.shape}")
    return params


def save_params(params: PolicyParams, path: Path) -> None:
    """Atomically write a checkpoint.

    Args:
        params: Parameters to save.
        path: Destination file.
    """
    atomic_write_bytes(path, dumps_params(params))
    logger.debug("Saved checkpoint %s (%d parameters)", path, params.parameter_count())


def load_params(path: Path) -> PolicyParams:
    """Read a checkpoint.

    Args:
        path: Checkpoint file.

    Returns:
        Parameters.

    Raises:
        CheckpointError: If the file is missing, truncated, corrupt or from another version.
    """
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    try:
        return loads_params(data)
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}") from e
