"""
Binary parameter checkpoints.

Layout (little-endian):
    b"OBJTX1\\n"
    u32 length + canonical key=value config text (utf-8)
    u32 entry count
    per entry: u16 name length, name, u8 dtype code, u8 flags (bit 0: weight decay),
               u8 rank, u32 per dimension, raw scalars
    u64 checksum (8-byte BLAKE2b) of every preceding byte
"""

import hashlib
import os
import struct
from typing import Optional, Tuple

import numpy as np

from objtx.core.models.models import GenConfig, ModelConfig, TrainConfig
from objtx.core.numerics.registry import ParamRegistry
from objtx.core.transformer.params import ModelParams
from objtx.io.config_file import canonical_config_text, parse_config_text
from objtx.utils.errors import ConfigError, LoadError
from objtx.utils.logger import logger

MAGIC = b"OBJTX1\n"
DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


def _checksum(payload: bytes) -> int:
    return struct.unpack("<Q", hashlib.blake2b(payload, digest_size=8).digest())[0]


def checkpoint_bytes(
    params: ModelParams, gen_config: Optional[GenConfig] = None, train_config: Optional[TrainConfig] = None
) -> bytes:
    configs = [params.config] + [c for c in (gen_config, train_config) if c is not None]
    config_text = canonical_config_text(configs).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<I", len(config_text)) + config_text
    out += struct.pack("<I", len(params.registry))
    for name, tensor in params.registry.items():
        data = tensor.data.astype(tensor.data.dtype.newbyteorder("<"), copy=False)
        encoded = name.encode("utf-8")
        flags = 1 if params.registry.decays(name) else 0
        out += struct.pack("<H", len(encoded)) + encoded
        out += struct.pack("<BBB", DTYPE_CODES[data.dtype], flags, data.ndim)
        out += struct.pack(f"<{data.ndim}I", *data.shape)
        out += np.ascontiguousarray(data).tobytes()
    out += struct.pack("<Q", _checksum(bytes(out)))
    return bytes(out)


def save_checkpoint(
    path: str,
    params: ModelParams,
    gen_config: Optional[GenConfig] = None,
    train_config: Optional[TrainConfig] = None,
) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(params, gen_config, train_config))
    logger.info(f"Saved {len(params.registry)} tensors ({params.registry.n_scalars()} scalars) to {path}")
    return path


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise LoadError("checkpoint is truncated", self.path)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes, path: str = "<bytes>") -> Tuple[ModelParams, ModelConfig, GenConfig, TrainConfig]:
    if not data.startswith(MAGIC):
        raise LoadError("not an objtx checkpoint (bad magic)", path)
    if len(data) < len(MAGIC) + 8:
        raise LoadError("checkpoint is truncated", path)
    (stored,) = struct.unpack("<Q", data[-8:])
    if stored != _checksum(data[:-8]):
        raise LoadError("checkpoint checksum mismatch", path)
    reader = _Reader(data[:-8], path)
    reader.take(len(MAGIC))
    (config_len,) = reader.unpack("<I")
    try:
        model_config, gen_config, train_config = parse_config_text(
            reader.take(config_len).decode("utf-8"), path, optional=(GenConfig, TrainConfig)
        )
    except (ConfigError, UnicodeDecodeError) as e:
        raise LoadError(f"embedded config is unusable: {e}", path) from e
    (count,) = reader.unpack("<I")
    registry = ParamRegistry()
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, flags, rank = reader.unpack("<BBB")
        if code not in CODE_DTYPES:
            raise LoadError(f"{name}: unknown dtype code {code}", path)
        shape = reader.unpack(f"<{rank}I")
        dtype = CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        values = np.frombuffer(reader.take(n_bytes), dtype=dtype).reshape(shape)
        registry.register(name, values.astype(dtype.newbyteorder("="), copy=True), decay=bool(flags & 1))
    if reader.pos != len(reader.data):
        raise LoadError("trailing bytes after the last tensor", path)
    return ModelParams(model_config, registry), model_config, gen_config, train_config


def load_checkpoint(path: str) -> Tuple[ModelParams, ModelConfig, GenConfig, TrainConfig]:
    """Read and verify a checkpoint; every scalar comes back bit-exact."""
    if not os.path.isfile(path):
        raise LoadError("checkpoint not found", path)
    with open(path, "rb") as f:
        return parse_checkpoint(f.read(), path)
