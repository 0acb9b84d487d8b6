"""Checkpoint I/O

Layout, little-endian throughout, no alignment padding:

    b"TSTN" | version u32 | config length u32 | config JSON (UTF-8)
    then per tensor: name length u32 | name (UTF-8) | rank u32 | dims u32 * rank | f32 data

Parameters are written in registration order.
"""

import json
import logging
import struct
from typing import Optional

import numpy as np

from tstnn.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from tstnn.exceptions import CheckpointError, ConfigError
from tstnn.model import TSTNN, ModelConfig

logger = logging.getLogger(__name__)

_U32 = struct.Struct('<I')


def _pack_u32(value: int) -> bytes:
    return _U32.pack(value)


class _Reader:
    """Cursor over checkpoint bytes that fails on truncation."""

    def __init__(self, payload: bytes, path: str) -> None:
        self.payload = payload
        self.path = path
        self.offset = 0

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.payload)

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointError(f'{self.path} is truncated while reading {what}', field=what)
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(_U32.size, what))[0]


def save_checkpoint(model: TSTNN, path: str) -> None:
    """Writes the model config and every parameter as float32."""

    config = json.dumps(model.config.to_dict(), sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(_pack_u32(CHECKPOINT_VERSION))
        f.write(_pack_u32(len(config)))
        f.write(config)
        for name, param in model.params.items():
            encoded = name.encode('utf-8')
            f.write(_pack_u32(len(encoded)))
            f.write(encoded)
            f.write(_pack_u32(param.ndim))
            for dim in param.shape:
                f.write(_pack_u32(dim))
            f.write(np.ascontiguousarray(param.data, dtype='<f4').tobytes())
    logger.info('saved %d tensors to %s', len(model.params), path)


def load_checkpoint(path: str, expected_config: Optional[ModelConfig] = None, dtype=None) -> TSTNN:
    """Rebuilds a model from a checkpoint file.

        Args:
            path (str): Checkpoint path.
            expected_config (ModelConfig, optional): When given, the stored config must equal it.
            dtype (np.dtype, optional): Compute dtype of the rebuilt model.

        Returns:
            TSTNN: Model whose parameters equal the stored float32 values.

        Raises:
            CheckpointError: on bad magic or version, truncation, unknown, missing or
                mis-shaped tensors, or a config mismatch.
    """

    try:
        with open(path, 'rb') as f:
            reader = _Reader(f.read(), path)
    except OSError as e:
        raise CheckpointError(f'cannot read {path}: {e.strerror}', field='path')

    if reader.take(len(CHECKPOINT_MAGIC), 'magic') != CHECKPOINT_MAGIC:
        raise CheckpointError(f'{path} is not a TSTNN checkpoint', field='magic')
    version = reader.u32('version')
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f'unsupported checkpoint version {version}', field='version')

    raw_config = reader.take(reader.u32('config'), 'config')
    try:
        config = ModelConfig.from_dict(json.loads(raw_config.decode('utf-8')))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as e:
        raise CheckpointError(f'unreadable config: {e}', field='config')
    except ConfigError as e:
        raise CheckpointError(f'invalid stored config: {e}', field='config')
    if expected_config is not None and config != expected_config:
        raise CheckpointError('stored config does not match the expected config', field='config')

    model = TSTNN(config, dtype=dtype)
    seen = set()
    while not reader.exhausted:
        name = reader.take(reader.u32('name'), 'name').decode('utf-8')
        if name not in model.params:
            raise CheckpointError(f'unknown tensor {name}', field=name)
        if name in seen:
            raise CheckpointError(f'tensor {name} stored twice', field=name)
        shape = tuple(reader.u32('dims') for _ in range(reader.u32('rank')))
        param = model.params[name]
        if shape != param.shape:
            raise CheckpointError(f'tensor {name} has shape {shape}, model expects {param.shape}', field=name)
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(4 * count, name), dtype='<f4').reshape(shape)
        param.data[...] = values
        seen.add(name)

    missing = [name for name in model.params if name not in seen]
    if missing:
        raise CheckpointError(f'missing tensor {missing[0]} ({len(missing)} missing)', field=missing[0])
    logger.info('loaded %d tensors from %s', len(seen), path)
    return model
