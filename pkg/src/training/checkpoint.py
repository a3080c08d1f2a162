"""Checkpoint files (``S5CK``): parameters, optimizer moments and trainer state.

Layout (little-endian)::

    magic "S5CK" | version u32 | kind string | config echo string
    parameter table | optimizer table | optimizer step u64
    epoch u32 | lr f64 | history count u32 | losses f64 * count

A table is ``count u32`` followed by ``name string | ndim u32 | dims u32 * ndim |
values f64 * prod(dims)`` per entry, in table order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

from loguru import logger

from ..data.io import BinaryReader, BinaryWriter, atomic_write
from ..errors import CheckpointError, FormatError
from ..tensor import ParameterTable

CHECKPOINT_MAGIC = b"S5CK"
CHECKPOINT_VERSION = 1
CHECKPOINT_KINDS = ("classifier", "pretrain")


@dataclass
class Checkpoint:
    kind: str
    config_text: str
    params: ParameterTable
    optimizer: ParameterTable = field(default_factory=ParameterTable)
    optimizer_step: int = 0
    epoch: int = 0
    lr: float = 0.0
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in CHECKPOINT_KINDS:
            raise CheckpointError(f"Unknown checkpoint kind {self.kind!r}")


def _write_table(out: BinaryWriter, table: ParameterTable) -> None:
    out.u32(len(table))
    for name, array in table.items():
        out.string(name)
        out.u32(array.ndim)
        for dim in array.shape:
            out.u32(dim)
        out.array(array)


def _read_table(reader: BinaryReader) -> ParameterTable:
    table = ParameterTable()
    for _ in range(reader.u32()):
        name = reader.string()
        ndim = reader.u32()
        shape = tuple(reader.u32() for _ in range(ndim))
        if name in table:
            raise FormatError(f"{reader.source}: duplicate entry {name}")
        table.add(name, reader.array(shape))
    return table


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    out = BinaryWriter()
    out.raw(CHECKPOINT_MAGIC)
    out.u32(CHECKPOINT_VERSION)
    out.string(ckpt.kind)
    out.string(ckpt.config_text)
    _write_table(out, ckpt.params)
    _write_table(out, ckpt.optimizer)
    out.u64(ckpt.optimizer_step)
    out.pack("Id", ckpt.epoch, ckpt.lr)
    out.u32(len(ckpt.history))
    for loss in ckpt.history:
        out.pack("d", loss)
    return out.getvalue()


def decode_checkpoint(reader: BinaryReader) -> Checkpoint:
    reader.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    kind = reader.string()
    if kind not in CHECKPOINT_KINDS:
        raise FormatError(f"{reader.source}: unknown checkpoint kind {kind!r}")
    config_text = reader.string()
    params = _read_table(reader)
    optimizer = _read_table(reader)
    step = reader.u64()
    epoch, lr = reader.unpack("Id")
    history = [reader.unpack("d")[0] for _ in range(reader.u32())]
    reader.done()
    return Checkpoint(kind, config_text, params, optimizer, step, epoch, lr, history)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    atomic_write(path, encode_checkpoint(ckpt))
    logger.debug(f"Checkpoint ({ckpt.kind}, epoch {ckpt.epoch}) written to {path}")


def load_checkpoint(path: Union[str, Path], kind: Optional[str] = None) -> Checkpoint:
    """Read ``path``; with ``kind`` set, a checkpoint of another kind is rejected."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: no such checkpoint")
    ckpt = decode_checkpoint(BinaryReader(path.read_bytes(), str(path)))
    if kind is not None and ckpt.kind != kind:
        raise CheckpointError(f"{path} holds a {ckpt.kind} checkpoint, expected {kind}")
    return ckpt
