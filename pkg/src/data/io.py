"""Little-endian binary records for datasets (``S5DS``) plus the shared codec.

Dataset layout::

    magic "S5DS" | version u32 | spec block | seed u64
    per split (train, val, test), per sample:
        label u32 | planted count u32 | (t u32, s u32) * count | frames f64 * T*H*W*3
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from loguru import logger

from ..errors import ArgumentError, DataError, FormatError
from .synthetic import CHANNELS, SPLITS, TASK_KINDS, Dataset, Split, TaskSpec

DATASET_MAGIC = b"S5DS"
DATASET_VERSION = 1

_SPEC_FORMAT = "<7Id3I"  # kind, classes, frames, height, width, patch, planted | noise | split sizes


class BinaryWriter:
    def __init__(self):
        self._chunks: List[bytes] = []

    def raw(self, data: bytes) -> None:
        self._chunks.append(data)

    def pack(self, fmt: str, *values) -> None:
        self._chunks.append(struct.pack("<" + fmt.lstrip("<"), *values))

    def u32(self, value: int) -> None:
        self.pack("I", value)

    def u64(self, value: int) -> None:
        self.pack("Q", value)

    def string(self, text: str) -> None:
        data = text.encode("utf-8")
        self.u32(len(data))
        self.raw(data)

    def array(self, values: np.ndarray) -> None:
        self.raw(np.ascontiguousarray(values, dtype="<f8").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


class BinaryReader:
    """Cursor over a byte buffer; every short read is a :class:`FormatError`."""

    def __init__(self, data: bytes, source: str = "<buffer>"):
        self._data = data
        self._pos = 0
        self.source = source

    def raw(self, size: int) -> bytes:
        if size < 0 or self._pos + size > len(self._data):
            raise FormatError(f"{self.source}: truncated at byte {self._pos} "
                              f"(needed {size}, {len(self._data) - self._pos} left)")
        chunk = self._data[self._pos:self._pos + size]
        self._pos += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        fmt = "<" + fmt.lstrip("<")
        return struct.unpack(fmt, self.raw(struct.calcsize(fmt)))

    def u32(self) -> int:
        return self.unpack("I")[0]

    def u64(self) -> int:
        return self.unpack("Q")[0]

    def string(self) -> str:
        try:
            return self.raw(self.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{self.source}: invalid UTF-8 string ({e})")

    def array(self, shape: Tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(self.raw(8 * count), dtype="<f8")
        return values.astype(np.float64).reshape(shape)

    def header(self, magic: bytes, version: int) -> None:
        found = self.raw(len(magic))
        if found != magic:
            raise FormatError(f"{self.source}: bad magic {found!r}, expected {magic!r}")
        found_version = self.u32()
        if found_version != version:
            raise FormatError(f"{self.source}: version {found_version} not supported "
                              f"(expected {version})")

    def done(self) -> None:
        if self._pos != len(self._data):
            raise FormatError(f"{self.source}: {len(self._data) - self._pos} trailing bytes")


def atomic_write(path: Union[str, Path], data: bytes) -> None:
    """Write to a sibling temp file then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(path.name + ".tmp")
    with open(temp_path, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(temp_path, path)


def _read_file(path: Union[str, Path]) -> BinaryReader:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    return BinaryReader(path.read_bytes(), str(path))


def encode_dataset(dataset: Dataset) -> bytes:
    spec = dataset.spec
    out = BinaryWriter()
    out.raw(DATASET_MAGIC)
    out.u32(DATASET_VERSION)
    out.pack(_SPEC_FORMAT, TASK_KINDS.index(spec.kind), spec.classes, spec.frames, spec.height,
             spec.width, spec.patch, spec.planted_count, spec.noise_std,
             spec.train_size, spec.val_size, spec.test_size)
    out.u64(dataset.seed)
    for name in SPLITS:
        split = dataset.split(name)
        for i in range(len(split)):
            rows = split.planted[i]
            out.pack("II", int(split.labels[i]), len(rows))
            for row in rows:
                out.pack("II", *divmod(int(row), spec.patches))
            out.array(split.frames[i])
    return out.getvalue()


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    atomic_write(path, encode_dataset(dataset))
    logger.info(f"Dataset written to {path}")


def decode_dataset(reader: BinaryReader) -> Dataset:
    reader.header(DATASET_MAGIC, DATASET_VERSION)
    (kind, classes, frames, height, width, patch, planted_count, noise_std,
     train_size, val_size, test_size) = reader.unpack(_SPEC_FORMAT)
    if kind >= len(TASK_KINDS):
        raise FormatError(f"{reader.source}: unknown task kind {kind}")
    spec = TaskSpec(TASK_KINDS[kind], classes, frames, height, width, patch, planted_count,
                    noise_std, train_size, val_size, test_size)
    try:
        spec.validate()
    except ArgumentError as e:
        raise FormatError(f"{reader.source}: invalid task block ({e})")
    seed = reader.u64()

    shape = (frames, height, width, CHANNELS)
    splits = {}
    for name in SPLITS:
        size = spec.split_size(name)
        data = np.zeros((size,) + shape)
        labels = np.zeros(size, dtype=np.int64)
        planted = []
        for i in range(size):
            labels[i], count = reader.unpack("II")
            coords = [reader.unpack("II") for _ in range(count)]
            planted.append(np.array([t * spec.patches + s for t, s in coords], dtype=np.int64))
            data[i] = reader.array(shape)
        splits[name] = Split(data, labels, planted, spec.patches)
    reader.done()
    return Dataset(spec, seed, splits)


def load_dataset(path: Union[str, Path]) -> Dataset:
    dataset = decode_dataset(_read_file(path))
    logger.debug(f"Loaded dataset {path}: {dataset.describe()}")
    return dataset
