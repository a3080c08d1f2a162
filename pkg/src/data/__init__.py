from .synthetic import (
    TaskSpec,
    SyntheticVideo,
    Split,
    Dataset,
    class_patterns,
    make_sparse_sample,
    make_long_range_sample,
    gen_sparse_token_task,
    gen_long_range_task,
    generate_task,
)
from .io import (
    BinaryReader,
    BinaryWriter,
    atomic_write,
    save_dataset,
    load_dataset,
    encode_dataset,
    decode_dataset,
)
from .prefetch import ClipPrefetcher

__all__ = [
    "TaskSpec",
    "SyntheticVideo",
    "Split",
    "Dataset",
    "class_patterns",
    "make_sparse_sample",
    "make_long_range_sample",
    "gen_sparse_token_task",
    "gen_long_range_task",
    "generate_task",
    "BinaryReader",
    "BinaryWriter",
    "atomic_write",
    "save_dataset",
    "load_dataset",
    "encode_dataset",
    "decode_dataset",
    "ClipPrefetcher",
]
