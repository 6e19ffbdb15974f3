"""Dataset generation, the EQDS tensor file format, and deterministic splits.

EQDS layout (all little-endian)::

    magic    4 bytes  b"EQDS"
    version  uint32   1
    dtype    uint32   code from DTYPE_CODES
    ndim     uint32
    dims     ndim x uint64
    payload  prod(dims) elements, C order

Labels live in a parallel EQDS file with an integer dtype and ndim = 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, InputError

MAGIC = b"EQDS"
VERSION = 1
DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i4"),
    4: np.dtype("<i8"),
    5: np.dtype("u1"),
}
_CODE_OF = {v: k for k, v in DTYPE_CODES.items()}


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise FormatError(f"{len(self.x)} samples but {len(self.y)} labels")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1


def make_blobs(n: int, n_classes: int = 10, dims: int = 64, seed: int = 0,
               separation: float = 1.0, noise: float = 1.0, clusters_per_class: int = 1) -> Dataset:
    """Gaussian-blob classification data, balanced across classes."""
    if n < n_classes:
        raise InputError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation, size=(n_classes, clusters_per_class, dims))
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    sub = rng.integers(clusters_per_class, size=n)
    x = centers[labels, sub] + rng.normal(0.0, noise, size=(n, dims))
    return Dataset(x, labels.astype(np.int64))


def _mix64(v: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, used as a fixed hash of sample indices."""
    v = v.astype(np.uint64)
    with np.errstate(over="ignore"):
        v = v + np.uint64(0x9E3779B97F4A7C15)
        v = (v ^ (v >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        v = (v ^ (v >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        v = v ^ (v >> np.uint64(31))
    return v


def split_indices(n: int, fractions=(0.8, 0.1, 0.1)) -> list[np.ndarray]:
    """Split ``range(n)`` by a fixed hash of the index.

    Sizes are floor(f * n) for every part but the last, which takes the
    remainder. Each part is returned in ascending index order.
    """
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or not np.isclose(sum(fractions), 1.0):
        raise InputError("split fractions must be non-negative and sum to 1")
    order = np.argsort(_mix64(np.arange(n)), kind="stable")
    sizes = [int(np.floor(f * n + 1e-9)) for f in fractions[:-1]]
    sizes.append(n - sum(sizes))
    out, start = [], 0
    for size in sizes:
        out.append(np.sort(order[start:start + size]))
        start += size
    return out


def split_dataset(ds: Dataset, fractions=(0.8, 0.1, 0.1)) -> list[Dataset]:
    return [ds.subset(idx) for idx in split_indices(len(ds), fractions)]


def write_eqds(path, array) -> None:
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<") if array.dtype.byteorder not in ("|",) else array.dtype
    if dtype not in _CODE_OF:
        raise FormatError(f"dtype {array.dtype} has no EQDS code")
    header = MAGIC + struct.pack("<III", VERSION, _CODE_OF[dtype], array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def read_eqds(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not an EQDS file")
    version, code, ndim = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported EQDS version {version}")
    if code not in DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    off = 16 + 8 * ndim
    if len(blob) < off:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 16)
    dtype = DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(blob) != off + count * dtype.itemsize:
        raise FormatError(f"{path}: payload size does not match header")
    return np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(dims).copy()


def load_eqds_dataset(data_path, labels_path) -> Dataset:
    x = read_eqds(data_path).astype(np.float64)
    y = read_eqds(labels_path)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise FormatError("labels file must hold a 1-D integer array")
    if len(x) != len(y):
        raise FormatError(f"{len(x)} samples but {len(y)} labels")
    return Dataset(x, y.astype(np.int64))
