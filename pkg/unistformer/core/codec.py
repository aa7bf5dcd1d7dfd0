"""Little-endian binary primitives shared by SKEL files and checkpoints."""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from .exceptions import DimensionOverflowError, NonFiniteDataError, TruncatedFileError

U32 = np.dtype("<u4")
F32 = np.dtype("<f4")

# Upper bound on elements in one stored tensor (4 GiB of float32).
MAX_ELEMENTS = 1 << 30
MAX_RANK = 8


def pack_u32(*values: int) -> bytes:
    return np.array(values, dtype=U32).tobytes()


def pack_f32(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=F32).tobytes()


def pack_tensor(array: np.ndarray) -> bytes:
    """u32 rank, u32 dims..., float32 payload."""
    return pack_u32(array.ndim, *array.shape) + pack_f32(array)


class ByteReader:
    """Sequential reader over an in-memory buffer that fails loudly on truncation."""

    def __init__(self, payload: bytes, source: str = "<buffer>"):
        self.payload = payload
        self.source = source
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.payload) - self.offset

    def take(self, count: int) -> bytes:
        if count > self.remaining:
            raise TruncatedFileError(
                f"{self.source}: file ended unexpectedly (needed {count} bytes at offset {self.offset}, {self.remaining} left)"
            )
        chunk = self.payload[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def u32(self, count: int = 1) -> Tuple[int, ...]:
        values = np.frombuffer(self.take(4 * count), dtype=U32)
        return tuple(int(v) for v in values)

    def f32(self, shape: Sequence[int]) -> np.ndarray:
        count = element_count(shape, self.source)
        values = np.frombuffer(self.take(4 * count), dtype=F32).astype(np.float32).reshape(shape)
        if not np.all(np.isfinite(values)):
            raise NonFiniteDataError(f"{self.source}: payload holds non-finite values")
        return values

    def tensor(self) -> np.ndarray:
        (rank,) = self.u32()
        if rank > MAX_RANK:
            raise DimensionOverflowError(f"{self.source}: tensor rank {rank} exceeds {MAX_RANK}")
        dims = self.u32(rank) if rank else ()
        return self.f32(dims)


def element_count(shape: Sequence[int], source: str = "<buffer>") -> int:
    count = 1
    for dim in shape:
        if int(dim) == 0:
            raise DimensionOverflowError(f"{source}: zero-sized dimension in {tuple(shape)}")
        count *= int(dim)
        if count > MAX_ELEMENTS:
            raise DimensionOverflowError(f"{source}: dimensions {tuple(shape)} exceed {MAX_ELEMENTS} elements")
    return count
