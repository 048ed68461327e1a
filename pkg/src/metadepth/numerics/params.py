"""Flat parameter storage with named segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from metadepth.errors import ShapeError


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


class ParamVector:
    """Ordered named weights backed by one contiguous 1-D array.

    Arithmetic (``+``, ``-``, scalar ``*``) acts elementwise on the flat view
    and requires identical layouts on both operands.
    """

    __slots__ = ("segments", "values", "_index")

    def __init__(self, segments, values):
        self.segments = tuple(segments)
        self.values = values
        self._index = {s.name: s for s in self.segments}
        if values.ndim != 1 or values.size != self.total_len:
            raise ShapeError(f"values of length {values.size} do not fit layout of length {self.total_len}")

    @classmethod
    def from_arrays(cls, named_arrays, dtype=None):
        segments, chunks, offset = [], [], 0
        for name, arr in named_arrays:
            arr = np.asarray(arr, dtype=dtype)
            segments.append(Segment(name, tuple(arr.shape), offset))
            chunks.append(arr.ravel())
            offset += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0, dtype=dtype or np.float64)
        return cls(segments, values)

    @property
    def total_len(self) -> int:
        return sum(s.size for s in self.segments)

    @property
    def layout(self):
        return tuple((s.name, s.shape) for s in self.segments)

    @property
    def dtype(self):
        return self.values.dtype

    def names(self):
        return [s.name for s in self.segments]

    def __len__(self):
        return self.values.size

    def __getitem__(self, name) -> np.ndarray:
        seg = self._index[name]
        return self.values[seg.offset : seg.offset + seg.size].reshape(seg.shape)

    def items(self):
        for s in self.segments:
            yield s.name, self[s.name]

    def with_values(self, values) -> ParamVector:
        return ParamVector(self.segments, values)

    def copy(self) -> ParamVector:
        return self.with_values(self.values.copy())

    def zeros_like(self) -> ParamVector:
        return self.with_values(np.zeros_like(self.values))

    def astype(self, dtype) -> ParamVector:
        return self.with_values(self.values.astype(dtype))

    def check_layout(self, other: ParamVector) -> None:
        if self.layout != other.layout:
            raise ShapeError("parameter layouts differ")

    def __add__(self, other):
        self.check_layout(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        self.check_layout(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * self.values.dtype.type(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def equals(self, other: ParamVector) -> bool:
        """Bitwise equality of layout and values."""
        return (
            self.layout == other.layout
            and self.values.dtype == other.values.dtype
            and self.values.tobytes() == other.values.tobytes()
        )

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __repr__(self):
        return f"ParamVector({len(self.segments)} segments, {self.total_len} values, {self.values.dtype})"
