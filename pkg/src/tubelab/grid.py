"""Dyadic grid primitives: cell sets, covering numbers, coarsening, refinements.

Cells live on the dyadic grid of the unit square.  A cell set at scale
``delta = 2**-k`` is a set of integer pairs ``(i, j)`` naming the half-open
squares ``[i*delta, (i+1)*delta) x [j*delta, (j+1)*delta)``.  Mass is always
``count * delta**2``; covering numbers are dyadic-cell counts, not minimal
ball covers (the two agree within a factor of 9, see ``tests/test_grid.py``
for the small-instance oracle).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

__all__ = [
    "GridError",
    "Scale",
    "ScaleLadder",
    "CellSet",
    "covering_count",
    "coarsen",
    "is_refinement",
]

_CODE_MASK = np.uint64(0xFFFFFFFF)
_MAGIC = b"FLAB"
_VERSION = 1


class GridError(ValueError):
    """Raised on scale mismatches, range violations, and empty-set queries."""


@dataclass(frozen=True, order=True)
class Scale:
    """Grid scale 2**-k.

    Configurations (line families, generators) require k >= 2; coarsened
    carriers produced by ``coarsen`` may sit at k = 0 or 1.
    """

    k: int

    def __post_init__(self) -> None:
        if not isinstance(self.k, int) or self.k < 0:
            raise GridError(f"scale exponent must be a non-negative integer, got {self.k!r}")

    @property
    def delta(self) -> float:
        return 2.0 ** (-self.k)

    @property
    def n(self) -> int:
        """Cells per side."""
        return 1 << self.k

    def require_base(self) -> "Scale":
        if self.k < 2:
            raise GridError(f"base scales need k >= 2 (delta <= 1/4), got k={self.k}")
        return self


def _rho_level(rho: float, k: int) -> int:
    """Map a dyadic scale value in [2**-k, 1] to its level j (rho = 2**-j)."""
    if not (0.0 < rho <= 1.0):
        raise GridError(f"scale value {rho} outside (0, 1]")
    j = round(math.log2(1.0 / rho))
    if not (0 <= j <= k) or 2.0 ** (-j) != rho:
        raise GridError(f"{rho} is not a dyadic scale in [2^-{k}, 1]")
    return j


@dataclass(frozen=True)
class ScaleLadder:
    """M-adic scale ladder rho_j = M**-j, j = 0..N, with M = 2**m.

    Requires M**N == 2**k so the ladder nests exactly in the dyadic grid.
    The textbook normalization takes M about log(1/delta); any poly-log base
    works for the structural arguments, and a power of two is the only choice
    that nests exactly, so the base is configurable via m instead.
    """

    m: int
    N: int

    def __post_init__(self) -> None:
        if self.m < 1 or self.N < 1:
            raise GridError("ladder needs m >= 1 and N >= 1")

    @property
    def M(self) -> int:
        return 1 << self.m

    @property
    def k(self) -> int:
        return self.m * self.N

    @property
    def delta(self) -> float:
        return 2.0 ** (-self.k)

    def rho(self, j: int) -> float:
        if not 0 <= j <= self.N:
            raise GridError(f"ladder level {j} outside 0..{self.N}")
        return 2.0 ** (-self.m * j)

    def levels(self) -> list[float]:
        return [self.rho(j) for j in range(self.N + 1)]

    def compatible_with(self, scale: Scale) -> bool:
        return self.k == scale.k

    @staticmethod
    def for_scale(scale: Scale, m: int) -> "ScaleLadder":
        if scale.k % m != 0:
            raise GridError(f"k={scale.k} not divisible by m={m}")
        return ScaleLadder(m=m, N=scale.k // m)


def _encode(i: np.ndarray, j: np.ndarray) -> np.ndarray:
    # Row-major codes: j in the high word so ascending code order walks rows.
    return (j.astype(np.uint64) << np.uint64(32)) | i.astype(np.uint64)


def _decode(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    i = (codes & _CODE_MASK).astype(np.int64)
    j = (codes >> np.uint64(32)).astype(np.int64)
    return i, j


@dataclass(frozen=True)
class CellSet:
    """An immutable set of dyadic cells at a fixed scale.

    ``codes`` is a sorted, duplicate-free uint64 array with j in the high
    32 bits and i in the low 32 bits (row-major order).
    """

    scale: Scale
    codes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        codes = np.asarray(self.codes, dtype=np.uint64)
        if codes.ndim != 1:
            raise GridError("cell codes must be a 1-d array")
        object.__setattr__(self, "codes", codes)
        if codes.size:
            i, j = _decode(codes)
            n = self.scale.n
            if i.min() < 0 or i.max() >= n or j.min() < 0 or j.max() >= n:
                raise GridError("cell indices out of bounds for the unit square")
            if np.any(np.diff(codes.view(np.uint64)) == 0):
                raise GridError("duplicate cells")
            if np.any(np.diff(codes.view(np.uint64)) < 0):
                raise GridError("cell codes not sorted")

    # -- construction ---------------------------------------------------

    @staticmethod
    def from_ij(scale: Scale, i: np.ndarray, j: np.ndarray) -> "CellSet":
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        codes = np.unique(_encode(i, j))
        return CellSet(scale, codes)

    @staticmethod
    def from_cells(scale: Scale, cells: Iterable[tuple[int, int]]) -> "CellSet":
        pairs = list(cells)
        if not pairs:
            return CellSet(scale, np.empty(0, dtype=np.uint64))
        arr = np.asarray(pairs, dtype=np.int64)
        return CellSet.from_ij(scale, arr[:, 0], arr[:, 1])

    @staticmethod
    def full(scale: Scale) -> "CellSet":
        n = scale.n
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return CellSet.from_ij(scale, i.ravel(), j.ravel())

    @staticmethod
    def _from_sorted_codes(scale: Scale, codes: np.ndarray) -> "CellSet":
        # Fast path: caller guarantees sorted unique in-bounds codes.
        obj = object.__new__(CellSet)
        object.__setattr__(obj, "scale", scale)
        object.__setattr__(obj, "codes", codes)
        return obj

    # -- basic queries ---------------------------------------------------

    @property
    def n_cells(self) -> int:
        return int(self.codes.size)

    @property
    def mass(self) -> float:
        """Area, exactly count * delta**2."""
        return self.n_cells * self.scale.delta * self.scale.delta

    def is_empty(self) -> bool:
        return self.codes.size == 0

    def ij(self) -> tuple[np.ndarray, np.ndarray]:
        return _decode(self.codes)

    def centers(self) -> np.ndarray:
        """(n, 2) array of cell centers."""
        i, j = self.ij()
        d = self.scale.delta
        return np.stack([(i + 0.5) * d, (j + 0.5) * d], axis=1)

    def cells(self) -> Iterator[tuple[int, int]]:
        i, j = self.ij()
        for a, b in zip(i.tolist(), j.tolist()):
            yield (a, b)

    def contains_code(self, code: int) -> bool:
        pos = np.searchsorted(self.codes, np.uint64(code))
        return pos < self.codes.size and self.codes[pos] == np.uint64(code)

    def contains_cell(self, i: int, j: int) -> bool:
        return self.contains_code(int(_encode(np.int64(i), np.int64(j))))

    # -- set algebra (same scale) -----------------------------------------

    def _check_same_scale(self, other: "CellSet") -> None:
        if self.scale != other.scale:
            raise GridError(f"scale mismatch: k={self.scale.k} vs k={other.scale.k}")

    def union(self, other: "CellSet") -> "CellSet":
        self._check_same_scale(other)
        return CellSet._from_sorted_codes(self.scale, np.union1d(self.codes, other.codes))

    def intersection(self, other: "CellSet") -> "CellSet":
        self._check_same_scale(other)
        return CellSet._from_sorted_codes(
            self.scale, np.intersect1d(self.codes, other.codes, assume_unique=True)
        )

    def difference(self, other: "CellSet") -> "CellSet":
        self._check_same_scale(other)
        return CellSet._from_sorted_codes(
            self.scale, np.setdiff1d(self.codes, other.codes, assume_unique=True)
        )

    def issubset(self, other: "CellSet") -> bool:
        self._check_same_scale(other)
        if self.codes.size > other.codes.size:
            return False
        pos = np.searchsorted(other.codes, self.codes)
        pos = np.minimum(pos, other.codes.size - 1) if other.codes.size else pos
        if other.codes.size == 0:
            return self.codes.size == 0
        return bool(np.all(other.codes[pos] == self.codes))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CellSet):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.codes, other.codes)

    def __hash__(self) -> int:
        return hash((self.scale, self.codes.tobytes()))

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        """Run-length-encoded row-major binary with a 16-byte header."""
        header = struct.pack("<4sHHQ", _MAGIC, _VERSION, self.scale.k, self.n_cells)
        if self.n_cells == 0:
            return header
        i, j = self.ij()
        # Runs of consecutive i within a row; codes are row-major so a break
        # is any step where code does not increase by exactly 1.
        breaks = np.flatnonzero(np.diff(self.codes) != 1)
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks, [self.codes.size - 1]])
        runs = np.empty((starts.size, 3), dtype=np.uint32)
        runs[:, 0] = j[starts]
        runs[:, 1] = i[starts]
        runs[:, 2] = ends - starts + 1
        return header + runs.tobytes()

    @staticmethod
    def from_bytes(data: bytes) -> "CellSet":
        if len(data) < 16:
            raise GridError("truncated cell-set blob")
        magic, version, k, count = struct.unpack("<4sHHQ", data[:16])
        if magic != _MAGIC:
            raise GridError(f"bad magic {magic!r}")
        if version != _VERSION:
            raise GridError(f"unsupported version {version}")
        scale = Scale(k)
        payload = np.frombuffer(data[16:], dtype=np.uint32)
        if payload.size % 3 != 0:
            raise GridError("malformed run payload")
        runs = payload.reshape(-1, 3)
        if runs.size == 0:
            cs = CellSet(scale, np.empty(0, dtype=np.uint64))
        else:
            lengths = runs[:, 2].astype(np.int64)
            j = np.repeat(runs[:, 0].astype(np.int64), lengths)
            i0 = np.repeat(runs[:, 1].astype(np.int64), lengths)
            off = np.arange(lengths.sum(), dtype=np.int64) - np.repeat(
                np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths
            )
            cs = CellSet.from_ij(scale, i0 + off, j)
        if cs.n_cells != count:
            raise GridError(f"cell count mismatch: header {count}, payload {cs.n_cells}")
        return cs

    def to_json_obj(self) -> dict:
        i, j = self.ij()
        return {"k": self.scale.k, "cells": [[int(a), int(b)] for a, b in zip(i, j)]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True)

    @staticmethod
    def from_json_obj(obj: dict) -> "CellSet":
        scale = Scale(int(obj["k"]))
        return CellSet.from_cells(scale, [(int(c[0]), int(c[1])) for c in obj["cells"]])


# -- covering numbers and coarsening ------------------------------------------


def coarse_codes(E: CellSet, rho: float) -> np.ndarray:
    """Sorted unique codes of the dyadic rho-cells meeting E."""
    j_level = _rho_level(rho, E.scale.k)
    shift = E.scale.k - j_level
    if E.codes.size == 0:
        return np.empty(0, dtype=np.uint64)
    i, j = _decode(E.codes)
    return np.unique(_encode(i >> shift, j >> shift))


def covering_count(E: CellSet, rho: float) -> int:
    """|E|_rho: number of dyadic rho-cells meeting E.

    Within a factor 9 of the minimal covering by rho-balls (a rho-ball meets
    at most 3x3 dyadic rho-cells, and every rho-cell fits in one rho-ball).
    """
    if E.is_empty():
        raise GridError("empty set has no covering number")
    return int(coarse_codes(E, rho).size)


def coarsen(E: CellSet, rho: float) -> CellSet:
    """(E)_rho: the union of the rho-cells counted by covering_count."""
    if E.is_empty():
        raise GridError("empty set has no covering")
    j_level = _rho_level(rho, E.scale.k)
    return CellSet._from_sorted_codes(Scale(j_level), coarse_codes(E, rho))


def refine(E: CellSet, scale: Scale) -> CellSet:
    """Subdivide every cell of E down to a finer scale (exact, mass-preserving)."""
    if scale.k < E.scale.k:
        raise GridError("refine target must be at least as fine")
    shift = scale.k - E.scale.k
    if shift == 0:
        return E
    q = 1 << shift
    i, j = E.ij()
    u = np.arange(q, dtype=np.int64)
    ii = (i[:, None] * q + u[None, :]).ravel()
    offs = np.arange(q, dtype=np.int64)
    big_i = np.repeat(ii, q)
    big_j = (np.repeat(j, q)[:, None] * q + offs[None, :]).ravel()
    return CellSet.from_ij(scale, big_i, big_j)


def is_refinement(E2: CellSet, E1: CellSet, c: float) -> bool:
    """True iff E2 is a subset of E1 keeping at least a c-fraction of cells."""
    if not (0.0 < c <= 1.0):
        raise GridError(f"refinement fraction {c} outside (0, 1]")
    if E2.scale != E1.scale:
        raise GridError("is_refinement requires matching scales")
    if E2.n_cells < c * E1.n_cells:
        return False
    return E2.issubset(E1)


def union_codes(code_arrays: Iterable[np.ndarray], chunk: int = 1 << 21) -> np.ndarray:
    """Union of many sorted code arrays with bounded peak memory."""
    acc = np.empty(0, dtype=np.uint64)
    buf: list[np.ndarray] = []
    size = 0
    for arr in code_arrays:
        buf.append(arr)
        size += arr.size
        if size >= chunk:
            acc = np.union1d(acc, np.concatenate(buf))
            buf, size = [], 0
    if buf:
        acc = np.union1d(acc, np.concatenate(buf))
    return acc
