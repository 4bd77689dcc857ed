"""Lines, tubes, shadings, point-line duality, and incidence structures.

Slopes are handled in two charts so rasterization never sees |slope| > 1:
chart "s" is ``y = a*x + b`` and chart "t" is the 90-degree rotated
``x = a*y + b``, both with ``|a| <= 1``.  Line coordinates are quantized to
integer multiples of the grid delta, so families are delta-separated in dual
coordinates by construction and all duality arithmetic is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import CellSet, Scale, union_codes

__all__ = [
    "GeometryError",
    "Line",
    "Shading",
    "LineFamily",
    "TubeSegment",
    "tube_cells",
    "dual_point",
    "dual_line",
    "union_shadings",
    "multiplicity",
    "segment_cover",
    "segment_count",
    "lines_in_tube",
    "angle_between",
]

CHART_SHALLOW = "s"
CHART_STEEP = "t"


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    """A quantized line meeting the unit square.

    chart "s": y = a x + b with a = a_q * delta, b = b_q * delta.
    chart "t": x = a y + b (rotated chart for steep lines).
    """

    scale: Scale
    chart: str
    a_q: int
    b_q: int

    def __post_init__(self) -> None:
        self.scale.require_base()
        if self.chart not in (CHART_SHALLOW, CHART_STEEP):
            raise GeometryError(f"unknown chart {self.chart!r}")
        n = self.scale.n
        if abs(self.a_q) > n:
            raise GeometryError(f"slope {self.a_q}*delta outside [-1, 1]")
        if not (-n <= self.b_q <= 2 * n):
            raise GeometryError(f"intercept {self.b_q}*delta outside [-1, 2]")
        u0, u1 = self.param_range()
        if u1 < u0:
            raise GeometryError("line misses the unit square")

    @property
    def a(self) -> float:
        return self.a_q * self.scale.delta

    @property
    def b(self) -> float:
        return self.b_q * self.scale.delta

    def param_range(self) -> tuple[float, float]:
        """Parameter interval (abscissa of the chart) inside the unit square."""
        a, b = self.a, self.b
        lo, hi = 0.0, 1.0
        if a > 0:
            lo = max(lo, (0.0 - b) / a)
            hi = min(hi, (1.0 - b) / a)
        elif a < 0:
            lo = max(lo, (1.0 - b) / a)
            hi = min(hi, (0.0 - b) / a)
        else:
            if not (0.0 <= b <= 1.0):
                return (1.0, 0.0)
        return (lo, hi)

    def length_in_square(self) -> float:
        u0, u1 = self.param_range()
        return max(0.0, (u1 - u0)) * math.hypot(1.0, self.a)

    def point_at_param(self, u: float) -> tuple[float, float]:
        v = self.a * u + self.b
        return (u, v) if self.chart == CHART_SHALLOW else (v, u)

    def point_at_arc(self, s: float) -> tuple[float, float]:
        u0, _ = self.param_range()
        u = u0 + s / math.hypot(1.0, self.a)
        return self.point_at_param(u)

    def direction(self) -> tuple[float, float]:
        nrm = math.hypot(1.0, self.a)
        if self.chart == CHART_SHALLOW:
            return (1.0 / nrm, self.a / nrm)
        return (self.a / nrm, 1.0 / nrm)

    def distance(self, x: float, y: float) -> float:
        u, v = (x, y) if self.chart == CHART_SHALLOW else (y, x)
        return abs(self.a * u - v + self.b) / math.hypot(1.0, self.a)

    def arc_and_offset(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project points to (arclength from square entry, signed offset)."""
        p = np.asarray(pts, dtype=np.float64)
        if self.chart == CHART_SHALLOW:
            u, v = p[:, 0], p[:, 1]
        else:
            u, v = p[:, 1], p[:, 0]
        a, b = self.a, self.b
        nrm = math.hypot(1.0, a)
        u0, _ = self.param_range()
        foot = (u + a * (v - b)) / (1.0 + a * a)
        arc = (foot - u0) * nrm
        off = (a * u - v + b) / nrm
        return arc, off

    def requantize(self, scale: Scale) -> "Line":
        """Nearest line on another scale's quantization grid."""
        if scale.k >= self.scale.k:
            shift = scale.k - self.scale.k
            return Line(scale, self.chart, self.a_q << shift, self.b_q << shift)
        shift = self.scale.k - scale.k
        half = 1 << (shift - 1)
        aq = (self.a_q + half) >> shift
        bq = (self.b_q + half) >> shift
        aq = max(-scale.n, min(scale.n, aq))
        return Line(scale, self.chart, aq, bq)


def tube_cells(
    line: Line,
    w: float,
    cell_scale: Scale | None = None,
    columns: np.ndarray | None = None,
) -> CellSet:
    """All cells (at cell_scale, default the line's scale) whose center lies
    within distance w of the line, clipped to the unit square."""
    scale = cell_scale if cell_scale is not None else line.scale
    if not (scale.delta <= w <= 1.0 + 1e-12):
        raise GeometryError(f"tube width {w} outside [delta, 1]")
    d = scale.delta
    n = scale.n
    a, b = line.a, line.b
    W = w * math.hypot(1.0, a)
    cols = np.arange(n, dtype=np.int64) if columns is None else np.asarray(columns, dtype=np.int64)
    x = (cols + 0.5) * d
    c = a * x + b
    lo = np.ceil((c - W) / d - 0.5).astype(np.int64)
    hi = np.floor((c + W) / d - 0.5).astype(np.int64)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, n - 1)
    lens = hi - lo + 1
    keep = lens > 0
    cols, lo, lens = cols[keep], lo[keep], lens[keep]
    if cols.size == 0:
        return CellSet(scale, np.empty(0, dtype=np.uint64))
    total = int(lens.sum())
    u = np.repeat(cols, lens)
    starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
    v = np.arange(total, dtype=np.int64) - np.repeat(starts, lens) + np.repeat(lo, lens)
    if line.chart == CHART_SHALLOW:
        return CellSet.from_ij(scale, u, v)
    return CellSet.from_ij(scale, v, u)


def tube_cell_count(line: Line, w: float, cell_scale: Scale | None = None) -> int:
    """Cell count of tube_cells without materializing the set."""
    scale = cell_scale if cell_scale is not None else line.scale
    d = scale.delta
    n = scale.n
    a, b = line.a, line.b
    W = w * math.hypot(1.0, a)
    x = (np.arange(n, dtype=np.int64) + 0.5) * d
    c = a * x + b
    lo = np.maximum(np.ceil((c - W) / d - 0.5).astype(np.int64), 0)
    hi = np.minimum(np.floor((c + W) / d - 0.5).astype(np.int64), n - 1)
    return int(np.maximum(hi - lo + 1, 0).sum())


@dataclass(frozen=True)
class Shading:
    """A union of cells near a line: the lit-up part of the tube.

    Cells must lie within twice their own width of the line; primary
    shadings produced by generators stay within one width, the factor-2
    headroom admits coarsened carriers whose cell centers drift by up to
    half a coarse cell.
    """

    line: Line
    cells: CellSet

    def __post_init__(self) -> None:
        if self.cells.is_empty():
            raise GeometryError("shading must be nonempty")
        d = self.cells.scale.delta
        centers = self.cells.centers()
        _, off = self.line.arc_and_offset(centers)
        if np.max(np.abs(off)) > 2.0 * d * math.hypot(1.0, self.line.a) + 1e-12:
            raise GeometryError("shading cell outside the tube")

    @property
    def mass(self) -> float:
        return self.cells.mass

    def arc_positions(self) -> np.ndarray:
        """Sorted arclength positions of the cell centers along the line."""
        arc, _ = self.line.arc_and_offset(self.cells.centers())
        arc.sort()
        return arc

    def arc_and_offset(self) -> tuple[np.ndarray, np.ndarray]:
        return self.line.arc_and_offset(self.cells.centers())


@dataclass(frozen=True)
class TubeSegment:
    """A delta x r tube piece along a line, centered at normalized arclength t0."""

    line: Line
    t0: float
    r: float
    width: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.t0 <= 1.0):
            raise GeometryError(f"segment center {self.t0} outside [0, 1]")
        if not (self.width <= self.r <= 1.0 + 1e-12):
            raise GeometryError(f"segment length {self.r} outside [delta, 1]")


@dataclass(frozen=True)
class LineFamily:
    """Indexed lines with shadings: the (L, Y)_delta object."""

    scale: Scale
    entries: tuple[tuple[Line, Shading], ...]

    def __post_init__(self) -> None:
        seen = set()
        for line, shading in self.entries:
            if shading.cells.scale != self.scale:
                raise GeometryError("shading scale differs from family scale")
            if shading.line is not line and shading.line != line:
                raise GeometryError("shading attached to a different line")
            key = (line.chart, line.a_q, line.b_q)
            if key in seen:
                raise GeometryError(f"duplicate quantized line {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def lines(self) -> list[Line]:
        return [e[0] for e in self.entries]

    @property
    def shadings(self) -> list[Shading]:
        return [e[1] for e in self.entries]

    def dual_points(self) -> np.ndarray:
        """(n, 2) array of chart-local dual coordinates (a, b)."""
        return np.array([[ln.a, ln.b] for ln, _ in self.entries], dtype=np.float64)

    def multiplicity_counts(self, chunk: int = 1 << 21) -> tuple[np.ndarray, np.ndarray]:
        """(codes, counts) of how many shadings cover each cell of E_L."""
        acc_codes = np.empty(0, dtype=np.uint64)
        acc_counts = np.empty(0, dtype=np.int64)
        buf: list[np.ndarray] = []
        size = 0

        def flush() -> None:
            nonlocal acc_codes, acc_counts, buf, size
            if not buf:
                return
            u, c = np.unique(np.concatenate(buf), return_counts=True)
            merged = np.union1d(acc_codes, u)
            counts = np.zeros(merged.size, dtype=np.int64)
            counts[np.searchsorted(merged, acc_codes)] += acc_counts
            counts[np.searchsorted(merged, u)] += c
            acc_codes, acc_counts = merged, counts
            buf, size = [], 0

        for _, sh in self.entries:
            buf.append(sh.cells.codes)
            size += sh.cells.codes.size
            if size >= chunk:
                flush()
        flush()
        return acc_codes, acc_counts

    # -- wire format --------------------------------------------------------

    def to_json_obj(self) -> dict:
        return {
            "k": self.scale.k,
            "lines": [
                {
                    "chart": ln.chart,
                    "a_q": ln.a_q,
                    "b_q": ln.b_q,
                    "cells": [[int(i), int(j)] for i, j in sh.cells.cells()],
                }
                for ln, sh in self.entries
            ],
        }

    @staticmethod
    def from_json_obj(obj: dict) -> "LineFamily":
        scale = Scale(int(obj["k"]))
        entries = []
        for rec in obj["lines"]:
            line = Line(scale, rec["chart"], int(rec["a_q"]), int(rec["b_q"]))
            cells = CellSet.from_cells(scale, [(int(c[0]), int(c[1])) for c in rec["cells"]])
            entries.append((line, Shading(line, cells)))
        return LineFamily(scale, tuple(entries))


# -- duality ----------------------------------------------------------------


def dual_point(line: Line) -> tuple[float, float]:
    """The dual point (a, b) of a chart line v = a*u + b."""
    return (line.a, line.b)


def dual_line(p: tuple[float, float], scale: Scale, chart: str = CHART_SHALLOW) -> Line:
    """The dual line v = -p1*u + p2 of a point, on the chart's quantization grid.

    Composing dual_line(dual_point(.)) negates the slope exactly; the double
    composition is the identity on quantized coordinates bit for bit.
    """
    d = scale.delta
    a_q = -_quantize_exact(p[0], d, "dual point abscissa")
    b_q = _quantize_exact(p[1], d, "dual point ordinate")
    if abs(a_q) > scale.n:
        raise GeometryError(f"dual slope {a_q * d} outside chart range [-1, 1]")
    return Line(scale, chart, a_q, b_q)


def _quantize_exact(x: float, d: float, what: str) -> int:
    q = round(x / d)
    if abs(q * d - x) > 1e-12:
        raise GeometryError(f"{what} {x} is not a multiple of delta")
    return q


# -- incidence structure ------------------------------------------------------


def union_shadings(F: LineFamily) -> CellSet:
    """E_L: the union of all shadings of the family."""
    if len(F) == 0:
        raise GeometryError("union of an empty family")
    codes = union_codes(sh.cells.codes for _, sh in F.entries)
    return CellSet(F.scale, codes)


def multiplicity(F: LineFamily, x: tuple[int, int]) -> list[int]:
    """L_Y(x): indices of the lines whose shading contains the cell x."""
    i, j = int(x[0]), int(x[1])
    out = [idx for idx, (_, sh) in enumerate(F.entries) if sh.cells.contains_cell(i, j)]
    if not out:
        raise GeometryError(f"cell {x} lies outside E_L")
    return out


def segment_count(positions: np.ndarray, r: float) -> int:
    """Greedy left-to-right count of length-r windows covering the positions."""
    n = positions.size
    count = 0
    idx = 0
    while idx < n:
        count += 1
        idx = int(np.searchsorted(positions, positions[idx] + r, side="right"))
    return count


def segment_cover(Y: Shading, r: float) -> list[TubeSegment]:
    """(Y(l))_r: greedy minimal covering of the shading by delta x r tubes.

    The greedy left-to-right sweep is canonical and within a factor 2 of the
    optimal covering count.
    """
    d = Y.cells.scale.delta
    if not (d <= r <= 1.0 + 1e-12):
        raise GeometryError(f"segment length {r} outside [delta, 1]")
    pos = Y.arc_positions()
    lam = max(Y.line.length_in_square(), d)
    segments: list[TubeSegment] = []
    idx = 0
    while idx < pos.size:
        start = pos[idx]
        seg_start = min(max(start, 0.0), max(lam - r, 0.0))
        t0 = min(max((seg_start + r / 2.0) / lam, 0.0), 1.0)
        segments.append(TubeSegment(Y.line, t0, min(r, 1.0), d))
        idx = int(np.searchsorted(pos, start + r, side="right"))
    return segments


def angle_between(l1: Line, l2: Line) -> float:
    """Acute angle between two lines, in radians (in [0, pi/2])."""
    d1 = l1.direction()
    d2 = l2.direction()
    cross = abs(d1[0] * d2[1] - d1[1] * d2[0])
    dot = abs(d1[0] * d2[0] + d1[1] * d2[1])
    return math.atan2(cross, dot)


def lines_in_tube(lines: Sequence[Line], core: Line, v: float) -> list[Line]:
    """L[T]: lines meeting the width-v tube around core at angle <= v."""
    if not (0.0 < v <= 1.0):
        raise GeometryError(f"tube width {v} outside (0, 1]")
    out = []
    for ln in lines:
        if angle_between(ln, core) > v:
            continue
        u0, u1 = ln.param_range()
        p0 = np.array([ln.point_at_param(u0), ln.point_at_param(u1)])
        d0 = core.distance(*p0[0])
        d1 = core.distance(*p0[1])
        _, off = core.arc_and_offset(p0)
        crosses = off[0] * off[1] <= 0.0
        if crosses or min(d0, d1) <= v:
            out.append(ln)
    return out
