"""Shared test helpers: random configuration generators and independent
brute-force oracles (kept deliberately naive; they must not share code paths
with the library)."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from tubelab import CellSet, Line, LineFamily, Scale, Shading, tube_cells
from tubelab.geometry import CHART_SHALLOW, CHART_STEEP


# -- random generators -------------------------------------------------------


def random_cellset(rng: np.random.Generator, k: int, density: float = 0.3) -> CellSet:
    scale = Scale(k)
    n = scale.n
    mask = rng.random(n * n) < density
    if not mask.any():
        mask[rng.integers(n * n)] = True
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return CellSet.from_ij(scale, ii.ravel()[mask], jj.ravel()[mask])


def random_line(rng: np.random.Generator, scale: Scale, chart: str | None = None) -> Line:
    n = scale.n
    if chart is None:
        chart = CHART_SHALLOW if rng.random() < 0.5 else CHART_STEEP
    for _ in range(100):
        a_q = int(rng.integers(-n, n + 1))
        b_q = int(rng.integers(0, n))  # intercept in [0, 1) always meets the square
        try:
            return Line(scale, chart, a_q, b_q)
        except Exception:
            continue
    raise RuntimeError("could not draw a line")


def random_shading(rng: np.random.Generator, line: Line, density: float = 0.5) -> Shading:
    tube = tube_cells(line, line.scale.delta)
    count = max(1, round(density * tube.n_cells))
    pick = np.sort(rng.choice(tube.n_cells, size=count, replace=False))
    return Shading(line, CellSet(line.scale, tube.codes[pick]))


def random_family(
    rng: np.random.Generator, k: int, n_lines: int, density: float = 0.5
) -> LineFamily:
    scale = Scale(k)
    entries = []
    seen = set()
    while len(entries) < n_lines:
        line = random_line(rng, scale, chart=CHART_SHALLOW)
        key = (line.chart, line.a_q, line.b_q)
        if key in seen:
            continue
        seen.add(key)
        entries.append((line, random_shading(rng, line, density)))
    return LineFamily(scale, tuple(entries))


def check_rich_point_postconditions(fam: LineFamily) -> None:
    """Assert the four rich-point refinement conclusions with (log2 1/delta)^2
    slack, plus the incidence-mass retention bound."""
    from tubelab import rich_point_refine

    out, e_mu, mu, _ = rich_point_refine(fam)
    k = fam.scale.k
    lsq = float(k * k)
    by_key = {(ln.chart, ln.a_q, ln.b_q): sh for ln, sh in fam.entries}
    total_out = 0
    for ln, sh in out.entries:
        orig = by_key[(ln.chart, ln.a_q, ln.b_q)]
        assert sh.cells.issubset(orig.cells)  # (1) Y' inside Y
        assert sh.cells == orig.cells.intersection(e_mu)  # (3) Y' = E_mu with Y
        total_out += sh.cells.n_cells
    _, counts = out.multiplicity_counts()
    assert counts.min() >= mu and counts.max() < 2 * mu  # (2) multiplicity window
    assert mu >= total_out / (e_mu.n_cells * lsq)  # (4) mu vs incidence density
    total_in = sum(sh.cells.n_cells for _, sh in fam.entries)
    assert total_out >= total_in / lsq  # incidence mass retention


# -- brute-force oracles ------------------------------------------------------


def naive_tube_cells(line: Line, w: float) -> set[tuple[int, int]]:
    """Per-cell distance check, pure python."""
    n = line.scale.n
    d = line.scale.delta
    out = set()
    for i in range(n):
        for j in range(n):
            if line.distance((i + 0.5) * d, (j + 0.5) * d) <= w:
                out.add((i, j))
    return out


def naive_covering_count(cells: set[tuple[int, int]], k: int, rho: float) -> int:
    shift = k - round(math.log2(1.0 / rho))
    return len({(i >> shift, j >> shift) for i, j in cells})


def naive_katz_tao(points: np.ndarray, delta: float, s: float) -> float:
    """Independent max of #(E in 3Q) / (r/delta)^s over dyadic r, python dicts."""
    k = round(math.log2(1.0 / delta))
    best = 0.0
    for j in range(k + 1):
        r = 2.0 ** (-j)
        buckets: dict[tuple[int, int], int] = {}
        for x, y in points:
            key = (math.floor(x / r), math.floor(y / r))
            buckets[key] = buckets.get(key, 0) + 1
        for ci, cj in buckets:
            total = sum(
                buckets.get((ci + u, cj + v), 0) for u in (-1, 0, 1) for v in (-1, 0, 1)
            )
            best = max(best, total / (r / delta) ** s)
    return best


# -- exact minimal ball cover (small instances) --------------------------------


def _candidate_centers(corners: np.ndarray, rho: float) -> np.ndarray:
    """Candidate disk centers: every corner plus both intersection points of
    each pair of radius-rho circles around corners.  An optimal fixed-radius
    disk can always be translated into such a position."""
    cands = [corners]
    m = corners.shape[0]
    for a in range(m):
        diff = corners[a + 1 :] - corners[a]
        d2 = np.sum(diff * diff, axis=1)
        ok = (d2 > 0) & (d2 <= 4.0 * rho * rho + 1e-12)
        if not ok.any():
            continue
        dd = diff[ok]
        d2ok = d2[ok]
        mid = corners[a] + dd / 2.0
        h = np.sqrt(np.maximum(rho * rho - d2ok / 4.0, 0.0))
        perp = np.stack([-dd[:, 1], dd[:, 0]], axis=1) / np.sqrt(d2ok)[:, None]
        cands.append(mid + perp * h[:, None])
        cands.append(mid - perp * h[:, None])
    return np.concatenate(cands, axis=0)


def minimal_ball_cover(cells: list[tuple[int, int]], delta: float, rho: float) -> int:
    """Exact minimum number of radius-rho balls covering the closed cells."""
    base = np.array(cells, dtype=np.float64) * delta
    offs = np.array([[0.0, 0.0], [delta, 0.0], [0.0, delta], [delta, delta]])
    corners = (base[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    centers = _candidate_centers(np.unique(corners, axis=0), rho)
    # corner coverage per candidate center
    d2 = np.sum((centers[:, None, :] - corners[None, :, :]) ** 2, axis=2)
    cover_corner = d2 <= rho * rho + 1e-12
    ncells = len(cells)
    cell_masks = set()
    covered_cells = cover_corner.reshape(centers.shape[0], ncells, 4).all(axis=2)
    for row in covered_cells:
        mask = 0
        for idx in np.flatnonzero(row):
            mask |= 1 << int(idx)
        if mask:
            cell_masks.add(mask)
    # keep maximal masks only
    masks = sorted(cell_masks, key=lambda m: -bin(m).count("1"))
    maximal = []
    for m in masks:
        if not any(m | big == big for big in maximal):
            maximal.append(m)
    full = (1 << ncells) - 1

    @lru_cache(maxsize=None)
    def solve(remaining: int) -> int:
        if remaining == 0:
            return 0
        low = remaining & -remaining
        best = ncells
        for m in maximal:
            if m & low:
                best = min(best, 1 + solve(remaining & ~m))
        return best

    result = solve(full)
    solve.cache_clear()
    return result
