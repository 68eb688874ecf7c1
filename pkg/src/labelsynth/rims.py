"""Rim detection: from a photo of an upright bottle to a fitted label region.

The label's top and bottom rims show up as long, roughly horizontal edges of
opposite vertical-gradient polarity. The image is cut into square blocks,
blocks that contain enough strong vertical-gradient pixels are labelled by
their majority sign, same-sign blocks are chained (tolerating short gaps),
and the longest positive and negative chains are thinned to one sub-pixel
point per column before an ellipse is fitted to each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import Ellipse, fit_ellipse
from .errors import DegenerateFit, ImageTooSmall, NoRimFound
from .imaging import to_gray
from .region import LabelRegion


@dataclass(frozen=True)
class RimDetectParams:
    """Detection thresholds.

    ``block_size`` of ``None`` means ``max(4, width // 80)``.
    """

    min_gradient: float = 80.0
    block_size: int | None = None
    min_edge_fraction: float = 0.6
    max_chain_gap: int = 2
    min_chain_blocks: int = 8
    max_mean_residual: float = 1.5

    def __post_init__(self):
        if self.min_gradient <= 0:
            raise ValueError("min_gradient must be positive")
        if not 0 < self.min_edge_fraction <= 1:
            raise ValueError("min_edge_fraction must be in (0, 1]")
        if self.block_size is not None and self.block_size < 2:
            raise ValueError("block_size must be at least 2")
        if self.max_chain_gap < 0:
            raise ValueError("max_chain_gap must be non-negative")

    def block_for(self, width: int) -> int:
        return self.block_size if self.block_size is not None else max(4, width // 80)


@dataclass(frozen=True)
class EdgeMap:
    gradient: np.ndarray  # signed vertical gradient, gray levels per 2 px
    mask: np.ndarray

    @property
    def sign(self) -> np.ndarray:
        return np.where(self.mask, np.sign(self.gradient), 0).astype(np.int8)


@dataclass(frozen=True)
class EdgeBlockGrid:
    block_size: int
    counts: np.ndarray  # edge pixels per block
    sign: np.ndarray  # +1 / -1 for edge blocks, 0 otherwise
    chain_id: np.ndarray  # component index per edge block, -1 otherwise


@dataclass(frozen=True)
class RimChain:
    points: np.ndarray  # (N, 2) sub-pixel (x, y), x strictly increasing
    polarity: int
    extent_blocks: int
    blocks: np.ndarray  # (M, 2) block (row, col) members

    @property
    def mean_y(self) -> float:
        return float(self.points[:, 1].mean())


def vertical_edge_map(image, params: RimDetectParams | None = None) -> EdgeMap:
    """Pixels whose vertical central difference reaches ``min_gradient``.

    The gradient is ``I[y+1] - I[y-1]`` (one-sided differences, doubled, on
    the first and last rows), so a step of height s yields s on both rows
    adjacent to the step.
    """
    params = params or RimDetectParams()
    gray = to_gray(image)
    if gray.ndim != 2 or gray.shape[0] < 2 or gray.shape[1] < 1:
        raise ImageTooSmall(f"need at least 2 rows, got shape {gray.shape}")
    g = 2.0 * np.gradient(gray, axis=0)
    return EdgeMap(g, np.abs(g) >= params.min_gradient)


def edge_blocks(edges: EdgeMap, params: RimDetectParams) -> EdgeBlockGrid:
    """Count edge pixels per block and label blocks by majority sign."""
    h, w = edges.mask.shape
    bs = params.block_for(w)
    rows, cols = -(-h // bs), -(-w // bs)
    pos = np.zeros((rows * bs, cols * bs), dtype=np.int32)
    neg = np.zeros_like(pos)
    pos[:h, :w] = edges.mask & (edges.gradient > 0)
    neg[:h, :w] = edges.mask & (edges.gradient < 0)
    pos = pos.reshape(rows, bs, cols, bs).sum(axis=(1, 3))
    neg = neg.reshape(rows, bs, cols, bs).sum(axis=(1, 3))
    counts = pos + neg
    is_edge = counts >= params.min_edge_fraction * bs
    sign = np.where(is_edge, np.where(pos >= neg, 1, -1), 0).astype(np.int8)
    chain_id = _link_blocks(sign, params.max_chain_gap)
    return EdgeBlockGrid(bs, counts, sign, chain_id)


def _link_blocks(sign: np.ndarray, max_gap: int) -> np.ndarray:
    """Connected components of same-sign blocks.

    Two blocks link when they are vertical neighbours, or when they are
    ``dc`` columns apart (``1 <= dc <= max_gap + 1``) with a row offset of at
    most ``dc``; the latter bridges up to ``max_gap`` empty columns.
    """
    rows, cols = sign.shape
    idx = -np.ones(sign.shape, dtype=np.int64)
    members = np.argwhere(sign != 0)
    idx[members[:, 0], members[:, 1]] = np.arange(len(members))
    parent = np.arange(len(members))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    offsets = [(1, 0)] + [
        (dr, dc) for dc in range(1, max_gap + 2) for dr in range(-dc, dc + 1)
    ]
    for dr, dc in offsets:
        r0, r1 = max(0, -dr), min(rows, rows - dr)
        c1 = cols - dc
        if r1 <= r0 or c1 <= 0:
            continue
        a = sign[r0:r1, :c1]
        b = sign[r0 + dr : r1 + dr, dc:]
        rr, cc = np.nonzero((a != 0) & (a == b))
        for r, c in zip(rr + r0, cc):
            i, j = find(idx[r, c]), find(idx[r + dr, c + dc])
            if i != j:
                parent[max(i, j)] = min(i, j)
    roots = np.array([find(i) for i in range(len(members))], dtype=np.int64)
    _, comp = np.unique(roots, return_inverse=True)
    out = -np.ones(sign.shape, dtype=np.int64)
    out[members[:, 0], members[:, 1]] = comp
    return out


def _longest_chain(grid: EdgeBlockGrid, polarity: int):
    best, best_extent = None, 0
    for cid in np.unique(grid.chain_id[grid.sign == polarity]):
        blocks = np.argwhere(grid.chain_id == cid)
        extent = int(blocks[:, 1].max() - blocks[:, 1].min() + 1)
        if extent > best_extent:
            best, best_extent = blocks, extent
    return best, best_extent


def _thin_chain(edges: EdgeMap, blocks: np.ndarray, polarity: int, bs: int, min_gradient: float):
    """One sub-pixel rim point per column by vertical non-maximum suppression
    over the chain's block rows (plus one block of slack above and below)."""
    h, w = edges.gradient.shape
    g = polarity * edges.gradient
    pts = []
    for col in np.unique(blocks[:, 1]):
        brows = blocks[blocks[:, 1] == col, 0]
        y0 = max(0, (brows.min() - 1) * bs)
        y1 = min(h, (brows.max() + 2) * bs)
        x0, x1 = col * bs, min(w, (col + 1) * bs)
        strip = g[y0:y1, x0:x1]
        if strip.size == 0:
            continue
        ymax = np.argmax(strip, axis=0)
        for j, yi in enumerate(ymax):
            peak = strip[yi, j]
            if peak < min_gradient:
                continue
            y = y0 + yi
            x = x0 + j
            dy = 0.0
            if 0 < y < h - 1:
                gm, gp = g[y - 1, x], g[y + 1, x]
                den = gm - 2 * peak + gp
                if den < 0:
                    dy = float(np.clip(0.5 * (gm - gp) / den, -0.5, 0.5))
            pts.append((float(x), y + dy))
    pts = np.array(pts, dtype=float).reshape(-1, 2)
    return pts[np.argsort(pts[:, 0], kind="stable")]


def extract_rim_chains(edges: EdgeMap, params: RimDetectParams | None = None, *, grid=None):
    """Longest positive and negative chains, returned as ``(upper, lower)``
    ordered by mean image row."""
    params = params or RimDetectParams()
    if grid is None:
        grid = edge_blocks(edges, params)
    chains = []
    for polarity in (1, -1):
        blocks, extent = _longest_chain(grid, polarity)
        if blocks is None or extent < params.min_chain_blocks:
            name = "positive" if polarity > 0 else "negative"
            raise NoRimFound(f"no rim found: longest {name} chain spans {extent} blocks")
        pts = _thin_chain(edges, blocks, polarity, grid.block_size, params.min_gradient)
        if len(pts) < 6:
            raise NoRimFound("no rim found: chain has too few edge pixels")
        chains.append(RimChain(pts, polarity, extent, blocks))
    chains.sort(key=lambda c: c.mean_y)
    return chains[0], chains[1]


def local_outliers(points, window: int = 5, tol: float = 2.0) -> np.ndarray:
    """Points whose y strays more than ``tol`` px from the median y of the
    chain points within ``window`` columns on either side."""
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    lo = np.searchsorted(x, x - window, side="left")
    hi = np.searchsorted(x, x + window, side="right")
    med = np.array([np.median(y[i:j]) for i, j in zip(lo, hi)])
    return np.abs(y - med) > tol


def fit_rim(points, max_mean_residual: float = 1.5, refine_iterations: int = 50) -> tuple[Ellipse, np.ndarray]:
    """Fit an ellipse to a rim chain after dropping local outliers.

    Outliers are judged against neighbouring chain points rather than a
    first global fit: rims seen nearly edge-on give shallow arcs whose
    ellipse is poorly conditioned, and trimming against such a fit would
    eat the arc ends that pin the ellipse down.

    Returns the ellipse and a boolean mask of the points kept.
    """
    pts = np.asarray(points, dtype=float)
    keep = ~local_outliers(pts)
    if keep.sum() < 6:
        keep[:] = True
    e = fit_ellipse(pts[keep], refine_iterations=refine_iterations)
    res = e.distance(pts[keep])
    if res.mean() > max_mean_residual:
        raise DegenerateFit(f"rim fit residual {res.mean():.2f} px exceeds {max_mean_residual} px")
    return e, keep


def detect_label_region(image, params: RimDetectParams | None = None, *, debug: dict | None = None) -> LabelRegion:
    """Detect both rims and assemble the label region.

    When ``debug`` is a dict it receives the intermediate stages (gray image,
    gradient, edge mask, block grid, chains, thinned points, fitted region).
    """
    params = params or RimDetectParams()
    edges = vertical_edge_map(image, params)
    grid = edge_blocks(edges, params)
    if debug is not None:
        debug.update(gray=to_gray(image), edges=edges, grid=grid)
    upper, lower = extract_rim_chains(edges, params, grid=grid)
    if debug is not None:
        debug.update(upper_chain=upper, lower_chain=lower)
    e_up, keep_up = fit_rim(upper.points, params.max_mean_residual)
    e_lo, keep_lo = fit_rim(lower.points, params.max_mean_residual)
    ref_up = upper.points[len(upper.points) // 2]
    ref_lo = lower.points[len(lower.points) // 2]
    region = LabelRegion.from_ellipses(
        e_up, e_lo, ref_up, ref_lo,
        upper_points=upper.points[keep_up], lower_points=lower.points[keep_lo],
    )
    if debug is not None:
        debug["region"] = region
    return region
