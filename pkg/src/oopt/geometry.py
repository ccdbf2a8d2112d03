"""Spatial preprocessing: exact KNN, voxel thinning, neighborhood
normalization, and positional encoding.

All functions are pure; geometry is done in float64 regardless of the
input dtype.  The uniform-grid KNN is exact (expanding Chebyshev shells
with a stopping bound), with a brute-force path kept as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateNeighborhoodError,
    InputTooSmallError,
    InvalidInputError,
)

ETA0 = 0.01          # target length of the nearest displacement
ENCODING_LEVELS = 8  # sin/cos frequency levels
FEATURE_DIM = 3 + 3 * 2 * ENCODING_LEVELS  # 51


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"expected an (N, 3) array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise InvalidInputError("coordinates must be finite")
    return pts


@dataclass
class ScaleRecord:
    """Similarity transform mapping original units to the unit sphere."""

    center: np.ndarray  # (3,)
    radius: float

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) / self.radius

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.radius + self.center


@dataclass
class PointCloud:
    """N points in arbitrary length units, plus the normalization used."""

    points: np.ndarray
    scale_record: ScaleRecord | None = None

    def __post_init__(self):
        self.points = _as_points(self.points)

    def __len__(self):
        return self.points.shape[0]


@dataclass
class Neighborhood:
    """Frozen KNN table: indices, sorted distances, and per-point d0."""

    indices: np.ndarray    # (N, K) int64
    distances: np.ndarray  # (N, K) float64, non-decreasing per row
    d0: np.ndarray = field(default=None)  # (N,) smallest non-zero distance

    def __post_init__(self):
        if self.d0 is None:
            self.d0 = first_nonzero_distance(self.distances)

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def first_nonzero_distance(distances: np.ndarray) -> np.ndarray:
    """Per row, the smallest strictly positive entry (rows are sorted)."""
    pos = distances > 0.0
    if not pos.any(axis=1).all():
        raise DegenerateNeighborhoodError("a point has no non-zero neighbor distance")
    first = np.argmax(pos, axis=1)
    return np.take_along_axis(distances, first[:, None], axis=1)[:, 0]


def unit_sphere_normalize(points) -> tuple[np.ndarray, ScaleRecord]:
    """Translate the bbox center to the origin, scale max radius to 1."""
    pts = _as_points(points)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = (lo + hi) / 2.0
    centered = pts - center
    radius = float(np.sqrt((centered * centered).sum(axis=1)).max())
    if radius <= 0.0:
        raise InvalidInputError("all points coincide; cannot normalize")
    return centered / radius, ScaleRecord(center=center, radius=radius)


def dedup_points(points) -> tuple[np.ndarray, np.ndarray]:
    """Drop exact duplicate coordinates, keeping first occurrences.

    Returns (unique points, indices of the kept rows in input order).
    """
    pts = _as_points(points)
    _, first = np.unique(pts, axis=0, return_index=True)
    keep = np.sort(first)
    return pts[keep], keep


# ---------------------------------------------------------------------------
# Exact nearest neighbors


class UniformGrid:
    """Bucket points into cubic cells for exact KNN queries.

    Queries expand outward one Chebyshev shell of cells at a time and
    stop once the k-th best distance is strictly inside the scanned
    block, which guarantees exactness.  Ties are broken by ascending
    point index.
    """

    def __init__(self, points: np.ndarray, cell_size: float):
        if cell_size <= 0.0 or not np.isfinite(cell_size):
            raise InvalidInputError(f"cell size must be positive, got {cell_size}")
        self.points = points
        self.cell = float(cell_size)
        self.origin = points.min(axis=0)
        coords = np.floor((points - self.origin) / self.cell).astype(np.int64)
        self.dims = coords.max(axis=0) + 1
        if float(self.dims[0]) * float(self.dims[1]) * float(self.dims[2]) > 2.0**62:
            raise InvalidInputError("cell size too small for the data extent")
        self.coords = coords
        key = (coords[:, 0] * self.dims[1] + coords[:, 1]) * self.dims[2] + coords[:, 2]
        self.order = np.argsort(key, kind="stable")
        sorted_keys = key[self.order]
        self.cell_keys, starts = np.unique(sorted_keys, return_index=True)
        self.cell_starts = starts
        self.cell_ends = np.append(starts[1:], points.shape[0])
        self._shells: dict[int, np.ndarray] = {}

    def _shell_offsets(self, s: int) -> np.ndarray:
        cached = self._shells.get(s)
        if cached is not None:
            return cached
        rng = np.arange(-s, s + 1)
        grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
        if s > 0:
            grid = grid[np.abs(grid).max(axis=1) == s]
        self._shells[s] = grid
        return grid

    def _cells_points(self, cells: np.ndarray) -> np.ndarray:
        """Point indices stored in the given integer cells (may be empty)."""
        inside = (cells >= 0).all(axis=1) & (cells < self.dims).all(axis=1)
        cells = cells[inside]
        if cells.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        keys = (cells[:, 0] * self.dims[1] + cells[:, 1]) * self.dims[2] + cells[:, 2]
        pos = np.searchsorted(self.cell_keys, keys)
        pos_ok = pos < self.cell_keys.shape[0]
        pos = pos[pos_ok]
        hit = self.cell_keys[pos] == keys[pos_ok]
        pos = pos[hit]
        if pos.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        parts = [self.order[self.cell_starts[p]:self.cell_ends[p]] for p in pos]
        return np.concatenate(parts)

    def query(self, point: np.ndarray, k: int, exclude: int | None = None):
        """Exact k nearest neighbors of one query point."""
        cell = np.floor((point - self.origin) / self.cell).astype(np.int64)
        max_shell = int(np.maximum(cell + 1, self.dims - cell).max()) + 1
        cand = np.empty(0, dtype=np.int64)
        for s in range(max_shell + 1):
            found = self._cells_points(cell[None, :] + self._shell_offsets(s))
            if exclude is not None:
                found = found[found != exclude]
            if found.shape[0]:
                cand = np.concatenate([cand, found]) if cand.shape[0] else found
            if cand.shape[0] >= k:
                diff = self.points[cand] - point
                dist = np.sqrt((diff * diff).sum(axis=1))
                kth = np.partition(dist, k - 1)[k - 1]
                lo = self.origin + (cell - s) * self.cell
                hi = self.origin + (cell + s + 1) * self.cell
                margin = min((point - lo).min(), (hi - point).min())
                if kth < margin or s >= max_shell:
                    sel = np.lexsort((cand, dist))[:k]
                    return cand[sel], dist[sel]
        diff = self.points[cand] - point
        dist = np.sqrt((diff * diff).sum(axis=1))
        sel = np.lexsort((cand, dist))[:k]
        return cand[sel], dist[sel]


def _brute_knn(pts: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = pts.shape[0]
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=np.float64)
    chunk = max(1, int(2**24 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = pts[start:stop, None, :] - pts[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        rows = np.arange(start, stop)
        d[rows - start, rows] = np.inf
        # Stable sort on distance keeps ties in ascending index order.
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        indices[start:stop] = order
        distances[start:stop] = np.take_along_axis(d, order, axis=1)
    return indices, distances


def _estimate_cell_size(pts: np.ndarray) -> float:
    n = pts.shape[0]
    m = min(256, n)
    sample = pts[np.linspace(0, n - 1, m).astype(np.int64)]
    diff = sample[:, None, :] - pts[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=2))
    d[d == 0.0] = np.inf
    kth = min(8, n - 1) - 1
    near = np.partition(d, kth, axis=1)[:, kth]
    cell = float(np.median(near))
    if not np.isfinite(cell) or cell <= 0.0:
        span = float((pts.max(axis=0) - pts.min(axis=0)).max())
        cell = span / max(round(n ** (1.0 / 3.0)), 1) if span > 0 else 1.0
    return cell


def knn_search(cloud, k: int, method: str = "grid") -> Neighborhood:
    """Exact K nearest neighbors for every point, self excluded.

    Rows are sorted by (distance, index).  ``method`` selects the
    grid-accelerated path or the brute-force scan used as its oracle.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else _as_points(cloud)
    n = pts.shape[0]
    if k < 3:
        raise InvalidInputError(f"K must be at least 3, got {k}")
    if n <= k:
        raise InputTooSmallError(f"need more than K={k} points, got {n}")
    if method == "brute":
        indices, distances = _brute_knn(pts, k)
    elif method == "grid":
        grid = UniformGrid(pts, _estimate_cell_size(pts))
        indices = np.empty((n, k), dtype=np.int64)
        distances = np.empty((n, k), dtype=np.float64)
        for i in range(n):
            indices[i], distances[i] = grid.query(pts[i], k, exclude=i)
    else:
        raise InvalidInputError(f"unknown KNN method {method!r}")
    return Neighborhood(indices=indices, distances=distances)


# ---------------------------------------------------------------------------
# Voxel thinning


def voxel_subsample(cloud, voxel: float):
    """One survivor per occupied voxel: the point nearest the centroid.

    Ties go to the lowest input index.  Cell membership and the
    centroid test are evaluated in cell-relative units (p/v), so
    scaling points and voxel size together selects identical indices.
    Returns (PointCloud or array like the input, kept indices).
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else _as_points(cloud)
    if not np.isfinite(voxel) or voxel <= 0.0:
        raise InvalidInputError(f"voxel size must be positive, got {voxel}")
    t = pts / voxel
    cells = np.floor(t)
    rel = t - cells - 0.5
    dist2 = (rel * rel).sum(axis=1)
    _, inverse = np.unique(cells.astype(np.int64), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.lexsort((np.arange(pts.shape[0]), dist2, inverse))
    grouped = inverse[order]
    firsts = np.flatnonzero(np.diff(grouped, prepend=-1))
    keep = np.sort(order[firsts])
    if isinstance(cloud, PointCloud):
        return PointCloud(pts[keep], scale_record=cloud.scale_record), keep
    return pts[keep], keep


def estimate_voxel_size(points, max_sample: int = 1024) -> float:
    """Auto voxel size: the largest nearest-neighbor distance, taken
    over a deterministic subsample of query points against the full
    cloud."""
    pts = points.points if isinstance(points, PointCloud) else _as_points(points)
    n = pts.shape[0]
    if n < 2:
        raise InputTooSmallError("need at least 2 points to estimate a voxel size")
    m = min(max_sample, n)
    sample = pts[np.linspace(0, n - 1, m).astype(np.int64)]
    best = np.full(m, np.inf)
    chunk = max(1, int(2**24 // max(n, 1)))
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        diff = sample[start:stop, None, :] - pts[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        d2[d2 == 0.0] = np.inf
        best[start:stop] = d2.min(axis=1)
    d0 = np.sqrt(best)
    v = float(d0[np.isfinite(d0)].max())
    if not np.isfinite(v) or v <= 0.0:
        raise InvalidInputError("could not estimate a voxel size (duplicate cloud?)")
    return v


# ---------------------------------------------------------------------------
# Neighborhood normalization and encoding


def normalize_neighborhood(p_index: int, nbhd: Neighborhood, points,
                           offsets=None, eta0: float = ETA0) -> np.ndarray:
    """Displace, recentre, and rescale one KNN neighborhood.

    The K displacement vectors (from the displaced center to its
    displaced neighbors) are scaled so the first non-zero one has
    length ``eta0``.  Raises if every displacement is zero.
    """
    pts = points.points if isinstance(points, PointCloud) else _as_points(points)
    if offsets is None:
        displaced = pts
    else:
        displaced = pts + np.asarray(offsets, dtype=np.float64)
    idx = nbhd.indices[p_index]
    u = displaced[idx] - displaced[p_index]
    norms = np.sqrt((u * u).sum(axis=1))
    nz = np.flatnonzero(norms > 0.0)
    if nz.size == 0:
        raise DegenerateNeighborhoodError(
            f"point {p_index}: all {len(idx)} displacements are zero")
    # Divide first: u/den cancels uniform scaling exactly, eta0 after.
    return (u / norms[nz[0]]) * eta0


def normalize_rows(points, center_ids, neighbor_ids, offsets=None,
                   eta0: float = ETA0):
    """Eq.-1 normalization for explicit (center, neighbor-row) pairs.

    Returns (coords (M, K, 3), valid (M,) bool).  Rows whose
    displacements are all zero come back zeroed with valid=False
    instead of raising, so callers can mask them out of a loss.
    """
    pts = points.points if isinstance(points, PointCloud) else _as_points(points)
    displaced = pts if offsets is None else pts + np.asarray(offsets, dtype=np.float64)
    neighbor_ids = np.asarray(neighbor_ids, dtype=np.int64)
    u = displaced[neighbor_ids] - displaced[center_ids][:, None, :]
    norms = np.sqrt((u * u).sum(axis=2))
    nonzero = norms > 0.0
    valid = nonzero.any(axis=1)
    first = np.argmax(nonzero, axis=1)
    den = np.take_along_axis(norms, first[:, None], axis=1)
    den[~valid] = 1.0
    coords = (u / den[:, :, None]) * eta0
    coords[~valid] = 0.0
    return coords, valid


def normalized_neighborhoods(points, nbhd: Neighborhood, offsets=None,
                             rows=None, eta0: float = ETA0):
    """Batch version of :func:`normalize_neighborhood` over a KNN table."""
    if rows is None:
        n = nbhd.indices.shape[0]
        return normalize_rows(points, np.arange(n), nbhd.indices,
                              offsets=offsets, eta0=eta0)
    rows = np.asarray(rows, dtype=np.int64)
    return normalize_rows(points, rows, nbhd.indices[rows],
                          offsets=offsets, eta0=eta0)


def positional_encode(coords, levels: int = ENCODING_LEVELS) -> np.ndarray:
    """Sin/cos frequency features, frequencies 2^l * pi for l < levels.

    Channel order: the raw coordinates first, then per level the
    interleaved pairs (sin x, cos x, sin y, cos y, sin z, cos z).
    """
    c = np.asarray(coords)
    if not np.isfinite(c).all():
        raise InvalidInputError("coordinates must be finite")
    parts = [c]
    for level in range(levels):
        angle = c * (np.pi * (2.0 ** level))
        s, co = np.sin(angle), np.cos(angle)
        inter = np.empty(c.shape[:-1] + (6,), dtype=c.dtype)
        inter[..., 0::2] = s
        inter[..., 1::2] = co
        parts.append(inter)
    return np.concatenate(parts, axis=-1)


def neighborhood_features(points, nbhd: Neighborhood, offsets=None, rows=None,
                          eta0: float = ETA0, levels: int = ENCODING_LEVELS,
                          dtype=np.float32):
    """Normalized + encoded features for a batch of neighborhoods.

    Returns (features (M, K, 51) in ``dtype``, valid (M,) bool).
    """
    coords, valid = normalized_neighborhoods(points, nbhd, offsets=offsets,
                                             rows=rows, eta0=eta0)
    return positional_encode(coords, levels=levels).astype(dtype), valid
