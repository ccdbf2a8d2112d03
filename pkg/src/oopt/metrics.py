"""Surface-quality metrics.

Both meshes are rescaled into the unit sphere using the ground-truth
transform, sampled with area-weighted surface points, and compared
with symmetric Chamfer distances (CD1/CD2), F-score, absolute-cosine
normal consistency / reconstruction error (extracted faces carry no
orientation), and sharp-region variants (ECD1/EF1).

Every accelerated nearest-neighbor path has a brute-force O(N^2) twin
used as an oracle in the tests; sharp-point detection likewise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .extraction import TriMesh
from .geometry import PointCloud, ScaleRecord, unit_sphere_normalize

REPORT_COLUMNS = ("CD1", "CD2", "F1", "NC", "NR", "ECD1", "EF1")
# Rendering multipliers matching the usual table conventions.
REPORT_SCALES = (1e2, 1e5, 1.0, 1.0, 1.0, 1e2, 1.0)


def _object_points(obj) -> np.ndarray:
    if isinstance(obj, TriMesh):
        return obj.vertices
    if isinstance(obj, PointCloud):
        return obj.points
    return np.asarray(obj, dtype=np.float64).reshape(-1, 3)


def normalize_pair(gt, pred):
    """Rescale both objects into the unit sphere using the ground-truth
    object's transform; returns (gt_copy, pred_copy, scale_record)."""
    record = unit_sphere_normalize(_object_points(gt))[1]

    def remap(obj):
        if isinstance(obj, TriMesh):
            return TriMesh(vertices=record.apply(obj.vertices), faces=obj.faces,
                           confidence=obj.confidence)
        if isinstance(obj, PointCloud):
            return PointCloud(record.apply(obj.points), scale_record=record)
        return record.apply(obj)

    return remap(gt), remap(pred), record


# ---------------------------------------------------------------------------
# Sampling


@dataclass
class SampledSurface:
    """Points on mesh faces with (unoriented) unit face normals."""

    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.points.shape != self.normals.shape:
            raise InvalidInputError("points and normals must align")


def _face_geometry(mesh: TriMesh):
    v = mesh.vertices
    f = mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    cross = np.cross(b - a, c - a)
    norm = np.sqrt((cross * cross).sum(axis=1))
    return a, b, c, cross, norm


def sample_surface(mesh: TriMesh, n: int, seed: int = 0,
                   face_weights=None) -> SampledSurface:
    """Area-weighted face selection + uniform barycentric sampling.

    Zero-area faces are never selected; optional face_weights multiply
    the area weights (used for density-biased test clouds).
    """
    if mesh.n_faces < 1:
        raise InvalidInputError("cannot sample a mesh with no faces")
    if n < 1:
        raise InvalidInputError("sample count must be >= 1")
    a, b, c, cross, norm = _face_geometry(mesh)
    weights = norm / 2.0
    if face_weights is not None:
        face_weights = np.asarray(face_weights, dtype=np.float64)
        if face_weights.shape != (mesh.n_faces,) or (face_weights < 0).any():
            raise InvalidInputError("face_weights must be non-negative, one per face")
        weights = weights * face_weights
    total = weights.sum()
    if total <= 0.0:
        raise InvalidInputError("all faces are degenerate (zero sampling weight)")
    rng = np.random.default_rng(seed)
    fid = rng.choice(mesh.n_faces, size=n, p=weights / total)
    u = rng.uniform(size=n)
    v = rng.uniform(size=n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    pts = a[fid] + u[:, None] * (b[fid] - a[fid]) + v[:, None] * (c[fid] - a[fid])
    normals = cross[fid] / norm[fid][:, None]
    return SampledSurface(points=pts, normals=normals)


def density_biased_sample(mesh: TriMesh, n: int, seed: int = 0, axis: int = 0,
                          strength: float = 4.0) -> SampledSurface:
    """Non-uniform sampling: density ramps by `strength` along an axis.

    Faces at the high end of the axis are `strength` times as likely
    per unit area as faces at the low end.
    """
    if strength <= 0.0:
        raise InvalidInputError("strength must be positive")
    centroids = mesh.vertices[mesh.faces].mean(axis=1)[:, axis]
    lo, hi = centroids.min(), centroids.max()
    t = np.zeros_like(centroids) if hi == lo else (centroids - lo) / (hi - lo)
    return sample_surface(mesh, n, seed=seed, face_weights=1.0 + (strength - 1.0) * t)


# ---------------------------------------------------------------------------
# Nearest neighbors: accelerated + brute oracle


def nearest_neighbor(queries, targets, brute: bool = False):
    """For each query point, distance to and index of the nearest target."""
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(q) == 0 or len(t) == 0:
        raise InvalidInputError("nearest-neighbor inputs must be non-empty")
    if brute:
        dmin = np.full(len(q), np.inf)
        imin = np.zeros(len(q), dtype=np.int64)
        step = max(1, 2**24 // len(t))
        for s in range(0, len(q), step):
            diff = q[s:s + step, None, :] - t[None, :, :]
            d = np.sqrt((diff * diff).sum(axis=2))
            imin[s:s + step] = np.argmin(d, axis=1)
            dmin[s:s + step] = d[np.arange(d.shape[0]), imin[s:s + step]]
        return dmin, imin
    dist, idx = cKDTree(t).query(q, k=1)
    return np.asarray(dist, dtype=np.float64), np.asarray(idx, dtype=np.int64)


def chamfer(a, b, order: int = 1, brute: bool = False) -> float:
    """Symmetric mean nearest-neighbor distance (order 1) or squared
    distance (order 2)."""
    if order not in (1, 2):
        raise InvalidInputError("order must be 1 or 2")
    d_ab, _ = nearest_neighbor(a, b, brute=brute)
    d_ba, _ = nearest_neighbor(b, a, brute=brute)
    if order == 1:
        return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))
    return 0.5 * (float((d_ab ** 2).mean()) + float((d_ba ** 2).mean()))


def f_score(a, b, tau: float = 0.01, brute: bool = False) -> float:
    """Harmonic mean of precision/recall at distance threshold tau."""
    if tau <= 0.0:
        raise InvalidInputError("tau must be positive")
    d_ab, _ = nearest_neighbor(a, b, brute=brute)
    d_ba, _ = nearest_neighbor(b, a, brute=brute)
    precision = float((d_ab <= tau).mean())
    recall = float((d_ba <= tau).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _abs_cosine(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # renormalized so identical vectors give exactly 1.0
    num = np.abs((u * v).sum(axis=1))
    den = np.sqrt((u * u).sum(axis=1) * (v * v).sum(axis=1))
    return (num / den).clip(0.0, 1.0)


def normal_metrics(a: SampledSurface, b: SampledSurface,
                   brute: bool = False) -> tuple[float, float]:
    """(NC, NR degrees) with absolute-cosine comparison of unoriented
    normals at mutual nearest neighbors."""
    _, i_ab = nearest_neighbor(a.points, b.points, brute=brute)
    _, i_ba = nearest_neighbor(b.points, a.points, brute=brute)
    cos_a = _abs_cosine(a.normals, b.normals[i_ab])
    cos_b = _abs_cosine(b.normals, a.normals[i_ba])
    nc = 0.5 * (float(cos_a.mean()) + float(cos_b.mean()))
    nr = 0.5 * (float(np.degrees(np.arccos(cos_a)).mean())
                + float(np.degrees(np.arccos(cos_b)).mean()))
    return nc, nr


def sharp_points(surface: SampledSurface, radius: float = 0.01,
                 angle_deg: float = 30.0, brute: bool = False) -> np.ndarray:
    """Boolean mask of samples with a strongly divergent normal nearby
    (some neighbor within `radius` has |cos angle| < cos(angle_deg))."""
    pts, nrm = surface.points, surface.normals
    thresh = math.cos(math.radians(angle_deg))
    sharp = np.zeros(len(pts), dtype=bool)
    if brute:
        for i in range(len(pts)):
            d = np.sqrt(((pts - pts[i]) ** 2).sum(axis=1))
            near = (d <= radius) & (np.arange(len(pts)) != i)
            if near.any():
                c = np.abs(nrm[near] @ nrm[i])
                if (c < thresh).any():
                    sharp[i] = True
        return sharp
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    if len(pairs):
        c = np.abs((nrm[pairs[:, 0]] * nrm[pairs[:, 1]]).sum(axis=1))
        hit = pairs[c < thresh]
        sharp[hit[:, 0]] = True
        sharp[hit[:, 1]] = True
    return sharp


def edge_metrics(a: SampledSurface, b: SampledSurface, radius: float = 0.01,
                 angle_deg: float = 30.0, tau: float = 0.005,
                 brute: bool = False) -> tuple[float, float]:
    """(ECD1, EF1) between the sharp subsets.

    Empty-set conventions: both empty -> (0, 1); exactly one empty ->
    (+inf, 0).
    """
    sa = a.points[sharp_points(a, radius=radius, angle_deg=angle_deg, brute=brute)]
    sb = b.points[sharp_points(b, radius=radius, angle_deg=angle_deg, brute=brute)]
    if len(sa) == 0 and len(sb) == 0:
        return 0.0, 1.0
    if len(sa) == 0 or len(sb) == 0:
        return float("inf"), 0.0
    return (chamfer(sa, sb, order=1, brute=brute),
            f_score(sa, sb, tau=tau, brute=brute))


# ---------------------------------------------------------------------------
# Report


@dataclass
class MetricsReport:
    """Raw metric values in unit-sphere-normalized units (NR in
    degrees).  Rendering applies the conventional multipliers CD1 x100,
    CD2 x1e5, ECD1 x100."""

    cd1: float
    cd2: float
    f1: float
    nc: float
    nr: float
    ecd1: float
    ef1: float

    def scaled_values(self) -> tuple[float, ...]:
        raw = (self.cd1, self.cd2, self.f1, self.nc, self.nr, self.ecd1, self.ef1)
        return tuple(v * s for v, s in zip(raw, REPORT_SCALES))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(REPORT_COLUMNS)
            w.writerow([f"{v:.6f}" for v in self.scaled_values()])

    def to_table(self) -> str:
        cells = [f"{v:.4f}" for v in self.scaled_values()]
        width = max(len(s) for s in cells + list(REPORT_COLUMNS)) + 2
        head = "".join(c.rjust(width) for c in REPORT_COLUMNS)
        body = "".join(c.rjust(width) for c in cells)
        return head + "\n" + body


def compare(gt, pred, n_samples: int = 100000, seed: int = 0,
            fscore_tau: float = 0.01, sharp_radius: float = 0.01,
            sharp_angle: float = 30.0, ef1_tau: float = 0.005) -> MetricsReport:
    """Full report for a reconstructed mesh against ground truth.

    Both inputs are normalized by the ground-truth transform before
    sampling; `pred` may be a TriMesh or (for CD/F1 only, with normals
    unavailable) raise if not a mesh.
    """
    if not isinstance(gt, TriMesh) or not isinstance(pred, TriMesh):
        raise InvalidInputError("compare expects two triangle meshes")
    gt_n, pred_n, _ = normalize_pair(gt, pred)
    s_gt = sample_surface(gt_n, n_samples, seed=seed)
    s_pred = sample_surface(pred_n, n_samples, seed=seed + 1)
    cd1 = chamfer(s_gt.points, s_pred.points, order=1)
    cd2 = chamfer(s_gt.points, s_pred.points, order=2)
    f1 = f_score(s_pred.points, s_gt.points, tau=fscore_tau)
    nc, nr = normal_metrics(s_gt, s_pred)
    ecd1, ef1 = edge_metrics(s_gt, s_pred, radius=sharp_radius,
                             angle_deg=sharp_angle, tau=ef1_tau)
    return MetricsReport(cd1=cd1, cd2=cd2, f1=f1, nc=nc, nr=nr,
                         ecd1=ecd1, ef1=ef1)
