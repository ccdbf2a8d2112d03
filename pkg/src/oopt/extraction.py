"""Turn per-point triangle probabilities into a deduplicated mesh.

Per candidate row (p, q_i) the two highest-probability partner columns
are considered: the best needs probability >= p1, the runner-up
additionally needs probability >= p2 and a dihedral angle above A with
the best (so the two faces fold outward, not on top of each other).
Faces are stored as ascending-sorted vertex triples, deduplicated, and
listed lexicographically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTriangleError, InvalidInputError

DEFAULT_THRESHOLDS = (0.8, 0.5, 120.0)  # (p1, p2, A degrees)


@dataclass
class TriMesh:
    """Vertices, canonical face triples, optional per-face confidence."""

    vertices: np.ndarray
    faces: np.ndarray
    confidence: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise InvalidInputError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise InvalidInputError("face indices out of range")
            tri = np.sort(self.faces, axis=1)
            if (np.diff(tri, axis=1) == 0).any():
                raise InvalidInputError("face with repeated vertex")
            if np.unique(tri, axis=0).shape[0] != tri.shape[0]:
                raise InvalidInputError("duplicate faces")
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
            if self.confidence.shape[0] != self.faces.shape[0]:
                raise InvalidInputError("confidence length != face count")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]


@dataclass
class EdgeStats:
    """Faces-per-edge histogram and the manifold percentage."""

    histogram: dict[int, int]
    manifold_percent: float
    total_edges: int = field(default=0)

    def __post_init__(self):
        if not self.total_edges:
            self.total_edges = sum(self.histogram.values())


def mesh_edges(faces: np.ndarray) -> np.ndarray:
    """All undirected edges, one row per face slot (3F rows, sorted pairs)."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]], axis=0)
    return np.sort(e, axis=1)


def edge_adjacency_stats(mesh_or_faces) -> EdgeStats:
    """Count faces per undirected edge.

    manifold_percent is the share of edges with adjacency <= 2, in
    percent; an empty mesh counts as 100 (nothing violates it).
    """
    faces = mesh_or_faces.faces if isinstance(mesh_or_faces, TriMesh) else mesh_or_faces
    e = mesh_edges(faces)
    if e.shape[0] == 0:
        return EdgeStats(histogram={}, manifold_percent=100.0, total_edges=0)
    _, counts = np.unique(e, axis=0, return_counts=True)
    hist_vals, hist_counts = np.unique(counts, return_counts=True)
    histogram = {int(a): int(n) for a, n in zip(hist_vals, hist_counts)}
    total = counts.shape[0]
    manifold = int((counts <= 2).sum())
    return EdgeStats(histogram=histogram,
                     manifold_percent=100.0 * manifold / total,
                     total_edges=total)


def canonicalize_dedup(faces, probs=None):
    """Sorted-triple canonical form, duplicates merged, output ordered
    lexicographically.

    Faces with a repeated vertex are dropped and counted rather than
    raised.  Returns (faces, confidence or None, dropped_count); the
    confidence of a surviving face is the mean probability over all of
    its occurrences.
    """
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if probs is not None:
        probs = np.asarray(probs, dtype=np.float64).reshape(-1)
        if probs.shape[0] != faces.shape[0]:
            raise InvalidInputError("probs length != face count")
    if faces.shape[0] == 0:
        return faces.reshape(0, 3), (np.zeros(0) if probs is not None else None), 0
    tri = np.sort(faces, axis=1)
    ok = (tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2])
    dropped = int((~ok).sum())
    tri = tri[ok]
    if probs is not None:
        probs = probs[ok]
    if tri.shape[0] == 0:
        return tri.reshape(0, 3), (np.zeros(0) if probs is not None else None), dropped
    uniq, inverse = np.unique(tri, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    conf = None
    if probs is not None:
        sums = np.bincount(inverse, weights=probs, minlength=uniq.shape[0])
        counts = np.bincount(inverse, minlength=uniq.shape[0])
        conf = sums / counts
    return uniq, conf, dropped


def _pair_normal_cos(points, p_idx, qi_idx, qj_idx, ql_idx):
    """Cosine between the two face normals sharing edge (p, q_i).

    Returns (cos, valid); valid is False where either triangle is
    degenerate (zero area).
    """
    p = points[p_idx]
    e = points[qi_idx] - p
    nj = np.cross(e, points[qj_idx] - p)
    nl = np.cross(e, points[ql_idx] - p)
    nj_norm = np.sqrt((nj * nj).sum(axis=-1))
    nl_norm = np.sqrt((nl * nl).sum(axis=-1))
    valid = (nj_norm > 0.0) & (nl_norm > 0.0)
    den = np.where(valid, nj_norm * nl_norm, 1.0)
    cos = (nj * nl).sum(axis=-1) / den
    return np.clip(cos, -1.0, 1.0), valid


def dihedral_angle(p, q_i, q_j, q_l) -> float:
    """Angle in degrees between triangles (p,q_i,q_j) and (p,q_i,q_l).

    Coplanar triangles on opposite sides of the shared edge give 180.
    Raises on zero-area triangles.
    """
    pts = np.asarray([p, q_i, q_j, q_l], dtype=np.float64)
    cos, valid = _pair_normal_cos(pts, 0, 1, 2, 3)
    if not valid:
        raise DegenerateTriangleError("zero-area triangle has no normal")
    return float(np.degrees(np.arccos(cos)))


def rule_candidates(probs, nbhd_indices, points, thresholds=DEFAULT_THRESHOLDS,
                    centers=None, strict_pairs: bool = False):
    """Per-row accepted faces before deduplication.

    Returns (triples (T, 3) of global vertex ids, probabilities (T,)).
    Chunked callers concatenate candidates from all chunks and dedup
    once, so duplicate confidences average over every occurrence.
    """
    probs = np.asarray(probs)
    if probs.ndim != 3 or probs.shape[1] != probs.shape[2]:
        raise InvalidInputError(f"probs must be (M, K, K), got {probs.shape}")
    m, k = probs.shape[0], probs.shape[1]
    points = np.asarray(points, dtype=np.float64)
    nbhd_indices = np.asarray(nbhd_indices, dtype=np.int64)
    centers = np.arange(m, dtype=np.int64) if centers is None else np.asarray(centers, dtype=np.int64)
    p1, p2, angle_min = thresholds

    masked = probs.copy()
    idx = np.arange(k)
    masked[:, idx, idx] = -1.0
    # Stable descending sort: ties resolved toward the lower column.
    order = np.argsort(-masked, axis=2, kind="stable")[:, :, :2]
    j1, j2 = order[:, :, 0], order[:, :, 1]
    rows = np.arange(k)[None, :].repeat(m, axis=0)
    batch = np.arange(m)[:, None].repeat(k, axis=1)
    best = masked[batch, rows, j1]
    second = masked[batch, rows, j2]

    first_ok = best >= p1
    second_cand = first_ok & (second >= p2)
    angle_ok = np.zeros((m, k), dtype=bool)
    if second_cand.any():
        bm, rm = batch[second_cand], rows[second_cand]
        c = centers[bm]
        qi = nbhd_indices[c, rm]
        qj = nbhd_indices[c, j1[second_cand]]
        ql = nbhd_indices[c, j2[second_cand]]
        cos, valid = _pair_normal_cos(points, c, qi, qj, ql)
        deg = np.degrees(np.arccos(cos))
        angle_ok[second_cand] = valid & (deg > angle_min)
    second_ok = second_cand & angle_ok
    if strict_pairs:
        first_ok = second_ok.copy()

    def collect(sel, j):
        bm, rm = batch[sel], rows[sel]
        c = centers[bm]
        tri = np.stack([c, nbhd_indices[c, rm], nbhd_indices[c, j[sel]]], axis=1)
        return tri, masked[bm, rm, j[sel]]

    tris, ps = [], []
    if first_ok.any():
        t, pr = collect(first_ok, j1)
        tris.append(t)
        ps.append(pr)
    if second_ok.any():
        t, pr = collect(second_ok, j2)
        tris.append(t)
        ps.append(pr)
    if tris:
        return np.concatenate(tris, axis=0), np.concatenate(ps, axis=0)
    return np.zeros((0, 3), dtype=np.int64), np.zeros(0)


def extract_faces(probs, nbhd_indices, points, thresholds=DEFAULT_THRESHOLDS,
                  centers=None, strict_pairs: bool = False) -> TriMesh:
    """Apply the top-2 extraction rule to a batch of probability grids.

    probs: (M, K, K) sigmoid probabilities of symmetrized logits (rows
    of points ``centers``, defaulting to 0..M-1).  nbhd_indices is the
    full (N, K) frozen neighbor table; ``points`` the coordinates used
    for the dihedral gate and as mesh vertices.  ``strict_pairs`` keeps
    a row's faces only when both pass (two-or-none variant).
    """
    tri, pr = rule_candidates(probs, nbhd_indices, points, thresholds,
                              centers=centers, strict_pairs=strict_pairs)
    faces, conf, _ = canonicalize_dedup(tri, pr)
    return TriMesh(vertices=np.asarray(points, dtype=np.float64), faces=faces,
                   confidence=conf if conf is not None else np.zeros(len(faces)))


def enforce_manifold(mesh: TriMesh) -> TriMesh:
    """Delete faces until every edge touches at most two.

    Repeatedly takes the most over-subscribed edge (ties: smallest edge)
    and removes its lowest-confidence face (ties: smallest face triple).
    """
    faces = mesh.faces
    if faces.shape[0] == 0:
        return mesh
    conf = mesh.confidence
    if conf is None:
        conf = np.zeros(faces.shape[0])
    alive = np.ones(faces.shape[0], dtype=bool)
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fid in range(faces.shape[0]):
        a, b, c = faces[fid]
        for e in ((a, b), (b, c), (a, c)):
            edge_faces.setdefault((int(e[0]), int(e[1])), []).append(fid)
    over = {e for e, fl in edge_faces.items() if len(fl) > 2}
    while over:
        edge = max(over, key=lambda e: (len(edge_faces[e]), tuple(-v for v in e)))
        victims = edge_faces[edge]
        fid = min(victims, key=lambda f: (conf[f], tuple(faces[f])))
        alive[fid] = False
        a, b, c = faces[fid]
        for e in ((int(a), int(b)), (int(b), int(c)), (int(a), int(c))):
            fl = edge_faces[e]
            fl.remove(fid)
            if len(fl) <= 2:
                over.discard(e)
    return TriMesh(vertices=mesh.vertices, faces=faces[alive],
                   confidence=(mesh.confidence[alive] if mesh.confidence is not None else None))
