"""Face extraction: canonical dedup, adjacency statistics, the top-2
acceptance rule with its dihedral gate, and manifold enforcement."""

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oopt.errors import DegenerateTriangleError, InvalidInputError
from oopt.extraction import (
    DEFAULT_THRESHOLDS,
    EdgeStats,
    TriMesh,
    canonicalize_dedup,
    dihedral_angle,
    edge_adjacency_stats,
    enforce_manifold,
    extract_faces,
    mesh_edges,
    rule_candidates,
)


# ---------------------------------------------------------------------------
# TriMesh validation


def test_trimesh_validation():
    v = np.zeros((4, 3))
    with pytest.raises(InvalidInputError):
        TriMesh(vertices=v, faces=[[0, 1, 4]])
    with pytest.raises(InvalidInputError):
        TriMesh(vertices=v, faces=[[0, 1, 1]])
    with pytest.raises(InvalidInputError):
        TriMesh(vertices=v, faces=[[0, 1, 2], [2, 1, 0]])
    with pytest.raises(InvalidInputError):
        TriMesh(vertices=v, faces=[[0, 1, 2]], confidence=[0.5, 0.5])
    mesh = TriMesh(vertices=v, faces=[[0, 1, 2], [0, 1, 3]])
    assert mesh.n_vertices == 4 and mesh.n_faces == 2


# ---------------------------------------------------------------------------
# Edges and adjacency


def test_mesh_edges_sorted_pairs():
    e = mesh_edges(np.array([[2, 0, 1]]))
    assert e.shape == (3, 2)
    assert {tuple(r) for r in e} == {(0, 2), (1, 2), (0, 1)}


def adjacency_oracle(faces):
    c = Counter()
    for a, b, d in faces:
        for e in ((a, b), (b, d), (a, d)):
            c[tuple(sorted(e))] += 1
    return c


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 9)),
                max_size=40).map(
                    lambda rows: [r for r in rows if len(set(r)) == 3]))
@settings(max_examples=40, deadline=None)
def test_edge_stats_match_counter_oracle(face_list):
    faces = np.array(face_list, dtype=np.int64).reshape(-1, 3)
    stats = edge_adjacency_stats(faces)
    oracle = adjacency_oracle(face_list)
    assert stats.total_edges == len(oracle)
    ref_hist = Counter(oracle.values())
    assert stats.histogram == dict(ref_hist)
    # Every face has three edge slots: the histogram weights sum to 3F.
    assert sum(a * n for a, n in stats.histogram.items()) == 3 * faces.shape[0]
    if oracle:
        ref_manifold = 100.0 * sum(v <= 2 for v in oracle.values()) / len(oracle)
        assert stats.manifold_percent == pytest.approx(ref_manifold)
    else:
        assert stats.manifold_percent == 100.0


def test_edge_stats_empty_mesh():
    stats = edge_adjacency_stats(np.zeros((0, 3), dtype=np.int64))
    assert stats.manifold_percent == 100.0
    assert stats.histogram == {}
    assert stats.total_edges == 0


# ---------------------------------------------------------------------------
# Canonical dedup


def dedup_oracle(faces, probs):
    table = {}
    dropped = 0
    for f, p in zip(faces, probs):
        key = tuple(sorted(f))
        if len(set(key)) < 3:
            dropped += 1
            continue
        table.setdefault(key, []).append(p)
    keys = sorted(table)
    conf = [float(np.mean(table[k])) for k in keys]
    return np.array(keys, dtype=np.int64).reshape(-1, 3), conf, dropped


def test_canonicalize_dedup_oracle_and_mean_confidence():
    faces = np.array([[3, 1, 2], [1, 2, 3], [2, 3, 1], [0, 1, 2], [4, 4, 5]])
    probs = np.array([0.9, 0.6, 0.3, 0.5, 1.0])
    got_f, got_c, got_d = canonicalize_dedup(faces, probs)
    ref_f, ref_c, ref_d = dedup_oracle(faces, probs)
    assert np.array_equal(got_f, ref_f)
    assert got_d == ref_d == 1
    assert np.allclose(got_c, ref_c)
    # The (1,2,3) face occurs three times: confidence is their mean.
    assert got_c[list(map(tuple, got_f)).index((1, 2, 3))] == pytest.approx(0.6)


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(0, 6)),
                max_size=30))
@settings(max_examples=40, deadline=None)
def test_canonicalize_dedup_matches_oracle(face_list):
    faces = np.array(face_list, dtype=np.int64).reshape(-1, 3)
    probs = np.linspace(0.1, 0.9, faces.shape[0])
    got_f, got_c, got_d = canonicalize_dedup(faces, probs)
    ref_f, ref_c, ref_d = dedup_oracle(faces, probs)
    assert np.array_equal(got_f, ref_f)
    assert got_d == ref_d
    assert np.allclose(got_c, ref_c, rtol=1e-12, atol=1e-12)
    # Idempotence: feeding the output back changes nothing.
    again_f, _, again_d = canonicalize_dedup(got_f)
    assert np.array_equal(again_f, got_f)
    assert again_d == 0
    # Output is lexicographically sorted unique ascending triples.
    as_tuples = list(map(tuple, got_f))
    assert as_tuples == sorted(set(as_tuples))


def test_canonicalize_dedup_empty():
    f, c, d = canonicalize_dedup(np.zeros((0, 3)), np.zeros(0))
    assert f.shape == (0, 3) and c.shape == (0,) and d == 0


# ---------------------------------------------------------------------------
# Dihedral angle


def fold_points(phi_deg):
    """Two triangles sharing edge (p, qi); the second folded by phi."""
    phi = np.radians(phi_deg)
    p = (0.0, 0.0, 0.0)
    qi = (1.0, 0.0, 0.0)
    qj = (0.5, 1.0, 0.0)
    ql = (0.5, np.cos(phi), np.sin(phi))
    return p, qi, qj, ql


@pytest.mark.parametrize("phi", [0.0, 30.0, 90.0, 120.0, 150.0, 180.0])
def test_dihedral_angle_parametric(phi):
    p, qi, qj, ql = fold_points(phi)
    assert dihedral_angle(p, qi, qj, ql) == pytest.approx(phi, abs=1e-9)


def test_dihedral_angle_degenerate_raises():
    with pytest.raises(DegenerateTriangleError):
        dihedral_angle((0, 0, 0), (1, 0, 0), (2, 0, 0), (0.5, 1, 0))


# ---------------------------------------------------------------------------
# Acceptance rule

# One center (id 0) with five neighbors laid out so that faces with
# columns qj/ql fold flat-opposite (180 degrees, passes A=120) while a
# third neighbor sits on the same side as qj (fold 0, fails A).
RULE_POINTS = np.array([
    [0.0, 0.0, 0.0],   # 0: center
    [1.0, 0.0, 0.0],   # 1: qi (row neighbor)
    [0.5, 1.0, 0.0],   # 2: opposite side A
    [0.5, -1.0, 0.0],  # 3: opposite side B (180 from 2)
    [0.6, 0.9, 0.0],   # 4: same side as 2 (fold ~0)
    [3.0, 3.0, 3.0],   # 5: far filler
])
RULE_NBHD = np.array([[1, 2, 3, 4, 5]])


def grid(entries, k=5):
    g = np.zeros((1, k, k))
    for (r, c), v in entries.items():
        g[0, r, c] = v
    return g


def test_rule_both_faces_accepted_at_180():
    probs = grid({(0, 1): 0.9, (0, 2): 0.7})  # row of qi: best qj=2, second ql=3
    tri, pr = rule_candidates(probs, RULE_NBHD, RULE_POINTS)
    got = {tuple(sorted(t)) for t in tri}
    assert got == {(0, 1, 2), (0, 1, 3)}
    assert sorted(pr.tolist()) == [0.7, 0.9]


def test_rule_second_rejected_by_angle():
    # Second-best partner folds onto the first face: angle 0 < 120.
    probs = grid({(0, 1): 0.9, (0, 3): 0.7})  # best qj=2, second=point 4
    tri, _ = rule_candidates(probs, RULE_NBHD, RULE_POINTS)
    assert {tuple(sorted(t)) for t in tri} == {(0, 1, 2)}


def test_rule_first_below_p1_yields_nothing():
    probs = grid({(0, 1): 0.79, (0, 2): 0.7})
    tri, _ = rule_candidates(probs, RULE_NBHD, RULE_POINTS)
    assert tri.shape == (0, 3)


def test_rule_second_below_p2_yields_one():
    probs = grid({(0, 1): 0.9, (0, 2): 0.49})
    tri, _ = rule_candidates(probs, RULE_NBHD, RULE_POINTS)
    assert {tuple(sorted(t)) for t in tri} == {(0, 1, 2)}


def test_rule_tie_stable_toward_lower_column():
    probs = grid({(0, 1): 0.9, (0, 2): 0.9})  # columns 1 and 2 tie at 0.9
    tri, _ = rule_candidates(probs, RULE_NBHD, RULE_POINTS,
                             thresholds=(0.8, 0.95, 120.0))
    # Only the best survives (second fails p2); the tie must resolve to
    # the lower column index 1 (= point 2).
    assert {tuple(sorted(t)) for t in tri} == {(0, 1, 2)}


def test_rule_row_cap_two():
    rng = np.random.default_rng(0)
    probs = rng.uniform(0.8, 1.0, size=(1, 5, 5))
    tri, _ = rule_candidates(probs, RULE_NBHD, RULE_POINTS,
                             thresholds=(0.8, 0.0, 0.0))
    # Each of the 5 rows may emit at most 2 faces.
    assert tri.shape[0] <= 10


def test_rule_strict_pairs_two_or_none():
    probs = grid({(0, 1): 0.9, (0, 3): 0.7})  # second fails the angle
    tri, _ = rule_candidates(probs, RULE_NBHD, RULE_POINTS, strict_pairs=True)
    assert tri.shape == (0, 3)
    probs = grid({(0, 1): 0.9, (0, 2): 0.7})  # both pass
    tri, _ = rule_candidates(probs, RULE_NBHD, RULE_POINTS, strict_pairs=True)
    assert tri.shape[0] == 2


def test_rule_centers_remap_to_global_ids():
    # Same grid evaluated as a chunk whose center has global id 0; the
    # neighbor table covers all points, centers picks the row.
    probs = grid({(0, 1): 0.9, (0, 2): 0.7})
    nbhd_full = np.vstack([RULE_NBHD, RULE_NBHD[:, ::-1]])
    tri, _ = rule_candidates(probs, nbhd_full, RULE_POINTS,
                             centers=np.array([0]))
    assert {tuple(sorted(t)) for t in tri} == {(0, 1, 2), (0, 1, 3)}


def test_rule_rejects_bad_grid_shape():
    with pytest.raises(InvalidInputError):
        rule_candidates(np.zeros((1, 4, 5)), RULE_NBHD, RULE_POINTS)


def test_extract_faces_integration():
    probs = grid({(0, 1): 0.9, (0, 2): 0.7})
    mesh = extract_faces(probs, RULE_NBHD, RULE_POINTS)
    assert mesh.n_faces == 2
    assert mesh.confidence is not None
    stats = edge_adjacency_stats(mesh)
    assert stats.manifold_percent == 100.0


# ---------------------------------------------------------------------------
# Manifold enforcement


def test_enforce_manifold_removes_lowest_confidence():
    # Three faces share edge (0, 1); the 0.2-confidence one must go.
    v = np.zeros((5, 3))
    v[:, 0] = np.arange(5)
    mesh = TriMesh(vertices=v,
                   faces=[[0, 1, 2], [0, 1, 3], [0, 1, 4]],
                   confidence=[0.9, 0.2, 0.8])
    fixed = enforce_manifold(mesh)
    assert fixed.n_faces == 2
    assert [0, 1, 3] not in fixed.faces.tolist()
    assert edge_adjacency_stats(fixed).manifold_percent == 100.0


def test_enforce_manifold_noop_on_clean_mesh():
    v = np.zeros((4, 3))
    v[:, 1] = np.arange(4)
    mesh = TriMesh(vertices=v, faces=[[0, 1, 2], [1, 2, 3]],
                   confidence=[0.5, 0.6])
    fixed = enforce_manifold(mesh)
    assert np.array_equal(fixed.faces, mesh.faces)


def test_enforce_manifold_empty():
    mesh = TriMesh(vertices=np.zeros((3, 3)), faces=np.zeros((0, 3)))
    assert enforce_manifold(mesh).n_faces == 0


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_enforce_manifold_always_reaches_100(seed):
    rng = np.random.default_rng(seed)
    n_faces = int(rng.integers(1, 30))
    raw = rng.integers(0, 8, size=(n_faces, 3))
    raw = raw[np.array([len(set(f)) == 3 for f in raw])]
    if raw.shape[0] == 0:
        return
    faces, conf, _ = canonicalize_dedup(raw, np.linspace(0.2, 0.9, raw.shape[0]))
    mesh = TriMesh(vertices=rng.normal(size=(8, 3)), faces=faces, confidence=conf)
    fixed = enforce_manifold(mesh)
    assert edge_adjacency_stats(fixed).manifold_percent == 100.0
    # Never adds faces, only removes.
    survivors = {tuple(f) for f in fixed.faces}
    assert survivors <= {tuple(f) for f in faces}
