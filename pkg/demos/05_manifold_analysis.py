"""Inspect mesh topology: edge adjacency histogram and manifold repair.

An edge of a watertight manifold mesh borders exactly 2 faces.  The
adjacency histogram counts how many faces share each edge -- values of
1 are boundary/missing neighbors, 3+ are non-manifold fans.  The
repair pass greedily keeps the highest-confidence faces subject to
every edge staying at adjacency <= 2.

Run 03_reconstruct_point_cloud.py first to produce the meshes.
"""

from pathlib import Path

import numpy as np

from oopt import TriMesh, edge_adjacency_stats, enforce_manifold, load_geometry

OUT = Path(__file__).parent / "out"
pred_path = OUT / "torus_recon.ply"
if not pred_path.exists():
    raise SystemExit("run 03_reconstruct_point_cloud.py first")


def show(title, mesh):
    stats = edge_adjacency_stats(mesh.faces)
    print(f"{title}: {mesh.n_faces} faces, {stats.total_edges} edges, "
          f"{stats.manifold_percent:.2f}% manifold")
    for adjacency in sorted(stats.histogram):
        count = stats.histogram[adjacency]
        bar = "#" * max(1, round(60 * count / stats.total_edges))
        print(f"  {adjacency} faces/edge: {count:6d} {bar}")
    # each face contributes exactly 3 edge slots
    assert sum(k * v for k, v in stats.histogram.items()) == 3 * mesh.n_faces


gt = load_geometry(OUT / "torus_gt.obj")
recon = load_geometry(pred_path)

show("ground truth", gt)
print()
show("reconstruction", recon)
print()

# confidence is lost through file round-trip; rank by face area instead
v = recon.vertices[recon.faces]
areas = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]),
                             axis=1)
repaired = enforce_manifold(TriMesh(recon.vertices, recon.faces,
                                    confidence=areas))
show("after repair", repaired)
