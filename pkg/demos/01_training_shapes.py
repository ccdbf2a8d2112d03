"""Generate the synthetic training shapes and check their uniformity.

The triangle predictor is trained on meshes whose edge lengths are as
uniform as possible, so each generator remeshes toward a target edge
length.  The coefficient of variation of edge lengths is the uniformity
score: 0 would be perfectly uniform, anything under ~0.25 is fine.
"""

from pathlib import Path

import numpy as np

from oopt import edge_length_cv, generate_training_mesh, store_geometry

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

for kind in ("sphere", "torus", "rounded-box", "heightfield"):
    for target_edge in (0.3, 0.15):
        mesh = generate_training_mesh(kind, target_edge=target_edge, seed=7)
        edges = mesh.vertices[mesh.faces[:, [0, 1, 2]]] \
            - mesh.vertices[mesh.faces[:, [1, 2, 0]]]
        mean_edge = np.linalg.norm(edges, axis=2).mean()
        print(f"{kind:12s} target={target_edge:5.2f}  "
              f"V={mesh.n_vertices:5d} F={mesh.n_faces:5d}  "
              f"mean edge={mean_edge:5.3f}  cv={edge_length_cv(mesh):5.3f}")

# keep one of each around for the other demos
for kind in ("sphere", "torus"):
    mesh = generate_training_mesh(kind, target_edge=0.15, seed=7)
    store_geometry(mesh, OUT / f"{kind}.obj")
    print(f"wrote {OUT / (kind + '.obj')}")
