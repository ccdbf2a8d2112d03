"""Reconstruct a surface from a raw point cloud with a frozen network.

The network never sees the test shape.  Reconstruction freezes the
weights and instead optimizes a per-point coordinate offset: each
iteration backpropagates the prediction loss against self-generated
labels down to the input coordinates, takes a fixed-length step, and
rejects any move that would drag a point more than half its original
nearest-neighbor distance.  Triangles are extracted from the offset
cloud but emitted at the original positions.

Run 02_train_triangle_network.py first to produce the checkpoint.
"""

from pathlib import Path

import numpy as np

from oopt import (RunConfig, load_params, reconstruct, sample_surface,
                  store_geometry)
from oopt.training import torus_mesh

OUT = Path(__file__).parent / "out"
ckpt = OUT / "demo_net.oopt"
if not ckpt.exists():
    raise SystemExit("run 02_train_triangle_network.py first")

params = load_params(ckpt)

# held-out shape: a torus sampled unevenly (random surface samples are
# noisier than the near-uniform vertex sets the net was trained on)
gt = torus_mesh(target_edge=0.12)
cloud = sample_surface(gt, 1200, seed=3).points
print(f"input cloud: {cloud.shape[0]} points")

cfg = RunConfig(K=16, T=20, voxel=1e-6, seed=0)
res = reconstruct(cloud, params, cfg,
                  on_iteration=lambda info: print(
                      f"  it {info['t']:3d}  lr {info['lr']:.4f}  "
                      f"loss {info['loss']:.4f}")
                  if info["t"] % 5 == 0 else None)

info = res.info
print(f"faces: {res.mesh.n_faces}")
print(f"manifold edges: {info['manifold_percent']:.2f}%")
print(f"offset magnitude: mean {np.linalg.norm(res.offsets, axis=1).mean():.5f} "
      f"(normalized units)")

store_geometry(res.mesh, OUT / "torus_recon.ply")
store_geometry(gt, OUT / "torus_gt.obj")
print(f"wrote {OUT / 'torus_recon.ply'} and {OUT / 'torus_gt.obj'}")
