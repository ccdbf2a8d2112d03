"""Train the triangle-prediction network on synthetic meshes.

Each training step samples a batch of mesh vertices, builds their
K-nearest-neighbor patches, and supervises the K x K pair logits
against the triangles incident to each vertex in the ground-truth
mesh.  A short run is enough to see the loss drop by an order of
magnitude; the checkpoint format is a single .oopt file.

This demo trains at reduced size (k=16, 150 steps) so it finishes in
about a minute.  Expect loss around 0.05 at the end; a full-size run
(k=50, a few thousand steps, more meshes) goes well below 0.01.
"""

import time
from pathlib import Path

from oopt import (TrainConfig, default_training_meshes, init_params,
                  save_params, train, write_loss_trace)

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

meshes = default_training_meshes(count=8, target_edge=0.15, seed=0)
print(f"training on {len(meshes)} meshes, "
      f"{sum(m.n_vertices for m in meshes)} vertices total")

cfg = TrainConfig(steps=150, batch_points=256, k=16, seed=0)
params = init_params(seed=0)

t0 = time.perf_counter()
params, trace = train(params, meshes, cfg)
elapsed = time.perf_counter() - t0

print(f"step {trace[0][0]:4d}: loss {trace[0][1]:.4f}")
print(f"step {trace[-1][0]:4d}: loss {trace[-1][1]:.4f}")
print(f"{len(trace)} recorded steps in {elapsed:.0f}s")

save_params(params, OUT / "demo_net.oopt")
write_loss_trace(OUT / "demo_loss.csv", trace)
print(f"wrote {OUT / 'demo_net.oopt'} and {OUT / 'demo_loss.csv'}")
