"""End-to-end reconstruction.

Preprocessing (dedup, voxel subsampling, unit-sphere normalization,
KNN) feeds the frozen network; per-point offsets are optimized for T
iterations (T=0 skips straight to a zero-offset forward pass); the
final probabilities drive triangle extraction.  The output mesh keeps
the surviving input points, in input units, as its vertices: offsets
only steer the predictions and never move the geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .extraction import (TriMesh, canonicalize_dedup, edge_adjacency_stats,
                         enforce_manifold)
from .errors import InputTooSmallError
from .geometry import (PointCloud, dedup_points, estimate_voxel_size,
                       knn_search, unit_sphere_normalize, voxel_subsample)
from .network import NetworkParams
from .offsets import OptimizerConfig, accumulate_chunk_gradients, optimize


@dataclass
class ReconstructionResult:
    mesh: TriMesh                    # vertices in input units
    diagnostics: list                # DiagnosticsRow per iteration (empty for T=0)
    info: dict                       # run summary (counts, voxel size, stats)
    offsets: np.ndarray              # final (N, 3) offsets in normalized units


def _optimizer_config(cfg: RunConfig, strict_pairs: bool = False) -> OptimizerConfig:
    return OptimizerConfig(gamma0=cfg.gamma0, decay=cfg.decay,
                           decay_period=cfg.decay_period,
                           iterations=max(cfg.T, 1), chunk=cfg.chunk,
                           thresholds=cfg.thresholds(),
                           pseudo_gate=cfg.pseudo_gate, eta0=cfg.eta0,
                           offset_init=cfg.offset_init,
                           strict_pairs=strict_pairs)


def reconstruct(points, params: NetworkParams, cfg: RunConfig | None = None,
                threads: int = 1, strict_manifold: bool = False,
                strict_pairs: bool = False,
                on_iteration=None) -> ReconstructionResult:
    """Reconstruct a triangle mesh from a raw point cloud."""
    cfg = RunConfig() if cfg is None else cfg
    cloud = points if isinstance(points, PointCloud) else PointCloud(points)
    n_input = len(cloud)
    deduped, _ = dedup_points(cloud.points)
    if deduped.shape[0] < 2:
        raise InputTooSmallError("need at least 2 distinct points")
    voxel = (estimate_voxel_size(deduped) if cfg.voxel == "auto"
             else float(cfg.voxel))
    kept_points, kept = voxel_subsample(deduped, voxel)
    if kept_points.shape[0] <= cfg.K:
        raise InputTooSmallError(
            f"{kept_points.shape[0]} points remain after voxel subsampling "
            f"with cell {voxel:g}; need more than K={cfg.K}")

    normalized, record = unit_sphere_normalize(kept_points)
    nbhd = knn_search(PointCloud(normalized), k=cfg.K)
    ocfg = _optimizer_config(cfg, strict_pairs=strict_pairs)

    if cfg.T == 0:
        offsets = np.zeros_like(normalized)
        diagnostics = []
    else:
        state, diagnostics = optimize(normalized, nbhd, params, ocfg,
                                      threads=threads,
                                      on_iteration=on_iteration)
        offsets = state.offsets

    acc = accumulate_chunk_gradients(normalized, nbhd, params, offsets, ocfg,
                                     threads=threads, collect_faces=True,
                                     need_grads=False)
    faces, confidence, dropped = canonicalize_dedup(acc.candidate_faces,
                                                    acc.candidate_probs)
    mesh = TriMesh(vertices=kept_points, faces=faces, confidence=confidence)
    if strict_manifold:
        mesh = enforce_manifold(mesh)
    stats = edge_adjacency_stats(mesh.faces)
    info = {
        "n_input": int(n_input),
        "n_dedup": int(deduped.shape[0]),
        "n_points": int(kept_points.shape[0]),
        "voxel": float(voxel),
        "K": int(cfg.K),
        "T": int(cfg.T),
        "n_faces": int(mesh.n_faces),
        "dropped_degenerate": int(dropped),
        "manifold_percent": float(stats.manifold_percent),
        "final_loss": float(acc.loss),
        "scale_center": [float(c) for c in record.center],
        "scale_radius": float(record.radius),
    }
    return ReconstructionResult(mesh=mesh, diagnostics=diagnostics, info=info,
                                offsets=offsets)
