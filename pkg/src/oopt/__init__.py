"""Explicit surface reconstruction from point clouds.

A transformer predicts, for every point, which pairs of its K nearest
neighbors form surface triangles with it.  The network is trained once
on synthetic near-uniform meshes; unseen clouds are reconstructed by
optimizing per-point coordinate offsets through the frozen network and
extracting the confident triangles.
"""

__version__ = "0.1.0"

from .config import RunConfig, parse_config
from .errors import (ConfigError, DataError, DegenerateNeighborhoodError,
                     DegenerateTriangleError, DivergenceError, FileFormatError,
                     InputTooSmallError, InvalidInputError, NumericError,
                     OoptError, SchemaError, UnsupportedFormatError, UsageError)
from .extraction import (TriMesh, EdgeStats, canonicalize_dedup, dihedral_angle,
                         edge_adjacency_stats, enforce_manifold, extract_faces)
from .fileio import load_geometry, store_geometry
from .geometry import (Neighborhood, PointCloud, ScaleRecord, dedup_points,
                       estimate_voxel_size, knn_search, neighborhood_features,
                       normalize_neighborhood, positional_encode,
                       unit_sphere_normalize, voxel_subsample)
from .metrics import (MetricsReport, SampledSurface, chamfer, compare,
                      density_biased_sample, edge_metrics, f_score,
                      normal_metrics, sample_surface)
from .network import (NetworkParams, TrianglePrediction, forward, init_params,
                      load_params, loss_and_gradients, masked_bce_loss,
                      param_shapes, save_params)
from .offsets import (DiagnosticsRow, OffsetState, OptimizerConfig,
                      init_offsets, lr_at, make_pseudo_labels, optimize)
from .pipeline import ReconstructionResult, reconstruct
from .training import (TrainConfig, augment_points, build_label_matrix,
                       default_training_meshes, edge_length_cv,
                       generate_training_mesh, icosphere,
                       load_training_meshes, train, write_loss_trace)
