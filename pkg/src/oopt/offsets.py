"""Per-point offset optimization through the frozen network.

Each iteration rebuilds the normalized neighborhoods from the displaced
points (the KNN index table stays frozen), runs the network, constructs
pseudo-labels from its own predictions, and backpropagates the masked
BCE loss down to the offsets.  Updates are normalized to length
gamma_t * d0(p) and rejected when they would pull a point closer than
0.5 * d0(p) to any of its frozen neighbors.

Gradients are accumulated over contiguous point chunks (bounded memory;
each chunk loss is normalized by the global N*K*K so the chunk sum
equals the whole-cloud gradient).  Chunks may be evaluated by a thread
pool; the reduction order is fixed by chunk index either way.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError
from .extraction import DEFAULT_THRESHOLDS, canonicalize_dedup, edge_adjacency_stats, rule_candidates
from .geometry import ENCODING_LEVELS, ETA0, Neighborhood
from .network import NetworkParams, diagonal_mask, forward, masked_bce_loss


@dataclass
class OptimizerConfig:
    """Schedule and thresholds for one optimization run."""

    gamma0: float = 0.1
    decay: float = 0.7
    decay_period: int = 10
    iterations: int = 100
    chunk: int = 512
    thresholds: tuple[float, float, float] = DEFAULT_THRESHOLDS
    pseudo_gate: float = 0.5   # row gate on the top probability
    eta0: float = ETA0
    levels: int = ENCODING_LEVELS
    offset_init: str = "repulsion"  # or "zero"
    dtype: np.dtype = np.float32
    trial_stats: bool = True   # per-iteration trial-extraction stats
    strict_pairs: bool = False  # two-or-none extraction variant

    def __post_init__(self):
        if self.gamma0 <= 0:
            raise ConfigError(f"gamma0 must be positive, got {self.gamma0}")
        if not 0 < self.decay <= 1:
            raise ConfigError(f"decay must be in (0, 1], got {self.decay}")
        if self.decay_period < 1:
            raise ConfigError(f"decay_period must be >= 1, got {self.decay_period}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.chunk < 1:
            raise ConfigError(f"chunk must be >= 1, got {self.chunk}")
        if self.offset_init not in ("repulsion", "zero"):
            raise ConfigError(f"offset_init must be 'repulsion' or 'zero', got {self.offset_init!r}")


@dataclass
class OffsetState:
    """Current displacements plus the bookkeeping the gate needs."""

    offsets: np.ndarray          # (N, 3) float64, unit-sphere units
    d0: np.ndarray               # (N,) original nearest-neighbor distances
    t: int = 0
    gate_mask_last: np.ndarray = field(default=None)  # (N,) bool

    def __post_init__(self):
        if self.gate_mask_last is None:
            self.gate_mask_last = np.ones(self.offsets.shape[0], dtype=bool)


@dataclass
class DiagnosticsRow:
    iteration: int
    loss: float
    lr: float
    applied_percent: float
    manifold_percent: float


def lr_at(t: int, cfg: OptimizerConfig) -> float:
    """Step size at iteration t: gamma0 * decay^(t // period)."""
    return cfg.gamma0 * cfg.decay ** (t // cfg.decay_period)


def init_offsets(points, nbhd: Neighborhood, mode: str = "repulsion") -> OffsetState:
    """Starting offsets: 0.25 * (p - q1) pushes each point away from its
    nearest neighbor; the "zero" mode starts at rest."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if mode == "zero":
        offsets = np.zeros((n, 3))
    elif mode == "repulsion":
        first_nz = np.argmax(nbhd.distances > 0.0, axis=1)
        q1 = nbhd.indices[np.arange(n), first_nz]
        offsets = 0.25 * (pts - pts[q1])
    else:
        raise ConfigError(f"unknown offset init mode {mode!r}")
    return OffsetState(offsets=offsets, d0=np.asarray(nbhd.d0, dtype=np.float64), t=0)


def make_pseudo_labels(pred, gate: float = 0.5, dtype=np.float32):
    """Self-labels from the network's own probabilities.

    Rows whose best off-diagonal probability exceeds ``gate`` mark
    their top-2 columns as 1; other rows stay all-zero.  Returns
    (labels, mask) with the diagonal masked.

    Labels are deliberately NOT symmetrized.  The logit grid is
    symmetric, so when row i picks (i, j) but row j does not pick
    (j, i), the shared logit receives one 1-target and one 0-target
    and settles near probability 0.5, below the extraction
    thresholds.  Only mutually endorsed pairs saturate; this bilateral
    agreement is what drives the cloud toward configurations with two
    coherent faces per edge.
    """
    probs = probs_of(pred)
    m, k = probs.shape[0], probs.shape[1]
    masked = probs.copy()
    idx = np.arange(k)
    masked[:, idx, idx] = -1.0
    order = np.argsort(-masked, axis=2, kind="stable")[:, :, :2]
    best = np.take_along_axis(masked, order[:, :, :1], axis=2)[:, :, 0]
    passes = best > gate
    labels = np.zeros((m, k, k), dtype=dtype)
    if passes.any():
        bm, rm = np.nonzero(passes)
        labels[bm, rm, order[bm, rm, 0]] = 1.0
        labels[bm, rm, order[bm, rm, 1]] = 1.0
    mask = diagonal_mask(m, k, dtype=dtype)
    return labels, mask


def probs_of(pred) -> np.ndarray:
    if hasattr(pred, "probabilities"):
        return pred.probabilities()
    return np.asarray(pred)


def feature_graph(points: np.ndarray, offsets_leaf: Tensor, indices: np.ndarray,
                  centers: np.ndarray, eta0: float, levels: int,
                  invalid_fill: np.ndarray | None = None):
    """Differentiable Eq.-1 normalization + positional encoding.

    ``offsets_leaf`` wraps the full (N, 3) offset array so that the
    backward pass accumulates gradients from every appearance of a
    point, as a center or as a neighbor of other centers.  Returns
    (features Tensor (M, K, 51), valid rows (M,) bool).
    """
    dtype = offsets_leaf.data.dtype
    pts = Tensor(np.ascontiguousarray(points, dtype=dtype))
    disp = pts + offsets_leaf
    nbr = ad.gather_rows(disp, indices)                       # (M, K, 3)
    ctr = ad.reshape(ad.gather_rows(disp, centers), (len(centers), 1, 3))
    u = nbr - ctr
    sumsq = ad.tsum(u * u, axis=2)                            # (M, K)
    norms = np.sqrt(sumsq.data)
    nonzero = norms > 0.0
    valid = nonzero.any(axis=1)
    first = np.argmax(nonzero, axis=1)
    # Invalid rows get a unit denominator; they are masked from the
    # loss, so no gradient flows through the substitution.
    densq = ad.take_cols(sumsq, first)                        # (M, 1)
    if not valid.all():
        bump = np.zeros((len(valid), 1), dtype=dtype)
        bump[~valid] = 1.0
        densq = densq + bump
    den = ad.reshape(ad.sqrt(densq), (len(valid), 1, 1))
    qbar = (u / den) * eta0
    parts = [qbar]
    for level in range(levels):
        angle = qbar * float(np.pi * (2.0 ** level))
        s, c = ad.tsin(angle), ad.tcos(angle)
        pair = ad.concat([s, c], axis=-1)                     # (M, K, 6): sss ccc
        shape = pair.data.shape
        pair = ad.reshape(pair, shape[:-1] + (2, 3))
        pair = ad.swapaxes(pair, -1, -2)                      # interleave per axis
        parts.append(ad.reshape(pair, shape))
    return ad.concat(parts, axis=-1), valid


@dataclass
class ChunkAccumulation:
    grads: np.ndarray            # (N, 3) float64
    loss: float
    candidate_faces: np.ndarray | None = None
    candidate_probs: np.ndarray | None = None


def _chunk_ranges(n: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def accumulate_chunk_gradients(points, nbhd: Neighborhood, params: NetworkParams,
                               offsets: np.ndarray, cfg: OptimizerConfig,
                               threads: int = 1, collect_faces: bool = False,
                               need_grads: bool = True) -> ChunkAccumulation:
    """Loss gradients w.r.t. all offsets, summed over contiguous chunks.

    Every chunk loss uses the global N*K*K normalization, so the fixed
    chunk-order sum equals the monolithic whole-cloud gradient up to
    rounding.  Optionally also collects extraction-rule candidates per
    chunk (cheap trial statistics without storing all probabilities).
    """
    pts = np.asarray(points, dtype=np.float64)
    n, k = nbhd.indices.shape
    denom = float(n) * k * k
    off_typed = np.ascontiguousarray(offsets, dtype=cfg.dtype)
    ranges = _chunk_ranges(n, cfg.chunk)

    def run_chunk(r):
        start, stop = r
        centers = np.arange(start, stop)
        leaf = Tensor(off_typed, requires_grad=need_grads)
        feats, valid = feature_graph(pts, leaf, nbhd.indices[start:stop],
                                     centers, cfg.eta0, cfg.levels)
        pred = forward(params, feats)
        probs = probs_of(pred)
        labels, mask = make_pseudo_labels(pred, gate=cfg.pseudo_gate, dtype=cfg.dtype)
        mask[~valid] = 0.0
        grad = None
        loss_val = 0.0
        if mask.any():
            loss = masked_bce_loss(pred, labels, mask, denom=denom)
            if need_grads:
                loss.backward()
                grad = leaf.grad if leaf.grad is not None else np.zeros_like(off_typed)
            loss_val = float(loss.data)
        elif need_grads:
            grad = np.zeros_like(off_typed)
        cand = None
        if collect_faces:
            cand = rule_candidates(probs, nbhd.indices, pts, cfg.thresholds,
                                   centers=centers,
                                   strict_pairs=cfg.strict_pairs)
        return grad, loss_val, cand

    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_chunk, ranges))
    else:
        results = [run_chunk(r) for r in ranges]

    total_grad = np.zeros((n, 3)) if need_grads else None
    total_loss = 0.0
    tri_parts, prob_parts = [], []
    for grad, loss_val, cand in results:   # fixed chunk order
        if need_grads and grad is not None:
            total_grad += grad.astype(np.float64)
        total_loss += loss_val
        if cand is not None:
            tri_parts.append(cand[0])
            prob_parts.append(cand[1])
    out = ChunkAccumulation(grads=total_grad, loss=total_loss)
    if collect_faces:
        out.candidate_faces = (np.concatenate(tri_parts, axis=0)
                               if tri_parts else np.zeros((0, 3), dtype=np.int64))
        out.candidate_probs = (np.concatenate(prob_parts, axis=0)
                               if prob_parts else np.zeros(0))
    return out


def controlled_step(state: OffsetState, raw_grads: np.ndarray, gamma_t: float,
                    nbhd: Neighborhood, points) -> OffsetState:
    """One gated update: normalized step, then collision test.

    Candidates for ALL points are formed first; the post-update nearest
    distance d_{t+1} is evaluated with every candidate applied, and a
    point keeps its candidate only when d_{t+1} > 0.5 * d0.  Points
    with zero gradient keep their offset (gate trivially passes).
    """
    g = np.asarray(raw_grads, dtype=np.float64)
    if not np.isfinite(g).all():
        raise NumericError("non-finite offset gradients")
    pts = np.asarray(points, dtype=np.float64)
    norms = np.sqrt((g * g).sum(axis=1))
    moving = norms > 0.0
    unit = np.zeros_like(g)
    unit[moving] = g[moving] / norms[moving, None]
    cand = state.offsets - (gamma_t * state.d0)[:, None] * unit

    disp = pts + cand
    diff = disp[nbhd.indices] - disp[:, None, :]
    d_next = np.sqrt((diff * diff).sum(axis=2)).min(axis=1)
    m = d_next > 0.5 * state.d0
    m[~moving] = True

    new_offsets = np.where((m & moving)[:, None], cand, state.offsets)
    return OffsetState(offsets=new_offsets, d0=state.d0, t=state.t + 1,
                       gate_mask_last=m)


def optimize(points, nbhd: Neighborhood, params: NetworkParams,
             cfg: OptimizerConfig, threads: int = 1, on_iteration=None):
    """Run the full offset-optimization loop.

    Returns (final OffsetState, list of DiagnosticsRow).  The network
    is strictly read-only here; a checksum guards against mutation.
    ``on_iteration`` (if given) receives a dict per iteration with the
    pre/post state and raw gradients, for inspection by tests.
    """
    pts = np.asarray(points, dtype=np.float64)
    before = params.checksum()
    state = init_offsets(pts, nbhd, mode=cfg.offset_init)
    diagnostics: list[DiagnosticsRow] = []
    for t in range(cfg.iterations):
        acc = accumulate_chunk_gradients(pts, nbhd, params, state.offsets, cfg,
                                         threads=threads,
                                         collect_faces=cfg.trial_stats)
        manifold = float("nan")
        if cfg.trial_stats:
            faces, _, _ = canonicalize_dedup(acc.candidate_faces, acc.candidate_probs)
            manifold = edge_adjacency_stats(faces).manifold_percent
        gamma = lr_at(t, cfg)
        prev = state
        state = controlled_step(state, acc.grads, gamma, nbhd, pts)
        applied = 100.0 * float(state.gate_mask_last.mean())
        diagnostics.append(DiagnosticsRow(iteration=t, loss=acc.loss, lr=gamma,
                                          applied_percent=applied,
                                          manifold_percent=manifold))
        if on_iteration is not None:
            on_iteration({"t": t, "lr": gamma, "grads": acc.grads,
                          "state_before": prev, "state_after": state,
                          "loss": acc.loss})
    if params.checksum() != before:
        raise NumericError("network parameters changed during optimization")
    return state, diagnostics
