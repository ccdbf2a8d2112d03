"""Triangle-prediction network: a per-point transformer over K neighbor
tokens emitting K x K candidate-triangle logits.

Architecture: 51 -> 64 linear projection, five pre-norm transformer
blocks (width 64, 4 heads, feed-forward 256, GELU), then a bilinear
pair head O = (H W_a)(H W_b)^T / sqrt(64) + b.  The raw logits are
symmetrized as O + O^T so entries (i, j) and (j, i) share one logit;
diagonal entries denote degenerate triangles and are always masked by
consumers.

Training runs in float32; a float64 mode (``init_params(dtype=...)`` or
``NetworkParams.astype``) exists for gradient verification.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ContractError,
    FileFormatError,
    NumericError,
    SchemaError,
    UndefinedLossError,
    UnsupportedFormatError,
)

WIDTH = 64
HEADS = 4
HEAD_DIM = WIDTH // HEADS
FFN_WIDTH = 256
BLOCKS = 5
FEATURE_DIM = 51

_MAGIC = b"OOPT"
_VERSION = 1


def param_shapes() -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape table; also the serialization order."""
    shapes: dict[str, tuple[int, ...]] = {
        "input_proj.w": (FEATURE_DIM, WIDTH),
        "input_proj.b": (WIDTH,),
    }
    for i in range(BLOCKS):
        p = f"blocks.{i}."
        shapes[p + "ln1.gamma"] = (WIDTH,)
        shapes[p + "ln1.beta"] = (WIDTH,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + name] = (WIDTH, WIDTH)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[p + "attn." + name] = (WIDTH,)
        shapes[p + "ln2.gamma"] = (WIDTH,)
        shapes[p + "ln2.beta"] = (WIDTH,)
        shapes[p + "ffn.w1"] = (WIDTH, FFN_WIDTH)
        shapes[p + "ffn.b1"] = (FFN_WIDTH,)
        shapes[p + "ffn.w2"] = (FFN_WIDTH, WIDTH)
        shapes[p + "ffn.b2"] = (WIDTH,)
    shapes["pair.wa"] = (WIDTH, WIDTH)
    shapes["pair.wb"] = (WIDTH, WIDTH)
    shapes["pair.bias"] = ()
    return shapes


@dataclass
class NetworkParams:
    """Named parameter tensors with fixed shapes."""

    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expect = param_shapes()
        got = {k: v.shape for k, v in self.tensors.items()}
        if got != expect:
            raise SchemaError(f"parameter schema mismatch: {_schema_diff(expect, got)}")

    @property
    def dtype(self):
        return self.tensors["input_proj.w"].dtype

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams({k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.tensors.items()})

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in param_shapes():
            arr = self.tensors[name]
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()


def _schema_diff(expect, got) -> str:
    missing = sorted(set(expect) - set(got))
    extra = sorted(set(got) - set(expect))
    wrong = sorted(k for k in set(expect) & set(got) if expect[k] != got[k])
    parts = []
    if missing:
        parts.append(f"missing {missing}")
    if extra:
        parts.append(f"unexpected {extra}")
    if wrong:
        parts.append(f"wrong shapes {wrong}")
    return "; ".join(parts) or "unknown difference"


def init_params(seed: int, dtype=np.float32) -> NetworkParams:
    """Deterministic init: uniform +-1/sqrt(fan_in) weights, zero biases,
    unit/zero normalization affine terms."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes().items():
        leaf = name.rsplit(".", 1)[1]
        if leaf in ("gamma",):
            arr = np.ones(shape)
        elif leaf in ("beta",) or leaf.startswith("b"):
            arr = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        tensors[name] = arr.astype(dtype)
    return NetworkParams(tensors)


@dataclass
class TrianglePrediction:
    """Raw and symmetrized K x K logits for a batch of points."""

    raw: Tensor
    sym: Tensor

    @property
    def raw_logits(self) -> np.ndarray:
        return self.raw.data

    @property
    def sym_logits(self) -> np.ndarray:
        return self.sym.data

    def probabilities(self) -> np.ndarray:
        """sigmoid of the symmetrized logits (diagonal up to the caller)."""
        return ad._sigmoid(self.sym.data)


def _check_finite(name: str, t: Tensor) -> None:
    if not np.isfinite(t.data).all():
        raise NumericError(f"non-finite activations after {name}")


def forward(params: NetworkParams, features,
            param_tensors: dict[str, Tensor] | None = None,
            check_finite: bool = True) -> TrianglePrediction:
    """Run the network on features of shape (N, K, 51).

    ``features`` may be a Tensor to differentiate through the inputs;
    ``param_tensors`` may supply pre-wrapped parameter Tensors (used in
    training to read out their gradients afterwards).
    """
    x = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
    if x.ndim != 3 or x.shape[2] != FEATURE_DIM:
        raise ContractError(f"features must be (N, K, {FEATURE_DIM}), got {x.shape}")
    if param_tensors is None:
        param_tensors = {k: Tensor(v) for k, v in params.tensors.items()}
    P = param_tensors
    n, k = x.shape[0], x.shape[1]

    h = ad.matmul(x, P["input_proj.w"]) + P["input_proj.b"]
    if check_finite:
        _check_finite("input_proj", h)

    for i in range(BLOCKS):
        p = f"blocks.{i}."
        a = ad.layer_norm(h, P[p + "ln1.gamma"], P[p + "ln1.beta"])
        q = ad.matmul(a, P[p + "attn.wq"]) + P[p + "attn.bq"]
        key = ad.matmul(a, P[p + "attn.wk"]) + P[p + "attn.bk"]
        v = ad.matmul(a, P[p + "attn.wv"]) + P[p + "attn.bv"]
        # (N, K, 64) -> (N, heads, K, head_dim)
        q = ad.swapaxes(ad.reshape(q, (n, k, HEADS, HEAD_DIM)), 1, 2)
        key = ad.swapaxes(ad.reshape(key, (n, k, HEADS, HEAD_DIM)), 1, 2)
        v = ad.swapaxes(ad.reshape(v, (n, k, HEADS, HEAD_DIM)), 1, 2)
        scores = ad.matmul(q, ad.swapaxes(key, 2, 3)) * (1.0 / np.sqrt(HEAD_DIM))
        ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
        ctx = ad.reshape(ad.swapaxes(ctx, 1, 2), (n, k, WIDTH))
        h = h + (ad.matmul(ctx, P[p + "attn.wo"]) + P[p + "attn.bo"])

        f = ad.layer_norm(h, P[p + "ln2.gamma"], P[p + "ln2.beta"])
        f = ad.gelu(ad.matmul(f, P[p + "ffn.w1"]) + P[p + "ffn.b1"])
        h = h + (ad.matmul(f, P[p + "ffn.w2"]) + P[p + "ffn.b2"])
        if check_finite:
            _check_finite(f"block {i}", h)

    qa = ad.matmul(h, P["pair.wa"])
    qb = ad.matmul(h, P["pair.wb"])
    raw = ad.matmul(qa, ad.swapaxes(qb, 1, 2)) * (1.0 / np.sqrt(WIDTH)) + P["pair.bias"]
    if check_finite:
        _check_finite("pair head", raw)
    sym = raw + ad.swapaxes(raw, 1, 2)
    return TrianglePrediction(raw=raw, sym=sym)


def diagonal_mask(n: int, k: int, dtype=np.float32) -> np.ndarray:
    """(N, K, K) mask with zero diagonal, ones elsewhere."""
    m = np.ones((k, k), dtype=dtype) - np.eye(k, dtype=dtype)
    return np.broadcast_to(m, (n, k, k)).copy()


def masked_bce_loss(pred, labels, mask=None, denom: float | None = None) -> Tensor:
    """Mean stabilized binary cross-entropy over unmasked entries.

    The normalization constant is N*K*K regardless of how many entries
    the mask disables (disabled entries contribute zero), so chunked
    partial losses with an explicit ``denom`` sum to the global mean.
    """
    logits = pred.sym if isinstance(pred, TrianglePrediction) else pred
    if not isinstance(logits, Tensor):
        logits = Tensor(np.asarray(logits))
    labels = np.asarray(labels, dtype=logits.dtype)
    if labels.shape != logits.shape:
        raise ContractError(f"labels shape {labels.shape} != logits shape {logits.shape}")
    if mask is None:
        mask = diagonal_mask(labels.shape[0], labels.shape[1], dtype=logits.dtype)
    mask = np.asarray(mask, dtype=logits.dtype)
    if mask.shape != labels.shape:
        raise ContractError(f"mask shape {mask.shape} != labels shape {labels.shape}")
    if not mask.any():
        raise UndefinedLossError("the label mask disables every entry")
    if denom is None:
        denom = float(labels.size)
    return ad.masked_bce_mean(logits, labels, mask, denom)


@dataclass
class LossGrads:
    loss: float
    param_grads: dict[str, np.ndarray] | None
    input_grads: np.ndarray | None


def loss_and_gradients(params: NetworkParams, features, labels, mask=None,
                       need=("params",), denom: float | None = None) -> LossGrads:
    """Forward + masked BCE + reverse pass in one call.

    ``need`` selects gradient targets: "params" and/or "inputs".
    Input gradients have the feature shape (N, K, 51); chaining them
    through the encoding and neighborhood normalization to point
    offsets is the offset optimizer's job.
    """
    want_params = "params" in need
    want_inputs = "inputs" in need
    feats = Tensor(np.asarray(features), requires_grad=want_inputs)
    ptens = {k: Tensor(v, requires_grad=want_params) for k, v in params.tensors.items()}
    pred = forward(params, feats, param_tensors=ptens)
    loss = masked_bce_loss(pred, labels, mask, denom=denom)
    loss.backward()
    pgrads = None
    if want_params:
        pgrads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                  for k, t in ptens.items()}
    igrads = None
    if want_inputs:
        igrads = feats.grad if feats.grad is not None else np.zeros_like(feats.data)
    return LossGrads(loss=float(loss.data), param_grads=pgrads, input_grads=igrads)


# ---------------------------------------------------------------------------
# Parameter file format: magic "OOPT", u32 version, u32 record count,
# then per record: u16 name length, utf-8 name, u8 rank, u32 dims,
# row-major float32 little-endian payload.


def save_params(params: NetworkParams, path) -> None:
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _VERSION)
    shapes = param_shapes()
    blob += struct.pack("<I", len(shapes))
    for name in shapes:
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(params.tensors[name], dtype="<f4")
        nb = name.encode()
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += arr.tobytes()
    with open(path, "wb") as f:
        f.write(bytes(blob))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FileFormatError(f"truncated while reading {what}",
                                  path=self.path, offset=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_params(path) -> NetworkParams:
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, str(path))
    if r.take(4, "magic") != _MAGIC:
        raise FileFormatError("bad magic, not a parameter file", path=str(path), offset=0)
    version = r.u32("version")
    if version != _VERSION:
        raise UnsupportedFormatError(f"unsupported format version {version} "
                                     f"(supported: {_VERSION})", path=str(path), offset=4)
    count = r.u32("record count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack("<H", r.take(2, "name length"))[0]
        name = r.take(name_len, "name").decode()
        rank = struct.unpack("<B", r.take(1, "rank"))[0]
        shape = tuple(r.u32(f"dim of {name}") for _ in range(rank))
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n_items, f"payload of {name}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float32)
    if r.pos != len(data):
        raise FileFormatError(f"{len(data) - r.pos} trailing bytes after last record",
                              path=str(path), offset=r.pos)
    try:
        return NetworkParams(tensors)
    except SchemaError as e:
        raise SchemaError(f"{path}: {e}") from None
