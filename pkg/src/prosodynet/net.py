"""From-scratch convolutional network for word-window classification.

Architecture: two convolution layers along the time axis, ReLU after each,
adaptive max pooling of every feature map to a fixed length, concatenation,
inverted dropout, and an affine softmax classifier.

Layer 1 kernels span the full feature height (including the position row
when present) and slide along time with stride 4; layer 2 applies one 1-D
kernel per feature map with stride 2. Convolution is unflipped: the kernel
is dotted with the window as-is (cross-correlation), which is what the
geometry and gradient code below assume throughout.

Training math runs in float64; checkpoints store float32.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InputTooShort, PoolTooSmall, ShapeError

N_KERNELS = 100
K1_WIDTH = 6
STRIDE1 = 4
K2_WIDTH = 4
STRIDE2 = 2
POOL_OUT_DEFAULT = 2
DROPOUT_KEEP = 0.8
LOSS_EPS = 1e-12

CHECKPOINT_MAGIC = b"PNET"
CHECKPOINT_VERSION = 1


@dataclass
class ConvLayerParams:
    """kernels: (n_k, height, width) full-height, or (n_k, width) per-map."""

    kernels: np.ndarray
    biases: np.ndarray
    stride: int

    @property
    def n_kernels(self) -> int:
        return self.kernels.shape[0]

    @property
    def width(self) -> int:
        return self.kernels.shape[-1]


@dataclass
class ModelParams:
    conv1: ConvLayerParams
    conv2: ConvLayerParams
    softmax_w: np.ndarray
    softmax_b: np.ndarray
    pool_out: int
    n_classes: int

    @property
    def input_dim(self) -> int:
        return self.conv1.kernels.shape[1]

    def tensors(self):
        """Parameter arrays in checkpoint order."""
        return [("conv1_kernels", self.conv1.kernels),
                ("conv1_biases", self.conv1.biases),
                ("conv2_kernels", self.conv2.kernels),
                ("conv2_biases", self.conv2.biases),
                ("softmax_w", self.softmax_w),
                ("softmax_b", self.softmax_b)]


@dataclass
class Gradients:
    conv1_kernels: np.ndarray
    conv1_biases: np.ndarray
    conv2_kernels: np.ndarray
    conv2_biases: np.ndarray
    softmax_w: np.ndarray
    softmax_b: np.ndarray

    def tensors(self):
        return [("conv1_kernels", self.conv1_kernels),
                ("conv1_biases", self.conv1_biases),
                ("conv2_kernels", self.conv2_kernels),
                ("conv2_biases", self.conv2_biases),
                ("softmax_w", self.softmax_w),
                ("softmax_b", self.softmax_b)]


@dataclass
class ForwardTrace:
    """Everything backprop needs, for a batch of windows."""

    x: np.ndarray
    patches1: np.ndarray
    pre1: np.ndarray
    act1: np.ndarray
    patches2: np.ndarray
    pre2: np.ndarray
    act2: np.ndarray
    pool_idx: np.ndarray
    pooled: np.ndarray
    dropout_mask: np.ndarray
    dropped: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def conv_output_length(s_in: int, k: int, stride: int) -> int:
    """Valid-convolution output length floor((s_in - k)/stride) + 1."""
    if s_in < k:
        raise InputTooShort(f"input length {s_in} < kernel width {k}")
    return (s_in - k) // stride + 1


def _strided_patches(x: np.ndarray, width: int, stride: int) -> np.ndarray:
    """Windows of the last axis: (..., T, width) at positions t*stride."""
    s_in = x.shape[-1]
    t_out = conv_output_length(s_in, width, stride)
    view = np.lib.stride_tricks.sliding_window_view(x, width, axis=-1)
    return view[..., ::stride, :][..., :t_out, :]


def conv2d_forward(x: np.ndarray, layer: ConvLayerParams) -> np.ndarray:
    """ReLU(conv) of one input: full-height kernels for 2-D inputs,
    per-map 1-D kernels for stacked feature maps."""
    pre = _conv_pre(x[None], layer)[0]
    return np.maximum(pre, 0.0)


def _conv_pre(x: np.ndarray, layer: ConvLayerParams) -> np.ndarray:
    """Batched pre-activations; x is (batch, rows, frames) or (batch, maps, steps)."""
    patches = _strided_patches(x, layer.width, layer.stride)
    if layer.kernels.ndim == 3:
        if x.shape[1] != layer.kernels.shape[1]:
            raise ShapeError(f"input height {x.shape[1]} != kernel height "
                             f"{layer.kernels.shape[1]}")
        out = np.einsum("bdtw,mdw->bmt", patches, layer.kernels)
    else:
        if x.shape[1] != layer.n_kernels:
            raise ShapeError(f"{x.shape[1]} maps for {layer.n_kernels} per-map kernels")
        out = np.einsum("bmtw,mw->bmt", patches, layer.kernels)
    return out + layer.biases[None, :, None]


def pool_regions(length: int, p_out: int):
    """[start, end) bounds of p_out contiguous regions covering [0, length).

    Earlier regions take the larger (ceil) size when length % p_out != 0.
    """
    if p_out < 1 or length < p_out:
        raise PoolTooSmall(f"cannot pool length {length} to {p_out}")
    base, extra = divmod(length, p_out)
    bounds = []
    start = 0
    for r in range(p_out):
        size = base + (1 if r < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def maxpool_adaptive(values: np.ndarray, p_out: int):
    """Adaptive max pool of a 1-D map: (pooled, argmax indices).

    Ties go to the first occurrence within each region.
    """
    values = np.asarray(values)
    pooled = np.empty(p_out, dtype=values.dtype)
    idx = np.empty(p_out, dtype=np.int64)
    for r, (lo, hi) in enumerate(pool_regions(values.shape[-1], p_out)):
        local = int(np.argmax(values[lo:hi]))
        idx[r] = lo + local
        pooled[r] = values[lo + local]
    return pooled, idx


def _pool_batch(act: np.ndarray, p_out: int):
    """Pool (B, n_k, T) maps to (B, n_k, p_out) with absolute argmax indices."""
    bounds = pool_regions(act.shape[-1], p_out)
    pooled = np.empty(act.shape[:2] + (p_out,))
    idx = np.empty(act.shape[:2] + (p_out,), dtype=np.int64)
    for r, (lo, hi) in enumerate(bounds):
        local = np.argmax(act[:, :, lo:hi], axis=2)
        idx[:, :, r] = lo + local
        pooled[:, :, r] = np.take_along_axis(act[:, :, lo:hi], local[:, :, None],
                                             axis=2)[:, :, 0]
    return pooled, idx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, target: int) -> float:
    return float(-np.log(probs[target] + LOSS_EPS))


def batch_cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    picked = probs[np.arange(probs.shape[0]), targets]
    return float(-np.log(picked + LOSS_EPS).mean())


def forward_batch(X: np.ndarray, params: ModelParams,
                  dropout_rng=None) -> ForwardTrace:
    """Forward pass over a batch (batch, rows, frames); dropout active iff rng given."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"expected (batch, features, frames), got {X.shape}")

    patches1 = _strided_patches(X, params.conv1.width, params.conv1.stride)
    if X.shape[1] != params.conv1.kernels.shape[1]:
        raise ShapeError(f"input height {X.shape[1]} != kernel height "
                         f"{params.conv1.kernels.shape[1]}")
    pre1 = np.einsum("bdtw,mdw->bmt", patches1, params.conv1.kernels) \
        + params.conv1.biases[None, :, None]
    act1 = np.maximum(pre1, 0.0)

    patches2 = _strided_patches(act1, params.conv2.width, params.conv2.stride)
    pre2 = np.einsum("bmtw,mw->bmt", patches2, params.conv2.kernels) \
        + params.conv2.biases[None, :, None]
    act2 = np.maximum(pre2, 0.0)

    pooled3, pool_idx = _pool_batch(act2, params.pool_out)
    pooled = pooled3.reshape(X.shape[0], -1)

    if dropout_rng is not None:
        # inverted dropout: mask already carries the 1/keep rescale, so the
        # same array multiplies gradients on the way back
        mask = (dropout_rng.random(pooled.shape) < DROPOUT_KEEP) / DROPOUT_KEEP
        dropped = pooled * mask
    else:
        mask = np.ones_like(pooled)
        dropped = pooled

    logits = dropped @ params.softmax_w + params.softmax_b
    probs = softmax(logits)
    return ForwardTrace(x=X, patches1=patches1, pre1=pre1, act1=act1,
                        patches2=patches2, pre2=pre2, act2=act2,
                        pool_idx=pool_idx, pooled=pooled, dropout_mask=mask,
                        dropped=dropped, logits=logits, probs=probs)


def model_forward(window: np.ndarray, params: ModelParams,
                  dropout_on: bool = False, rng_seed=None) -> ForwardTrace:
    """Single-window forward pass; batch arrays have a leading axis of 1."""
    matrix = getattr(window, "matrix", window)
    rng = None
    if dropout_on:
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
            else np.random.default_rng(rng_seed)
    return forward_batch(np.asarray(matrix)[None], params, rng)


def backward_batch(trace: ForwardTrace, targets: np.ndarray,
                   params: ModelParams) -> Gradients:
    """Exact gradients of the mean cross-entropy over the batch."""
    B = trace.x.shape[0]
    probs = trace.probs
    dlogits = probs.copy()
    dlogits[np.arange(B), targets] -= 1.0
    dlogits /= B

    g_w = trace.dropped.T @ dlogits
    g_b = dlogits.sum(axis=0)
    ddropped = dlogits @ params.softmax_w.T
    dpooled = ddropped * trace.dropout_mask

    # Route pooled gradients back to the argmax positions. Regions are
    # disjoint so each (row, column) target is unique: plain assignment.
    n_k, p_out = params.conv1.n_kernels, params.pool_out
    t2 = trace.act2.shape[2]
    dact2_flat = np.zeros((B * n_k, t2))
    idx_flat = trace.pool_idx.reshape(B * n_k, p_out)
    dact2_flat[np.arange(B * n_k)[:, None], idx_flat] = \
        dpooled.reshape(B * n_k, p_out)
    dact2 = dact2_flat.reshape(B, n_k, t2)

    dpre2 = dact2 * (trace.pre2 > 0)
    g_k2 = np.einsum("bmt,bmtw->mw", dpre2, trace.patches2)
    g_b2 = dpre2.sum(axis=(0, 2))

    dact1 = np.zeros_like(trace.act1)
    s2 = params.conv2.stride
    for w in range(params.conv2.width):
        dact1[:, :, w: w + s2 * t2: s2] += dpre2 * params.conv2.kernels[None, :, w, None]

    dpre1 = dact1 * (trace.pre1 > 0)
    g_k1 = np.einsum("bmt,bdtw->mdw", dpre1, trace.patches1)
    g_b1 = dpre1.sum(axis=(0, 2))

    return Gradients(conv1_kernels=g_k1, conv1_biases=g_b1, conv2_kernels=g_k2,
                     conv2_biases=g_b2, softmax_w=g_w, softmax_b=g_b)


def model_backward(trace: ForwardTrace, target: int,
                   params: ModelParams) -> Gradients:
    """Gradients for a single-window trace."""
    return backward_batch(trace, np.asarray([target]), params)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-4


def init_adam(params: ModelParams, alpha: float = 1e-3, l2: float = 1e-4) -> AdamState:
    zeros = {name: np.zeros_like(a) for name, a in params.tensors()}
    return AdamState(m=zeros,
                     v={k: np.zeros_like(a) for k, a in zeros.items()},
                     alpha=alpha, l2=l2)


def adam_step(params: ModelParams, grads: Gradients, state: AdamState):
    """One Adam update with L2 folded into the gradient: g' = g + l2 * theta.

    Parameter arrays are updated in place; returns (params, state).
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    grad_of = dict(grads.tensors())
    for name, theta in params.tensors():
        g = grad_of[name] + state.l2 * theta
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        theta -= state.alpha * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(input_dim: int, n_classes: int, pool_out: int = POOL_OUT_DEFAULT,
                n_kernels: int = N_KERNELS, rng=None) -> ModelParams:
    """Fresh model: uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases.

    Convolution fans count the receptive field per kernel; the depthwise
    second layer sees one map, so both its fans equal the kernel width.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    lim1 = glorot_limit(input_dim * K1_WIDTH, n_kernels * input_dim * K1_WIDTH)
    k1 = rng.uniform(-lim1, lim1, size=(n_kernels, input_dim, K1_WIDTH))
    lim2 = glorot_limit(K2_WIDTH, K2_WIDTH)
    k2 = rng.uniform(-lim2, lim2, size=(n_kernels, K2_WIDTH))
    feat = n_kernels * pool_out
    lim3 = glorot_limit(feat, n_classes)
    w = rng.uniform(-lim3, lim3, size=(feat, n_classes))
    return ModelParams(
        conv1=ConvLayerParams(kernels=k1, biases=np.zeros(n_kernels), stride=STRIDE1),
        conv2=ConvLayerParams(kernels=k2, biases=np.zeros(n_kernels), stride=STRIDE2),
        softmax_w=w, softmax_b=np.zeros(n_classes),
        pool_out=pool_out, n_classes=n_classes)


def predict_batch(X: np.ndarray, params: ModelParams) -> np.ndarray:
    """Class predictions; argmax breaks ties toward the lowest class index."""
    probs = forward_batch(X, params).probs
    return np.argmax(probs, axis=1)


def min_input_width(params: ModelParams) -> int:
    """Smallest S the model accepts: both convs fit and pooling has enough."""
    t2 = params.pool_out
    t1 = (t2 - 1) * params.conv2.stride + params.conv2.width
    return (t1 - 1) * params.conv1.stride + params.conv1.width


def save_checkpoint(params: ModelParams, path, extra: dict = None) -> None:
    """Magic + u32 header length + JSON header + little-endian f32 blob."""
    header = {
        "version": CHECKPOINT_VERSION,
        "n_kernels": params.conv1.n_kernels,
        "input_dim": params.input_dim,
        "k1_width": params.conv1.width,
        "stride1": params.conv1.stride,
        "k2_width": params.conv2.width,
        "stride2": params.conv2.stride,
        "pool_out": params.pool_out,
        "n_classes": params.n_classes,
        "tensor_order": [name for name, _ in params.tensors()],
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in params.tensors():
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path):
    """Returns (ModelParams, header dict); parameters promoted to float64."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        flat = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)

    n_k = header["n_kernels"]
    d = header["input_dim"]
    k1w, k2w = header["k1_width"], header["k2_width"]
    p_out, n_cls = header["pool_out"], header["n_classes"]
    feat = n_k * p_out
    sizes = [n_k * d * k1w, n_k, n_k * k2w, n_k, feat * n_cls, n_cls]
    if flat.size != sum(sizes):
        raise ValueError(f"checkpoint blob has {flat.size} values, "
                         f"expected {sum(sizes)}")
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    params = ModelParams(
        conv1=ConvLayerParams(kernels=parts[0].reshape(n_k, d, k1w),
                              biases=parts[1], stride=header["stride1"]),
        conv2=ConvLayerParams(kernels=parts[2].reshape(n_k, k2w),
                              biases=parts[3], stride=header["stride2"]),
        softmax_w=parts[4].reshape(feat, n_cls), softmax_b=parts[5],
        pool_out=p_out, n_classes=n_cls)
    return params, header
