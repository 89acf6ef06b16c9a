"""GraphSage and GAT parameters and the single-device reference engine.

Gradients are reverse-mode by hand; no autodiff. Layer semantics:

* GraphSage: h_v = act(h_v W_self + mean_u(h_u) W_neigh + b), the mean taken
  over all in-edges of v in the sample (the per-layer self-edge included).
* GAT (one head): e_uv = leaky_relu(a_src.z_u + a_dst.z_v) with z = h W,
  alpha = softmax of e over each destination's in-edges (max-subtracted),
  h_v = act(sum_u alpha_uv z_u).

``act`` is ReLU on hidden layers and identity on the last GNN layer; a linear
classifier plus softmax cross-entropy sits on top of the target embeddings.
All losses and gradients are computed as sums over targets; the optimizer
divides by the mini-batch size once, so separately computed partial gradients
can be summed exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from splitgnn.sampling import MiniBatchSample

CHECKPOINT_MAGIC = b"SPLM"
CHECKPOINT_VERSION = 1

MODEL_KINDS = ("graphsage", "gat")


@dataclass
class SageLayer:
    w_self: np.ndarray
    w_neigh: np.ndarray
    bias: np.ndarray


@dataclass
class GatLayer:
    w: np.ndarray
    a_src: np.ndarray
    a_dst: np.ndarray


@dataclass
class ModelParams:
    """Replicated model weights; identical copies live on every device."""

    kind: str
    layers: list
    w_cls: np.ndarray
    b_cls: np.ndarray
    leaky_slope: float = 0.2

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def tensors(self) -> dict:
        """Stable name -> array view of every parameter tensor."""
        out = {}
        for i, layer in enumerate(self.layers):
            if self.kind == "graphsage":
                out[f"layer{i}.w_self"] = layer.w_self
                out[f"layer{i}.w_neigh"] = layer.w_neigh
                out[f"layer{i}.bias"] = layer.bias
            else:
                out[f"layer{i}.w"] = layer.w
                out[f"layer{i}.a_src"] = layer.a_src
                out[f"layer{i}.a_dst"] = layer.a_dst
        out["cls.w"] = self.w_cls
        out["cls.b"] = self.b_cls
        return out

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors().items()}

    def copy(self) -> "ModelParams":
        if self.kind == "graphsage":
            layers = [
                SageLayer(l.w_self.copy(), l.w_neigh.copy(), l.bias.copy())
                for l in self.layers
            ]
        else:
            layers = [
                GatLayer(l.w.copy(), l.a_src.copy(), l.a_dst.copy())
                for l in self.layers
            ]
        return ModelParams(
            self.kind, layers, self.w_cls.copy(), self.b_cls.copy(), self.leaky_slope
        )

    def sgd_step(self, grads: dict, lr: float, num_targets: int):
        """In-place SGD update from summed-over-targets gradients."""
        scale = lr / float(num_targets)
        for name, tensor in self.tensors().items():
            tensor -= scale * grads[name]


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(
    kind: str,
    feat_dim: int,
    hidden: int,
    num_classes: int,
    num_layers: int,
    seed: int = 0,
    leaky_slope: float = 0.2,
) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic given ``seed``."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(num_layers):
        d_in = feat_dim if i == 0 else hidden
        if kind == "graphsage":
            layers.append(
                SageLayer(
                    w_self=_glorot(rng, d_in, hidden, (d_in, hidden)),
                    w_neigh=_glorot(rng, d_in, hidden, (d_in, hidden)),
                    bias=np.zeros(hidden),
                )
            )
        else:
            layers.append(
                GatLayer(
                    w=_glorot(rng, d_in, hidden, (d_in, hidden)),
                    a_src=_glorot(rng, hidden, 1, (hidden,)),
                    a_dst=_glorot(rng, hidden, 1, (hidden,)),
                )
            )
    w_cls = _glorot(rng, hidden, num_classes, (hidden, num_classes))
    return ModelParams(kind, layers, w_cls, np.zeros(num_classes), leaky_slope)


# ---------------------------------------------------------------------------
# Segment primitives (aggregation over edges grouped by destination/source)
# ---------------------------------------------------------------------------


def segment_sum(values: np.ndarray, keys: np.ndarray, n_out: int) -> np.ndarray:
    """Sum ``values`` rows by key into ``n_out`` slots; empty slots are zero."""
    shape = (n_out,) + values.shape[1:]
    if len(keys) == 0:
        return np.zeros(shape)
    order = np.argsort(keys, kind="stable")
    v, k = values[order], keys[order]
    uniq, starts = np.unique(k, return_index=True)
    out = np.zeros(shape)
    out[uniq] = np.add.reduceat(v, starts, axis=0)
    return out


def segment_max(values: np.ndarray, keys: np.ndarray, n_out: int, fill=-np.inf):
    out = np.full((n_out,) + values.shape[1:], fill)
    if len(keys) == 0:
        return out
    order = np.argsort(keys, kind="stable")
    v, k = values[order], keys[order]
    uniq, starts = np.unique(k, return_index=True)
    out[uniq] = np.maximum.reduceat(v, starts, axis=0)
    return out


def segment_count(keys: np.ndarray, n_out: int) -> np.ndarray:
    return np.bincount(keys, minlength=n_out).astype(np.float64)


# ---------------------------------------------------------------------------
# Reference (single-device) execution
# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Activations and per-layer intermediates retained for the backward pass."""

    h: list
    extra: list = field(default_factory=list)


def _act(pre: np.ndarray, final: bool) -> np.ndarray:
    return pre if final else np.maximum(pre, 0.0)


def _sage_layer_forward(layer, h_prev, src, dst, n_out, final):
    sums = segment_sum(h_prev[src], dst, n_out)
    counts = segment_count(dst, n_out)
    mean = sums / counts[:, None]
    pre = h_prev[:n_out] @ layer.w_self + mean @ layer.w_neigh + layer.bias
    extra = {"mean": mean, "counts": counts, "pre": pre}
    return _act(pre, final), extra


def _sage_layer_backward(layer, h_prev, extra, src, dst, d_h, final, grads, i):
    d_pre = d_h if final else d_h * (extra["pre"] > 0)
    n_out = d_pre.shape[0]
    grads[f"layer{i}.w_self"] += h_prev[:n_out].T @ d_pre
    grads[f"layer{i}.w_neigh"] += extra["mean"].T @ d_pre
    grads[f"layer{i}.bias"] += d_pre.sum(axis=0)
    d_prev = np.zeros_like(h_prev)
    d_prev[:n_out] += d_pre @ layer.w_self.T
    d_sums = (d_pre @ layer.w_neigh.T) / extra["counts"][:, None]
    d_prev += segment_sum(d_sums[dst], src, len(h_prev))
    return d_prev


def _gat_layer_forward(layer, h_prev, src, dst, n_out, final, slope):
    z = h_prev @ layer.w
    s = z @ layer.a_src
    t = z[:n_out] @ layer.a_dst
    pre_e = s[src] + t[dst]
    e = np.where(pre_e > 0, pre_e, slope * pre_e)
    m = segment_max(e, dst, n_out)
    w_e = np.exp(e - m[dst])
    denom = segment_sum(w_e, dst, n_out)
    alpha = w_e / denom[dst]
    num = segment_sum(alpha[:, None] * z[src], dst, n_out)
    extra = {
        "z": z,
        "pre_e": pre_e,
        "w_e": w_e,
        "denom": denom,
        "alpha": alpha,
        "num": num,
    }
    return _act(num, final), extra


def _gat_layer_backward(layer, h_prev, extra, src, dst, d_h, final, grads, i, slope):
    z, alpha, w_e = extra["z"], extra["alpha"], extra["w_e"]
    denom, pre_e = extra["denom"], extra["pre_e"]
    n_out = d_h.shape[0]
    n_prev = len(h_prev)
    d_num = d_h if final else d_h * (extra["num"] > 0)
    d_alpha = (d_num[dst] * z[src]).sum(axis=1)
    d_z = segment_sum(alpha[:, None] * d_num[dst], src, n_prev)
    d_w_e = d_alpha / denom[dst]
    d_denom = segment_sum(-d_alpha * w_e / denom[dst] ** 2, dst, n_out)
    d_w_e = d_w_e + d_denom[dst]
    # The per-destination max is a detached stabilizer: alpha is exactly
    # invariant to it, so no gradient flows through the max exchange.
    d_e = d_w_e * w_e
    d_pre_e = d_e * np.where(pre_e > 0, 1.0, slope)
    d_s = segment_sum(d_pre_e, src, n_prev)
    d_t = segment_sum(d_pre_e, dst, n_out)
    d_z += d_s[:, None] * layer.a_src
    grads[f"layer{i}.a_src"] += z.T @ d_s
    d_z[:n_out] += d_t[:, None] * layer.a_dst
    grads[f"layer{i}.a_dst"] += z[:n_out].T @ d_t
    grads[f"layer{i}.w"] += h_prev.T @ d_z
    return d_z @ layer.w.T


def forward_reference(
    sample: MiniBatchSample, params: ModelParams, features: np.ndarray
) -> ForwardTrace:
    """Run all GNN layers on the whole sample on one device."""
    h = [features[sample.vertices(0)]]
    extras = []
    L = params.num_layers
    for l in range(1, L + 1):
        src, dst = sample.edges(l)
        n_out = len(sample.vertices(l))
        final = l == L
        layer = params.layers[l - 1]
        if params.kind == "graphsage":
            h_l, extra = _sage_layer_forward(layer, h[-1], src, dst, n_out, final)
        else:
            h_l, extra = _gat_layer_forward(
                layer, h[-1], src, dst, n_out, final, params.leaky_slope
            )
        h.append(h_l)
        extras.append(extra)
    return ForwardTrace(h=h, extra=extras)


def classifier_loss(params: ModelParams, h_out: np.ndarray, labels: np.ndarray):
    """Softmax cross-entropy over target embeddings.

    Returns (loss summed over rows, d_h, d_w_cls, d_b_cls); gradients are of
    the summed (not averaged) loss.
    """
    logits = h_out @ params.w_cls + params.b_cls
    m = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - m)
    zsum = z.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(zsum[:, 0])
    idx = np.arange(len(labels))
    loss_sum = float((lse - logits[idx, labels]).sum())
    d_logits = z / zsum
    d_logits[idx, labels] -= 1.0
    return loss_sum, d_logits @ params.w_cls.T, h_out.T @ d_logits, d_logits.sum(0)


def backward_reference(
    sample: MiniBatchSample,
    params: ModelParams,
    trace: ForwardTrace,
    d_h_top: np.ndarray,
) -> dict:
    """Propagate d(loss)/d(H^L) down through all layers; returns layer grads."""
    grads = params.zero_grads()
    d_h = d_h_top
    L = params.num_layers
    for l in range(L, 0, -1):
        src, dst = sample.edges(l)
        layer = params.layers[l - 1]
        final = l == L
        if params.kind == "graphsage":
            d_h = _sage_layer_backward(
                layer, trace.h[l - 1], trace.extra[l - 1], src, dst, d_h, final,
                grads, l - 1,
            )
        else:
            d_h = _gat_layer_backward(
                layer, trace.h[l - 1], trace.extra[l - 1], src, dst, d_h, final,
                grads, l - 1, params.leaky_slope,
            )
    return grads


def run_reference(
    sample: MiniBatchSample,
    params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
):
    """Full single-device forward/backward; returns (loss_sum, grads)."""
    trace = forward_reference(sample, params, features)
    y = labels[sample.targets]
    loss_sum, d_h, d_w_cls, d_b_cls = classifier_loss(params, trace.h[-1], y)
    grads = backward_reference(sample, params, trace, d_h)
    grads["cls.w"] += d_w_cls
    grads["cls.b"] += d_b_cls
    return loss_sum, grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path):
    """Binary parameter dump with a shape header; exact float64 round-trip."""
    tensors = params.tensors()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        kind = params.kind.encode()
        fh.write(struct.pack("<H", len(kind)))
        fh.write(kind)
        fh.write(struct.pack("<Id", params.num_layers, params.leaky_slope))
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (klen,) = struct.unpack("<H", fh.read(2))
        kind = fh.read(klen).decode()
        num_layers, slope = struct.unpack("<Id", fh.read(12))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8")
            tensors[name] = data.astype(np.float64).reshape(shape)
    layers = []
    for i in range(num_layers):
        if kind == "graphsage":
            layers.append(
                SageLayer(
                    tensors[f"layer{i}.w_self"],
                    tensors[f"layer{i}.w_neigh"],
                    tensors[f"layer{i}.bias"],
                )
            )
        else:
            layers.append(
                GatLayer(
                    tensors[f"layer{i}.w"],
                    tensors[f"layer{i}.a_src"],
                    tensors[f"layer{i}.a_dst"],
                )
            )
    return ModelParams(kind, layers, tensors["cls.w"], tensors["cls.b"], slope)
