"""Forward and backward passes of the fused mixture-of-experts forecaster.

Pipeline per window: embed each segment's values (linear + exact GeLU), fuse
with the prompt embedding through a sigmoid-gated convex combination,
contextualize with a small stack of pre-norm causal attention blocks, route
through softmax-gated linear experts, and project each position's output to
a next-segment prediction. Gradients are computed by hand in reverse mode;
no autograd framework is involved, which keeps every update auditable and
lets tests pin each block against finite differences.

All math is float64. Forward passes are pure functions of (params, inputs).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ShapeError, TraceError

_LN_EPS = 1e-5
_CHECKPOINT_FORMAT = "fusecast-ckpt v1"


@dataclass(frozen=True)
class ModelConfig:
    segment_len: int
    dim: int
    experts: int = 4
    layers: int = 2
    heads: int = 2
    seed: int = 0
    gated: bool = True
    fused: bool = True

    def __post_init__(self):
        if self.segment_len < 1:
            raise ConfigError(f"segment_len must be >= 1, got {self.segment_len}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.experts < 1:
            raise ConfigError(f"experts must be >= 1, got {self.experts}")
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        if self.layers > 0 and (self.heads < 1 or self.dim % self.heads != 0):
            raise ConfigError(f"heads must divide dim, got dim={self.dim} heads={self.heads}")
        if not self.gated and self.experts != 1:
            raise ConfigError("an ungated head requires exactly one expert")


def gelu(x):
    """Exact erf-based GeLU, not the tanh approximation."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x):
    phi = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    density = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return phi + x * density


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def _softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def _softmax_grad(d_out, softmax_out, axis=-1):
    inner = (d_out * softmax_out).sum(axis=axis, keepdims=True)
    return softmax_out * (d_out - inner)


def param_shapes(config: ModelConfig) -> dict:
    """Every parameter block's shape, in creation order."""
    s, d, k = config.segment_len, config.dim, config.experts
    shapes = {"seg_W": (s, d), "seg_b": (d,)}
    if config.fused:
        shapes["theta"] = ()
    for layer in range(config.layers):
        shapes[f"ln1_{layer}"] = (d,)
        shapes[f"attn_Wq_{layer}"] = (d, d)
        shapes[f"attn_Wk_{layer}"] = (d, d)
        shapes[f"attn_Wv_{layer}"] = (d, d)
        shapes[f"attn_Wo_{layer}"] = (d, d)
        shapes[f"ln2_{layer}"] = (d,)
        shapes[f"ff_W1_{layer}"] = (d, 2 * d)
        shapes[f"ff_b1_{layer}"] = (2 * d,)
        shapes[f"ff_W2_{layer}"] = (2 * d, d)
        shapes[f"ff_b2_{layer}"] = (d,)
    if config.gated:
        shapes["gate_W"] = (d, k)
        shapes["gate_b"] = (k,)
    shapes["experts_W"] = (k, d, d)
    shapes["out_W"] = (d, s)
    shapes["out_b"] = (s,)
    return shapes


def init_params(config: ModelConfig) -> dict:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.

    Norm scales start at 1 and theta at 0 so fusion opens balanced (alpha=0.5).
    Draw order is fixed by param_shapes, so identical configs are bitwise
    reproducible.
    """
    rng = np.random.default_rng(config.seed)
    fan_in = {2: lambda shape: shape[0], 3: lambda shape: shape[1]}
    params = {}
    for name, shape in param_shapes(config).items():
        if name == "theta":
            params[name] = np.zeros(())
        elif name.startswith("ln"):
            params[name] = np.ones(shape)
        elif len(shape) <= 1:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in[len(shape)](shape))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass(frozen=True)
class GateMatrix:
    """Row-stochastic expert weights and the logits they came from."""

    logits: np.ndarray
    weights: np.ndarray


@dataclass
class ForwardTrace:
    """Every intermediate the backward pass consumes."""

    config: ModelConfig
    x: np.ndarray  # (B, N, S) segment values
    te: np.ndarray  # (B, N, D) text embeddings
    se_pre: np.ndarray
    se: np.ndarray
    alpha: float
    fused: np.ndarray  # E
    layers: tuple  # per-block intermediates
    e_hat: np.ndarray
    gate: GateMatrix
    experts_out: np.ndarray  # (B, N, K, D)
    s_hat: np.ndarray
    pred: np.ndarray  # (B, N, S)


def segment_embed(values, params):
    """SE = GeLU(values @ seg_W + seg_b) over the trailing axis."""
    values = np.asarray(values, dtype=np.float64)
    seg_w = params["seg_W"]
    if values.shape[-1] != seg_w.shape[0]:
        raise ShapeError(f"segment length {values.shape[-1]} != seg_W rows {seg_w.shape[0]}")
    return gelu(values @ seg_w + params["seg_b"])


def fuse(se, te, theta):
    """Convex combination E = alpha*SE + (1-alpha)*TE with alpha = sigmoid(theta)."""
    se = np.asarray(se, dtype=np.float64)
    te = np.asarray(te, dtype=np.float64)
    if se.shape != te.shape:
        raise ShapeError(f"fusion inputs {se.shape} vs {te.shape}")
    alpha = sigmoid(float(theta))
    return alpha * se + (1.0 - alpha) * te, alpha


def fuse_grad_theta(se, te, theta):
    """Closed-form d(E)/d(theta) = sigmoid(theta)*(1-sigmoid(theta))*(SE - TE)."""
    alpha = sigmoid(float(theta))
    return alpha * (1.0 - alpha) * (np.asarray(se, dtype=np.float64) - np.asarray(te, dtype=np.float64))


def _split_heads(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _layer_norm(x, scale):
    """Scale-only pre-norm: center, normalize, multiply by a learned gain."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + _LN_EPS)
    xhat = centered * inv
    return scale * xhat, xhat, inv


def _layer_norm_backward(d_out, scale, xhat, inv):
    d_scale = (d_out * xhat).sum(axis=(0, 1))
    d_xhat = d_out * scale
    mean_d = d_xhat.mean(axis=-1, keepdims=True)
    mean_dx = (d_xhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (d_xhat - mean_d - xhat * mean_dx), d_scale


def _block_forward(x, params, config, layer):
    h = config.heads
    scale = 1.0 / np.sqrt(config.dim // h)
    y1, xhat1, inv1 = _layer_norm(x, params[f"ln1_{layer}"])
    q = _split_heads(y1 @ params[f"attn_Wq_{layer}"], h)
    k = _split_heads(y1 @ params[f"attn_Wk_{layer}"], h)
    v = _split_heads(y1 @ params[f"attn_Wv_{layer}"], h)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    n = x.shape[1]
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    scores = np.where(mask, -np.inf, scores)
    attn = _softmax(scores, axis=-1)
    ctx = _merge_heads(attn @ v)
    x_mid = x + ctx @ params[f"attn_Wo_{layer}"]
    y2, xhat2, inv2 = _layer_norm(x_mid, params[f"ln2_{layer}"])
    ff_pre = y2 @ params[f"ff_W1_{layer}"] + params[f"ff_b1_{layer}"]
    ff_act = gelu(ff_pre)
    out = x_mid + ff_act @ params[f"ff_W2_{layer}"] + params[f"ff_b2_{layer}"]
    cache = {
        "xhat1": xhat1, "inv1": inv1, "y1": y1, "q": q, "k": k, "v": v,
        "attn": attn, "ctx": ctx, "xhat2": xhat2, "inv2": inv2, "y2": y2,
        "ff_pre": ff_pre, "ff_act": ff_act,
    }
    return out, cache


def _block_backward(d_out, params, config, layer, cache, grads):
    h = config.heads
    scale = 1.0 / np.sqrt(config.dim // h)
    # feed-forward sublayer
    grads[f"ff_b2_{layer}"] = d_out.sum(axis=(0, 1))
    grads[f"ff_W2_{layer}"] = np.einsum("bnf,bnd->fd", cache["ff_act"], d_out)
    d_ff_pre = (d_out @ params[f"ff_W2_{layer}"].T) * _gelu_grad(cache["ff_pre"])
    grads[f"ff_b1_{layer}"] = d_ff_pre.sum(axis=(0, 1))
    grads[f"ff_W1_{layer}"] = np.einsum("bnd,bnf->df", cache["y2"], d_ff_pre)
    d_y2 = d_ff_pre @ params[f"ff_W1_{layer}"].T
    d_x_mid, grads[f"ln2_{layer}"] = _layer_norm_backward(
        d_y2, params[f"ln2_{layer}"], cache["xhat2"], cache["inv2"]
    )
    d_x_mid = d_x_mid + d_out  # residual
    # attention sublayer
    grads[f"attn_Wo_{layer}"] = np.einsum("bnd,bne->de", cache["ctx"], d_x_mid)
    d_ctx = _split_heads(d_x_mid @ params[f"attn_Wo_{layer}"].T, h)
    d_attn = d_ctx @ cache["v"].transpose(0, 1, 3, 2)
    d_v = cache["attn"].transpose(0, 1, 3, 2) @ d_ctx
    d_scores = _softmax_grad(d_attn, cache["attn"])  # masked cells carry zero weight
    d_q = (d_scores @ cache["k"]) * scale
    d_k = (d_scores.transpose(0, 1, 3, 2) @ cache["q"]) * scale
    d_y1 = np.zeros_like(cache["y1"])
    for name, d_proj in (("attn_Wq", d_q), ("attn_Wk", d_k), ("attn_Wv", d_v)):
        merged = _merge_heads(d_proj)
        grads[f"{name}_{layer}"] = np.einsum("bnd,bne->de", cache["y1"], merged)
        d_y1 += merged @ params[f"{name}_{layer}"].T
    d_x, grads[f"ln1_{layer}"] = _layer_norm_backward(
        d_y1, params[f"ln1_{layer}"], cache["xhat1"], cache["inv1"]
    )
    return d_x + d_x_mid


def backbone_forward(e, params, config: ModelConfig):
    """Contextualize the fused sequence; position i sees only positions <= i."""
    e = np.asarray(e, dtype=np.float64)
    squeeze = e.ndim == 2
    if squeeze:
        e = e[None]
    x = e
    for layer in range(config.layers):
        x, _ = _block_forward(x, params, config, layer)
    return x[0] if squeeze else x


def moe_forward(e_hat, params, config: ModelConfig):
    """Softmax-gated blend of per-expert linear projections.

    Returns (s_hat, GateMatrix, experts_out). With a single ungated expert the
    gate weights are identically 1 and s_hat is a plain linear map.
    """
    e_hat = np.asarray(e_hat, dtype=np.float64)
    experts_out = np.einsum("...d,kde->...ke", e_hat, params["experts_W"])
    if config.gated:
        logits = e_hat @ params["gate_W"] + params["gate_b"]
        weights = _softmax(logits, axis=-1)
    else:
        logits = np.zeros(e_hat.shape[:-1] + (1,))
        weights = np.ones_like(logits)
    s_hat = np.einsum("...k,...kd->...d", weights, experts_out)
    return s_hat, GateMatrix(logits=logits, weights=weights), experts_out


def predict_segment(s_hat, params):
    """Project a gated representation to the next segment's values."""
    return np.asarray(s_hat, dtype=np.float64) @ params["out_W"] + params["out_b"]


def forward(params: dict, config: ModelConfig, x, te) -> ForwardTrace:
    """Full forward pass over a batch of windows.

    x: (B, N, S) segment values; te: (B, N, D) prompt embeddings. Position i
    of the output predicts the values of segment i+1.
    """
    x = np.asarray(x, dtype=np.float64)
    te = np.asarray(te, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] != config.segment_len:
        raise ShapeError(f"segment batch shape {x.shape}, want (B, N, {config.segment_len})")
    if te.shape != x.shape[:2] + (config.dim,):
        raise ShapeError(f"text batch shape {te.shape}, want {x.shape[:2] + (config.dim,)}")
    se_pre = x @ params["seg_W"] + params["seg_b"]
    se = gelu(se_pre)
    if config.fused:
        alpha = sigmoid(float(params["theta"]))
        fused_e = alpha * se + (1.0 - alpha) * te
    else:
        alpha = 1.0
        fused_e = se
    h = fused_e
    layer_caches = []
    for layer in range(config.layers):
        h, cache = _block_forward(h, params, config, layer)
        layer_caches.append(cache)
    s_hat, gate, experts_out = moe_forward(h, params, config)
    pred = s_hat @ params["out_W"] + params["out_b"]
    return ForwardTrace(
        config=config, x=x, te=te, se_pre=se_pre, se=se, alpha=alpha, fused=fused_e,
        layers=tuple(layer_caches), e_hat=h, gate=gate, experts_out=experts_out,
        s_hat=s_hat, pred=pred,
    )


def backward(params: dict, config: ModelConfig, trace: ForwardTrace,
             d_pred, d_gate: Optional[np.ndarray] = None) -> dict:
    """Reverse-mode gradients of a scalar loss for every parameter block.

    d_pred: loss gradient w.r.t. trace.pred, shape (B, N, S). d_gate: optional
    loss gradient w.r.t. the gate weights (sparsity penalties enter here); it
    flows through the gate softmax, so a constant-sum penalty yields exact
    zeros at the logits.
    """
    if trace.config != config:
        raise TraceError("trace was produced under a different model config")
    d_pred = np.asarray(d_pred, dtype=np.float64)
    if d_pred.shape != trace.pred.shape:
        raise TraceError(f"d_pred shape {d_pred.shape} != pred shape {trace.pred.shape}")
    grads = {}
    grads["out_b"] = d_pred.sum(axis=(0, 1))
    grads["out_W"] = np.einsum("bnd,bns->ds", trace.s_hat, d_pred)
    d_s_hat = d_pred @ params["out_W"].T

    weights = trace.gate.weights
    d_weights = np.einsum("bnd,bnkd->bnk", d_s_hat, trace.experts_out)
    if d_gate is not None:
        d_gate = np.asarray(d_gate, dtype=np.float64)
        if d_gate.shape != weights.shape:
            raise TraceError(f"d_gate shape {d_gate.shape} != gate shape {weights.shape}")
        d_weights = d_weights + d_gate
    d_experts_out = weights[..., None] * d_s_hat[..., None, :]
    grads["experts_W"] = np.einsum("bnd,bnke->kde", trace.e_hat, d_experts_out)
    d_e_hat = np.einsum("bnke,kde->bnd", d_experts_out, params["experts_W"])
    if config.gated:
        d_logits = _softmax_grad(d_weights, weights)
        grads["gate_b"] = d_logits.sum(axis=(0, 1))
        grads["gate_W"] = np.einsum("bnd,bnk->dk", trace.e_hat, d_logits)
        d_e_hat = d_e_hat + d_logits @ params["gate_W"].T

    d_h = d_e_hat
    for layer in range(config.layers - 1, -1, -1):
        d_h = _block_backward(d_h, params, config, layer, trace.layers[layer], grads)

    if config.fused:
        grads["theta"] = np.asarray(
            trace.alpha * (1.0 - trace.alpha) * (d_h * (trace.se - trace.te)).sum()
        )
        d_se = trace.alpha * d_h
    else:
        d_se = d_h
    d_se_pre = d_se * _gelu_grad(trace.se_pre)
    grads["seg_b"] = d_se_pre.sum(axis=(0, 1))
    grads["seg_W"] = np.einsum("bns,bnd->sd", trace.x, d_se_pre)
    return grads


def save_checkpoint(params: dict, config: ModelConfig, path) -> None:
    """Versioned JSON checkpoint; float repr keeps the roundtrip bit-exact."""
    blob = {
        "format": _CHECKPOINT_FORMAT,
        "config": asdict(config),
        "params": {
            name: {"shape": list(value.shape), "data": np.asarray(value).ravel().tolist()}
            for name, value in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != _CHECKPOINT_FORMAT:
        raise ConfigError(f"unrecognized checkpoint format: {blob.get('format')!r}")
    config = ModelConfig(**blob["config"])
    expected = param_shapes(config)
    params = {}
    for name, entry in blob["params"].items():
        if name not in expected:
            raise ConfigError(f"unexpected parameter block {name!r}")
        value = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if value.shape != expected[name]:
            raise ShapeError(f"{name}: shape {value.shape}, config implies {expected[name]}")
        params[name] = value
    missing = sorted(set(expected) - set(params))
    if missing:
        raise ConfigError(f"checkpoint missing parameter blocks: {missing}")
    return params, config
