"""Compound loss, AdamW, and the seeded teacher-forced training loop.

Each window is a sequence of N segments; position i is trained to predict
segment i+1, so N-1 positions per window carry a loss. The loss adds a
sparsity penalty on the gate matrix. In literal mode the penalty is the
entrywise L1 norm of the row-stochastic gate, which is constant (it always
equals the number of rows) and therefore contributes exactly zero gradient;
it is kept as a selectable mode so the constancy is demonstrable. Entropy
mode actually pushes gate rows toward one-hot.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .descriptors import render_prompt, segment_series
from .errors import ConfigError, NonFiniteGradient, ShapeError
from .model import ModelConfig, backward, forward, init_params

LR_GRID = (1e-2, 1e-3, 5e-4)
LAMBDA_GRID = (0.01, 0.1, 0.5)
SPARSITY_MODES = ("literal", "entropy", "none")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lam: float = 0.1  # sparsity penalty weight
    epochs: int = 10
    batch: int = 32
    seed: int = 0
    sparsity_mode: str = "literal"
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.sparsity_mode not in SPARSITY_MODES:
            raise ConfigError(f"sparsity_mode must be one of {SPARSITY_MODES}")


def compute_loss(targets, predictions, gate_weights, lam: float, mode: str):
    """Mean squared error plus the gate sparsity penalty.

    targets, predictions: (B, S); gate_weights: (B, K), one row per scored
    position. Returns (total, mse_part, exp_part).
    """
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    gate_weights = np.asarray(gate_weights, dtype=np.float64)
    if targets.ndim != 2 or targets.shape != predictions.shape:
        raise ShapeError(f"targets {targets.shape} vs predictions {predictions.shape}")
    if gate_weights.ndim != 2 or gate_weights.shape[0] != targets.shape[0]:
        raise ShapeError(f"gate rows {gate_weights.shape} vs {targets.shape[0]} target rows")
    rows, seg_len = targets.shape
    diff = predictions - targets
    mse_part = float((diff * diff).sum() / (rows * seg_len))
    if mode == "literal":
        exp_part = lam * float(np.abs(gate_weights).sum())
    elif mode == "entropy":
        exp_part = lam * float(-(gate_weights * np.log(gate_weights)).sum())
    elif mode == "none":
        exp_part = 0.0
    else:
        raise ConfigError(f"unknown sparsity mode {mode!r}")
    return mse_part + exp_part, mse_part, exp_part


def penalty_gate_grad(gate_weights, lam: float, mode: str):
    """d(exp_part)/d(gate weights), same shape as the gate matrix."""
    gate_weights = np.asarray(gate_weights, dtype=np.float64)
    if mode == "literal":
        return lam * np.sign(gate_weights)
    if mode == "entropy":
        return lam * (-(np.log(gate_weights) + 1.0))
    if mode == "none":
        return np.zeros_like(gate_weights)
    raise ConfigError(f"unknown sparsity mode {mode!r}")


@dataclass
class OptState:
    m: dict
    v: dict
    step: int = 0


def init_opt_state(params: dict) -> OptState:
    return OptState(
        m={name: np.zeros_like(value) for name, value in params.items()},
        v={name: np.zeros_like(value) for name, value in params.items()},
    )


def adamw_step(params: dict, grads: dict, state: OptState, config: TrainConfig):
    """One AdamW update, in place. Weight decay is decoupled; theta is exempt
    (decaying the fusion gate logit would bias alpha toward 0.5 for no reason).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    for name in sorted(params):
        grad = grads[name]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"non-finite gradient at step {t}", param=name)
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * grad
        v *= config.beta2
        v += (1.0 - config.beta2) * grad * grad
        if config.weight_decay and name != "theta":
            params[name] *= 1.0 - config.lr * config.weight_decay
        params[name] -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    return params, state


def window_segments(values, start, freq, segment_len: int, decimals: int = 4):
    """Segment one context window and render its prompts.

    The window is trimmed from the front to a multiple of segment_len so the
    final segment ends exactly at the context end; next-segment predictions
    then line up with the true future. Returns (x (N, S), prompts).
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0] // segment_len
    if n < 1:
        raise ConfigError(f"context of {values.shape[0]} values < one segment of {segment_len}")
    trim = values.shape[0] - n * segment_len
    segments = segment_series(values[trim:], start + trim * freq, segment_len, freq)
    prompts = [render_prompt(seg, decimals).prompt for seg in segments]
    return np.stack([seg.values for seg in segments]), prompts


def window_tensors(values, start, freq, segment_len: int, text_source, decimals: int = 4):
    """window_segments plus embedded prompts: (x (N, S), te (N, D), prompts)."""
    x, prompts = window_segments(values, start, freq, segment_len, decimals)
    te = np.stack([text_source.embed(p) for p in prompts])
    return x, te, prompts


@dataclass
class WindowTensors:
    """A set of windows ready for the model: stacked segments, text, futures."""

    x: np.ndarray  # (W, N, S)
    te: np.ndarray  # (W, N, D)
    future: np.ndarray  # (W, F) true continuation of each window


def assemble_windows(windows, freq, segment_len: int, text_source, decimals: int = 4) -> WindowTensors:
    if not windows:
        raise ConfigError("no windows to assemble")
    xs, tes, futures = [], [], []
    for w in windows:
        x, te, _ = window_tensors(w.context, w.start, freq, segment_len, text_source, decimals)
        xs.append(x)
        tes.append(te)
        futures.append(np.asarray(w.target, dtype=np.float64))
    return WindowTensors(x=np.stack(xs), te=np.stack(tes), future=np.stack(futures))


def _batch_step(params, mconfig, tconfig, x, te):
    """Forward, loss, backward, update on one batch. Returns the total loss."""
    trace = forward(params, mconfig, x, te)
    batch, n = x.shape[0], x.shape[1]
    rows = batch * (n - 1)
    seg_len = mconfig.segment_len
    targets = x[:, 1:, :]
    scored_pred = trace.pred[:, :-1, :]
    scored_gate = trace.gate.weights[:, :-1, :]
    total, _, _ = compute_loss(
        targets.reshape(rows, seg_len),
        scored_pred.reshape(rows, seg_len),
        scored_gate.reshape(rows, -1),
        tconfig.lam,
        tconfig.sparsity_mode,
    )
    d_pred = np.zeros_like(trace.pred)
    d_pred[:, :-1, :] = 2.0 * (scored_pred - targets) / (rows * seg_len)
    d_gate = np.zeros_like(trace.gate.weights)
    d_gate[:, :-1, :] = penalty_gate_grad(scored_gate, tconfig.lam, tconfig.sparsity_mode)
    return trace, total, d_pred, d_gate


def evaluate_windows(params, mconfig: ModelConfig, data: WindowTensors):
    """Forecast quality of the final position against each window's true future.

    Returns (mse, mae, mean gate entropy, alpha). Only the first
    min(segment_len, F) future values are scored; longer horizons need
    autoregressive rolling and are the evaluation module's job.
    """
    trace = forward(params, mconfig, data.x, data.te)
    horizon = min(mconfig.segment_len, data.future.shape[1])
    pred = trace.pred[:, -1, :horizon]
    truth = data.future[:, :horizon]
    diff = pred - truth
    mse = float((diff * diff).mean())
    mae = float(np.abs(diff).mean())
    weights = trace.gate.weights
    entropy = float(-(weights * np.log(np.maximum(weights, 1e-300))).sum(axis=-1).mean())
    return mse, mae, entropy, trace.alpha


@dataclass
class TrainResult:
    params: dict  # best-validation parameters
    final_params: dict
    curve: list = field(default_factory=list)  # per-epoch stat dicts
    best_epoch: int = -1
    best_val_mse: float = np.inf
    steps: int = 0


def train_model(params: dict, mconfig: ModelConfig, tconfig: TrainConfig,
                train_data: WindowTensors, val_data: WindowTensors) -> TrainResult:
    """Seeded mini-batch training with best-validation checkpointing.

    Shuffle order is drawn from a generator seeded by (seed, epoch), so runs
    are bitwise reproducible and epochs are independent of each other's
    consumption of random numbers.
    """
    if train_data.x.shape[1] < 2:
        raise ConfigError("teacher-forced training needs at least 2 segments per window")
    state = init_opt_state(params)
    result = TrainResult(params={k: v.copy() for k, v in params.items()}, final_params=params)
    n_windows = train_data.x.shape[0]
    done = False
    for epoch in range(tconfig.epochs):
        order = np.random.default_rng([tconfig.seed, epoch]).permutation(n_windows)
        batch_losses = []
        for lo in range(0, n_windows, tconfig.batch):
            idx = order[lo : lo + tconfig.batch]
            x, te = train_data.x[idx], train_data.te[idx]
            trace, total, d_pred, d_gate = _batch_step(params, mconfig, tconfig, x, te)
            grads = backward(params, mconfig, trace, d_pred, d_gate)
            adamw_step(params, grads, state, tconfig)
            batch_losses.append(total)
            if tconfig.max_steps is not None and state.step >= tconfig.max_steps:
                done = True
                break
        val_mse, val_mae, entropy, alpha = evaluate_windows(params, mconfig, val_data)
        result.curve.append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_mse": val_mse,
            "val_mae": val_mae,
            "mean_gate_entropy": entropy,
            "alpha": alpha,
        })
        if val_mse < result.best_val_mse:
            result.best_val_mse = val_mse
            result.best_epoch = epoch
            result.params = {k: v.copy() for k, v in params.items()}
        if done:
            break
    result.steps = state.step
    return result


def select_hyperparams(lr_grid, lambda_grid, evaluate):
    """Exhaustive grid search by validation MSE.

    evaluate(lr, lam) runs one training and returns its validation MSE. Ties
    break toward smaller lr, then smaller lambda.
    """
    if not lr_grid or not lambda_grid:
        raise ConfigError("hyperparameter grids must be non-empty")
    results = []
    for lr in lr_grid:
        for lam in lambda_grid:
            results.append((float(evaluate(lr, lam)), lr, lam))
    best = min(results, key=lambda r: (r[0], r[1], r[2]))
    return best[1], best[2], results


GRADCHECK_CONFIG = dict(segment_len=4, dim=8, experts=2, layers=1, heads=1)


def gradient_check(seed: int = 0, h: float = 1e-5, sparsity_mode: str = "entropy",
                   lam: float = 0.05) -> dict:
    """Analytic vs central-finite-difference gradients on a tiny model.

    Uses the full training loss (entropy penalty by default, so the gate path
    carries a real gradient). Returns {parameter block: max relative error};
    anything above 1e-4 indicates a backward-pass bug.
    """
    mconfig = ModelConfig(seed=seed, **GRADCHECK_CONFIG)
    tconfig = TrainConfig(lam=lam, sparsity_mode=sparsity_mode, seed=seed)
    rng = np.random.default_rng([seed, 2718281828])
    batch, n = 3, 3
    x = rng.normal(size=(batch, n, mconfig.segment_len))
    te = rng.normal(size=(batch, n, mconfig.dim)) / np.sqrt(mconfig.dim)
    params = init_params(mconfig)
    trace, _, d_pred, d_gate = _batch_step(params, mconfig, tconfig, x, te)
    analytic = backward(params, mconfig, trace, d_pred, d_gate)

    def loss_now():
        return _batch_step(params, mconfig, tconfig, x, te)[1]

    report = {}
    for name, value in params.items():
        flat = value.reshape(-1)  # view: edits hit the live parameter
        numeric = np.zeros(flat.shape)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = loss_now()
            flat[i] = saved - h
            down = loss_now()
            flat[i] = saved
            numeric[i] = (up - down) / (2.0 * h)
        a = analytic[name].reshape(-1)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-6)
        report[name] = float((np.abs(a - numeric) / scale).max())
    return report


def run_record(mconfig: ModelConfig, tconfig: TrainConfig, result: TrainResult) -> dict:
    """JSON-ready record of a training run."""
    return {
        "config": {"model": asdict(mconfig), "train": asdict(tconfig)},
        "seed": tconfig.seed,
        "epochs": result.curve,
        "best_epoch": result.best_epoch,
        "best_val_mse": result.best_val_mse,
        "steps": result.steps,
    }
