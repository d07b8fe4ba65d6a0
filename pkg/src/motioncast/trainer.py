"""Training, evaluation, occlusion benchmarking and latency measurement.

The loss is plain MSE on axis-angle parameters of the predicted future
rows — Euler extraction is kept out of the objective because its gimbal
branches are hostile to gradients; evaluation converts to Euler angles.
Optimization is the bias-corrected adaptive-moment method with a global
gradient-norm clip. Every run is bit-reproducible from its seed:
shuffling, dropout and synthetic data all derive from explicit
generators.

Horizon bookkeeping is fixed at 25 fps, so the standard millisecond
marks map to future-frame indices 80->2, 160->4, 320->8, 400->10,
560->14, 1000->25.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as tz
from .dataset import MotionWindow
from .kinematics import euler_mse
from .model import (ModelConfig, TwoChannelTransformer, model_forward,
                    named_params, param_count, predict, save_checkpoint)
from .occlusion import (OcclusionSpec, apply_mask, generate_mask,
                        recover_autoregressive, recover_linear_interp,
                        recover_short_term)
from .tensor import Tensor

__all__ = [
    "HORIZONS_MS",
    "NonFiniteGradient",
    "TrainConfig",
    "AdamState",
    "EvalReport",
    "LatencyStats",
    "horizon_frame",
    "loss_fn",
    "horizon_weights",
    "init_adam",
    "clip_gradients",
    "adam_step",
    "TrainResult",
    "train_loop",
    "evaluate_mse_horizons",
    "occlusion_eval",
    "benchmark_inference",
    "write_eval_report",
    "write_loss_curve",
]

HORIZONS_MS = (80, 160, 320, 400, 560, 1000)

RECOVERY_STRATEGIES = ("interp", "short_term", "autoregressive")


class NonFiniteGradient(Exception):
    """A gradient was NaN/inf after clipping; the step was aborted."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    horizon_weighting: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")


@dataclass
class LatencyStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    reps: int
    calls_per_prediction: int


@dataclass
class EvalReport:
    """Per-action / per-horizon Euler-MSE means plus run provenance."""

    horizons_ms: tuple
    overall: dict                 # horizon_ms -> mean MSE
    per_action: dict              # action -> {horizon_ms -> mean MSE}
    n_windows: int
    param_count: int
    config_echo: dict
    prefix_recon_mse: Optional[float] = None
    latency: Optional[LatencyStats] = None


def horizon_frame(ms: int, fps: float = 25.0) -> int:
    """Millisecond horizon -> 1-indexed future frame (80 ms -> frame 2)."""
    exact = ms * fps / 1000.0
    frame = round(exact)
    if abs(exact - frame) > 1e-9 or frame < 1:
        raise ValueError(f"horizon {ms} ms is not a whole frame at {fps} fps")
    return int(frame)


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------

def horizon_weights(horizon: int) -> np.ndarray:
    """Linear decay w_k = 2(T'+1-k)/(T'+1) for k = 1..T'; mean exactly 1."""
    k = np.arange(1, horizon + 1)
    return 2.0 * (horizon + 1 - k) / (horizon + 1)


def loss_fn(pred: Tensor, window: MotionWindow,
            weighted: bool = False) -> Tensor:
    """Mean squared error over the T' future rows in axis-angle space.

    The prefix rows of the prediction are ignored. With ``weighted``,
    earlier horizons count more via a linear decay whose mean is 1, so
    the magnitude stays comparable to the plain loss.
    """
    n, total = window.n_prefix, window.total
    if pred.shape != (total, window.target.shape[1]):
        raise tz.ShapeError(
            f"prediction shape {pred.shape} does not match window "
            f"({total} x {window.target.shape[1]})")
    future = tz.slice_rows(pred, n, total)
    target = Tensor(window.target)
    if not weighted:
        return tz.mse(future, target)
    w = np.repeat(horizon_weights(window.horizon)[:, None],
                  window.target.shape[1], axis=1)
    diff = tz.sub(future, target)
    return tz.mean_all(tz.mul(tz.mul(diff, diff), Tensor(w)))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam(params: dict) -> AdamState:
    return AdamState(m={k: np.zeros(p.shape) for k, p in params.items()},
                     v={k: np.zeros(p.shape) for k, p in params.items()})


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(sq)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def adam_step(params: dict, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros(p.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: TwoChannelTransformer
    curve: list
    halted: bool = False


def train_loop(model: TwoChannelTransformer, windows: Sequence[MotionWindow],
               config: TrainConfig,
               loss: Callable[[Tensor, MotionWindow], Tensor] = None,
               checkpoint_dir=None) -> TrainResult:
    """Train in place; the result carries the model and one (step, loss)
    pair per optimizer update.

    Windows are reshuffled every epoch from the run seed. If the loss or
    a gradient goes non-finite the loop halts, restores the last
    end-of-epoch weights and returns with ``halted`` set. With
    ``checkpoint_dir`` set, a checkpoint is written after every epoch.
    """
    if config.epochs > 0 and not windows:
        raise ValueError("training needs at least one window")
    if loss is None:
        loss = lambda pred, w: loss_fn(pred, w, weighted=config.horizon_weighting)

    params = named_params(model)
    state = init_adam(params)
    drop_rng = np.random.default_rng([config.seed, 1])
    curve = []
    step = 0
    last_good = {k: p.data.copy() for k, p in params.items()}

    def restore():
        for k, p in params.items():
            p.data[...] = last_good[k]

    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 2, epoch]).permutation(len(windows))
        for lo in range(0, len(order), config.batch_size):
            batch = [windows[i] for i in order[lo:lo + config.batch_size]]
            for p in params.values():
                p.zero_grad()
            batch_loss = 0.0
            for w in batch:
                out = model_forward(Tensor(w.input), model, training=True,
                                    rng=drop_rng)
                lw = loss(out, w)
                batch_loss += float(lw.data)
                tz.backward(tz.scale(lw, 1.0 / len(batch)))
            batch_loss /= len(batch)
            if not math.isfinite(batch_loss):
                restore()
                return TrainResult(model, curve, halted=True)
            try:
                clip_gradients(params, config.clip_norm)
                adam_step(params, state, config)
            except NonFiniteGradient:
                restore()
                return TrainResult(model, curve, halted=True)
            step += 1
            curve.append((step, batch_loss))
        last_good = {k: p.data.copy() for k, p in params.items()}
        if checkpoint_dir is not None:
            save_checkpoint(model, f"{checkpoint_dir}/epoch{epoch + 1:03d}.npz")
    return TrainResult(model, curve)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _score_windows(model, windows, horizons_ms, exclude, translation,
                   forecast_prefix=None):
    """Shared scoring core: forecast each window, Euler-score the horizon
    frames, aggregate per action and overall."""
    frames = [horizon_frame(ms) for ms in horizons_ms]
    sums = {ms: 0.0 for ms in horizons_ms}
    per_action: dict = {}
    for i, w in enumerate(windows):
        prefix = w.prefix if forecast_prefix is None else forecast_prefix(i, w)
        pred = predict(model, prefix)
        if w.horizon < max(frames):
            raise ValueError(
                f"window horizon {w.horizon} shorter than {max(frames)} frames")
        scores = euler_mse(w.target, pred[:w.horizon], exclude=exclude,
                           translation=translation)
        act = per_action.setdefault(w.action or "all", {ms: 0.0 for ms in horizons_ms})
        for ms, f in zip(horizons_ms, frames):
            sums[ms] += float(scores[f - 1])
            act[ms] += float(scores[f - 1])
    counts = {}
    for w in windows:
        a = w.action or "all"
        counts[a] = counts.get(a, 0) + 1
    overall = {ms: sums[ms] / len(windows) for ms in horizons_ms}
    for a, acc in per_action.items():
        for ms in horizons_ms:
            acc[ms] /= counts[a]
    return overall, per_action


def evaluate_mse_horizons(model: TwoChannelTransformer,
                          windows: Sequence[MotionWindow],
                          exclude: Sequence[int] = (),
                          translation: Sequence[int] = (),
                          horizons_ms: Sequence[int] = HORIZONS_MS) -> EvalReport:
    """One forward pass per window; Euler-MSE at each horizon frame,
    averaged per action and overall."""
    if not windows:
        raise ValueError("evaluation needs at least one window")
    horizons_ms = tuple(horizons_ms)
    overall, per_action = _score_windows(model, windows, horizons_ms,
                                         exclude, translation)
    return EvalReport(horizons_ms=horizons_ms, overall=overall,
                      per_action=per_action, n_windows=len(windows),
                      param_count=param_count(model),
                      config_echo=dataclasses.asdict(model.config))


def _window_seed(spec: OcclusionSpec, index: int) -> int:
    return int(np.random.SeedSequence([spec.seed, index]).generate_state(1)[0])


def occlusion_eval(model: TwoChannelTransformer,
                   windows: Sequence[MotionWindow],
                   spec: OcclusionSpec, strategy: str,
                   exclude: Sequence[int] = (),
                   translation: Sequence[int] = (),
                   horizons_ms: Sequence[int] = HORIZONS_MS) -> EvalReport:
    """Corrupt each prefix, recover it, then forecast and score as usual.

    ``strategy`` is one of 'interp', 'short_term' (needs windows that
    carry a clean preceding history) or 'autoregressive'. Each window
    gets its own mask, derived deterministically from the spec seed and
    the window index. The report also carries the mean squared
    reconstruction error of the recovered prefix against the clean one,
    measured directly on axis-angle parameters.
    """
    if not windows:
        raise ValueError("evaluation needs at least one window")
    if strategy not in RECOVERY_STRATEGIES:
        raise ValueError(f"strategy must be one of {RECOVERY_STRATEGIES}")
    horizons_ms = tuple(horizons_ms)
    recon_sq = 0.0

    def corrupted_prefix(i, w):
        nonlocal recon_sq
        wspec = dataclasses.replace(spec, seed=_window_seed(spec, i))
        mask = generate_mask(wspec, w.n_prefix, w.input.shape[1])
        corrupted = apply_mask(w.prefix, mask)
        if strategy == "interp":
            recon = recover_linear_interp(corrupted, mask)
        elif strategy == "short_term":
            if w.history is None:
                raise ValueError(
                    "short_term recovery needs windows with a clean history window")
            recon = recover_short_term(w.history, corrupted, mask, model)
        else:
            recon = recover_autoregressive(corrupted, mask, model)
        recon_sq += float(np.mean((recon - w.prefix) ** 2))
        return recon

    overall, per_action = _score_windows(model, windows, horizons_ms, exclude,
                                         translation,
                                         forecast_prefix=corrupted_prefix)
    return EvalReport(horizons_ms=horizons_ms, overall=overall,
                      per_action=per_action, n_windows=len(windows),
                      param_count=param_count(model),
                      config_echo=dataclasses.asdict(model.config),
                      prefix_recon_mse=recon_sq / len(windows))


def benchmark_inference(model: TwoChannelTransformer, reps: int = 100,
                        warmup: int = 10, seed: int = 0) -> LatencyStats:
    """Wall-clock per single forecast (batch 1), warm-up excluded.

    Also verifies non-autoregressive operation: exactly one forward pass
    per prediction, via the model's forward counter.
    """
    if reps < 100:
        raise ValueError("need at least 100 measured repetitions")
    rng = np.random.default_rng(seed)
    prefix = rng.normal(size=(model.config.n_prefix, model.config.n_params))
    for _ in range(warmup):
        predict(model, prefix)
    before = model.forward_count
    times = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        predict(model, prefix)
        times[i] = time.perf_counter() - t0
    calls = (model.forward_count - before) / reps
    if calls != 1:
        raise AssertionError(f"expected 1 forward pass per prediction, saw {calls}")
    ms = times * 1e3
    return LatencyStats(mean_ms=float(ms.mean()),
                        p50_ms=float(np.percentile(ms, 50)),
                        p95_ms=float(np.percentile(ms, 95)),
                        reps=reps, calls_per_prediction=1)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_eval_report(report: EvalReport, path) -> None:
    """JSON document with stable key names."""
    doc = {
        "param_count": report.param_count,
        "n_windows": report.n_windows,
        "config": report.config_echo,
        "overall": [{"horizon_ms": ms, "mse": report.overall[ms]}
                    for ms in report.horizons_ms],
        "actions": [
            {"action": action,
             "horizons": [{"horizon_ms": ms, "mse": acc[ms]}
                          for ms in report.horizons_ms]}
            for action, acc in sorted(report.per_action.items())],
    }
    if report.prefix_recon_mse is not None:
        doc["prefix_reconstruction_mse"] = report.prefix_recon_mse
    if report.latency is not None:
        doc["latency_ms_mean"] = report.latency.mean_ms
        doc["latency_ms_p50"] = report.latency.p50_ms
        doc["latency_ms_p95"] = report.latency.p95_ms
        doc["latency_reps"] = report.latency.reps
        doc["calls_per_prediction"] = report.latency.calls_per_prediction
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_loss_curve(curve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,loss\n")
        for step, value in curve:
            fh.write(f"{step},{value!r}\n")
