"""Losses, learning-rate schedule, AdamW, and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, ModelParams, as_tensors, dropout_rngs, init_params, model_forward, predict, stream
from .preprocess import WindowedDataset
from .tensor import ConfigError, DimensionError, Tape, Tensor, absolute, arctan, backward, constant, finite_diff_check, square

log = logging.getLogger(__name__)

LOSS_KINDS = ("mse", "mae", "arctan")
_SHUFFLE_SLOT = 20


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or gradient)."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    base_lr: float = 5e-3
    lr_steepness: float = 1.0
    # sigmoid midpoint in epochs; None means epochs / 2
    lr_midpoint: float | None = None
    weight_decay: float = 1e-4
    loss: str = "arctan"
    patience: int = 5
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.base_lr < 0:
            raise ConfigError("base_lr must be >= 0")
        if self.batch_size < 1 or self.patience < 1 or self.epochs < 1:
            raise ConfigError("epochs, batch_size and patience must be >= 1")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {LOSS_KINDS}")


def loss(pred, target, kind: str = "mse") -> Tensor:
    """Scalar loss averaged over every element.

    ``arctan`` is mean(arctan|p - t|): like MAE near zero, bounded for
    large residuals.
    """
    pred, target = constant(pred), constant(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    err = pred - target
    if kind == "mse":
        return square(err).mean()
    if kind == "mae":
        return absolute(err).mean()
    if kind == "arctan":
        return arctan(absolute(err)).mean()
    raise ConfigError(f"unknown loss {kind!r}")


def lr_at(epoch: float, cfg: TrainConfig) -> float:
    """Sigmoid decay: base_lr / (1 + exp(k (epoch - midpoint)))."""
    mid = cfg.epochs / 2 if cfg.lr_midpoint is None else cfg.lr_midpoint
    z = cfg.lr_steepness * (epoch - mid)
    # 1/(1+e^z) written to stay finite for large |z|
    if z >= 0:
        ez = math.exp(-z)
        return cfg.base_lr * ez / (1.0 + ez)
    return cfg.base_lr / (1.0 + math.exp(z))


@dataclass
class OptState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "OptState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def opt_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: OptState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, OptState]:
    """One AdamW update with decoupled weight decay and bias correction."""
    t = state.step + 1
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name} at optimizer step {t}")
    new_params, m, v = {}, {}, {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name], m[name], v[name] = p, state.m[name], state.v[name]
            continue
        p = p - lr * weight_decay * p
        m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        new_params[name] = p - lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)
    return new_params, OptState(m, v, t)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


# evaluation -------------------------------------------------------------


@dataclass
class ForecastReport:
    mse: float
    mae: float
    mse_per_step: np.ndarray
    mae_per_step: np.ndarray
    predictions: np.ndarray | None = None
    truths: np.ndarray | None = None


def forecast_metrics(pred, truth) -> ForecastReport:
    """MSE/MAE over every element of (N, Q, C) forecasts, plus per-step curves."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3:
        raise DimensionError(f"expected matching (N, Q, C) arrays, got {pred.shape} and {truth.shape}")
    err = pred - truth
    return ForecastReport(
        mse=float(np.mean(err * err)),
        mae=float(np.mean(np.abs(err))),
        mse_per_step=np.mean(err * err, axis=(0, 2)),
        mae_per_step=np.mean(np.abs(err), axis=(0, 2)),
    )


def evaluate(
    params: ModelParams,
    dataset: WindowedDataset,
    cfg: ModelConfig,
    keep_series: bool = False,
    batch_size: int = 256,
) -> ForecastReport:
    """Dropout-free MSE/MAE over every window, step and channel (dataset scale).

    Batches are reduced in window order, so the result does not depend on
    ``batch_size`` beyond float summation order.
    """
    if len(dataset) == 0:
        raise DimensionError("cannot evaluate an empty split")
    sq = np.zeros(cfg.horizon)
    ab = np.zeros(cfg.horizon)
    preds, truths = [], []
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        xb, yb = dataset.batch(idx)
        pb = predict(params, cfg, xb, batch_size)
        err = pb - yb
        sq += (err * err).sum(axis=(0, 2))
        ab += np.abs(err).sum(axis=(0, 2))
        if keep_series:
            preds.append(pb)
            truths.append(yb)
    per_step = len(dataset) * cfg.channels
    return ForecastReport(
        mse=float(sq.sum() / (per_step * cfg.horizon)),
        mae=float(ab.sum() / (per_step * cfg.horizon)),
        mse_per_step=sq / per_step,
        mae_per_step=ab / per_step,
        predictions=np.concatenate(preds) if keep_series else None,
        truths=np.concatenate(truths) if keep_series else None,
    )


# training loop ----------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse: float
    val_mae: float
    lr: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_mse(self) -> float:
        return self.history[self.best_epoch].val_mse


def batch_gradients(params: ModelParams, cfg: ModelConfig, xb, yb, kind: str, rngs=None, training=True):
    """Loss value and gradients of the batch-mean loss."""
    pt = as_tensors(params, requires_grad=True)
    with Tape() as tape:
        pred, _ = model_forward(xb, pt, cfg, rngs, training=training)
        value = loss(pred, yb, kind)
    return value.item(), backward(tape, value, pt)


def train(
    train_set: WindowedDataset,
    val_set: WindowedDataset,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    params: ModelParams | None = None,
    on_epoch=None,
) -> TrainResult:
    """Mini-batch AdamW with early stopping on validation MSE.

    Returns the parameters of the epoch with the lowest validation MSE.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("train and val splits must be non-empty")
    params = init_params(cfg, tcfg.seed) if params is None else dict(params)
    state = OptState.zeros_like(params)
    shuffle = stream(tcfg.seed, _SHUFFLE_SLOT)
    rngs = dropout_rngs(tcfg.seed)
    clip = tcfg.clip_norm if tcfg.loss != "mse" else None

    result = TrainResult(params={k: v.copy() for k, v in params.items()})
    best = math.inf
    stale = 0
    n = len(train_set)
    for epoch in range(tcfg.epochs):
        lr = lr_at(epoch, tcfg)
        order = shuffle.permutation(n)
        total = 0.0
        for step, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = np.sort(order[start : start + tcfg.batch_size])
            xb, yb = train_set.batch(idx)
            # overflow is reported below as a TrainingError, not as numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = batch_gradients(params, cfg, xb, yb, tcfg.loss, rngs)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            if clip is not None:
                grads = clip_by_global_norm(grads, clip)
            try:
                params, state = opt_step(params, grads, state, lr, tcfg.weight_decay)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, step {step}: {exc}") from None
            total += value * len(idx)
        report = evaluate(params, val_set, cfg)
        record = EpochRecord(epoch, total / n, report.mse, report.mae, lr)
        result.history.append(record)
        log.info("epoch %d train %.5f val mse %.5f mae %.5f lr %.2e", epoch, record.train_loss, report.mse, report.mae, lr)
        if on_epoch is not None:
            on_epoch(record)
        if report.mse < best:
            best, stale = report.mse, 0
            result.params = {k: v.copy() for k, v in params.items()}
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    return result


def train_loss(params: ModelParams, dataset: WindowedDataset, cfg: ModelConfig, kind: str = "mse") -> float:
    """Dropout-free loss over a whole split (mean over every element)."""
    if kind == "mse":
        return evaluate(params, dataset, cfg).mse
    if kind == "mae":
        return evaluate(params, dataset, cfg).mae
    preds = predict(params, cfg, dataset.inputs)
    return float(np.mean(np.arctan(np.abs(preds - dataset.targets))))


def gradcheck_groups(seed: int, cfg: ModelConfig | None = None, eps: float = 1e-5) -> dict[str, float]:
    """Worst finite-difference error per parameter group of a small dropout-free model.

    Parameters are jittered away from their structured init (zero gates,
    zero attention output layer) so that every path carries gradient.
    """
    cfg = cfg or ModelConfig(
        lookback=8, horizon=4, channels=3, embed_dim=8, n_h=16, seed=seed,
        dropout_trend=0.0, dropout_strong=0.0, dropout_weak=0.0, dropout_eia=0.0,
    )
    rng = np.random.default_rng([seed, 99])
    params = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in init_params(cfg, seed).items()}
    x = rng.normal(size=(2, cfg.lookback, cfg.channels))
    y = rng.normal(size=(2, cfg.horizon, cfg.channels))
    fixed = as_tensors(params)
    worst: dict[str, float] = {}
    for name in params:

        def f(leaf, name=name):
            pt = {**fixed, name: leaf}
            pred, _ = model_forward(x, pt, cfg)
            return loss(pred, y, "mse")

        group = name.split(".")[0]
        worst[group] = max(worst.get(group, 0.0), finite_diff_check(f, params[name], eps))
    return worst
