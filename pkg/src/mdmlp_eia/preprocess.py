"""Instance normalisation, EMA decomposition, and dataset windowing."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConfigError, DimensionError, Tensor, record

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5


class DatasetError(ValueError):
    """A series is too short or otherwise unusable for the requested windows."""


# RevIN ------------------------------------------------------------------


@dataclass(frozen=True)
class RevinStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = DEFAULT_EPS


def revin_normalize(x: Tensor, eps: float = DEFAULT_EPS) -> tuple[Tensor, RevinStats]:
    """Per-window, per-channel z-scoring over the time axis (second to last).

    Works on ``(L, C)`` or batched ``(B, L, C)`` input. The statistics are
    treated as constants, so gradients flow only through the affine map.
    """
    if x.ndim < 2 or x.shape[-2] < 2:
        raise DimensionError(f"revin needs at least 2 time steps, got shape {x.shape}")
    mean = x.data.mean(axis=-2, keepdims=True)
    std = np.maximum(x.data.std(axis=-2, keepdims=True), eps)
    return (x - mean) * (1.0 / std), RevinStats(mean, std, eps)


def revin_denormalize(y: Tensor, stats: RevinStats) -> Tensor:
    return y * stats.std + stats.mean


# EMA decomposition ----------------------------------------------------


def ema_decompose(x: Tensor, a: float = 0.3) -> tuple[Tensor, Tensor]:
    """Split ``x`` (time on axis -2) into an EMA trend and the seasonal remainder.

    trend[0] = x[0]; trend[t] = a * x[t] + (1 - a) * trend[t-1].
    """
    if not 0.0 < a <= 1.0:
        raise ConfigError(f"EMA smoothing factor must lie in (0, 1], got {a}")
    trend = record(_ema_forward(x.data, a), (x,), _ema_adjoint(a), "ema")
    return trend, x - trend


def _ema_forward(v: np.ndarray, a: float):
    out = np.empty_like(v)
    out[..., 0, :] = v[..., 0, :]
    for t in range(1, v.shape[-2]):
        out[..., t, :] = a * v[..., t, :] + (1.0 - a) * out[..., t - 1, :]
    return out


def _ema_adjoint(a: float):
    def grad_fn(g):
        # reverse-time recursion of the transposed smoothing operator
        u = np.empty_like(g)
        n = g.shape[-2]
        u[..., n - 1, :] = g[..., n - 1, :]
        for t in range(n - 2, -1, -1):
            u[..., t, :] = g[..., t, :] + (1.0 - a) * u[..., t + 1, :]
        gx = a * u
        gx[..., 0, :] = u[..., 0, :]
        return (gx,)

    return grad_fn


# splitting and windowing ------------------------------------------------


@dataclass
class WindowedDataset:
    """Sliding (lookback, horizon) pairs over one contiguous segment.

    Windows are materialised lazily as strided views of ``series``.
    """

    series: np.ndarray
    lookback: int
    horizon: int
    stride: int = 1
    split: str = "train"
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        need = self.lookback + self.horizon
        if self.series.ndim != 2:
            raise DimensionError(f"series must be (T, C), got {self.series.shape}")
        if self.series.shape[0] < need:
            raise DatasetError(
                f"{self.split} segment has {self.series.shape[0]} rows, needs at least L+Q={need}"
            )
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        self.starts = np.arange(0, self.series.shape[0] - need + 1, self.stride)
        view = sliding_window_view(self.series, need, axis=0)  # (n, C, L+Q)
        self._windows = view[self.starts].transpose(0, 2, 1)

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def inputs(self) -> np.ndarray:
        return self._windows[:, : self.lookback]

    @property
    def targets(self) -> np.ndarray:
        return self._windows[:, self.lookback :]

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        w = self._windows[idx]
        return np.ascontiguousarray(w[:, : self.lookback]), np.ascontiguousarray(w[:, self.lookback :])


def make_windows(series, lookback: int, horizon: int, stride: int = 1, **kw) -> WindowedDataset:
    return WindowedDataset(series, lookback, horizon, stride, **kw)


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    boundaries: tuple[int, int]


def split_dataset(
    series,
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    lookback: int = 96,
    horizon: int | None = None,
) -> Splits:
    """Chronological split with lookback carry-over into val and test.

    Boundaries sit at floor(r0*T) and floor((r0+r1)*T). The val and test
    segments are prefixed with the last ``lookback`` rows before them, so
    their first target step is the first row past the boundary.
    """
    series = np.asarray(series, dtype=np.float64)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not np.isclose(sum(ratios), 1.0):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    t = series.shape[0]
    b1 = int(np.floor(ratios[0] * t + 1e-9))
    b2 = int(np.floor((ratios[0] + ratios[1]) * t + 1e-9))
    train = series[:b1]
    val = series[max(b1 - lookback, 0) : b2]
    test = series[max(b2 - lookback, 0) :]
    if horizon is not None:
        need = lookback + horizon
        for name, seg in (("train", train), ("val", val), ("test", test)):
            if seg.shape[0] < need:
                raise DatasetError(f"{name} segment has {seg.shape[0]} rows, needs at least {need}")
    return Splits(train, val, test, (b1, b2))


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) * self.std + self.mean


def fit_scaler(train: np.ndarray, eps: float = DEFAULT_EPS) -> Scaler:
    train = np.asarray(train, dtype=np.float64)
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    if np.any(std < eps):
        log.warning("zero-variance training channel(s) %s; std clamped to %g", np.flatnonzero(std < eps).tolist(), eps)
    return Scaler(mean, np.maximum(std, eps))


def standardize_global(splits: Splits, eps: float = DEFAULT_EPS) -> tuple[Splits, Scaler]:
    """Z-score all three segments with statistics of the training segment only."""
    scaler = fit_scaler(splits.train, eps)
    return (
        Splits(
            scaler.transform(splits.train),
            scaler.transform(splits.val),
            scaler.transform(splits.test),
            splits.boundaries,
        ),
        scaler,
    )
