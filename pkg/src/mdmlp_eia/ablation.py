"""Ablation matrix runner, synthetic oracles, and forecast export."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import FUSION_MODES, SEASONAL_FUSION_MODES, ModelConfig, ModelParams, predict
from .preprocess import DatasetError, WindowedDataset, make_windows, split_dataset, standardize_global
from .tensor import ConfigError
from .training import TrainConfig, TrainingError, evaluate, train, train_loss

log = logging.getLogger(__name__)

AXES = ("seasonal_fusion", "eia_fusion", "capacity")
_AXIS_FIELD = {"seasonal_fusion": "seasonal_fusion", "eia_fusion": "fusion", "capacity": "capacity"}


# ablation matrix -------------------------------------------------------


@dataclass(frozen=True)
class AblationSpec:
    series: np.ndarray = field(repr=False)
    axis: str
    values: tuple[str, ...]
    horizons: tuple[int, ...] = (96, 192, 336, 720)
    repetitions: int = 3
    seed_base: int = 0
    dataset: str = "series"
    base: ModelConfig = field(default_factory=ModelConfig)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    workers: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown ablation axis {self.axis!r}; choose from {AXES}")
        allowed = {"seasonal_fusion": SEASONAL_FUSION_MODES, "eia_fusion": FUSION_MODES}.get(self.axis)
        for v in self.values:
            if allowed is not None and v not in allowed:
                raise ConfigError(f"{v!r} is not a valid {self.axis} variant; choose from {allowed}")
            if allowed is None:
                self.base.replace(capacity=v)  # raises on a malformed capacity
        if not self.values or not self.horizons or self.repetitions < 1:
            raise ConfigError("ablation needs at least one variant, horizon and repetition")

    def cells(self) -> list[tuple[str, int, int]]:
        """(variant, horizon, seed) in deterministic report order."""
        return [
            (v, h, self.seed_base + r)
            for v in self.values
            for h in self.horizons
            for r in range(self.repetitions)
        ]


@dataclass
class AblationRow:
    axis: str
    variant: str
    horizon: int
    seed: int
    mse: float = math.nan
    mae: float = math.nan
    error: str = ""


@dataclass
class AblationResult:
    rows: list[AblationRow]

    def summary(self) -> list[tuple[str, float, float, int]]:
        """(variant, mean mse, mean mae, missing cells) averaged over horizons and seeds."""
        out = []
        for variant in dict.fromkeys(r.variant for r in self.rows):
            ok = [r for r in self.rows if r.variant == variant and not r.error]
            n_missing = sum(1 for r in self.rows if r.variant == variant and r.error)
            mse = float(np.mean([r.mse for r in ok])) if ok else math.nan
            mae = float(np.mean([r.mae for r in ok])) if ok else math.nan
            out.append((variant, mse, mae, n_missing))
        return out

    def mean_mse(self, variant: str, seed: int | None = None) -> float:
        vals = [r.mse for r in self.rows if r.variant == variant and not r.error and (seed is None or r.seed == seed)]
        return float(np.mean(vals)) if vals else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["axis", "variant", "horizon", "seed", "mse", "mae", "error"])
        for r in self.rows:
            w.writerow([r.axis, r.variant, r.horizon, r.seed, _fmt(r.mse), _fmt(r.mae), r.error])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "avg_mse", "avg_mae", "missing"])
        for variant, mse, mae, missing in self.summary():
            w.writerow([variant, _fmt(mse), _fmt(mae), missing])
        return buf.getvalue()

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        a, b = out_dir / "ablation.csv", out_dir / "ablation_summary.csv"
        a.write_text(self.to_csv())
        b.write_text(self.summary_csv())
        return a, b


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def prepare_splits(series, lookback: int, horizon: int, ratios=(0.7, 0.2, 0.1)):
    """Split, z-score on train statistics, and window the three segments."""
    splits, scaler = standardize_global(split_dataset(series, ratios, lookback, horizon))
    return (
        make_windows(splits.train, lookback, horizon, split="train"),
        make_windows(splits.val, lookback, horizon, split="val"),
        make_windows(splits.test, lookback, horizon, split="test"),
        scaler,
    )


def fit_and_score(series, cfg: ModelConfig, tcfg: TrainConfig, ratios=(0.7, 0.2, 0.1)):
    """Train on the train split, select on val, score on test."""
    tr, va, te, _ = prepare_splits(series, cfg.lookback, cfg.horizon, ratios)
    result = train(tr, va, cfg, tcfg)
    return result, evaluate(result.params, te, cfg)


def _run_cell(args) -> AblationRow:
    spec_axis, variant, horizon, seed, series, base, tcfg, ratios = args
    row = AblationRow(spec_axis, variant, horizon, seed)
    try:
        cfg = base.replace(**{_AXIS_FIELD[spec_axis]: variant, "horizon": horizon, "channels": series.shape[1], "seed": seed})
        _, report = fit_and_score(series, cfg, TrainConfig(**{**tcfg.__dict__, "seed": seed}), ratios)
        row.mse, row.mae = report.mse, report.mae
    except (TrainingError, DatasetError, ConfigError, FloatingPointError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        log.warning("ablation cell %s/%s/h=%d/seed=%d failed: %s", spec_axis, variant, horizon, seed, exc)
    return row


def run_ablation(spec: AblationSpec) -> AblationResult:
    """Train one model per (variant, horizon, seed) and score it on the test split.

    Every variant sees the same seeds, so differences are paired. A failed
    cell is kept as a row with its error message instead of aborting the run.
    """
    series = np.asarray(spec.series, dtype=np.float64)
    jobs = [(spec.axis, v, h, s, series, spec.base, spec.train_cfg, spec.ratios) for v, h, s in spec.cells()]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    return AblationResult(rows)


# additive-gate oracle ---------------------------------------------------


@dataclass(frozen=True)
class SyntheticSignalSpec:
    tlen: int = 100_000
    channels: int = 1
    var_s1: float = 4.0
    var_s2: float = 1.0
    noise_var: float = 1.0
    period_s1: float = 24.0
    period_s2: float = 7.3
    seed: int = 0

    def __post_init__(self):
        if min(self.var_s1, self.var_s2, self.noise_var) < 0:
            raise ConfigError("variances must be >= 0")
        if self.tlen < 2 or self.channels < 1:
            raise ConfigError("need tlen >= 2 and channels >= 1")

    def generate(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """s1, s2 (sinusoids with the requested variances) and Gaussian noise, each (T, C)."""
        rng = np.random.default_rng(self.seed)
        t = np.arange(self.tlen)[:, None]
        phase = rng.uniform(0, 2 * np.pi, size=(2, self.channels))
        # a sinusoid of amplitude A has variance A^2 / 2
        s1 = math.sqrt(2 * self.var_s1) * np.sin(2 * np.pi * t / self.period_s1 + phase[0])
        s2 = math.sqrt(2 * self.var_s2) * np.sin(2 * np.pi * t / self.period_s2 + phase[1])
        noise = rng.normal(0.0, math.sqrt(self.noise_var), size=(self.tlen, self.channels))
        return s1, s2, noise


@dataclass
class AlphaOracleResult:
    grid: np.ndarray
    mse: np.ndarray
    alpha_hat: float
    alpha_star: float
    # MSE(0) - MSE(alpha_hat), and its closed-form value Var[s2]^2 / (Var[s2] + noise)
    reduction: float
    reduction_theory: float


def alpha_star_oracle(spec: SyntheticSignalSpec, grid=None) -> AlphaOracleResult:
    """Brute-force the gate value minimising the error of y21 + alpha * y22.

    y21 is the clean strong component, y22 the weak component plus noise, and
    the target is s1 + s2.
    """
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.min() > 0.0 or grid.max() < 1.0:
        raise ConfigError("alpha grid must cover [0, 1]")
    s1, s2, noise = spec.generate()
    y21, y22 = s1, s2 + noise
    target = s1 + s2
    mse = np.array([np.mean((y21 + a * y22 - target) ** 2) for a in grid])
    i = int(np.argmin(mse))
    denom = spec.var_s2 + spec.noise_var
    alpha_star = spec.var_s2 / denom if denom > 0 else 0.0
    theory = spec.var_s2**2 / denom if denom > 0 else 0.0
    return AlphaOracleResult(grid, mse, float(grid[i]), alpha_star, float(mse[0] - mse[i]), theory)


# attention non-inferiority ----------------------------------------------


def synthetic_trend_seasonal(tlen: int = 1600, channels: int = 4, seed: int = 0) -> np.ndarray:
    """Channels that mix a slow trend and a fast cycle in unequal proportions.

    Channel c weights the trend by w_c and the cycle by 1 - w_c, with w_c
    spread over (0, 1), so no single fixed trend/seasonal balance is best
    for every channel.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(tlen)[:, None]
    w = np.linspace(0.9, 0.1, channels)[None, :]
    trend = np.sin(2 * np.pi * t / 400.0 + rng.uniform(0, 2 * np.pi, channels)) + 0.002 * t
    cycle = np.sin(2 * np.pi * t / 12.0 + rng.uniform(0, 2 * np.pi, channels))
    noise = 0.1 * rng.normal(size=(tlen, channels))
    return 3.0 * w * trend + 2.0 * (1.0 - w) * cycle + noise


@dataclass
class NoninferiorityResult:
    loss_eia: float
    loss_add: float
    passed: bool
    eps: float
    history_eia: list = field(default_factory=list)
    history_add: list = field(default_factory=list)


def noninferiority_configs(channels: int, seed: int = 0) -> tuple[ModelConfig, TrainConfig]:
    cfg = ModelConfig(
        lookback=48,
        horizon=24,
        channels=channels,
        n_h=64,
        dropout_trend=0.0,
        dropout_strong=0.0,
        dropout_weak=0.0,
        dropout_eia=0.0,
        seed=seed,
    )
    tcfg = TrainConfig(epochs=20, batch_size=32, base_lr=3e-3, loss="mse", patience=20, seed=seed)
    return cfg, tcfg


def eia_noninferiority_check(
    seed: int,
    series=None,
    cfg: ModelConfig | None = None,
    tcfg: TrainConfig | None = None,
    eps: float = 0.02,
) -> NoninferiorityResult:
    """Train EIA and ADD twins from identical seeds; compare final train loss.

    Both twins share every initial weight and dropout stream except the
    attention network, which only EIA has; its zero-initialised output layer
    makes the twins coincide before the first update.
    """
    series = synthetic_trend_seasonal(seed=seed) if series is None else np.asarray(series, dtype=np.float64)
    dcfg, dtcfg = noninferiority_configs(series.shape[1], seed)
    cfg = (cfg or dcfg).replace(channels=series.shape[1])
    tcfg = tcfg or dtcfg
    tr, va, _, _ = prepare_splits(series, cfg.lookback, cfg.horizon)
    losses, hists = {}, {}
    for mode in ("EIA", "ADD"):
        mcfg = cfg.replace(fusion=mode)
        result = train(tr, va, mcfg, tcfg)
        losses[mode] = train_loss(result.params, tr, mcfg, tcfg.loss)
        hists[mode] = result.history
        if not math.isfinite(losses[mode]):
            raise TrainingError(f"{mode} twin finished with non-finite train loss (seed {seed})")
    passed = losses["EIA"] <= losses["ADD"] * (1.0 + eps)
    return NoninferiorityResult(losses["EIA"], losses["ADD"], passed, eps, hists["EIA"], hists["ADD"])


# forecast export ----------------------------------------------------------


def export_forecast(
    params: ModelParams,
    cfg: ModelConfig,
    dataset: WindowedDataset,
    index: int,
    csv_path,
    svg_path=None,
    forecaster=None,
) -> Path:
    """Write one window's context, truth and forecast as CSV (and optionally SVG).

    The CSV holds L + Q rows: t = 0..L-1 is the lookback context (prediction
    left empty), t = L..L+Q-1 the forecast horizon. ``forecaster`` replaces
    the model when given; it maps an (1, L, C) input to (1, Q, C).
    """
    if not 0 <= index < len(dataset):
        raise DatasetError(f"window index {index} out of range for {len(dataset)} windows in {dataset.split}")
    x, y = dataset.batch(np.array([index]))
    pred = (forecaster(x) if forecaster is not None else predict(params, cfg, x))[0]
    truth = np.concatenate([x[0], y[0]], axis=0)
    lq, c = truth.shape
    names = dataset.channel_names or [f"ch{i}" for i in range(c)]

    buf = io.StringIO()
    buf.write(f"# split={dataset.split} window={index} start_row={int(dataset.starts[index])}\n")
    buf.write(f"# rows={lq} = lookback {dataset.lookback} + horizon {dataset.horizon}; prediction empty for t < {dataset.lookback}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"{n}_{k}" for n in names for k in ("truth", "pred")])
    for t in range(lq):
        row = [t]
        for j in range(c):
            row.append(repr(float(truth[t, j])))
            row.append(repr(float(pred[t - dataset.lookback, j])) if t >= dataset.lookback else "")
        w.writerow(row)
    csv_path = Path(csv_path)
    csv_path.write_text(buf.getvalue())
    if svg_path is not None:
        Path(svg_path).write_text(_svg_chart(truth, pred, dataset.lookback, names))
    return csv_path


def _svg_chart(truth: np.ndarray, pred: np.ndarray, lookback: int, names: list[str]) -> str:
    width, panel, pad = 640, 120, 24
    lq, c = truth.shape
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{panel * c}" '
        f'viewBox="0 0 {width} {panel * c}" font-family="sans-serif" font-size="11">'
    ]
    for j in range(c):
        top = j * panel
        lo = float(min(truth[:, j].min(), pred[:, j].min()))
        hi = float(max(truth[:, j].max(), pred[:, j].max()))
        span = hi - lo or 1.0

        def pt(t, v):
            px = pad + (width - 2 * pad) * t / max(lq - 1, 1)
            py = top + panel - pad / 2 - (panel - 1.5 * pad) * (v - lo) / span
            return f"{px:.2f},{py:.2f}"

        xl = pad + (width - 2 * pad) * lookback / max(lq - 1, 1)
        parts.append(f'<text x="{pad}" y="{top + 14}">{names[j]}</text>')
        parts.append(f'<line x1="{xl:.2f}" y1="{top + pad}" x2="{xl:.2f}" y2="{top + panel - pad / 2}" stroke="#bbb"/>')
        truth_pts = " ".join(pt(t, truth[t, j]) for t in range(lq))
        pred_pts = " ".join(pt(lookback + t, pred[t, j]) for t in range(pred.shape[0]))
        parts.append(f'<polyline fill="none" stroke="#1f77b4" points="{truth_pts}"/>')
        parts.append(f'<polyline fill="none" stroke="#d62728" points="{pred_pts}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
