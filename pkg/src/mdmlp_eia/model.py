"""The MDMLP-EIA network.

Three channel-independent MLP branches (trend, strong seasonal in the
frequency domain, weak seasonal in the time domain), a per-channel gate that
fuses the two seasonal predictions, and a sigmoid attention that fuses trend
and seasonal predictions at constant total energy. Every hidden width scales
with ``ceil(sqrt(C) / tau)``.

Parameters live in a flat ``dict[str, np.ndarray]``; names are prefixed by
branch (``trend.``, ``strong.``, ``weak.``, ``sfuse.``, ``eia.``, ``revin.``).
All functions accept a single window ``(L, C)`` or a batch ``(B, L, C)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .preprocess import DEFAULT_EPS, RevinStats, ema_decompose, revin_denormalize, revin_normalize
from .spectral import FreMlpParams, fre_mlp, irfft, rfft, value_embed
from .tensor import (
    ConfigError,
    DimensionError,
    Tensor,
    concat,
    constant,
    dropout,
    gelu,
    leaky_relu,
    sigmoid,
    tanh,
)

FUSION_MODES = ("ADD", "MLP", "AGM", "EIA")
SEASONAL_FUSION_MODES = ("AZCF", "WO_WS", "MLP_F", "DWL_F", "CWA_F", "RCF", "CTF")

ModelParams = dict  # name -> np.ndarray

# fixed RNG slots so that shared branches draw identical numbers across variants
_INIT_SLOT = {"trend": 0, "strong": 1, "weak": 2, "sfuse": 3, "eia": 4, "revin": 5}
_DROPOUT_SLOT = {"trend": 10, "strong": 11, "weak": 12, "eia": 13}


def stream(seed: int, slot: int) -> np.random.Generator:
    """Independent PCG64 stream for (seed, slot); stable across platforms."""
    return np.random.default_rng([int(seed), int(slot)])


def dropout_rngs(seed: int) -> dict[str, np.random.Generator]:
    return {k: stream(seed, s) for k, s in _DROPOUT_SLOT.items()}


def dca_coefficient(channels: int, tau: float = 5) -> int:
    """cof = ceil(sqrt(C) / tau), evaluated exactly for integer inputs."""
    if channels < 1 or tau < 1:
        raise ConfigError(f"need C >= 1 and tau >= 1, got C={channels}, tau={tau}")
    cof = max(1, math.ceil(math.sqrt(channels) / tau))
    # guard against sqrt rounding at perfect squares: cof is the least m with (m*tau)^2 >= C
    while cof > 1 and ((cof - 1) * tau) ** 2 >= channels:
        cof -= 1
    while (cof * tau) ** 2 < channels:
        cof += 1
    return cof


@dataclass(frozen=True)
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    channels: int = 7
    embed_dim: int = 8
    n_h: int = 256
    tau: int = 5
    dropout_trend: float = 0.1
    dropout_strong: float = 0.1
    dropout_weak: float = 0.1
    dropout_eia: float = 0.1
    fusion: str = "EIA"
    seasonal_fusion: str = "AZCF"
    # "DCA", "fixed:N" (all three MLPs use N) or "fixed:N1,N2,N3"
    capacity: str = "DCA"
    ema_alpha: float = 0.3
    softshrink: float = 0.01
    leaky_slope: float = 0.01
    revin_affine: bool = False
    revin_eps: float = DEFAULT_EPS
    gelu_exact: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("lookback", "horizon", "channels", "embed_dim", "n_h"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        for name in ("dropout_trend", "dropout_strong", "dropout_weak", "dropout_eia"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.fusion!r}; choose from {FUSION_MODES}")
        if self.seasonal_fusion not in SEASONAL_FUSION_MODES:
            raise ConfigError(
                f"unknown seasonal fusion mode {self.seasonal_fusion!r}; choose from {SEASONAL_FUSION_MODES}"
            )
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ConfigError("ema_alpha must lie in (0, 1]")
        if self.softshrink < 0:
            raise ConfigError("softshrink threshold must be >= 0")
        self.widths()  # validates capacity

    @property
    def cof(self) -> int:
        return dca_coefficient(self.channels, self.tau)

    def widths(self) -> tuple[int, int, int]:
        """Hidden sizes (n1, n2, n3) of the trend, strong and weak MLPs."""
        if self.capacity == "DCA":
            cof = self.cof
            return self.lookback * cof, self.n_h * cof, 2 * self.lookback * cof
        if self.capacity.startswith("fixed:"):
            try:
                vals = [int(v) for v in self.capacity[6:].split(",")]
            except ValueError:
                vals = []
            if len(vals) == 1:
                vals = vals * 3
            if len(vals) == 3 and all(v >= 1 for v in vals):
                return tuple(vals)
        raise ConfigError(f"capacity must be 'DCA', 'fixed:N' or 'fixed:N1,N2,N3', got {self.capacity!r}")

    def replace(self, **changes) -> "ModelConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ModelConfig(**values)


# parameters -------------------------------------------------------------


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    L, Q, C, E = cfg.lookback, cfg.horizon, cfg.channels, cfg.embed_dim
    n1, n2, n3 = cfg.widths()
    shapes = {
        "trend.w1": (L, 4 * n1), "trend.b1": (4 * n1,),
        "trend.w2": (4 * n1, 2 * n1), "trend.b2": (2 * n1,),
        "trend.w3": (2 * n1, Q), "trend.b3": (Q,),
        "strong.embed": (E,),
        "strong.fre_w_re": (E, E), "strong.fre_w_im": (E, E),
        "strong.fre_b_re": (E,), "strong.fre_b_im": (E,),
        "strong.w1": (L * E, n2), "strong.b1": (n2,),
        "strong.w2": (n2, Q), "strong.b2": (Q,),
    }  # fmt: skip
    if cfg.seasonal_fusion != "WO_WS":
        shapes.update({"weak.w1": (L, n3), "weak.b1": (n3,), "weak.w2": (n3, Q), "weak.b2": (Q,)})
    mode = cfg.seasonal_fusion
    if mode in ("AZCF", "RCF"):
        shapes["sfuse.alpha"] = (1, C)
    elif mode == "DWL_F":
        shapes.update({"sfuse.alpha1": (1, C), "sfuse.alpha2": (1, C)})
    elif mode == "CTF":
        shapes["sfuse.alpha"] = (Q, C)
    elif mode in ("MLP_F", "CWA_F"):
        shapes.update({"sfuse.w": (2 * C, C), "sfuse.b": (C,)})
    if cfg.fusion in ("EIA", "AGM"):
        shapes.update({"eia.w1": (2 * C, 4 * C), "eia.b1": (4 * C,), "eia.w2": (4 * C, C), "eia.b2": (C,)})
    elif cfg.fusion == "MLP":
        shapes.update({"eia.w": (2 * C, C), "eia.b": (C,)})
    if cfg.revin_affine:
        shapes.update({"revin.gamma": (C,), "revin.beta": (C,)})
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


def init_params(cfg: ModelConfig, seed: int | None = None) -> ModelParams:
    """Fresh parameters.

    Weights are uniform in +-1/sqrt(fan_in) and biases zero, except: the
    seasonal gate starts at exactly zero (uniform in +-0.1 for RCF), DWL_F
    starts at (1, 0), and the last attention layer is zero so beta = 0.5.
    """
    seed = cfg.seed if seed is None else seed
    rngs = {branch: stream(seed, slot) for branch, slot in _INIT_SLOT.items()}
    params: ModelParams = {}
    for name, shape in param_shapes(cfg).items():
        branch, leaf = name.split(".")
        rng = rngs[branch]
        if name in ("eia.w2", "eia.b2") or leaf.startswith("b") and leaf != "beta" or leaf.startswith("fre_b"):
            value = np.zeros(shape)
        elif branch == "sfuse" and leaf.startswith("alpha"):
            if cfg.seasonal_fusion == "RCF":
                value = rng.uniform(-0.1, 0.1, size=shape)
            elif leaf == "alpha1":
                value = np.ones(shape)
            else:
                value = np.zeros(shape)
        elif name == "revin.gamma":
            value = np.ones(shape)
        elif name == "revin.beta":
            value = np.zeros(shape)
        else:
            fan_in = shape[0] if len(shape) == 2 else 1
            bound = 1.0 / math.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = value
    return params


def as_tensors(params: Mapping[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def _t(p: Mapping, name: str) -> Tensor:
    try:
        return constant(p[name])
    except KeyError:
        raise ConfigError(f"parameter {name!r} missing for this configuration") from None


def _swap(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return x.transpose(axes)


def _check_cl(x: Tensor, cfg: ModelConfig, what: str) -> None:
    if x.ndim < 2 or x.shape[-2:] != (cfg.channels, cfg.lookback):
        raise DimensionError(f"{what} expects (..., C={cfg.channels}, L={cfg.lookback}), got {x.shape}")


# branches ---------------------------------------------------------------


def trend_forward(x1, p, cfg: ModelConfig, rng=None, training: bool = False) -> Tensor:
    """(…, C, L) trend component -> (…, Q, C) trend prediction."""
    x1 = constant(x1)
    _check_cl(x1, cfg, "trend MLP")
    h = tanh(x1 @ _t(p, "trend.w1") + _t(p, "trend.b1"))
    h = dropout(h, cfg.dropout_trend, rng, training)
    h = tanh(h @ _t(p, "trend.w2") + _t(p, "trend.b2"))
    h = dropout(h, cfg.dropout_trend, rng, training)
    return _swap(h @ _t(p, "trend.w3") + _t(p, "trend.b3"))


def strong_seasonal_features(x2, p, cfg: ModelConfig) -> Tensor:
    """Embed, rfft over time, FreMLP, irfft: (…, C, L) -> (…, C, L, E)."""
    emb = value_embed(constant(x2), _t(p, "strong.embed"))
    spec = rfft(emb, axis=-2)
    fre = FreMlpParams(
        _t(p, "strong.fre_w_re"), _t(p, "strong.fre_w_im"), _t(p, "strong.fre_b_re"), _t(p, "strong.fre_b_im")
    )
    spec = fre_mlp(spec, fre, lam=cfg.softshrink, slope=cfg.leaky_slope)
    return irfft(spec, cfg.lookback, axis=-2)


def strong_seasonal_forward(x2, p, cfg: ModelConfig, rng=None, training: bool = False) -> Tensor:
    x2 = constant(x2)
    _check_cl(x2, cfg, "strong seasonal MLP")
    fs1 = strong_seasonal_features(x2, p, cfg)
    fs2 = fs1.reshape(*fs1.shape[:-2], cfg.lookback * cfg.embed_dim)
    h = leaky_relu(fs2 @ _t(p, "strong.w1") + _t(p, "strong.b1"), cfg.leaky_slope)
    h = dropout(h, cfg.dropout_strong, rng, training)
    return _swap(h @ _t(p, "strong.w2") + _t(p, "strong.b2"))


def weak_seasonal_forward(x2, p, cfg: ModelConfig, rng=None, training: bool = False) -> Tensor:
    x2 = constant(x2)
    _check_cl(x2, cfg, "weak seasonal MLP")
    h = tanh(x2 @ _t(p, "weak.w1") + _t(p, "weak.b1"))
    h = dropout(h, cfg.dropout_weak, rng, training)
    return _swap(h @ _t(p, "weak.w2") + _t(p, "weak.b2"))


# fusion -----------------------------------------------------------------


def seasonal_fuse(y21, y22, mode: str, p) -> Tensor:
    """Combine strong (y21) and weak (y22) seasonal predictions, both (…, Q, C)."""
    y21 = constant(y21)
    if mode == "WO_WS":
        return y21
    y22 = constant(y22)
    if y21.shape != y22.shape:
        raise DimensionError(f"seasonal predictions differ in shape: {y21.shape} vs {y22.shape}")
    if mode in ("AZCF", "RCF", "CTF"):
        # (1, C) broadcasts over the horizon axis; CTF carries a full (Q, C) gate
        return y21 + _t(p, "sfuse.alpha") * y22
    if mode == "DWL_F":
        return _t(p, "sfuse.alpha1") * y21 + _t(p, "sfuse.alpha2") * y22
    if mode == "MLP_F":
        return concat([y21, y22], axis=-1) @ _t(p, "sfuse.w") + _t(p, "sfuse.b")
    if mode == "CWA_F":
        pooled = concat([y21, y22], axis=-1).mean(axis=-2, keepdims=True)
        g = sigmoid(pooled @ _t(p, "sfuse.w") + _t(p, "sfuse.b"))
        return g * y21 + (1.0 - g) * y22
    raise ConfigError(f"unknown seasonal fusion mode {mode!r}")


def attention_weights(y1, y2, p, cfg: ModelConfig, rng=None, training: bool = False) -> Tensor:
    """beta = sigmoid(W2 · dropout(gelu(W1 · [y1, y2]))), row-wise over the horizon."""
    yc = concat([constant(y1), constant(y2)], axis=-1)
    h = gelu(yc @ _t(p, "eia.w1") + _t(p, "eia.b1"), exact=cfg.gelu_exact)
    h = dropout(h, cfg.dropout_eia, rng, training)
    return sigmoid(h @ _t(p, "eia.w2") + _t(p, "eia.b2"))


def eia_fuse(
    y1,
    y2,
    mode: str,
    p,
    cfg: ModelConfig,
    rng=None,
    training: bool = False,
    beta=None,
) -> tuple[Tensor, Tensor | None]:
    """Fuse trend and seasonal predictions. Returns (y3, beta or None).

    ``beta`` overrides the attention network when given (EIA/AGM only).
    """
    y1, y2 = constant(y1), constant(y2)
    if y1.shape != y2.shape:
        raise DimensionError(f"trend/seasonal predictions differ in shape: {y1.shape} vs {y2.shape}")
    if mode == "ADD":
        return y1 + y2, None
    if mode == "MLP":
        return concat([y1, y2], axis=-1) @ _t(p, "eia.w") + _t(p, "eia.b"), None
    if mode not in ("EIA", "AGM"):
        raise ConfigError(f"unknown fusion mode {mode!r}")
    if beta is None:
        beta = attention_weights(y1, y2, p, cfg, rng, training)
    beta = constant(beta)
    mixed = beta * y1 + (1.0 - beta) * y2
    return (2.0 * mixed if mode == "EIA" else mixed), beta


# full model ---------------------------------------------------------------


@dataclass
class ForwardTrace:
    x1: Tensor
    x2: Tensor
    y1: Tensor
    y21: Tensor
    y22: Tensor | None
    y2: Tensor
    beta: Tensor | None
    y3: Tensor
    stats: RevinStats


def model_forward(
    x,
    params,
    cfg: ModelConfig,
    rngs: Mapping[str, np.random.Generator] | None = None,
    training: bool = False,
) -> tuple[Tensor, ForwardTrace]:
    """Forecast (…, Q, C) from a lookback window (…, L, C)."""
    x = constant(x)
    if x.ndim < 2 or x.shape[-2:] != (cfg.lookback, cfg.channels):
        raise DimensionError(f"input must be (..., L={cfg.lookback}, C={cfg.channels}), got {x.shape}")
    if training and rngs is None:
        rngs = dropout_rngs(cfg.seed)
    rngs = rngs or {}
    p = params

    xn, stats = revin_normalize(x, cfg.revin_eps)
    if cfg.revin_affine:
        xn = xn * _t(p, "revin.gamma") + _t(p, "revin.beta")
    trend, seasonal = ema_decompose(xn, cfg.ema_alpha)
    x1, x2 = _swap(trend), _swap(seasonal)

    y1 = trend_forward(x1, p, cfg, rngs.get("trend"), training)
    y21 = strong_seasonal_forward(x2, p, cfg, rngs.get("strong"), training)
    y22 = None
    if cfg.seasonal_fusion != "WO_WS":
        y22 = weak_seasonal_forward(x2, p, cfg, rngs.get("weak"), training)
    y2 = seasonal_fuse(y21, y22, cfg.seasonal_fusion, p)
    y3, beta = eia_fuse(y1, y2, cfg.fusion, p, cfg, rngs.get("eia"), training)

    out = y3
    if cfg.revin_affine:
        out = (out - _t(p, "revin.beta")) / (_t(p, "revin.gamma") + cfg.revin_eps**2)
    y = revin_denormalize(out, stats)
    return y, ForwardTrace(x1, x2, y1, y21, y22, y2, beta, y3, stats)


def predict(params, cfg: ModelConfig, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Dropout-free forecasts for a stack of windows (N, L, C) -> (N, Q, C)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    p = {k: constant(v) for k, v in params.items()}
    outs = [
        model_forward(inputs[i : i + batch_size], p, cfg, training=False)[0].data
        for i in range(0, len(inputs), batch_size)
    ]
    if not outs:
        return np.zeros((0, cfg.horizon, cfg.channels))
    return np.concatenate(outs, axis=0)
