"""Model sizing by channel count, and what the fusion gates do at init.

Run with ``python3 demos/02_fusion_and_capacity.py``.
"""
import numpy as np

from mdmlp_eia.model import ModelConfig, dca_coefficient, init_params, model_forward, param_count, seasonal_fuse

# %%
# Hidden widths grow in steps with the number of channels.
print(" channels  cof     n1     n2     n3   params")
for c in (7, 21, 137, 321, 862):
    cfg = ModelConfig(channels=c)
    print(f"{c:9d} {dca_coefficient(c, 5):4d} {' '.join(f'{w:6d}' for w in cfg.widths())} {param_count(cfg):8d}")

# %%
# A fixed budget overrides the channel rule.
print("fixed:64 ->", ModelConfig(channels=862, capacity="fixed:64").widths())

# %%
# At init the seasonal gate is closed: only the strong branch passes through.
rng = np.random.default_rng(0)
y21, y22 = rng.normal(size=(2, 96, 7)), rng.normal(size=(2, 96, 7))
fused = seasonal_fuse(y21, y22, "AZCF", {"sfuse.alpha": np.zeros((1, 7))})
print("gate closed, output equals strong branch:", np.array_equal(fused.data, y21))

# %%
# The attention weight between trend and seasonal starts at exactly one half,
# so EIA begins as a plain sum of the two predictions.
cfg = ModelConfig()
x = rng.normal(size=(4, cfg.lookback, cfg.channels))
y, trace = model_forward(x, init_params(cfg, seed=0), cfg)
print("beta unique values:", np.unique(trace.beta.data))
print("EIA output equals y1 + y2:", np.array_equal(trace.y3.data, (trace.y1 + trace.y2).data))
