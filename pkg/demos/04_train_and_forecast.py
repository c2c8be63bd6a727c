"""Train a small forecaster on a synthetic series, save it, and export a forecast.

Run with ``python3 demos/04_train_and_forecast.py [out_dir]``. Takes a few seconds.
"""
import sys
from pathlib import Path

from mdmlp_eia.ablation import export_forecast, prepare_splits, synthetic_trend_seasonal
from mdmlp_eia.checkpoint import load_checkpoint, save_checkpoint
from mdmlp_eia.model import ModelConfig
from mdmlp_eia.training import TrainConfig, evaluate, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# %%
# Four channels mixing a trend and a 12-step cycle in different proportions.
series = synthetic_trend_seasonal(tlen=1200, channels=4, seed=0)
cfg = ModelConfig(lookback=48, horizon=24, channels=4, n_h=64)
train_ds, val_ds, test_ds, scaler = prepare_splits(series, cfg.lookback, cfg.horizon)
print(f"windows: train {len(train_ds)}, val {len(val_ds)}, test {len(test_ds)}")

# %%
tcfg = TrainConfig(epochs=8, patience=3, base_lr=3e-3, seed=0)
result = train(train_ds, val_ds, cfg, tcfg, on_epoch=lambda r: print(f"epoch {r.epoch}: train {r.train_loss:.4f} val mse {r.val_mse:.4f}"))
report = evaluate(result.params, test_ds, cfg)
print(f"best epoch {result.best_epoch}, test mse {report.mse:.4f}, mae {report.mae:.4f}")

# %%
# Checkpoints restore the exact weights.
path = save_checkpoint(out / "demo.ckpt", result.params, cfg, {"best_epoch": result.best_epoch})
params, cfg2, extra = load_checkpoint(path)
assert cfg2 == cfg and evaluate(params, test_ds, cfg2).mse == report.mse
print("checkpoint:", path, extra)

# %%
# One test window as CSV (lookback rows have no prediction) plus an SVG plot.
test_ds.channel_names = [f"ch{i}" for i in range(4)]
csv_path = export_forecast(params, cfg, test_ds, 0, out / "forecast.csv", out / "forecast.svg")
print("wrote", csv_path, "and", out / "forecast.svg")
