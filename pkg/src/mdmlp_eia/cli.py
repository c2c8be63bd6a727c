"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training or runtime error. Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import (
    AXES,
    AblationSpec,
    SyntheticSignalSpec,
    alpha_star_oracle,
    eia_noninferiority_check,
    export_forecast,
    prepare_splits,
    run_ablation,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data_io import RunConfig, echo_config, load_csv, parse_config
from .model import param_shapes
from .preprocess import DatasetError
from .tensor import ConfigError
from .training import TrainingError, evaluate, gradcheck_groups, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
log = logging.getLogger("mdmlp_eia")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", help="ETT-style CSV file")
    p.add_argument("--seed", type=int)
    p.add_argument("--lookback", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--channels", type=int, help="channel count (info only; otherwise taken from the data)")
    p.add_argument("--fusion", help="ADD | MLP | AGM | EIA")
    p.add_argument("--seasonal-fusion", help="AZCF | WO_WS | MLP_F | DWL_F | CWA_F | RCF | CTF")
    p.add_argument("--capacity", help="DCA | fixed:N | fixed:N1,N2,N3")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdmlp-eia", description="Multi-domain MLP forecaster with energy invariant attention.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{train,eval,forecast,ablate,oracle,gradcheck,info}", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a model and write a run directory")
    _common(p)

    p = sub.add_parser("eval", help="val/test metrics from a run directory")
    p.add_argument("run", help="run directory written by train")

    p = sub.add_parser("forecast", help="export one window's forecast as CSV (+ SVG)")
    p.add_argument("run", help="run directory written by train")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--no-svg", action="store_true")

    p = sub.add_parser("ablate", help="paired-seed ablation matrix")
    _common(p)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated variants (';' separates capacity values)")
    p.add_argument("--horizons", default="96,192,336,720")
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("oracle", help="synthetic gate oracle and attention non-inferiority check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--var-s2", type=float, default=1.0)
    p.add_argument("--noise-var", type=float, default=1.0)
    p.add_argument("--skip-training", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("info", help="parameter counts and capacity sizing")
    _common(p)
    return parser


def _overrides(args) -> dict[str, object]:
    out: dict[str, object] = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    pairs = {
        "data": args.data,
        "seed": args.seed,
        "lookback": args.lookback,
        "horizon": args.horizon,
        "channels": args.channels,
        "fusion": args.fusion,
        "seasonal_fusion": args.seasonal_fusion,
        "capacity": args.capacity,
        "epochs": args.epochs,
        "out_dir": args.out,
    }
    out.update({k: v for k, v in pairs.items() if v is not None})
    if "data" in out and out["data"]:
        out["data"] = str(Path(str(out["data"])).resolve())
    return out


def _load_series(rc: RunConfig):
    if not rc.data:
        raise DatasetError("no dataset given (use --data or the 'data' config key)")
    return load_csv(rc.data, rc.missing)


def _with_channels(rc: RunConfig, channels: int) -> RunConfig:
    return RunConfig(rc.model.replace(channels=channels), rc.train, rc.data, rc.split_ratios, rc.out_dir, rc.missing)


def _write_history(path: Path, history) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_mse", "val_mae", "lr"])
    for r in history:
        w.writerow([r.epoch, repr(r.train_loss), repr(r.val_mse), repr(r.val_mae), repr(r.lr)])
    path.write_text(buf.getvalue())


def cmd_train(args, out) -> int:
    rc = parse_config(args.config, _overrides(args))
    raw = _load_series(rc)
    rc = _with_channels(rc, raw.values.shape[1])
    tr, va, te, _ = prepare_splits(raw.values, rc.model.lookback, rc.model.horizon, rc.split_ratios)
    run = Path(rc.out_dir) / rc.run_name()
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.txt").write_text(echo_config(rc))
    result = train(tr, va, rc.model, rc.train)
    _write_history(run / "history.csv", result.history)
    save_checkpoint(run / "model.ckpt", result.params, rc.model, {"best_epoch": result.best_epoch})
    test = evaluate(result.params, te, rc.model)
    print(f"run {run}", file=out)
    print(f"best_epoch {result.best_epoch} val_mse {result.best_val_mse!r}", file=out)
    print(f"test_mse {test.mse!r} test_mae {test.mae!r}", file=out)
    return EXIT_OK


def _open_run(run_dir):
    run = Path(run_dir)
    if not (run / "config.txt").is_file() or not (run / "model.ckpt").is_file():
        raise DatasetError(f"{run} is not a run directory (config.txt / model.ckpt missing)")
    rc = parse_config(run / "config.txt")
    params, cfg, _ = load_checkpoint(run / "model.ckpt")
    raw = _load_series(rc)
    splits = prepare_splits(raw.values, cfg.lookback, cfg.horizon, rc.split_ratios)
    for ds in splits[:3]:
        ds.channel_names = list(raw.names)
    return run, rc, params, cfg, splits


def cmd_eval(args, out) -> int:
    run, rc, params, cfg, (tr, va, te, _) = _open_run(args.run)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "mse", "mae"])
    for name, ds in (("val", va), ("test", te)):
        rep = evaluate(params, ds, cfg)
        print(f"{name}_mse {rep.mse!r} {name}_mae {rep.mae!r}", file=out)
        w.writerow([name, repr(rep.mse), repr(rep.mae)])
    (run / "eval.csv").write_text(buf.getvalue())
    return EXIT_OK


def cmd_forecast(args, out) -> int:
    run, rc, params, cfg, (tr, va, te, _) = _open_run(args.run)
    ds = {"train": tr, "val": va, "test": te}[args.split]
    stem = run / f"forecast_{args.split}_{args.index}"
    svg = None if args.no_svg else stem.with_suffix(".svg")
    path = export_forecast(params, cfg, ds, args.index, stem.with_suffix(".csv"), svg)
    print(f"wrote {path}" + (f" and {svg}" if svg else ""), file=out)
    return EXIT_OK


def cmd_ablate(args, out) -> int:
    rc = parse_config(args.config, _overrides(args))
    raw = _load_series(rc)
    sep = ";" if args.axis == "capacity" else ","
    values = tuple(v.strip() for v in args.values.split(sep) if v.strip())
    try:
        horizons = tuple(int(h) for h in args.horizons.split(","))
    except ValueError:
        raise UsageError(f"--horizons must be comma-separated integers, got {args.horizons!r}") from None
    spec = AblationSpec(
        raw.values,
        args.axis,
        values,
        horizons,
        args.repeats,
        rc.seed,
        rc.dataset_name,
        rc.model.replace(channels=raw.values.shape[1]),
        rc.train,
        rc.split_ratios,
    )
    result = run_ablation(spec)
    target = Path(rc.out_dir) / f"ablation_{rc.dataset_name}_{args.axis}_{rc.seed}"
    a, b = result.write(target)
    for variant, mse, mae, missing in result.summary():
        print(f"{variant:>12s} mse {mse:.4f} mae {mae:.4f}" + (f" ({missing} missing)" if missing else ""), file=out)
    print(f"wrote {a} and {b}", file=out)
    return EXIT_OK if all(not r.error for r in result.rows) else EXIT_RUNTIME


def cmd_oracle(args, out) -> int:
    spec = SyntheticSignalSpec(tlen=args.samples, var_s2=args.var_s2, noise_var=args.noise_var, seed=args.seed)
    r = alpha_star_oracle(spec)
    print(f"alpha_hat {r.alpha_hat:.2f} alpha_star {r.alpha_star:.4f}", file=out)
    print(f"mse_reduction {r.reduction:.5f} theory {r.reduction_theory:.5f}", file=out)
    if args.skip_training:
        return EXIT_OK
    res = eia_noninferiority_check(args.seed)
    verdict = "pass" if res.passed else "fail"
    print(f"train_loss eia {res.loss_eia:.6f} add {res.loss_add:.6f} ({verdict}, eps={res.eps})", file=out)
    return EXIT_OK if res.passed else EXIT_RUNTIME


def cmd_gradcheck(args, out) -> int:
    worst: dict[str, float] = {}
    for seed in range(args.seeds):
        for group, err in gradcheck_groups(seed).items():
            worst[group] = max(worst.get(group, 0.0), err)
    for group, err in worst.items():
        print(f"{group:>8s} max_rel_err {err:.3e}", file=out)
    return EXIT_OK if max(worst.values()) < args.tol else EXIT_RUNTIME


def cmd_info(args, out) -> int:
    ov = _overrides(args)
    if "channels" not in ov and ov.get("data"):
        ov["channels"] = load_csv(ov["data"]).values.shape[1]
    rc = parse_config(args.config, ov)
    cfg = rc.model
    n1, n2, n3 = cfg.widths()
    shapes = param_shapes(cfg)
    groups: dict[str, int] = {}
    for name, shape in shapes.items():
        groups[name.split(".")[0]] = groups.get(name.split(".")[0], 0) + int(np.prod(shape))
    print(f"channels {cfg.channels} tau {cfg.tau} capacity {cfg.capacity}", file=out)
    print(f"cof={cfg.cof} n1={n1} n2={n2} n3={n3} (L={cfg.lookback}, Q={cfg.horizon}, n_h={cfg.n_h})", file=out)
    for g, n in groups.items():
        print(f"  {g:>8s} {n}", file=out)
    print(f"total_parameters {sum(groups.values())}", file=out)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "forecast": cmd_forecast,
    "ablate": cmd_ablate,
    "oracle": cmd_oracle,
    "gradcheck": cmd_gradcheck,
    "info": cmd_info,
}


def cli_main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, RuntimeError, FloatingPointError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())
