"""Command-line interface.

Subcommands: train, eval, ablate, profile, gen-data, plot.
Exit codes: 0 success, 1 usage error, 2 validation/contract error,
3 numeric failure. GMG_DATA_DIR overrides the root for relative data paths.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .config import (STANDARD_ABLATION, AblationSpec, ModelConfig, TrainConfig,
                     VARIANTS)
from .errors import ContractError, GmgError, NumericError
from .metrics import MetricReport
from .plots import emit_plots
from .profiling import profile
from .training import evaluate, load_model, run_ablation, train

USAGE_EXIT = 1
VALIDATION_EXIT = 2
NUMERIC_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _data_path(path: str) -> Path:
    p = Path(path)
    root = os.environ.get("GMG_DATA_DIR")
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _load_train_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        cfg = TrainConfig.from_json(Path(args.config).read_text())
    else:
        cfg = TrainConfig()
    if getattr(args, "variant", None):
        cfg.model = ModelConfig.for_variant(args.variant, **{
            k: v for k, v in cfg.model.to_dict().items()
            if k not in ("variant", "use_gfm", "use_sam", "use_mgm")})
    if getattr(args, "layers", None):
        cfg.model.num_layers = args.layers
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "steps", None):
        cfg.max_steps = args.steps
    cfg.validate()
    return cfg


def _parse_thresholds(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as e:
        raise ContractError(f"bad threshold list {text!r}: {e}") from e


def _add_common(p):
    p.add_argument("--config", help="JSON file echoing the train config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--layers", type=int)
    p.add_argument("--out", default="runs", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gmg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="train a model")
    _add_common(p)
    p.add_argument("--data", required=True, help="sequence file (GMGS format)")
    p.add_argument("--steps", type=int, help="override max optimizer steps")
    p.add_argument("--resume", help="checkpoint archive to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--thresholds", default="", help="comma-separated, data units")
    p.add_argument("--out", default="runs")
    p.add_argument("--dump-predictions", action="store_true",
                   help="also write predictions.npz for error-map plots")

    p = sub.add_parser("ablate", help="run the module-toggle study")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--specs", help="JSON list of {name,gfm,sam,mgm} rows")
    p.add_argument("--thresholds", default="")

    p = sub.add_parser("profile", help="parameter/FLOPs/throughput profile")
    _add_common(p)
    p.add_argument("--no-fps", action="store_true", help="skip throughput timing")

    p = sub.add_parser("gen-data", help="generate synthetic sequences")
    p.add_argument("--source", choices=("moving-mnist", "blobs"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=None, help="frame height/width")
    p.add_argument("--t-in", type=int, default=10)
    p.add_argument("--t-out", type=int, default=10)
    p.add_argument("--scale", type=float, default=None,
                   help="data units per pixel unit, stored in metadata")
    p.add_argument("--out", required=True, help="output sequence file")

    p = sub.add_parser("plot", help="render figures from run artifacts")
    p.add_argument("--loss", help="loss log JSON from train")
    p.add_argument("--report", help="metric report JSON from eval")
    p.add_argument("--predictions", help="predictions npz from eval")
    p.add_argument("--out", default="plots")
    return parser


def _cmd_train(args) -> int:
    cfg = _load_train_config(args)
    records = data_mod.load_sequences(_data_path(args.data))
    result = train(cfg, records, args.out, resume=args.resume)
    print(f"trained {result.steps} steps, final loss {result.loss_log[-1]:.6g}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss log:   {result.loss_log_path}")
    return 0


def _cmd_eval(args) -> int:
    records = data_mod.load_sequences(_data_path(args.data))
    thresholds = _parse_thresholds(args.thresholds)
    model, _ = load_model(args.checkpoint)
    report = evaluate(model, records, thresholds)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "metric_report.json"
    report_path.write_text(report.to_json())
    if args.dump_predictions:
        frames, _ = data_mod.stack_records(records), None
        arr = frames[0]
        t_in = model.config.t_in
        with torch.no_grad():
            pred = model(torch.from_numpy(arr[:, :t_in]), model.config.t_out)
        np.savez(out_dir / "predictions.npz", pred=pred.numpy(),
                 target=arr[:, t_in:])
    for key in ("mse", "mae", "rmse", "psnr", "ssim"):
        print(f"{key}: {report.overall[key]:.6g}")
    for key, val in report.overall.items():
        if key.startswith("csi_"):
            print(f"{key}: {val:.6g}")
    print(f"report: {report_path}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_train_config(args)
    records = data_mod.load_sequences(_data_path(args.data))
    if args.specs:
        raw = json.loads(Path(args.specs).read_text())
        specs = [AblationSpec(**row) for row in raw]
    else:
        specs = STANDARD_ABLATION
    rows = run_ablation(specs, cfg, records, args.out,
                        thresholds=_parse_thresholds(args.thresholds))
    for row in rows:
        if "error" in row:
            print(f"{row['name']}: ERROR {row['error']}")
        else:
            print(f"{row['name']}: params={row['params']} flops={row['flops']} "
                  f"mse={row['metrics']['mse']:.6g}")
    print(f"table: {Path(args.out) / 'ablation_table.json'}")
    return 0


def _cmd_profile(args) -> int:
    cfg = _load_train_config(args)
    result = profile(cfg.model, with_fps=not args.no_fps)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "profile.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_gen_data(args) -> int:
    out = _data_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.source == "moving-mnist":
        size = args.size or 64
        records = data_mod.gen_moving_mnist(
            args.seed, args.count, size=size, t_in=args.t_in, t_out=args.t_out)
    else:
        size = args.size or 32
        records = data_mod.gen_blob_sequences(
            args.seed, args.count, size=size, t_in=args.t_in, t_out=args.t_out,
            scale=args.scale)
    n = data_mod.save_sequences(records, out)
    print(f"wrote {n} sequences to {out}")
    return 0


def _cmd_plot(args) -> int:
    paths = {}
    if args.loss:
        paths["loss"] = args.loss
    if args.report:
        paths["report"] = args.report
    if args.predictions:
        paths["predictions"] = args.predictions
    if not paths:
        raise ContractError("plot needs at least one of --loss/--report/--predictions")
    written = emit_plots(paths, args.out)
    for w in written:
        print(w)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "profile": _cmd_profile,
    "gen-data": _cmd_gen_data,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return NUMERIC_EXIT
    except GmgError as e:
        print(f"error: {e}", file=sys.stderr)
        return VALIDATION_EXIT


if __name__ == "__main__":
    sys.exit(main())
