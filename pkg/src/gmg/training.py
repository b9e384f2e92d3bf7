"""Training loop, evaluation, and the module-toggle study runner."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .config import AblationSpec, TrainConfig
from .data import SequenceRecord, stack_records
from .errors import ConfigError, ContractError, GmgError, NumericError, ValidationError
from .metrics import MetricReport, sequence_report
from .model import GMG
from .profiling import flops_estimate, parameter_groups


@dataclass
class TrainResult:
    steps: int
    loss_log: list[float]
    checkpoint_path: str
    loss_log_path: str
    model: GMG = field(repr=False, default=None)


def _dataset_tensor(dataset, model_cfg) -> tuple[torch.Tensor, dict]:
    """Normalize records (or a raw array) into a frames tensor, checking dims."""
    if isinstance(dataset, (list, tuple)):
        if not dataset:
            raise ValidationError("dataset is empty")
        if isinstance(dataset[0], SequenceRecord):
            arr, meta = stack_records(list(dataset))
        else:
            arr, meta = np.asarray(dataset, dtype=np.float32), {}
    elif isinstance(dataset, SequenceRecord):
        arr, meta = dataset.tensor, dict(dataset.metadata)
    else:
        arr, meta = np.asarray(dataset, dtype=np.float32), {}
    if arr.ndim != 5:
        raise ContractError(f"dataset must be B x T x C x H x W, got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValidationError("dataset is empty")
    b, t, c, h, w = arr.shape
    if t != model_cfg.t_in + model_cfg.t_out:
        raise ContractError(
            f"dataset has {t} frames per sequence, config wants "
            f"{model_cfg.t_in}+{model_cfg.t_out}")
    if (c, h, w) != (model_cfg.in_channels, model_cfg.height, model_cfg.width):
        raise ContractError(
            f"dataset frames {c}x{h}x{w} do not match configured "
            f"{model_cfg.in_channels}x{model_cfg.height}x{model_cfg.width}")
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)), meta


def _make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr, betas=(0.9, 0.999))
    return torch.optim.SGD(params, lr=cfg.lr)


def _generator_state(g: torch.Generator) -> bytes:
    return g.get_state().numpy().tobytes()


def _set_generator_state(g: torch.Generator, raw: bytes) -> None:
    g.set_state(torch.from_numpy(np.frombuffer(raw, dtype=np.uint8).copy()))


def _first_nonfinite(model: GMG) -> str:
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            return f"parameter {name}"
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            return f"gradient of {name}"
    return "loss"


def train(cfg: TrainConfig, dataset, out_dir, *, resume=None) -> TrainResult:
    """Minimize the squared forecast error; deterministic for a given seed.

    Minibatches are drawn with replacement from a dedicated generator (the
    whole set is used when batch_size covers it), so a resumed run replays
    the uninterrupted schedule exactly. Emits a per-step loss log and
    checkpoints at the configured cadence plus a final one.
    """
    cfg.validate()
    frames, _ = _dataset_tensor(dataset, cfg.model)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t_in, t_out = cfg.model.t_in, cfg.model.t_out
    x_all, y_all = frames[:, :t_in], frames[:, t_in:]
    n = frames.shape[0]

    torch.manual_seed(cfg.seed)
    model = GMG(cfg.model)
    optimizer = _make_optimizer(cfg, model.parameters())
    g_batch = torch.Generator().manual_seed(cfg.seed + 1)
    g_tf = torch.Generator().manual_seed(cfg.seed + 2)

    start_step = 0
    if resume is not None:
        saved = load_checkpoint(resume)
        if saved["model_config"].to_dict() != cfg.model.to_dict():
            raise ConfigError("resume checkpoint was built with a different model config")
        model.load_state_dict(saved["params"])
        if saved["optimizer"] is not None:
            restore_optimizer(optimizer, saved["optimizer"])
        for key, g in (("batch", g_batch), ("tf", g_tf), ("torch", None)):
            raw = saved["rng"].get(key)
            if raw is None:
                continue
            if g is None:
                torch.set_rng_state(torch.from_numpy(
                    np.frombuffer(raw, dtype=np.uint8).copy()))
            else:
                _set_generator_state(g, raw)
        start_step = saved["step"]

    def snapshot(path, step):
        save_checkpoint(
            path, model, cfg, step=step, optimizer=optimizer,
            rng_states={
                "batch": _generator_state(g_batch),
                "tf": _generator_state(g_tf),
                "torch": torch.get_rng_state().numpy().tobytes(),
            })

    loss_log = []
    for step in range(start_step, cfg.max_steps):
        if cfg.batch_size >= n:
            idx = torch.arange(n)
        else:
            idx = torch.randint(n, (cfg.batch_size,), generator=g_batch)
        xb, yb = x_all[idx], y_all[idx]
        tf_prob = 0.0
        if cfg.teacher_forcing:
            tf_prob = max(0.0, 1.0 - step / cfg.tf_decay_steps)
        preds = model(xb, t_out, targets=yb if tf_prob > 0 else None,
                      tf_prob=tf_prob, generator=g_tf, clamp=False)
        loss = torch.mean((preds - yb) ** 2)
        if not torch.isfinite(loss):
            raise NumericError(
                f"training diverged at step {step}: first non-finite tensor is "
                f"{_first_nonfinite(model)}")
        optimizer.zero_grad()
        loss.backward()
        if not all(torch.isfinite(p.grad).all() for p in model.parameters()
                   if p.grad is not None):
            raise NumericError(
                f"training diverged at step {step}: first non-finite tensor is "
                f"{_first_nonfinite(model)}")
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        loss_log.append(float(loss.detach()))
        if cfg.checkpoint_every > 0 and (step + 1) % cfg.checkpoint_every == 0:
            snapshot(out_dir / f"checkpoint_{step + 1:06d}.gmgz", step + 1)

    final_path = out_dir / "checkpoint_final.gmgz"
    snapshot(final_path, cfg.max_steps)
    log_path = out_dir / "loss_log.json"
    log_path.write_text(json.dumps(
        {"loss": loss_log, "start_step": start_step, "steps": cfg.max_steps,
         "config": cfg.to_dict()},
        indent=2, sort_keys=True))
    return TrainResult(cfg.max_steps, loss_log, str(final_path), str(log_path), model)


def load_model(checkpoint_path) -> tuple[GMG, dict]:
    """Rebuild a model from a checkpoint archive."""
    saved = load_checkpoint(checkpoint_path)
    model = GMG(saved["model_config"])
    model.load_state_dict(saved["params"])
    return model, saved


def evaluate(model_or_path, dataset, thresholds=(), *, batch_size: int = 8) -> MetricReport:
    """Forecast the held-out horizon for every sequence and aggregate metrics.

    ``thresholds`` are in data units; when the dataset metadata carries a
    ``scale`` (data units per normalized pixel unit), event binarization
    happens at threshold/scale in pixel units.
    """
    if isinstance(model_or_path, (str, os.PathLike)):
        model, _ = load_model(model_or_path)
    else:
        model = model_or_path
    frames, meta = _dataset_tensor(dataset, model.config)
    t_in, t_out = model.config.t_in, model.config.t_out
    scale = float(meta.get("scale", 1.0))
    preds = []
    with torch.no_grad():
        for lo in range(0, frames.shape[0], batch_size):
            xb = frames[lo:lo + batch_size, :t_in]
            preds.append(model(xb, t_out, clamp=True))
    pred = torch.cat(preds, dim=0)
    return sequence_report(pred, frames[:, t_in:], thresholds, threshold_scale=scale)


def run_ablation(specs, cfg: TrainConfig, dataset, out_dir, thresholds=()) -> list[dict]:
    """Train/evaluate each toggle row under identical seed and budget.

    A failing row is recorded with its error and the remaining rows continue.
    Writes ``ablation_table.json`` under ``out_dir`` and returns the rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for spec in specs:
        if not isinstance(spec, AblationSpec):
            spec = AblationSpec(**spec)
        row = {"name": spec.name, "gfm": spec.gfm, "sam": spec.sam, "mgm": spec.mgm}
        try:
            model_cfg = spec.apply(cfg.model)
            row_cfg = replace(cfg, model=model_cfg)
            result = train(row_cfg, dataset, out_dir / spec.name)
            report = evaluate(result.model, dataset, thresholds)
            row["params"] = parameter_groups(result.model)["total"]
            row["flops"] = flops_estimate(model_cfg)["total"]
            row["final_loss"] = result.loss_log[-1] if result.loss_log else math.nan
            row["metrics"] = report.overall
            row["checkpoint"] = result.checkpoint_path
        except GmgError as e:
            row["error"] = str(e)
        rows.append(row)
    (out_dir / "ablation_table.json").write_text(
        json.dumps(rows, indent=2, sort_keys=True))
    return rows
