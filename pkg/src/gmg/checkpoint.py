"""Checkpoint archive: a zip holding a JSON manifest plus raw float32 blobs.

Timestamps are zeroed and entries stored uncompressed so identical runs
produce bit-identical files.
"""

from __future__ import annotations

import base64
import io
import json
import zipfile

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .errors import HeaderError, ValidationError

_EPOCH = (1980, 1, 1, 0, 0, 0)
FORMAT_VERSION = 1


def _pack(tensors: dict[str, torch.Tensor]) -> tuple[list[dict], bytes]:
    entries, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().to(torch.float32).numpy(), dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32",
                        "offset": offset, "numel": int(arr.size)})
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def _unpack(entries: list[dict], blob: bytes) -> dict[str, torch.Tensor]:
    out = {}
    for e in entries:
        start = e["offset"] * 1  # offsets are in bytes
        end = start + e["numel"] * 4
        if end > len(blob):
            raise HeaderError(f"parameter blob truncated at {e['name']}")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(e["shape"]).copy()
        out[e["name"]] = torch.from_numpy(arr)
    return out


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def save_checkpoint(path, model: torch.nn.Module, train_config: TrainConfig | None = None,
                    *, model_config: ModelConfig | None = None, step: int = 0,
                    optimizer: torch.optim.Optimizer | None = None,
                    rng_states: dict[str, bytes] | None = None) -> None:
    """Write model parameters (and optional training state) to ``path``."""
    cfg = model_config if model_config is not None else getattr(model, "config", None)
    if cfg is None:
        raise ValidationError("model config required to save a checkpoint")
    params = dict(model.state_dict())
    entries, blob = _pack(params)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": cfg.to_dict(),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "step": int(step),
        "params": entries,
        "optimizer": None,
        "rng": {k: base64.b64encode(v).decode("ascii")
                for k, v in (rng_states or {}).items()},
    }
    opt_blob = b""
    if optimizer is not None:
        opt_tensors, opt_meta = {}, []
        for gi, group in enumerate(optimizer.state_dict()["state"].items()):
            pid, st = group
            row = {"param_id": int(pid), "tensors": [], "scalars": {}}
            for key, val in st.items():
                if isinstance(val, torch.Tensor) and val.ndim > 0:
                    tname = f"opt.{gi}.{key}"
                    opt_tensors[tname] = val
                    row["tensors"].append({"key": key, "name": tname})
                else:
                    row["scalars"][key] = float(val.item() if isinstance(val, torch.Tensor) else val)
            opt_meta.append(row)
        opt_entries, opt_blob = _pack(opt_tensors)
        manifest["optimizer"] = {"state": opt_meta, "entries": opt_entries}
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "manifest.json", json.dumps(manifest, sort_keys=True).encode())
        _write_entry(zf, "params.bin", blob)
        if opt_blob:
            _write_entry(zf, "optimizer.bin", opt_blob)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> dict:
    """Read a checkpoint; returns a dict with config, params, and training state."""
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as e:
        raise HeaderError(f"not a checkpoint archive: {e}") from e
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError as e:
            raise HeaderError("checkpoint missing manifest.json") from e
        if manifest.get("format_version") != FORMAT_VERSION:
            raise HeaderError(
                f"unsupported checkpoint version {manifest.get('format_version')}")
        params = _unpack(manifest["params"], zf.read("params.bin"))
        optimizer = None
        if manifest.get("optimizer"):
            opt_blob = zf.read("optimizer.bin")
            tensors = _unpack(manifest["optimizer"]["entries"], opt_blob)
            optimizer = {"state": manifest["optimizer"]["state"], "tensors": tensors}
    train_config = manifest.get("train_config")
    return {
        "model_config": ModelConfig.from_dict(manifest["model_config"]),
        "train_config": TrainConfig.from_dict(train_config) if train_config else None,
        "step": manifest.get("step", 0),
        "params": params,
        "optimizer": optimizer,
        "rng": {k: base64.b64decode(v) for k, v in manifest.get("rng", {}).items()},
    }


def restore_optimizer(optimizer: torch.optim.Optimizer, saved: dict) -> None:
    """Load moments/step counters captured by :func:`save_checkpoint`."""
    sd = optimizer.state_dict()
    state = {}
    for row in saved["state"]:
        st = {}
        for item in row["tensors"]:
            st[item["key"]] = saved["tensors"][item["name"]].clone()
        for key, val in row["scalars"].items():
            st[key] = torch.tensor(val)
        state[row["param_id"]] = st
    sd["state"] = state
    optimizer.load_state_dict(sd)
