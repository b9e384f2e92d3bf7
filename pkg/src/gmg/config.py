"""Model and training configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Sequence

from .errors import ConfigError

VARIANTS = ("L", "m", "s")
GFM_MODES = ("off", "full", "simple")


@dataclass
class ModelConfig:
    """Structural hyperparameters of the predictor.

    ``variant`` is a label; the module toggles below are what the network is
    actually built from. Use :meth:`for_variant` to get the standard presets
    (L: full GFM + SAM + MGM, m: no SAM, s: simplified GFM).
    """

    variant: str = "L"
    num_layers: int = 4
    num_hidden: int | Sequence[int] = 64
    patch_size: int = 4
    filter_size: int = 3      # motion offset neighborhood k (2*k^2 offset channels)
    cell_kernel: int = 5      # spatial kernel of the recurrent gate convolutions
    att_hidden: int = 32      # attention embedding width d
    in_channels: int = 1
    height: int = 64
    width: int = 64
    t_in: int = 10
    t_out: int = 10
    use_gfm: str = "full"     # off | full | simple
    use_sam: bool = True
    use_mgm: bool = True
    use_ghu: bool = False

    @classmethod
    def for_variant(cls, variant: str, **kwargs) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        toggles = {
            "L": dict(use_gfm="full", use_sam=True, use_mgm=True),
            "m": dict(use_gfm="full", use_sam=False, use_mgm=True),
            "s": dict(use_gfm="simple", use_sam=True, use_mgm=True),
        }[variant]
        toggles.update(kwargs)
        return cls(variant=variant, **toggles)

    @property
    def hidden(self) -> int:
        """Uniform per-layer hidden width."""
        if isinstance(self.num_hidden, int):
            return self.num_hidden
        widths = tuple(self.num_hidden)
        if len(widths) != self.num_layers:
            raise ConfigError(
                f"num_hidden lists {len(widths)} widths for {self.num_layers} layers")
        if len(set(widths)) != 1:
            raise ConfigError(
                "per-layer hidden widths must be equal (cross-layer memory routing)")
        return widths[0]

    @property
    def patched_channels(self) -> int:
        return self.in_channels * self.patch_size ** 2

    @property
    def patched_hw(self) -> tuple[int, int]:
        return self.height // self.patch_size, self.width // self.patch_size

    def validate(self) -> None:
        if self.variant not in VARIANTS + ("custom",):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.use_gfm not in GFM_MODES:
            raise ConfigError(f"use_gfm must be one of {GFM_MODES}, got {self.use_gfm!r}")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.patch_size < 1:
            raise ConfigError("patch_size must be >= 1")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigError(
                f"frame size {self.height}x{self.width} not divisible by patch {self.patch_size}")
        if self.cell_kernel % 2 == 0 or self.filter_size % 2 == 0:
            raise ConfigError("convolution kernels must be odd for same-padding")
        if self.att_hidden < 1:
            raise ConfigError("att_hidden must be >= 1")
        if self.t_in < 1 or self.t_out < 1:
            raise ConfigError("t_in and t_out must be >= 1")
        hidden = self.hidden
        if self.use_mgm:
            hp, wp = self.patched_hw
            if hidden % 4:
                raise ConfigError("hidden width must be divisible by 4 for the motion encoder")
            if hp % 2 or wp % 2:
                raise ConfigError(
                    f"patched grid {hp}x{wp} must have even dims for the motion encoder")

    def to_dict(self) -> dict:
        d = asdict(self)
        if not isinstance(d["num_hidden"], int):
            d["num_hidden"] = list(d["num_hidden"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainConfig:
    """Optimization settings wrapped around a ModelConfig."""

    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 3e-4
    batch_size: int = 8
    max_steps: int = 1000
    seed: int = 0
    optimizer: str = "adam"     # adam | sgd
    checkpoint_every: int = 0   # 0: final checkpoint only
    grad_clip: float = 0.0      # 0: no clipping
    teacher_forcing: bool = False
    tf_decay_steps: int = 1000  # linear decay horizon for teacher forcing

    def validate(self) -> None:
        self.model.validate()
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0")
        if self.teacher_forcing and self.tf_decay_steps < 1:
            raise ConfigError("tf_decay_steps must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = d.pop("model", None)
        known = {f for f in cls.__dataclass_fields__ if f != "model"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        cfg = cls(**d)
        if model is not None:
            cfg.model = ModelConfig.from_dict(model)
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(d)


@dataclass
class AblationSpec:
    """One row of the module-toggle study: which blocks are present."""

    name: str
    gfm: str = "full"   # off | full | simple
    sam: bool = True
    mgm: bool = True

    def apply(self, base: ModelConfig) -> ModelConfig:
        d = base.to_dict()
        d.update(variant="custom", use_gfm=self.gfm, use_sam=self.sam, use_mgm=self.mgm)
        cfg = ModelConfig.from_dict(d)
        cfg.validate()
        return cfg


# Standard study rows: backbone-only baseline, single-module rows, pairs, variants.
STANDARD_ABLATION = [
    AblationSpec("backbone", gfm="off", sam=False, mgm=False),
    AblationSpec("A-mgm", gfm="off", sam=False, mgm=True),
    AblationSpec("B-sam", gfm="off", sam=True, mgm=False),
    AblationSpec("C-gfm", gfm="full", sam=False, mgm=False),
    AblationSpec("D-gfm-sam", gfm="full", sam=True, mgm=False),
    AblationSpec("gmg-s", gfm="simple", sam=True, mgm=True),
    AblationSpec("gmg-m", gfm="full", sam=False, mgm=True),
    AblationSpec("gmg-L", gfm="full", sam=True, mgm=True),
]
