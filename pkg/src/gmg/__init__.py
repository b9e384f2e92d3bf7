"""GMG: recurrent video prediction with global-focus gating, attention memory,
and motion-guided deformable warping."""

from .config import AblationSpec, ModelConfig, TrainConfig
from .model import GMG, patchify, unpatchify

__version__ = "0.1.0"

__all__ = ["GMG", "ModelConfig", "TrainConfig", "AblationSpec",
           "patchify", "unpatchify", "__version__"]
