from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .base import ForwardResult
from .dsrn import DsrnModel, energy_maps
from .single_state import SingleStateModel

MODEL_NAMES = ("resnet", "drcn", "drrn", "dsrn")


def build_model(name: str, scale: int, t_steps: int, width: int,
                width_in: int | None = None, feedback: bool = True,
                tied: bool = True, dual: bool = True,
                rng: np.random.Generator | None = None):
    if rng is None:
        rng = np.random.default_rng()
    if name == "dsrn":
        if width_in is None:
            width_in = max(1, width // 2)
        return DsrnModel(scale, t_steps, width_in=width_in, width=width,
                         feedback=feedback, tied=tied, dual=dual, rng=rng)
    if name in ("resnet", "drcn", "drrn"):
        return SingleStateModel(name, scale, t_steps, width, rng)
    raise ConfigurationError(f"unknown model {name!r}, expected one of {MODEL_NAMES}")


def model_from_manifest(manifest: dict, rng: np.random.Generator | None = None):
    return build_model(manifest["model"], manifest["scale"], manifest["t_steps"],
                       manifest["width"], manifest.get("width_in"),
                       manifest.get("feedback", True), manifest.get("tied", True),
                       manifest.get("dual", True), rng)


__all__ = ["ForwardResult", "DsrnModel", "SingleStateModel", "build_model",
           "model_from_manifest", "energy_maps", "MODEL_NAMES"]
