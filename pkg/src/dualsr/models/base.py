"""Shared result type for model forward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..autodiff import Tensor


@dataclass
class ForwardResult:
    """residual is the HR-sized residual prediction; the SR image is
    bicubic_up(lr) + residual. state_trace holds the (HR) state after each
    step; lr_trace holds the LR state when the model keeps one."""

    residual: Tensor
    step_outputs: list[Tensor] = field(default_factory=list)
    state_trace: list[Tensor] = field(default_factory=list)
    lr_trace: list[Tensor] = field(default_factory=list)
