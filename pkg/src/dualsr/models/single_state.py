"""Single-state recurrent models over the bicubic-upscaled input.

All three variants share one parameter set across unrolling steps and
predict the residual against the bicubic upscale:

  resnet  s^t = s^{t-1} + block_body(s^{t-1}),   output from the final state
  drcn    s^t = conv(s^{t-1}),                    output is a weighted sum of
                                                  per-step predictions
  drrn    s^t = s^0 + block_body(s^{t-1}),       output from the final state
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, add, get_default_dtype, smul
from ..errors import ConfigurationError
from ..layers import ConvLayer, ParamStore, ResidualBlock
from .base import ForwardResult

VARIANTS = ("resnet", "drcn", "drrn")


class SingleStateModel:
    input_kind = "upscaled"
    feedback = False
    tied = True

    def __init__(self, variant: str, scale: int, t_steps: int, width: int,
                 rng: np.random.Generator):
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown single-state variant {variant!r}")
        if t_steps < 1:
            raise ConfigurationError(f"t_steps must be >= 1, got {t_steps}")
        self.variant = variant
        self.scale = scale
        self.t_steps = t_steps
        self.width = width
        self.width_in = width
        self.params = ParamStore()
        self.embed = ConvLayer(self.params, "embed", 1, width, rng)
        if variant == "drcn":
            self.recurrent = ConvLayer(self.params, "recurrent", width, width, rng)
        else:
            self.recurrent = ResidualBlock(self.params, "recurrent", width, rng)
        self.out_conv = ConvLayer(self.params, "out", width, 1, rng)
        self.combine: list[Tensor] = []
        if variant == "drcn":
            for t in range(1, t_steps + 1):
                w0 = np.asarray(1.0 / t_steps, dtype=get_default_dtype())
                self.combine.append(self.params.register(
                    f"step.combine.{t}", Tensor(w0.copy(), requires_grad=True)))

    def init_state(self, x: Tensor) -> Tensor:
        return self.embed(x)

    def forward(self, x: Tensor) -> ForwardResult:
        s = self.init_state(x)
        trace = [s]
        steps: list[Tensor] = []
        if self.variant == "resnet":
            for _ in range(self.t_steps):
                s = self.recurrent(s)
                trace.append(s)
            residual = self.out_conv(s)
        elif self.variant == "drcn":
            for t in range(self.t_steps):
                s = self.recurrent(s)
                trace.append(s)
                steps.append(self.out_conv(s))
            residual = smul(steps[0], self.combine[0])
            for t in range(1, self.t_steps):
                residual = add(residual, smul(steps[t], self.combine[t]))
        else:
            s0 = s
            for _ in range(self.t_steps):
                s = add(s0, self.recurrent.body(s))
                trace.append(s)
            residual = self.out_conv(s)
        return ForwardResult(residual, steps, trace)

    def post_step(self) -> None:
        """Renormalize drcn combination weights to sum 1 after an update."""
        if self.variant != "drcn":
            return
        total = float(sum(w.data for w in self.combine))
        if abs(total) < 1e-12:
            return
        for w in self.combine:
            w.data[...] = w.data / total

    def parameter_counts(self) -> dict[str, int]:
        shared = sum(t.size for n, t in self.params.items() if not n.startswith("step."))
        per_step = self.params.total_count - shared
        return {"shared": shared, "per_step": per_step}

    def manifest(self) -> dict:
        return {
            "model": self.variant,
            "scale": self.scale,
            "t_steps": self.t_steps,
            "width": self.width,
            "width_in": self.width_in,
        }
