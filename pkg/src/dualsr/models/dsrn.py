"""Dual-state recurrent model.

Two states run at LR and HR resolution. Per step, the LR state updates
first and feeds the HR state through f_up within the same step, while the
LR state reads the HR state of the PREVIOUS step through f_down (delayed
feedback):

  s_l^t = act_l^t( f_lr(s_l^{t-1}) + f_down(s_h^{t-1}) )
  s_h^t = act_h^t( f_up(s_l^t)    + f_hr(s_h^{t-1}) )

s_h^0 is zero. The residual prediction averages the per-step outputs
f_output(s_h^t). Transition parameters are shared over steps unless
tied=False; the scalar PReLU slopes are always per-step.

f_up starts as a damped interpolation kernel and f_down starts at zero,
so at initialization the upsampling path is a plain resize and the
feedback connection is closed; training opens it when it pays off.

Two ablation switches keep the parameter store identical while cutting
dataflow edges: feedback=False drops the f_down term, and dual=False
keeps only one recurrent state, an unrolled weight-tied residual chain
(f_hr) over the embedded bicubic-upscaled input, so the model consumes
pre-upscaled images and f_lr, f_up and f_down sit unused.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, add, get_default_dtype, prelu, scale as tscale
from ..errors import ConfigurationError
from ..layers import (ConvLayer, ParamStore, ResidualBlock, TransposedConvLayer,
                      make_prelu_slope)
from .base import ForwardResult


UP_INIT_GAIN = 0.5


def interp_up_kernel(stride: int, gain: float = UP_INIT_GAIN) -> np.ndarray:
    """3x3 taps giving a uniform per-phase gain under transposed conv.

    Triangle taps overlap to gain 1 at stride 2; from stride 3 on each
    output position sees at most one tap, so the taps are flat.
    """
    if stride == 1:
        t = np.array([0.25, 0.5, 0.25])
    elif stride == 2:
        t = np.array([0.5, 1.0, 0.5])
    else:
        t = np.array([1.0, 1.0, 1.0])
    return gain * np.outer(t, t)


class DsrnModel:
    variant = "dsrn"

    def __init__(self, scale: int, t_steps: int, width_in: int = 64, width: int = 128,
                 feedback: bool = True, tied: bool = True, dual: bool = True,
                 rng: np.random.Generator | None = None):
        if scale < 1:
            raise ConfigurationError(f"scale must be >= 1, got {scale}")
        if t_steps < 1:
            raise ConfigurationError(f"t_steps must be >= 1, got {t_steps}")
        if rng is None:
            rng = np.random.default_rng()
        self.scale = scale
        self.t_steps = t_steps
        self.width_in = width_in
        self.width = width
        self.feedback = feedback
        self.tied = tied
        self.dual = dual
        self.input_kind = "lr" if dual else "upscaled"
        p = self.params = ParamStore()

        self.conv_a = ConvLayer(p, "embed.conv_a", 1, width_in, rng)
        self.conv_b = ConvLayer(p, "embed.conv_b", width_in, width, rng)
        self.conv_skip = ConvLayer(p, "embed.skip", 1, width, rng)

        copies = 1 if tied else t_steps
        tag = lambda base, i: base if tied else f"{base}.t{i + 1}"
        self.f_lr = [ResidualBlock(p, tag("f_lr", i), width, rng) for i in range(copies)]
        self.f_hr = [ResidualBlock(p, tag("f_hr", i), width, rng) for i in range(copies)]
        self.f_up = [TransposedConvLayer(p, tag("f_up", i), width, width, rng, stride=scale)
                     for i in range(copies)]
        # f_down exists even when feedback is ablated, so the two variants
        # report identical parameter counts and share checkpoint layout
        self.f_down = [ConvLayer(p, tag("f_down", i), width, width, rng,
                                 stride=scale, pad=1) for i in range(copies)]
        self.out_conv = ConvLayer(p, "out", width, 1, rng)

        # both overwrites happen after every draw, so the rng stream (and
        # with it all other weights) is the same for every variant
        taps = interp_up_kernel(scale).astype(get_default_dtype())
        for up in self.f_up:
            up.kernel.data[:] = 0.0
            for i in range(width):
                up.kernel.data[i, i] = taps
        for down in self.f_down:
            down.kernel.data[:] = 0.0

        self.act_l = [make_prelu_slope(p, f"step.act_l.{t}") for t in range(1, t_steps + 1)]
        self.act_h = [make_prelu_slope(p, f"step.act_h.{t}") for t in range(1, t_steps + 1)]

    def _at(self, fns, t: int):
        return fns[0] if self.tied else fns[t]

    def embed_input(self, x: Tensor) -> Tensor:
        from ..autodiff import relu
        return add(self.conv_b(relu(self.conv_a(x))), self.conv_skip(x))

    def forward(self, x: Tensor, s_h0: Tensor | None = None) -> ForwardResult:
        n, c, h, w = x.shape
        if c != 1:
            raise ConfigurationError(f"expected 1-channel luminance input, got {c} channels")
        steps: list[Tensor] = []
        trace: list[Tensor] = []
        lr_trace: list[Tensor] = []
        if self.dual:
            s_l = self.embed_input(x)
            if s_h0 is None:
                hr_shape = (n, self.width, self.scale * h, self.scale * w)
                s_h = Tensor(np.zeros(hr_shape, dtype=x.data.dtype))
            else:
                s_h = s_h0
            for t in range(self.t_steps):
                pre_l = self._at(self.f_lr, t)(s_l)
                if self.feedback:
                    pre_l = add(pre_l, self._at(self.f_down, t)(s_h))
                s_l = prelu(pre_l, self.act_l[t])
                pre_h = add(self._at(self.f_up, t)(s_l), self._at(self.f_hr, t)(s_h))
                s_h = prelu(pre_h, self.act_h[t])
                steps.append(self.out_conv(s_h))
                trace.append(s_h)
                lr_trace.append(s_l)
        else:
            # single recurrent state over the embedded pre-upscaled input,
            # predicting from the final state only (no per-step fusion)
            s_h = self.embed_input(x) if s_h0 is None else s_h0
            for t in range(self.t_steps):
                s_h = prelu(self._at(self.f_hr, t)(s_h), self.act_h[t])
                trace.append(s_h)
            steps.append(self.out_conv(s_h))
            return ForwardResult(steps[0], steps, trace)
        acc = steps[0]
        for y in steps[1:]:
            acc = add(acc, y)
        residual = tscale(acc, 1.0 / self.t_steps)
        return ForwardResult(residual, steps, trace, lr_trace)

    def post_step(self) -> None:
        pass

    def parameter_counts(self) -> dict[str, int]:
        shared = sum(t.size for nm, t in self.params.items() if not nm.startswith("step."))
        per_step = self.params.total_count - shared
        return {"shared": shared, "per_step": per_step}

    def manifest(self) -> dict:
        return {
            "model": "dsrn",
            "scale": self.scale,
            "t_steps": self.t_steps,
            "width": self.width,
            "width_in": self.width_in,
            "feedback": self.feedback,
            "tied": self.tied,
            "dual": self.dual,
            "embedding": "conv-relu-conv-plus-conv-skip",
        }


def energy_maps(trace: list[Tensor]) -> list[np.ndarray]:
    """Channel-wise L2 energy of each HR state, min-max normalized to [0,1].

    Uses the first batch element. A constant map normalizes to zeros.
    """
    maps = []
    for s in trace:
        e = np.sqrt(np.sum(np.square(s.data[0].astype(np.float64)), axis=0))
        lo = e.min()
        hi = e.max()
        if hi > lo:
            e = (e - lo) / (hi - lo)
        else:
            e = np.zeros_like(e)
        maps.append(e)
    return maps
