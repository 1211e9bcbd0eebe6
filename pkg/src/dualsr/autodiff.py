"""Dense tensors with reverse-mode automatic differentiation.

The op set is exactly what the recurrent SR models need: conv2d, its
transpose, elementwise add/scale/relu/prelu, scalar multiply, sum and the
half-MSE loss.  Convolution is cross-correlation (no kernel flip).  Every
forward op validates that its output is finite and fails fast otherwise;
recurrent unrolling amplifies silent divergence, so NaN/Inf never propagates.

Gradients accumulate: a tensor used k times receives the sum of the k
single-use gradients, which is what realizes weight sharing across unrolling
steps.
"""

import contextlib

import numpy as np

from . import backend
from .errors import ConfigurationError, NumericError

_DEFAULT_DTYPE = np.float64
_grad_enabled = True


def set_default_dtype(dtype):
    """Set the global precision (np.float32 or np.float64) for new tensors."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigurationError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional real array, optionally part of a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def backward(self):
        backward(self)

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"


def zeros(shape, requires_grad=False, dtype=None):
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE),
                  requires_grad=requires_grad, dtype=dtype)


class Node:
    """One recorded op: kind, input tensors, output tensor, backward rule."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Graph:
    """Topologically ordered list of the nodes reaching one output tensor."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, output):
        nodes = []
        visited = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None:
                continue
            if expanded:
                nodes.append(t.node)
                continue
            if id(t) in visited:
                continue
            visited.add(id(t))
            stack.append((t, True))
            for src in t.node.inputs:
                if src.node is not None and id(src) not in visited:
                    stack.append((src, False))
        return cls(nodes)


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")


def _tracked(t):
    return t.requires_grad or t.node is not None


def _make(op, out_data, inputs, backward_fn):
    _check_finite(out_data, op)
    out = Tensor(out_data, dtype=out_data.dtype)
    if _grad_enabled and any(_tracked(t) for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), out, backward_fn)
    return out


def backward(loss):
    """Reverse-mode sweep from a scalar loss; writes into .grad fields."""
    if loss.size != 1:
        raise ConfigurationError(
            f"backward requires a scalar loss, got shape {loss.shape}")
    graph = Graph.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    if loss.grad is not None:
        loss.grad += grads[id(loss)]
    for node in reversed(graph.nodes):
        gout = grads.pop(id(node.output), None)
        if gout is None:
            continue
        for t, g in zip(node.inputs, node.backward_fn(gout)):
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"backward of {node.op} produced non-finite gradient")
            if t.node is not None:
                key = id(t)
                grads[key] = g if key not in grads else grads[key] + g
            if t.requires_grad and t.grad is not None:
                t.grad += g
    return graph


# ---------------------------------------------------------------------------
# ops

def _need(t):
    return _grad_enabled and _tracked(t)


def conv2d(x, kernel, bias, stride=1, pad=0):
    """2-D cross-correlation with zero padding.

    x[N,Cin,H,W], kernel[Cout,Cin,kh,kw], bias[Cout] -> y[N,Cout,H',W']
    with H' = floor((H + 2*pad - kh)/stride) + 1.
    """
    if x.data.ndim != 4:
        raise ConfigurationError(f"conv2d input must be 4-D, got {x.data.ndim}-D")
    if x.dtype != kernel.dtype:
        raise ConfigurationError(
            f"conv2d dtype mismatch: input {x.dtype}, kernel {kernel.dtype}")
    cout, cin, kh, kw = kernel.shape
    if x.shape[1] != cin:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ConfigurationError(
            f"conv2d bias must have shape ({cout},), got {bias.shape}")
    if stride < 1:
        raise ConfigurationError(f"conv2d stride must be >= 1, got {stride}")
    out = backend.corr_forward(x.data, kernel.data, stride, pad)
    out += bias.data.reshape(1, -1, 1, 1)
    height, width = x.shape[2], x.shape[3]
    need_x, need_k, need_b = _need(x), _need(kernel), _need(bias)

    def back(g):
        gx = backend.corr_input_grad(g, kernel.data, stride, pad, height, width) \
            if need_x else None
        gk = backend.corr_weight_grad(x.data, g, stride, pad, kh, kw) \
            if need_k else None
        gb = g.sum(axis=(0, 2, 3)) if need_b else None
        return gx, gk, gb

    return _make("conv2d", out, (x, kernel, bias), back)


def conv2d_transpose(x, kernel, bias, stride, pad, output_pad):
    """Transposed convolution: the exact linear adjoint of conv2d.

    x[N,Cin,h,w], kernel[Cin,Cout,kh,kw], bias[Cout] -> y[N,Cout,H,W]
    with H = stride*(h-1) + kh - 2*pad + output_pad.
    """
    if x.data.ndim != 4:
        raise ConfigurationError(f"conv2d_transpose input must be 4-D, got {x.data.ndim}-D")
    if x.dtype != kernel.dtype:
        raise ConfigurationError(
            f"conv2d_transpose dtype mismatch: input {x.dtype}, kernel {kernel.dtype}")
    cin, cout, kh, kw = kernel.shape
    if x.shape[1] != cin:
        raise ConfigurationError(
            f"conv2d_transpose channel mismatch: input has {x.shape[1]} channels, "
            f"kernel expects {cin}")
    if bias.shape != (cout,):
        raise ConfigurationError(
            f"conv2d_transpose bias must have shape ({cout},), got {bias.shape}")
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if not 0 <= output_pad < stride:
        raise ConfigurationError(
            f"output_pad must lie in [0, stride), got {output_pad} for stride {stride}")
    h, w = x.shape[2], x.shape[3]
    height = stride * (h - 1) + kh - 2 * pad + output_pad
    width = stride * (w - 1) + kw - 2 * pad + output_pad
    if height < 1 or width < 1:
        raise ConfigurationError(
            f"transposed conv output size {height}x{width} is not positive")
    out = backend.corr_input_grad(x.data, kernel.data, stride, pad, height, width)
    out += bias.data.reshape(1, -1, 1, 1)
    need_x, need_k, need_b = _need(x), _need(kernel), _need(bias)

    def back(g):
        gx = backend.corr_forward(g, kernel.data, stride, pad) if need_x else None
        gk = backend.corr_weight_grad(g, x.data, stride, pad, kh, kw) \
            if need_k else None
        gb = g.sum(axis=(0, 2, 3)) if need_b else None
        return gx, gk, gb

    return _make("conv2d_transpose", out, (x, kernel, bias), back)


def add(a, b):
    """Elementwise sum; shapes must match exactly (no broadcasting)."""
    if a.shape != b.shape:
        raise ConfigurationError(f"add shape mismatch: {a.shape} vs {b.shape}")
    need_a, need_b = _need(a), _need(b)

    def back(g):
        return (g if need_a else None), (g if need_b else None)

    return _make("add", a.data + b.data, (a, b), back)


def scale(a, c):
    """Multiply by a python scalar constant."""
    c = float(c)

    def back(g):
        return (g * c,)

    return _make("scale", a.data * c, (a,), back)


def smul(a, s):
    """Multiply a tensor by a scalar parameter tensor (both differentiable)."""
    if s.size != 1:
        raise ConfigurationError(f"smul scalar must have one element, got shape {s.shape}")
    need_a, need_s = _need(a), _need(s)

    def back(g):
        ga = g * s.data.reshape(()) if need_a else None
        gs = np.asarray((g * a.data).sum(), dtype=a.data.dtype).reshape(s.shape) \
            if need_s else None
        return ga, gs

    return _make("smul", a.data * s.data.reshape(()), (a, s), back)


def relu(a):
    mask = a.data > 0

    def back(g):
        return (g * mask,)

    return _make("relu", np.where(mask, a.data, 0), (a,), back)


def prelu(a, slope):
    """PReLU with a single learnable scalar slope on the negative side."""
    if slope.size != 1:
        raise ConfigurationError(
            f"prelu slope must be a scalar tensor, got shape {slope.shape}")
    s = float(slope.data.reshape(()))
    neg = a.data < 0
    out = np.where(neg, s * a.data, a.data)
    need_a, need_s = _need(a), _need(slope)

    def back(g):
        ga = np.where(neg, g * a.data.dtype.type(s), g) if need_a else None
        gs = np.asarray((g * np.where(neg, a.data, 0)).sum(),
                        dtype=a.data.dtype).reshape(slope.shape) if need_s else None
        return ga, gs

    return _make("prelu", out, (a, slope), back)


def tsum(a):
    """Sum of all elements, as a scalar tensor."""

    def back(g):
        return (np.full_like(a.data, float(g)),)

    return _make("sum", np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), back)


def mse_half(a, b):
    """Half mean squared error: 0.5 * mean((a - b)^2), a scalar tensor."""
    if a.shape != b.shape:
        raise ConfigurationError(f"mse_half shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = np.asarray(0.5 * np.mean(diff * diff), dtype=a.data.dtype)
    need_a, need_b = _need(a), _need(b)

    def back(g):
        gd = (float(g) / diff.size) * diff
        return (gd if need_a else None), (-gd if need_b else None)

    return _make("mse_half", out, (a, b), back)


def max_conv_depth(output, source):
    """Longest conv-op count along any graph path from `source` to `output`.

    Tensors not reachable from `source` (constants, e.g. a zero initial state)
    contribute no path.
    """
    graph = Graph.trace(output)
    depth = {id(source): 0}
    for node in graph.nodes:
        best = None
        for t in node.inputs:
            d = depth.get(id(t))
            if d is not None and (best is None or d > best):
                best = d
        if best is None:
            continue
        if node.op in ("conv2d", "conv2d_transpose"):
            best += 1
        depth[id(node.output)] = best
    d = depth.get(id(output))
    if d is None:
        raise ConfigurationError("output is not reachable from the given source tensor")
    return d
