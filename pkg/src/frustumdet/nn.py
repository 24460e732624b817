"""Layers over the autodiff tensor: linear, 1D conv/deconv, batch norm.

Feature maps are channel-last: (length, channels) or (points, channels).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError


class Module:
    def __init__(self):
        self._params = {}
        self._buffers = {}
        self._children = {}
        self.training = True

    def register_parameter(self, name: str, value: T.Tensor):
        value.requires_grad = True
        self._params[name] = value
        return value

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = np.asarray(value, dtype=np.float64)
        return self._buffers[name]

    def add_child(self, name: str, module: "Module"):
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def train(self, mode: bool = True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state: dict):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        extra = set(state) - (set(own) | set(bufs))
        if missing or extra:
            raise ShapeError(
                f"state mismatch; missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, arr in state.items():
            target = own[name].data if name in own else bufs[name]
            arr = np.asarray(arr, dtype=np.float64)
            if target.shape != arr.shape:
                raise ShapeError(
                    f"{name}: stored shape {arr.shape} != model shape {target.shape}"
                )
            target[...] = arr


class Linear(Module):
    """y = x @ W + b with He-normal weight init.

    bias=False for layers feeding a batch norm: the mean subtraction would
    cancel it exactly, leaving a dead parameter.
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
    ):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        scale = np.sqrt(2.0 / in_features)
        self.weight = self.register_parameter(
            "weight", T.Tensor(rng.normal(0.0, scale, size=(in_features, out_features)))
        )
        self.bias = (
            self.register_parameter("bias", T.Tensor(np.zeros(out_features)))
            if bias
            else None
        )

    def __call__(self, x: T.Tensor) -> T.Tensor:
        out = T.matmul(x, self.weight)
        return T.add(out, self.bias) if self.bias is not None else out


class Conv1d(Module):
    """Strided 1D convolution on (length, channels) maps."""

    def __init__(
        self, in_channels, out_channels, kernel, stride, padding, rng, bias=True
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        scale = np.sqrt(2.0 / (kernel * in_channels))
        self.weight = self.register_parameter(
            "weight",
            T.Tensor(rng.normal(0.0, scale, size=(kernel, in_channels, out_channels))),
        )
        self.bias = (
            self.register_parameter("bias", T.Tensor(np.zeros(out_channels)))
            if bias
            else None
        )

    def out_length(self, length: int) -> int:
        span = length + 2 * self.padding - self.kernel
        if span < 0:
            raise ShapeError(
                f"conv: length {length} shorter than kernel {self.kernel} "
                f"with padding {self.padding}"
            )
        return span // self.stride + 1

    def __call__(self, x: T.Tensor) -> T.Tensor:
        length = x.shape[0]
        out_len = self.out_length(length)
        if self.padding:
            x = T.pad_rows(x, self.padding, self.padding)
        terms = []
        for k in range(self.kernel):
            rows = x[k : k + self.stride * out_len : self.stride]
            terms.append(T.matmul(rows, self.weight[k]))
        out = terms[0]
        for t in terms[1:]:
            out = T.add(out, t)
        return T.add(out, self.bias) if self.bias is not None else out


class Deconv1d(Module):
    """Transposed 1D convolution; output length is (L - 1) * stride + kernel."""

    def __init__(self, in_channels, out_channels, kernel, stride, rng, bias=True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        scale = np.sqrt(2.0 / (kernel * in_channels))
        self.weight = self.register_parameter(
            "weight",
            T.Tensor(rng.normal(0.0, scale, size=(kernel, in_channels, out_channels))),
        )
        self.bias = (
            self.register_parameter("bias", T.Tensor(np.zeros(out_channels)))
            if bias
            else None
        )

    def out_length(self, length: int) -> int:
        return (length - 1) * self.stride + self.kernel

    def __call__(self, x: T.Tensor) -> T.Tensor:
        length = x.shape[0]
        out_len = self.out_length(length)
        out = None
        for k in range(self.kernel):
            term = T.scatter_rows(T.matmul(x, self.weight[k]), k, self.stride, out_len)
            out = term if out is None else T.add(out, term)
        return T.add(out, self.bias) if self.bias is not None else out


class BatchNorm(Module):
    """Normalize over axis 0; batch stats in train mode, running stats in eval.

    Running averages keep `momentum` of the old value per update.
    """

    def __init__(self, num_features: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.weight = self.register_parameter("weight", T.Tensor(np.ones(num_features)))
        self.bias = self.register_parameter("bias", T.Tensor(np.zeros(num_features)))
        self.running_mean = self.register_buffer("running_mean", np.zeros(num_features))
        self.running_var = self.register_buffer("running_var", np.ones(num_features))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        if self.training:
            if x.shape[0] < 1:
                raise ShapeError("batch norm needs at least one row in train mode")
            mu = T.mean(x, axis=0, keepdims=True)
            var = T.mean(T.square(T.sub(x, mu)), axis=0, keepdims=True)
            m = self.momentum
            self.running_mean *= m
            self.running_mean += (1.0 - m) * mu.data.ravel()
            self.running_var *= m
            self.running_var += (1.0 - m) * var.data.ravel()
            centered = T.sub(x, mu)
            denom = T.sqrt(T.add(var, self.eps))
        else:
            centered = T.sub(x, T.Tensor(self.running_mean))
            denom = T.sqrt(T.Tensor(self.running_var + self.eps))
        return T.add(T.mul(T.div(centered, denom), self.weight), self.bias)


class LinearBnRelu(Module):
    """Shared per-point block: linear, batch norm, relu."""

    def __init__(self, in_features, out_features, rng):
        super().__init__()
        self.linear = self.add_child(
            "linear", Linear(in_features, out_features, rng, bias=False)
        )
        self.bn = self.add_child("bn", BatchNorm(out_features))

    def __call__(self, x):
        return T.relu(self.bn(self.linear(x)))


class ConvBnRelu(Module):
    def __init__(self, in_channels, out_channels, kernel, stride, padding, rng):
        super().__init__()
        self.conv = self.add_child(
            "conv", Conv1d(in_channels, out_channels, kernel, stride, padding, rng, bias=False)
        )
        self.bn = self.add_child("bn", BatchNorm(out_channels))

    def __call__(self, x):
        return T.relu(self.bn(self.conv(x)))


class DeconvBnRelu(Module):
    def __init__(self, in_channels, out_channels, kernel, stride, rng):
        super().__init__()
        self.deconv = self.add_child(
            "deconv", Deconv1d(in_channels, out_channels, kernel, stride, rng, bias=False)
        )
        self.bn = self.add_child("bn", BatchNorm(out_channels))

    def __call__(self, x):
        return T.relu(self.bn(self.deconv(x)))


class Adam(Module):
    """Adaptive-moment optimizer; weight decay is added to the gradient."""

    def __init__(
        self,
        params,
        lr: float = 1e-3,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        super().__init__()
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
