"""Layers with explicit forward/backward passes.

Every layer caches what its backward pass needs during ``forward``; call
``backward`` once per ``forward``. Sequences are channels-last ``[B, T, C]``.
"""
import math

import numpy as np

from . import kernels


class Parameter:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ParameterSet:
    """Ordered, uniquely named collection of parameters."""

    def __init__(self, params=()):
        self._params = {}
        for p in params:
            self.add(p)

    def add(self, param):
        if param.name in self._params:
            raise ValueError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def count(self):
        return int(sum(p.value.size for p in self._params.values()))


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    training = True

    def parameters(self):
        return []

    def buffers(self):
        return {}

    def train(self, flag=True):
        self.training = flag
        for child in self.children():
            child.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def children(self):
        return []


class Conv1d(Module):
    """Same-padded, stride-1 temporal convolution.

    ``weight`` is stored as ``[C_out, C_in, k]``.
    """

    def __init__(self, name, c_in, c_out, k, rng, dtype=np.float32):
        if k % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        w = glorot_uniform(rng, (c_out, c_in, k), c_in * k, c_out * k, dtype)
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(c_out, dtype=dtype))

    def parameters(self):
        return [self.weight, self.bias]

    def _wmat(self):
        # [k*C_in, C_out], row j*C_in + c matches the im2col window layout
        return self.weight.value.transpose(2, 1, 0).reshape(self.k * self.c_in, self.c_out)

    def forward(self, x):
        B, T, C = x.shape
        if C != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {C}")
        cols = kernels.im2col(np.ascontiguousarray(x), self.k)
        self._cols = cols
        out = cols.reshape(B * T, -1) @ self._wmat()
        out += self.bias.value
        return out.reshape(B, T, self.c_out)

    def backward(self, grad, need_input_grad=True):
        B, T, _ = grad.shape
        g2 = grad.reshape(B * T, self.c_out)
        cols = self._cols.reshape(B * T, -1)
        dw = cols.T @ g2
        self.weight.grad += dw.reshape(self.k, self.c_in, self.c_out).transpose(2, 1, 0)
        self.bias.grad += g2.sum(axis=0)
        self._cols = None
        if not need_input_grad:
            return None
        dcols = (g2 @ self._wmat().T).reshape(B, T, self.k * self.c_in)
        return kernels.col2im(dcols, self.k, self.c_in)


class BatchNorm1d(Module):
    """Batch normalisation over every axis but the last (channel) one."""

    def __init__(self, name, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.name = name
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def forward(self, x):
        shape = x.shape
        if shape[-1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {shape[-1]}")
        x2 = np.ascontiguousarray(x).reshape(-1, self.channels)
        if self.training:
            if x2.shape[0] < 2:
                raise ValueError("batch norm in training mode needs at least 2 values per channel")
            y, xhat, mean, var, invstd = kernels.bn_train_forward(x2, self.gamma.value, self.beta.value, self.eps)
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + m * var
            self._cache = (xhat, invstd)
        else:
            invstd = 1.0 / np.sqrt(self.running_var + self.eps)
            scale = (self.gamma.value * invstd).astype(x2.dtype)
            shift = (self.beta.value - self.running_mean * scale).astype(x2.dtype)
            y = x2 * scale + shift
            self._cache = (None, scale, x2, invstd)
        return y.reshape(shape)

    def backward(self, grad):
        shape = grad.shape
        g2 = np.ascontiguousarray(grad).reshape(-1, self.channels)
        if self._cache[0] is None:
            _, scale, x2, invstd = self._cache
            xhat = (x2 - self.running_mean) * invstd
            self.gamma.grad += (g2 * xhat).sum(axis=0).astype(g2.dtype)
            self.beta.grad += g2.sum(axis=0)
            self._cache = None
            return (g2 * scale).reshape(shape)
        xhat, invstd = self._cache
        dx, dgamma, dbeta = kernels.bn_backward(g2, xhat, self.gamma.value, invstd)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        self._cache = None
        return dx.reshape(shape)


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        return np.maximum(x, x.dtype.type(0))

    def backward(self, grad):
        return grad * self._mask


class Dropout(Module):
    """Inverted dropout with a seeded mask source.

    ``freeze()`` makes later training-mode forwards reuse the last mask, which
    is what finite-difference checks need.
    """

    def __init__(self, rate, rng):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = rng
        self.frozen = False
        self._mask = None

    def freeze(self, flag=True):
        self.frozen = flag

    def forward(self, x):
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x
        if not (self.frozen and self._mask is not None and self._mask.shape == x.shape):
            draw_dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
            keep = self.rng.random(x.shape, dtype=draw_dtype) >= self.rate
            self._mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - self.rate))
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Linear(Module):
    """``y = x W + b`` with ``W`` of shape ``[in, out]``."""

    def __init__(self, name, n_in, n_out, rng, dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter(f"{name}.weight", glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(n_out, dtype=dtype))

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected {self.n_in} input features, got {x.shape[-1]}")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad, need_input_grad=True):
        self.weight.grad += self._x.T @ grad
        self.bias.grad += grad.sum(axis=0)
        self._x = None
        if not need_input_grad:
            return None
        return grad @ self.weight.value.T


class Flatten(Module):
    """Merge the time and channel axes (time-major: index ``t*C + c``)."""

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


def state_dict(module):
    """Parameters and buffers by name (live arrays, not copies)."""
    out = {p.name: p.value for p in module.parameters()}
    out.update(module.buffers())
    return out


def load_state_dict(module, state, strict=True):
    own = state_dict(module)
    if strict:
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, arr in own.items():
        if name not in state:
            continue
        src = np.asarray(state[name])
        if src.shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}: {src.shape} vs {arr.shape}")
        arr[...] = src
