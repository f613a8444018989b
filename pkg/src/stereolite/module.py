"""Minimal layer/parameter containers for the stereo networks.

A :class:`Module` discovers child modules from its attributes, exposes named
parameters and buffers (BN running statistics), and carries the train/eval
flag.  Weight init is Kaiming fan-out normal, seeded through an explicit
``numpy`` generator so model construction is reproducible.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    def __init__(self):
        self.training = True
        self._buffers = {}

    # -- tree traversal -------------------------------------------------------

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def register_buffer(self, name, value):
        self._buffers[name] = value

    def named_buffers(self, prefix=""):
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def state_items(self):
        """Parameters then buffers, in deterministic traversal order."""
        items = [(n, p.data) for n, p in self.named_parameters()]
        items += list(self.named_buffers())
        return items

    def load_state(self, entries):
        """Load from a {name: array} mapping; shapes must match exactly."""
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for name, arr in entries.items():
            if name in params:
                target = params.pop(name)
                if target.shape != arr.shape:
                    raise ValueError(f"shape mismatch for {name!r}: "
                                     f"{target.shape} vs {arr.shape}")
                target.data = arr.astype(target.dtype)
            elif name in buffers:
                target = buffers.pop(name)
                if target.shape != arr.shape:
                    raise ValueError(f"shape mismatch for buffer {name!r}")
                target[...] = arr
            else:
                raise KeyError(f"unknown entry {name!r} in weights")
        missing = list(params) + list(buffers)
        if missing:
            raise KeyError(f"weights missing entries: {missing[:5]}"
                           + ("..." if len(missing) > 5 else ""))

    def train(self, flag=True):
        for m in self.modules():
            m.training = flag
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype):
        """Cast parameters and buffers in place (f64 for gradcheck mode)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for m in self.modules():
            for name, buf in m._buffers.items():
                m._buffers[name] = buf.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_normal(rng, shape, fan_out):
    std = np.sqrt(2.0 / fan_out)
    return (rng.standard_normal(shape) * std).astype(np.float32)


class Conv(Module):
    """Plain N-d convolution; bias only on prediction heads."""

    def __init__(self, rng, cin, cout, k, rank, stride=1, padding=0,
                 dilation=1, groups=1, bias=False):
        super().__init__()
        ksize = (k,) * rank if np.isscalar(k) else tuple(k)
        fan_out = cout * int(np.prod(ksize)) // groups
        self.weight = Parameter(
            kaiming_normal(rng, (cout, cin // groups) + ksize, fan_out))
        self.bias = Parameter(np.zeros(cout, dtype=np.float32)) if bias else None
        self.stride, self.padding, self.dilation, self.groups = \
            stride, padding, dilation, groups

    def forward(self, x):
        return F.conv_nd(x, self.weight, self.bias, self.stride, self.padding,
                         self.dilation, self.groups)


class ConvTransposed(Module):
    def __init__(self, rng, cin, cout, k, rank, stride=1, padding=0,
                 output_padding=0, groups=1, bias=False):
        super().__init__()
        ksize = (k,) * rank if np.isscalar(k) else tuple(k)
        fan_out = cout * int(np.prod(ksize)) // groups
        self.weight = Parameter(
            kaiming_normal(rng, (cin, cout // groups) + ksize, fan_out))
        self.bias = Parameter(np.zeros(cout, dtype=np.float32)) if bias else None
        self.stride, self.padding, self.output_padding, self.groups = \
            stride, padding, output_padding, groups

    def forward(self, x):
        return F.conv_transpose_nd(x, self.weight, self.bias, self.stride,
                                   self.padding, 1, self.groups,
                                   self.output_padding)


class BatchNorm(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))
        self.eps = eps
        self.momentum = momentum

    def forward(self, x):
        return F.batch_norm(x, self.gamma, self.beta,
                            self._buffers["running_mean"],
                            self._buffers["running_var"],
                            self.training, self.eps, self.momentum)
