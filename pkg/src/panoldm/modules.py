"""Lightweight layer/optimizer toolkit on top of the tensor engine."""

import numpy as np

from .tensor import PadMode, Tensor, conv2d, default_dtype, group_norm


class Module:
    """Base class: parameters are requires_grad tensors found on attributes,
    recursing through sub-modules and lists of sub-modules. List items are
    named ``{attr}{i}`` so checkpoints read e.g. ``panodit.block3.attn.wq``.
    """

    def named_parameters(self, prefix=""):
        for attr, value in self.__dict__.items():
            name = f"{prefix}.{attr}" if prefix else attr
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item_name = f"{prefix}.{attr}{i}" if prefix else f"{attr}{i}"
                        yield from item.named_parameters(item_name)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self, prefix=""):
        return {name: np.array(t.data, copy=True) for name, t in self.named_parameters(prefix)}

    def load_state_dict(self, arrays, prefix=""):
        own = dict(self.named_parameters(prefix))
        missing = [n for n in own if n not in arrays]
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {missing[:4]}...")
        for name, t in own.items():
            src = np.asarray(arrays[name])
            if src.shape != t.data.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} != model {t.data.shape}")
            t.data = np.ascontiguousarray(src, dtype=t.data.dtype)

    def param_count(self):
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, zero_init=False):
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=default_dtype())
        else:
            w = rng.normal((d_in, d_out)) / np.sqrt(d_in)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=default_dtype()), requires_grad=True) if bias else None

    def __call__(self, x):
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, pad=PadMode.ZERO, bias=True,
                 zero_init=False):
        if zero_init:
            w = np.zeros((c_out, c_in, k, k), dtype=default_dtype())
        else:
            w = rng.normal((c_out, c_in, k, k)) / np.sqrt(c_in * k * k)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=default_dtype()), requires_grad=True) if bias else None
        self.stride = stride
        self.pad = pad

    def __call__(self, x):
        out = conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            out = out + self.bias.reshape(1, -1, 1, 1)
        return out


class GroupNorm(Module):
    def __init__(self, channels, groups=8):
        groups = min(groups, channels)
        while channels % groups != 0:
            groups -= 1
        self.groups = groups
        self.gamma = Tensor(np.ones(channels, dtype=default_dtype()), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=default_dtype()), requires_grad=True)

    def __call__(self, x):
        return group_norm(x, self.groups, self.gamma, self.beta)


class Adam:
    """Adam with optional decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bias1 = 1.0 - self.b1 ** self.t
        bias2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params, max_norm):
    """Scale gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
