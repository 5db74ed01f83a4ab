"""Dense float64 tensors with reverse-mode differentiation.

Small tape-free autograd: every operation returns a Tensor that remembers
its parents and a closure accumulating adjoints into them.  backward()
walks the graph once in reverse topological order.  Only the handful of
primitives needed by the localizer network are provided.
"""

from __future__ import annotations

import json
import math

import numpy as np


class Tensor:
    """A float64 ndarray plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward",
                 "_grad_owned")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        if not (isinstance(data, np.ndarray) and data.dtype == np.float64):
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._grad_owned = False

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def param(data, name=None):
        return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)

    @staticmethod
    def const(data):
        return Tensor(data)

    @staticmethod
    def zeros(shape):
        return Tensor(np.zeros(shape))

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff core -------------------------------------------------------

    def _accum(self, g):
        # first contribution borrows g; later ones copy-on-write, since g may
        # be shared with (or viewed from) another tensor's gradient
        if self.grad is None:
            self.grad = g
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    def backward(self):
        if self.data.shape not in ((), (1,)):
            raise ValueError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        self._grad_owned = True
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def _coerce(self, other):
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data + other.data, _parents=(self, other))
        def bwd(g):
            self._accum(_unbroadcast(g, self.data.shape))
            other._accum(_unbroadcast(g, other.data.shape))
        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data * other.data, _parents=(self, other))
        def bwd(g):
            self._accum(_unbroadcast(g * other.data, self.data.shape))
            other._accum(_unbroadcast(g * self.data, other.data.shape))
        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data / other.data, _parents=(self, other))
        def bwd(g):
            self._accum(_unbroadcast(g / other.data, self.data.shape))
            other._accum(_unbroadcast(-g * self.data / other.data ** 2, other.data.shape))
        out._backward = bwd
        return out

    def __matmul__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data @ other.data, _parents=(self, other))
        def bwd(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)
        out._backward = bwd
        return out

    def pow(self, exponent):
        out = Tensor(self.data ** exponent, _parents=(self,))
        out._backward = lambda g: self._accum(g * exponent * self.data ** (exponent - 1))
        return out

    def sqrt(self):
        out = Tensor(np.sqrt(self.data), _parents=(self,))
        out._backward = lambda g: self._accum(g * 0.5 / np.sqrt(self.data))
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), _parents=(self,))
        out._backward = lambda g: self._accum(g * out.data)
        return out

    def log(self):
        out = Tensor(np.log(self.data), _parents=(self,))
        out._backward = lambda g: self._accum(g / self.data)
        return out

    # -- activations ---------------------------------------------------------

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), _parents=(self,))
        out._backward = lambda g: self._accum(g * (self.data > 0.0))
        return out

    def sigmoid(self):
        out = Tensor(1.0 / (1.0 + np.exp(-self.data)), _parents=(self,))
        out._backward = lambda g: self._accum(g * out.data * (1.0 - out.data))
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), _parents=(self,))
        out._backward = lambda g: self._accum(g * (1.0 - out.data ** 2))
        return out

    # -- reductions / reshaping ---------------------------------------------

    def sum(self, axis=None):
        out = Tensor(self.data.sum(axis=axis), _parents=(self,))
        def bwd(g):
            if axis is None:
                self._accum(np.full_like(self.data, 1.0) * g)
            else:
                self._accum(np.broadcast_to(np.expand_dims(g, axis), self.data.shape).copy())
        out._backward = bwd
        return out

    def sum_rows(self):
        """Sum along axis 1: one scalar per row."""
        return self.sum(axis=1)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, shape):
        out = Tensor(self.data.reshape(shape), _parents=(self,))
        out._backward = lambda g: self._accum(g.reshape(self.data.shape))
        return out

    def pick(self, index):
        """Select one element of a 1-D tensor as a scalar."""
        out = Tensor(self.data[index], _parents=(self,))
        def bwd(g):
            full = np.zeros_like(self.data)
            full[index] = g
            self._accum(full)
        out._backward = bwd
        return out

    def slice_rows(self, start, stop):
        out = Tensor(self.data[start:stop], _parents=(self,))
        def bwd(g):
            full = np.zeros_like(self.data)
            full[start:stop] = g
            self._accum(full)
        out._backward = bwd
        return out


def _unbroadcast(grad, shape):
    """Reduce a gradient back to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def concat(tensors, axis=0):
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), _parents=tuple(tensors))
    sizes = [d.shape[axis] for d in datas]
    def bwd(g):
        offset = 0
        for t, s in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + s)
            t._accum(g[tuple(idx)])
            offset += s
    out._backward = bwd
    return out


def softmax_rows(x):
    """Row-wise softmax; rows of the output sum to 1."""
    shift = Tensor.const(x.data.max(axis=-1, keepdims=True))
    e = (x - shift).exp()
    denom = e.sum(axis=-1)
    if x.data.ndim > 1:
        denom = denom.reshape(denom.data.shape + (1,))
    return e / denom


def log_softmax_vec(x):
    shift = Tensor.const(x.data.max())
    z = x - shift
    lse = z.exp().sum().log()
    return z - lse


def cross_entropy(logits, target_index):
    """-log softmax(logits)[target] for a 1-D logits vector."""
    if logits.data.ndim != 1:
        raise ValueError("cross_entropy expects a 1-D logits vector")
    if not 0 <= target_index < logits.data.shape[0]:
        raise IndexError(f"target index {target_index} out of range")
    return -log_softmax_vec(logits).pick(target_index)


def batch_norm(x, gamma, beta, eps=1e-5):
    """Normalize each feature over the batch (row) dimension, then affine."""
    mu = x.mean(axis=0)
    xc = x - mu
    var = (xc * xc).mean(axis=0)
    return xc / (var + eps).sqrt() * gamma + beta


class BatchNorm:
    """Batch normalization with running statistics for evaluation mode.

    With ``track_running_stats=False`` the current batch statistics are
    used in both modes, which keeps the layer deterministic whenever the
    full batch is available at evaluation time.
    """

    def __init__(self, dim, momentum=0.1, eps=1e-5, name="bn",
                 track_running_stats=True):
        self.gamma = Tensor.param(np.ones(dim), name=f"{name}.gamma")
        self.beta = Tensor.param(np.zeros(dim), name=f"{name}.beta")
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.track_running_stats = track_running_stats

    def __call__(self, x, training):
        if training or not self.track_running_stats:
            if training and self.track_running_stats:
                mu = x.data.mean(axis=0)
                var = x.data.var(axis=0)
                self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
                self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
            return batch_norm(x, self.gamma, self.beta, self.eps)
        xc = x - Tensor.const(self.running_mean)
        scale = Tensor.const(1.0 / np.sqrt(self.running_var + self.eps))
        return xc * scale * self.gamma + self.beta

    def params(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def load_buffers(self, buffers):
        self.running_mean = np.array(buffers[f"{self.name}.running_mean"])
        self.running_var = np.array(buffers[f"{self.name}.running_var"])


# -- optimizer ---------------------------------------------------------------


class Adam:
    """Adam with per-group learning rates (encoder vs everything else)."""

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        # groups: list of (params, lr) with params a list of Tensors
        self.groups = [(list(ps), lr) for ps, lr in groups]
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def zero_grad(self):
        for ps, _ in self.groups:
            for p in ps:
                p.grad = None

    def step(self):
        self.t += 1
        for ps, lr in self.groups:
            for p in ps:
                g = p.grad
                if g is None:
                    continue
                if g.shape != p.data.shape:
                    raise ValueError("gradient/parameter shape mismatch")
                key = id(p)
                m = self.m.get(key)
                if m is None:
                    m = np.zeros_like(p.data)
                    self.v[key] = np.zeros_like(p.data)
                v = self.v[key]
                m = self.b1 * m + (1 - self.b1) * g
                v = self.b2 * v + (1 - self.b2) * g * g
                self.m[key] = m
                self.v[key] = v
                mhat = m / (1 - self.b1 ** self.t)
                vhat = v / (1 - self.b2 ** self.t)
                p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


def sgd_step(params, lr):
    """Plain gradient step; handy for small analytic tests."""
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad


# -- gradient verification ---------------------------------------------------


def grad_check(f, params, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f: nullary function rebuilding the loss graph from current param data.
    params: dict name -> Tensor.  Returns dict name -> max relative error.
    """
    for p in params.values():
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            num[i] = (hi - lo) / (2 * eps)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-4)
        report[name] = float(np.max(np.abs(a - num) / denom)) if flat.size else 0.0
    return report


# -- checkpoint persistence --------------------------------------------------


def save_checkpoint(path, params, buffers=None, manifest=None):
    """Named-parameter flat file; float repr round-trips bit exactly."""
    blob = {
        "manifest": manifest or {},
        "params": {k: {"shape": list(p.data.shape), "data": p.data.reshape(-1).tolist()}
                   for k, p in params.items()},
        "buffers": {k: {"shape": list(np.asarray(b).shape),
                        "data": np.asarray(b).reshape(-1).tolist()}
                    for k, b in (buffers or {}).items()},
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_checkpoint(path):
    with open(path) as fh:
        blob = json.load(fh)
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in blob["params"].items()}
    buffers = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
               for k, v in blob.get("buffers", {}).items()}
    return params, buffers, blob.get("manifest", {})
