"""Minimal dense neural-network kernel.

Parameter containers, a small reverse-mode tape over numpy arrays, and
SGD/Adam optimizer steps. Everything is float64; gradients are exact
(verified against central finite differences in the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12
LOG_FLOOR = float(np.log(PROB_FLOOR))


class KernelError(Exception):
    """Shape/configuration or numerical error in a kernel operation."""


@dataclass
class ParamBlock:
    """A named trainable tensor."""

    id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise KernelError(f"non-finite values in block {self.id!r}")

    @property
    def shape(self):
        return self.values.shape

    def copy(self) -> "ParamBlock":
        return ParamBlock(self.id, self.values.copy())


# ---------------------------------------------------------------------------
# Reverse-mode tape
# ---------------------------------------------------------------------------


class Tensor:
    """Node of the computation tape wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    # -- helpers ------------------------------------------------------------

    @staticmethod
    def _wrap(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    @staticmethod
    def _unbroadcast(g, shape):
        """Reduce gradient g back to the given broadcast-source shape."""
        while g.ndim > len(shape):
            g = g.sum(axis=0)
        for axis, n in enumerate(shape):
            if n == 1 and g.shape[axis] != 1:
                g = g.sum(axis=axis, keepdims=True)
        return g.reshape(shape)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward(g):
            self._accum(self._unbroadcast(g, self.data.shape))
            other._accum(self._unbroadcast(g, other.data.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def backward(g):
            self._accum(self._unbroadcast(g * other.data, self.data.shape))
            other._accum(self._unbroadcast(g * self.data, other.data.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __matmul__(self, other):
        other = self._wrap(other)
        out = Tensor(self.data @ other.data, parents=(self, other))

        def backward(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)

        out._backward = backward
        return out

    @property
    def T(self):
        out = Tensor(self.data.T, parents=(self,))
        out._backward = lambda g: self._accum(g.T)
        return out

    # -- nonlinearities -----------------------------------------------------

    def relu(self):
        mask = self.data > 0.0
        out = Tensor(self.data * mask, parents=(self,))
        out._backward = lambda g: self._accum(g * mask)
        return out

    def log_softmax(self):
        """Row-wise log-softmax with max-subtraction for stability."""
        z = self.data - self.data.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
        val = z - lse
        out = Tensor(val, parents=(self,))

        def backward(g):
            p = np.exp(val)
            self._accum(g - p * g.sum(axis=-1, keepdims=True))

        out._backward = backward
        return out

    def exp(self):
        val = np.exp(self.data)
        out = Tensor(val, parents=(self,))
        out._backward = lambda g: self._accum(g * val)
        return out

    def clamp_min(self, lo):
        mask = self.data > lo
        out = Tensor(np.maximum(self.data, lo), parents=(self,))
        out._backward = lambda g: self._accum(g * mask)
        return out

    def square(self):
        return self * self

    def sqrt(self):
        val = np.sqrt(self.data)
        out = Tensor(val, parents=(self,))
        out._backward = lambda g: self._accum(g * 0.5 / val)
        return out

    def cols(self, a, b):
        """Column slice [:, a:b] with scatter backward."""
        out = Tensor(self.data[:, a:b], parents=(self,))

        def backward(g):
            full = np.zeros_like(self.data)
            full[:, a:b] = g
            self._accum(full)

        out._backward = backward
        return out

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def backward(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) / n

    # -- autodiff entry point ----------------------------------------------

    def backward(self):
        if self.data.shape != ():
            raise KernelError("backward() requires a scalar loss")
        if not np.isfinite(self.data):
            raise KernelError(f"non-finite loss value {self.data!r}")
        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.requires_grad:
                node._backward(node.grad if node.grad is not None else np.zeros_like(node.data))


def leaf(block: ParamBlock) -> Tensor:
    """Trainable tape leaf for a parameter block."""
    return Tensor(block.values, requires_grad=True)


def collect_grads(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient set keyed by block id, after loss.backward().

    Leaves untouched by the loss are omitted.
    """
    grads = {}
    for name, t in leaves.items():
        if t.grad is not None:
            if not np.all(np.isfinite(t.grad)):
                raise KernelError(f"non-finite gradient for block {name!r}")
            grads[name] = t.grad
    return grads


# ---------------------------------------------------------------------------
# Forward primitives on plain arrays (used by inference paths and tests)
# ---------------------------------------------------------------------------


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ W.T + b, W shaped [out, in]."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or b.shape[0] != W.shape[0]:
        raise KernelError(
            f"dense shape mismatch: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W.T + b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """SGD or Adam state over a set of parameter blocks.

    Moments and step counters are tracked per block so that blocks absent
    from a gradient set are left bit-identical (their bias correction does
    not advance either).
    """

    kind: str = "adam"
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)

    def step(self, params: dict[str, ParamBlock], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            block = params[name]
            if g.shape != block.values.shape:
                raise KernelError(f"gradient shape mismatch for {name!r}")
            if self.kind == "sgd":
                block.values = block.values - self.lr * g
            elif self.kind == "adam":
                t = self.steps.get(name, 0) + 1
                m = self.m.get(name, np.zeros_like(block.values))
                v = self.v.get(name, np.zeros_like(block.values))
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * v + (1.0 - self.beta2) * g * g
                m_hat = m / (1.0 - self.beta1 ** t)
                v_hat = v / (1.0 - self.beta2 ** t)
                block.values = block.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
                self.m[name], self.v[name], self.steps[name] = m, v, t
            else:
                raise KernelError(f"unknown optimizer kind {self.kind!r}")
            if not np.all(np.isfinite(block.values)):
                raise KernelError(f"non-finite parameters in {name!r} after step")
