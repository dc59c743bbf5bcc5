"""Dense numeric core: reverse-mode autodiff, AdamW, and a cosine LR schedule.

Everything runs on C-order float64 numpy arrays.  Models are small stacks of
affine layers with optional ReLU, so the autodiff tape is a plain list of
closures; no broadcasting tricks beyond what the bias add needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not line up."""


class GraphStateError(RuntimeError):
    """Backward was requested without a recorded forward pass."""


class NumericError(FloatingPointError):
    """A non-finite value reached the optimizer."""


class Tensor:
    """Node in a reverse-mode computation graph.

    ``grad`` accumulates across backward calls so several loss heads can feed
    the same parameters; callers zero it between optimizer steps.
    """

    __slots__ = ("value", "grad", "_parents", "_vjps")

    def __init__(
        self,
        value,
        _parents: tuple[Tensor, ...] = (),
        _vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = (),
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._vjps = _vjps

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Add this call's gradient contribution to ``grad`` on every reached node.

        Contributions are resolved in a per-call map first, so calling backward
        repeatedly (one loss head at a time) accumulates exactly.
        """
        if seed is None:
            seed = np.ones_like(self.value)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != self.value.shape:
            raise ShapeError(f"seed shape {seed.shape} != value shape {self.value.shape}")
        order = _topo_order(self)
        contrib: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = contrib.get(id(node))
            if g is None:
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                pg = vjp(g)
                key = id(parent)
                contrib[key] = pg if key not in contrib else contrib[key] + pg
        for node in order:
            g = contrib.get(id(node))
            if g is not None:
                node.grad = g if node.grad is None else node.grad + g

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add(self, Tensor(other))

    __radd__ = __add__

    def __mul__(self, scalar: float):
        s = float(scalar)
        return Tensor(self.value * s, (self,), (lambda g: g * s,))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape})"


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"cannot matmul {a.value.shape} by {b.value.shape}")
    return Tensor(
        a.value @ b.value,
        (a, b),
        (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.value + b.value
    except ValueError as exc:
        raise ShapeError(f"cannot add {a.value.shape} and {b.value.shape}") from exc
    return Tensor(
        out,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
    )


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0
    return Tensor(np.where(mask, a.value, 0.0), (a,), (lambda g: g * mask,))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not parts:
        raise ValueError("concat needs at least one tensor")
    values = [p.value for p in parts]
    out = np.concatenate(values, axis=axis)
    edges = np.cumsum([v.shape[axis] for v in values])[:-1]

    def make_vjp(index: int):
        def vjp(g: np.ndarray) -> np.ndarray:
            return np.split(g, edges, axis=axis)[index]

        return vjp

    return Tensor(out, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy (natural log) of softmax(logits) against integer labels."""
    labels = np.asarray(labels)
    if logits.value.ndim != 2:
        raise ShapeError(f"logits must be 2-d, got {logits.value.shape}")
    if labels.ndim != 1 or labels.shape[0] != logits.value.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.value.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.value.shape[1]):
        raise ValueError("label out of range for logit width")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = logits.value.shape[0]
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()

    def vjp(g: np.ndarray) -> np.ndarray:
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return grad * (float(g) / n)

    return Tensor(loss, (logits,), (vjp,))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class BlockGraph:
    """Feedforward stack of affine layers, each optionally followed by ReLU."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], relus: Sequence[bool]):
        if not (len(weights) == len(biases) == len(relus)) or not weights:
            raise ValueError("need matching, non-empty weight/bias/relu lists")
        self.weights = [Tensor(w) for w in weights]
        self.biases = [Tensor(b) for b in biases]
        self.relus = list(relus)
        for w, b in zip(self.weights, self.biases):
            if w.value.ndim != 2 or b.value.shape != (w.value.shape[1],):
                raise ShapeError(f"layer shapes {w.value.shape} / {b.value.shape} inconsistent")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.value.shape[1] != nxt.value.shape[0]:
                raise ShapeError("consecutive layer widths do not chain")
        self._tape: Tensor | None = None
        self._tape_was_vector = False

    @classmethod
    def build(
        cls,
        dims: Sequence[int],
        rng: np.random.Generator,
        final_relu: bool = False,
    ) -> BlockGraph:
        """Glorot-uniform weights and zero biases for widths ``dims[0] -> dims[-1]``."""
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ValueError(f"need at least two positive widths, got {tuple(dims)}")
        weights = [glorot_uniform(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        relus = [True] * (len(dims) - 2) + [final_relu]
        return cls(weights, biases, relus)

    @property
    def input_dim(self) -> int:
        return self.weights[0].value.shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].value.shape[1]

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def forward_tensor(self, x: Tensor) -> Tensor:
        if x.value.ndim != 2 or x.value.shape[1] != self.input_dim:
            raise ShapeError(f"input shape {x.value.shape} incompatible with input_dim {self.input_dim}")
        out = x
        for w, b, act in zip(self.weights, self.biases, self.relus):
            out = add(matmul(out, w), b)
            if act:
                out = relu(out)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Run a batch (or single vector) through the stack, recording a tape."""
        arr = np.asarray(x, dtype=np.float64)
        vector = arr.ndim == 1
        if vector:
            arr = arr[None, :]
        if not np.all(np.isfinite(arr)):
            raise ValueError("input contains non-finite values")
        out = self.forward_tensor(Tensor(arr))
        self._tape = out
        self._tape_was_vector = vector
        return out.value[0] if vector else out.value

    def backward(self, output_grad: np.ndarray) -> list[np.ndarray]:
        """Backpropagate through the last forward pass; grads accumulate per head."""
        if self._tape is None:
            raise GraphStateError("backward called before forward")
        g = np.asarray(output_grad, dtype=np.float64)
        if self._tape_was_vector:
            g = g[None, :]
        self._tape.backward(g)
        return [np.array(p.grad) for p in self.parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def reset(self) -> None:
        """Drop the recorded tape (and any accumulated parameter gradients)."""
        self._tape = None
        self.zero_grad()


class AdamW:
    """Adam with decoupled weight decay over a fixed parameter list.

    Decay is applied as exact multiplicative shrinkage, so a zero-gradient
    step scales each parameter by (1 - lr * weight_decay).
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError("betas must sit in [0, 1)")
        if eps <= 0.0 or weight_decay < 0.0:
            raise ValueError("eps must be positive and weight_decay non-negative")
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float, grads: Sequence[np.ndarray] | None = None) -> None:
        if lr < 0.0:
            raise ValueError(f"negative learning rate {lr}")
        if grads is not None and len(grads) != len(self.params):
            raise ValueError("grads list does not match parameter list")
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = grads[i] if grads is not None else p.grad
            if g is None:
                g = np.zeros_like(p.value)
            g = np.asarray(g, dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {i}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**t)
            v_hat = self.v[i] / (1.0 - self.beta2**t)
            p.value = p.value * (1.0 - lr * self.weight_decay) - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to ``base_rate`` followed by a half-cosine down to ``min_rate``."""

    base_rate: float
    warmup_epochs: int
    total_epochs: int
    min_rate: float = 0.0

    def __post_init__(self):
        if self.base_rate <= 0.0 or not 0.0 <= self.min_rate <= self.base_rate:
            raise ValueError(f"need 0 <= min_rate <= base_rate, got {self.min_rate}, {self.base_rate}")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError(f"need 0 <= warmup <= total, got {self.warmup_epochs}, {self.total_epochs}")


def cosine_lr(schedule: LrSchedule, epoch: int) -> float:
    """Rate for ``epoch`` in [0, total]; exact base at warmup end, min at total."""
    if not 0 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    if epoch < schedule.warmup_epochs:
        return schedule.base_rate * epoch / schedule.warmup_epochs
    span = schedule.total_epochs - schedule.warmup_epochs
    if span == 0:
        return schedule.base_rate
    progress = (epoch - schedule.warmup_epochs) / span
    return schedule.min_rate + 0.5 * (schedule.base_rate - schedule.min_rate) * (1.0 + math.cos(math.pi * progress))
