"""Rank-2 reverse-mode autodiff on numpy arrays, plus Adam.

Sequences are stored as rows: a sentence of M tokens with width d is an
``(M, d)`` array. Vectors (biases, layer-norm affine terms) are ``(1, d)``
rows so that every parameter is a matrix.

Every op returns a :class:`Tensor` that remembers its parents and a backward
closure. Calling :meth:`Tensor.backward` on a scalar walks the recorded graph
in reverse topological order and accumulates ``grad`` on every node.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class NumericalError(ArithmeticError):
    """A NaN or infinity showed up where a finite value is required."""


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording the graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None, name: str = ""):
        self.data = data
        self.grad: np.ndarray | None = None
        if _GRAD_ENABLED:
            self._parents = parents
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        # grads are never mutated in place, so aliasing g is safe
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return Tensor(arr)


# ---------------------------------------------------------------------------
# elementary ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"cannot multiply {a.data.shape} by {b.data.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    out._backward = backward if out._parents else None
    return out


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ w + bias`` with ``x`` (n, a), ``w`` (a, b), ``bias`` (1, b)."""
    xd, wd = x.data, w.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise DimensionError(f"linear: input {xd.shape} incompatible with weight {wd.shape}")
    y = xd @ wd
    if bias is not None:
        if bias.data.shape != (1, wd.shape[1]):
            raise DimensionError(f"linear: bias {bias.data.shape} incompatible with weight {wd.shape}")
        y = y + bias.data
        parents = (x, w, bias)
    else:
        parents = (x, w)
    out = Tensor(y, parents)

    def backward(g):
        x._accumulate(g @ wd.T)
        w._accumulate(xd.T @ g)
        if bias is not None:
            bias._accumulate(g.sum(axis=0, keepdims=True))

    out._backward = backward if out._parents else None
    return out


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T, (x,))
    out._backward = (lambda g: x._accumulate(g.T)) if out._parents else None
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a (1, n) row broadcast over ``a``'s rows."""
    if a.data.shape != b.data.shape and not (b.data.shape[0] == 1 and b.data.shape[1] == a.data.shape[1]):
        raise DimensionError(f"cannot add {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data + b.data, (a, b))
    broadcast = a.data.shape != b.data.shape

    def backward(g):
        a._accumulate(g)
        b._accumulate(g.sum(axis=0, keepdims=True) if broadcast else g)

    out._backward = backward if out._parents else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"cannot multiply elementwise {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data * b.data, (a, b))

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    out._backward = backward if out._parents else None
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c, (x,))
    out._backward = (lambda g: x._accumulate(g * c)) if out._parents else None
    return out


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    xd = x.data
    pos = xd >= 0
    z = np.exp(-np.abs(xd))
    s = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))
    out = Tensor(s, (x,))
    out._backward = (lambda g: x._accumulate(g * s * (1.0 - s))) if out._parents else None
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * xd * (1.0 + t), (x,))

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner))

    out._backward = backward if out._parents else None
    return out


def softmax_rows(x: Tensor) -> Tensor:
    xd = x.data
    if np.isnan(xd).any():
        raise NumericalError("softmax_rows: NaN input")
    e = np.exp(xd - xd.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, (x,))

    def backward(g):
        x._accumulate(p * (g - (g * p).sum(axis=1, keepdims=True)))

    out._backward = backward if out._parents else None
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization with population variance, then ``gamma * xhat + beta``."""
    xd = x.data
    d = xd.shape[1]
    if gamma.data.shape != (1, d) or beta.data.shape != (1, d):
        raise DimensionError(f"layer_norm: gamma/beta must be (1, {d})")
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data, (x, gamma, beta))

    def backward(g):
        gamma._accumulate((g * xhat).sum(axis=0, keepdims=True))
        beta._accumulate(g.sum(axis=0, keepdims=True))
        gx = g * gamma.data
        x._accumulate(
            inv * (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        )

    out._backward = backward if out._parents else None
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.data.shape for p in parts]}")
    widths = [p.data.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), tuple(parts))

    def backward(g):
        start = 0
        for p, w in zip(parts, widths):
            p._accumulate(g[:, start : start + w])
            start += w

    out._backward = backward if out._parents else None
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[:, start:stop], (x,))

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accumulate(full)

    out._backward = backward if out._parents else None
    return out


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.intp)
    out = Tensor(x.data[index], (x,))

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x._accumulate(full)

    out._backward = backward if out._parents else None
    return out


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.array([[x.data.mean()]]), (x,))
    out._backward = (lambda g: x._accumulate(np.full_like(x.data, g.item() / n))) if out._parents else None
    return out


def cross_entropy(logits: Tensor, gold: Sequence[int], weights: Sequence[float] | None = None) -> Tensor:
    """Weighted mean of ``-log softmax(logits)[gold]`` over rows.

    With ``weights=None`` every row counts once; otherwise the sum is divided
    by the total weight.
    """
    ld = logits.data
    n, c = ld.shape
    gold = np.asarray(gold, dtype=np.intp)
    if gold.shape != (n,):
        raise DimensionError(f"cross_entropy: {n} rows but {gold.shape[0]} gold labels")
    if n and (gold.min() < 0 or gold.max() >= c):
        raise IndexError(f"cross_entropy: gold index out of range for {c} classes")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    shifted = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(n)
    loss = -(w * logp[rows, gold]).sum() / total
    out = Tensor(np.array([[loss]]), (logits,))

    def backward(g):
        p = np.exp(logp)
        p[rows, gold] -= 1.0
        logits._accumulate(g.item() * p * (w / total)[:, None])

    out._backward = backward if out._parents else None
    return out


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------


def _path_seed(seed: int, path: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{path}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class ParamStore:
    """Named trainable matrices keyed by a dotted path.

    Initialization of each parameter draws from an RNG seeded by
    ``(seed, path)``, so the result does not depend on creation order.
    """

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, path: str, shape: tuple[int, int], init: str = "normal", std: float | None = None) -> Tensor:
        if path in self._params:
            raise KeyError(f"parameter {path!r} already exists")
        rows, cols = shape
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "normal":
            rng = np.random.default_rng(_path_seed(self.seed, path))
            data = rng.standard_normal(shape) * (std if std is not None else 1.0 / np.sqrt(rows))
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data.astype(self.dtype), name=path)
        self._params[path] = t
        return t

    def set(self, path: str, data: np.ndarray) -> None:
        data = np.asarray(data, dtype=self.dtype)
        if data.ndim == 1:
            data = data.reshape(1, -1)
        if path in self._params:
            if self._params[path].data.shape != data.shape:
                raise DimensionError(f"{path}: shape {data.shape} != {self._params[path].data.shape}")
            self._params[path].data = data.copy()
        else:
            self._params[path] = Tensor(data.copy(), name=path)

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def paths(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(p, self._params[p]) for p in self.paths()]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p: t.data.copy() for p, t in self.items()}

    def size(self) -> int:
        return sum(t.data.size for t in self._params.values())


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update; gradients are cleared afterwards."""
    for path, t in params.items():
        if t.grad is None:
            raise ValueError(f"adam_step: no gradient for parameter {path!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for path, t in params.items():
        g = t.grad
        if path not in state.m:
            state.m[path] = np.zeros_like(t.data)
            state.v[path] = np.zeros_like(t.data)
        m, v = state.m[path], state.v[path]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        t.data = t.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.zero_grad()


def finite_diff_check(
    loss_fn: Callable[[ParamStore], Tensor], params: ParamStore, h: float = 1e-4
) -> dict[str, float]:
    """Compare analytic gradients with central differences, elementwise.

    Returns the maximum relative error per parameter path, where the
    relative error of one element is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    params.zero_grad()
    loss = loss_fn(params)
    if not np.isfinite(loss.item()):
        raise NumericalError("finite_diff_check: non-finite loss")
    loss.backward()
    analytic = {p: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for p, t in params.items()}
    params.zero_grad()

    report: dict[str, float] = {}
    with no_grad():
        for path, t in params.items():
            worst = 0.0
            flat = t.data.reshape(-1)
            a_flat = analytic[path].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_fn(params).item()
                flat[i] = orig - h
                fm = loss_fn(params).item()
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericalError(f"finite_diff_check: non-finite loss perturbing {path}[{i}]")
                numeric = (fp - fm) / (2 * h)
                a = a_flat[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
            report[path] = worst
    return report
