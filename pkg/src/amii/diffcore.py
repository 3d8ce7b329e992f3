"""Dense float64 tensors with tape-based reverse-mode differentiation.

Just enough machinery for dense layers, multi-head attention, a gated
recurrent memory cell, and MSE training: no broadcasting beyond row-vector
bias addition, no sparse storage, no GPU. Arrays are rank 0-3; a leading
axis, when present, is a batch axis that every op carries through.

Tensors are treated as immutable once created. A ``Tape`` records each
primitive applied through it; ``Tape.backward`` replays the records in
reverse exactly once, accumulating gradients with ``+=`` into every
reachable tensor. Parameters keep their gradient buffers across tapes, so
an explicit ``ParamSet.zero_grads()`` precedes each optimizer step.
"""

from __future__ import annotations

import math
from typing import Callable, Iterator

import numpy as np

from .errors import DimensionError, NumericError, ParameterError, StateError

__all__ = [
    "Tensor",
    "Param",
    "ParamSet",
    "Tape",
    "grad_check",
]


class Tensor:
    """A float64 array plus a gradient slot filled in during backward."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Param(Tensor):
    """A named leaf tensor whose gradient accumulates across tapes."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.data.shape})"


class ParamSet:
    """Ordered collection of uniquely named parameters."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, data) -> Param:
        if name in self._params:
            raise StateError(f"duplicate parameter name {name!r}")
        p = Param(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def total_size(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def copy(self) -> "ParamSet":
        """Deep copy of values; gradients reset to zero."""
        out = ParamSet()
        for name, p in self._params.items():
            out.add(name, p.data.copy())
        return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # Copy on first write so sibling gradients never alias one buffer.
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records primitive ops during a forward pass for reverse replay.

    Construct with ``grad=False`` for inference-only passes: ops then skip
    recording entirely and ``backward`` is refused.
    """

    def __init__(self, grad: bool = True):
        self.grad_enabled = grad
        self._ops: list[Callable[[], None]] = []
        self._replayed = False

    def _record(self, fn: Callable[[], None]) -> None:
        if self.grad_enabled:
            self._ops.append(fn)

    def __len__(self) -> int:
        return len(self._ops)

    # -- primitives ---------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """Matrix product; 3-D operands are treated as stacks of matrices."""
        A, B = a.data, b.data
        if A.ndim < 2 or B.ndim < 2:
            raise DimensionError(f"matmul needs matrices, got {A.shape} x {B.shape}")
        if A.shape[-1] != B.shape[-2]:
            raise DimensionError(f"matmul inner dims disagree: {A.shape} x {B.shape}")
        if A.ndim == 3 and B.ndim == 3 and A.shape[0] != B.shape[0]:
            raise DimensionError(f"matmul batch dims disagree: {A.shape} x {B.shape}")
        out = Tensor(A @ B)

        def back() -> None:
            g = out.grad
            if g is None:
                return
            ga = g @ _swap(B)
            if ga.ndim > A.ndim:
                ga = ga.sum(axis=0)
            gb = _swap(A) @ g
            if gb.ndim > B.ndim:
                gb = gb.sum(axis=0)
            _accumulate(a, ga)
            _accumulate(b, gb)

        self._record(back)
        return out

    def transpose(self, x: Tensor) -> Tensor:
        """Swap the last two axes."""
        if x.data.ndim < 2:
            raise DimensionError(f"transpose needs rank >= 2, got {x.shape}")
        out = Tensor(_swap(x.data))

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, _swap(out.grad))

        self._record(back)
        return out

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
        out = Tensor(a.data + b.data)

        def back() -> None:
            if out.grad is not None:
                _accumulate(a, out.grad)
                _accumulate(b, out.grad)

        self._record(back)
        return out

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")
        out = Tensor(a.data * b.data)

        def back() -> None:
            if out.grad is not None:
                _accumulate(a, out.grad * b.data)
                _accumulate(b, out.grad * a.data)

        self._record(back)
        return out

    def scale(self, x: Tensor, k: float) -> Tensor:
        out = Tensor(x.data * k)

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, out.grad * k)

        self._record(back)
        return out

    def add_rowvec(self, x: Tensor, b: Tensor) -> Tensor:
        """Add a length-n vector to every row of x (last axis n)."""
        if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
            raise DimensionError(f"add_rowvec: {x.shape} + {b.shape}")
        out = Tensor(x.data + b.data)

        def back() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(x, g)
            _accumulate(b, g.reshape(-1, b.data.shape[0]).sum(axis=0))

        self._record(back)
        return out

    def sigmoid(self, x: Tensor) -> Tensor:
        v = x.data
        out_data = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                            np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
        out = Tensor(out_data)

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, out.grad * out.data * (1.0 - out.data))

        self._record(back)
        return out

    def tanh(self, x: Tensor) -> Tensor:
        out = Tensor(np.tanh(x.data))

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, out.grad * (1.0 - out.data * out.data))

        self._record(back)
        return out

    def relu(self, x: Tensor) -> Tensor:
        out = Tensor(np.maximum(x.data, 0.0))

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, out.grad * (x.data > 0.0))

        self._record(back)
        return out

    def softmax_rows(self, x: Tensor) -> Tensor:
        """Stable softmax along the last axis; each row sums to one."""
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = Tensor(e / e.sum(axis=-1, keepdims=True))

        def back() -> None:
            g = out.grad
            if g is None:
                return
            s = out.data
            _accumulate(x, (g - (g * s).sum(axis=-1, keepdims=True)) * s)

        self._record(back)
        return out

    def concat_feature(self, a: Tensor, b: Tensor) -> Tensor:
        """Join two tensors along the feature (last) axis."""
        if a.data.shape[:-1] != b.data.shape[:-1]:
            raise DimensionError(
                f"concat_feature leading dims disagree: {a.shape} vs {b.shape}")
        na = a.data.shape[-1]
        out = Tensor(np.concatenate([a.data, b.data], axis=-1))

        def back() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(a, g[..., :na])
            _accumulate(b, g[..., na:])

        self._record(back)
        return out

    def slice_cols(self, x: Tensor, lo: int, hi: int) -> Tensor:
        """Select feature columns [lo, hi) along the last axis."""
        if not (0 <= lo <= hi <= x.data.shape[-1]):
            raise DimensionError(f"slice_cols [{lo}:{hi}] out of range for {x.shape}")
        out = Tensor(x.data[..., lo:hi].copy())

        def back() -> None:
            g = out.grad
            if g is None:
                return
            full = np.zeros_like(x.data)
            full[..., lo:hi] = g
            _accumulate(x, full)

        self._record(back)
        return out

    def split_feature(self, x: Tensor, width: int) -> tuple[Tensor, Tensor]:
        """Inverse of concat_feature: first `width` columns and the rest."""
        n = x.data.shape[-1]
        return self.slice_cols(x, 0, width), self.slice_cols(x, width, n)

    def take_time(self, x: Tensor, t: int) -> Tensor:
        """Row t of a [B, T, c] stack, as [B, c]."""
        if x.data.ndim != 3:
            raise DimensionError(f"take_time needs rank 3, got {x.shape}")
        if not (0 <= t < x.data.shape[1]):
            raise DimensionError(f"take_time index {t} out of range for {x.shape}")
        out = Tensor(x.data[:, t, :].copy())

        def back() -> None:
            g = out.grad
            if g is None:
                return
            full = np.zeros_like(x.data)
            full[:, t, :] = g
            _accumulate(x, full)

        self._record(back)
        return out

    def stack_time(self, rows: list[Tensor]) -> Tensor:
        """Stack T tensors of shape [B, c] into [B, T, c]."""
        if not rows:
            raise DimensionError("stack_time needs at least one row")
        out = Tensor(np.stack([r.data for r in rows], axis=1))

        def back() -> None:
            g = out.grad
            if g is None:
                return
            for t, r in enumerate(rows):
                _accumulate(r, g[:, t, :])

        self._record(back)
        return out

    def mean_time(self, x: Tensor) -> Tensor:
        """Mean over the time axis of [B, T, c], as [B, c]."""
        if x.data.ndim != 3:
            raise DimensionError(f"mean_time needs rank 3, got {x.shape}")
        T = x.data.shape[1]
        out = Tensor(x.data.mean(axis=1))

        def back() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(x, np.repeat(g[:, None, :] / T, T, axis=1))

        self._record(back)
        return out

    def mse_loss(self, pred: Tensor, target) -> Tensor:
        """Mean over all elements of the squared difference (0-d output)."""
        target = _as_tensor(target)
        if pred.data.shape != target.data.shape:
            raise DimensionError(
                f"mse_loss shape mismatch: {pred.shape} vs {target.data.shape}")
        diff = pred.data - target.data
        n = diff.size
        out = Tensor((diff * diff).mean())

        def back() -> None:
            g = out.grad
            if g is None:
                return
            contrib = g * 2.0 * diff / n
            _accumulate(pred, contrib)
            _accumulate(target, -contrib)

        self._record(back)
        return out

    # -- replay --------------------------------------------------------

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        """Replay the tape in reverse, filling gradients for everything
        that contributed to `loss`. The loss must be 0-d (a scalar node)."""
        if not self.grad_enabled:
            raise StateError("backward on a gradient-disabled tape")
        if self._replayed:
            raise StateError("backward called twice on one tape without reset")
        if loss.data.ndim != 0:
            raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
        loss.grad = np.asarray(float(seed), dtype=np.float64)
        for fn in reversed(self._ops):
            fn()
        self._replayed = True

    def reset(self) -> None:
        self._ops.clear()
        self._replayed = False


def grad_check(
    f: Callable[[Tape], Tensor],
    params: ParamSet,
    eps: float = 1e-5,
    samples: int = 100,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients of `f` against central finite differences.

    `f` takes a Tape, runs a deterministic forward pass over `params`, and
    returns a scalar Tensor. Up to `samples` coordinates are drawn across
    all parameters; the return value is the largest
    ``|analytic - numeric| / max(1, |analytic|)`` observed.
    """
    if not (1e-6 <= eps <= 1e-4):
        raise ParameterError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    if rng is None:
        rng = np.random.default_rng(0)

    params.zero_grads()
    tape = Tape()
    loss = f(tape)
    if not np.isfinite(loss.data):
        raise NumericError("grad_check: function value is not finite")
    tape.backward(loss)

    flat: list[tuple[Param, int]] = []
    for p in params:
        flat.extend((p, i) for i in range(p.data.size))
    if len(flat) > samples:
        picks = rng.choice(len(flat), size=samples, replace=False)
        flat = [flat[int(i)] for i in picks]

    worst = 0.0
    for p, i in flat:
        orig = p.data.flat[i]
        p.data.flat[i] = orig + eps
        up = float(f(Tape(grad=False)).data)
        p.data.flat[i] = orig - eps
        down = float(f(Tape(grad=False)).data)
        p.data.flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericError(f"grad_check: non-finite value near {p.name}[{i}]")
        numeric = (up - down) / (2.0 * eps)
        analytic = float(p.grad.flat[i])
        err = abs(analytic - numeric) / max(1.0, abs(analytic))
        worst = max(worst, err)
    return worst
