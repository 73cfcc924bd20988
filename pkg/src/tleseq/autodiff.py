"""Minimal reverse-mode autodiff on dense float64 arrays.

A Tape records every primitive in execution order, which is already a
topological order, so backward is one reversed sweep that visits each node
exactly once and reuses the cached forward values.  The primitive set is
deliberately small: just enough for gated recurrent cells, softmax
cross-entropy, and squared/absolute regression heads.

Gradients are exact and deterministic; `grad_check` compares them against
central finite differences and is itself part of the acceptance surface.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "ParameterSet",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_HEADER",
]


class Tensor:
    """A shaped block of float64 values; identity (not value) keys the tape."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Execution record: forward ops append nodes, backward walks them reversed."""

    def __init__(self, check_finite: bool = False):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.check_finite = check_finite

    def _out(self, data, ins, bwd) -> Tensor:
        t = Tensor(data)
        if self.check_finite:
            assert np.isfinite(t.data).all(), "non-finite value on tape"
        self._nodes.append((t, ins, bwd))
        return t

    # -- primitives ---------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"matmul shapes {a.data.shape} x {b.data.shape}")
        out = a.data @ b.data

        def bwd(g):
            return g @ b.data.T, a.data.T @ g

        return self._out(out, (a, b), bwd)

    def _elementwise_pair(self, a: Tensor, b: Tensor, op: str) -> Tensor:
        try:
            if op == "add":
                out = a.data + b.data
            elif op == "sub":
                out = a.data - b.data
            else:
                out = a.data * b.data
        except ValueError:
            raise ShapeError(f"{op} shapes {a.data.shape} vs {b.data.shape}") from None
        if op == "mul":
            def bwd(g):
                return (_unbroadcast(g * b.data, a.data.shape),
                        _unbroadcast(g * a.data, b.data.shape))
        elif op == "sub":
            def bwd(g):
                return (_unbroadcast(g, a.data.shape),
                        _unbroadcast(-g, b.data.shape))
        else:
            def bwd(g):
                return (_unbroadcast(g, a.data.shape),
                        _unbroadcast(g, b.data.shape))
        return self._out(out, (a, b), bwd)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        return self._elementwise_pair(a, b, "add")

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        return self._elementwise_pair(a, b, "sub")

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        return self._elementwise_pair(a, b, "mul")

    def scalar_mul(self, a: Tensor, s: float) -> Tensor:
        s = float(s)
        return self._out(a.data * s, (a,), lambda g: (g * s,))

    def tanh(self, a: Tensor) -> Tensor:
        out = np.tanh(a.data)
        return self._out(out, (a,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self, a: Tensor) -> Tensor:
        out = 1.0 / (1.0 + np.exp(-a.data))
        return self._out(out, (a,), lambda g: (g * out * (1.0 - out),))

    def gather_rows(self, a: Tensor, idx) -> Tensor:
        idx = np.asarray(idx, dtype=np.int64)
        out = a.data[idx]

        def bwd(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            return (ga,)

        return self._out(out, (a,), bwd)

    def take_columns(self, a: Tensor, idx) -> Tensor:
        """out[i] = a[i, idx[i]]; the per-row pick used by cross-entropy."""
        idx = np.asarray(idx, dtype=np.int64)
        if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
            raise ShapeError(f"take_columns on {a.data.shape} with index {idx.shape}")
        rows = np.arange(a.data.shape[0])
        out = a.data[rows, idx]

        def bwd(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, (rows, idx), g)
            return (ga,)

        return self._out(out, (a,), bwd)

    def logsumexp(self, a: Tensor) -> Tensor:
        """Over the last axis, keepdims, numerically stabilized."""
        m = a.data.max(axis=-1, keepdims=True)
        out = m + np.log(np.exp(a.data - m).sum(axis=-1, keepdims=True))
        soft = np.exp(a.data - out)
        return self._out(out, (a,), lambda g: (g * soft,))

    def square(self, a: Tensor) -> Tensor:
        return self._out(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,))

    def absolute(self, a: Tensor) -> Tensor:
        # subgradient at 0 is taken as 0 for determinism
        return self._out(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))

    def sum(self, a: Tensor) -> Tensor:
        out = np.array([a.data.sum()])
        return self._out(out, (a,), lambda g: (np.full(a.data.shape, float(g[0])),))

    # -- reverse sweep ------------------------------------------------------

    def backward(self, out: Tensor) -> dict[int, np.ndarray]:
        """Gradients of a scalar output w.r.t. every tensor on the tape.

        Returns a map keyed by tensor identity (id()); leaves absent from the
        computation simply have no entry.
        """
        if out.data.shape != (1,):
            raise ShapeError(f"backward needs a scalar of shape (1,), got {out.data.shape}")
        grads: dict[int, np.ndarray] = {id(out): np.ones(1)}
        for node_out, ins, bwd in reversed(self._nodes):
            g = grads.get(id(node_out))
            if g is None:
                continue
            for tensor, gi in zip(ins, bwd(g)):
                if gi is None:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return grads


class ParameterSet:
    """Named leaf tensors plus per-name gradient accumulators."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(array, dtype=np.float64))
        self._params[name] = t
        self.grads[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def accumulate(self, grad_map: dict[int, np.ndarray]) -> None:
        """Fold a backward() result into the named accumulators."""
        for name, tensor in self._params.items():
            g = grad_map.get(id(tensor))
            if g is not None:
                if g.shape != tensor.data.shape:
                    raise ShapeError(f"gradient {g.shape} vs parameter {tensor.data.shape}")
                self.grads[name] += g

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((g * g).sum()) for g in self.grads.values())))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, tensor in self._params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            if state[name].shape != tensor.data.shape:
                raise ShapeError(f"state {state[name].shape} vs parameter {tensor.data.shape}")
            tensor.data[...] = state[name]


def grad_check(
    build: Callable[[], tuple[Tape, Tensor]],
    params: ParameterSet,
    eps: float = 1e-5,
    max_entries: int = 8,
) -> float:
    """Max relative disagreement between tape gradients and central differences.

    `build` must rebuild the forward pass from the current parameter values
    each time it is called.  Relative error per entry is
    |analytic - fd| / max(1e-8, |analytic| + |fd|).

    For every parameter the max_entries entries with the largest analytic
    magnitude are perturbed by +/-eps.  Selection is deliberate: central
    differences in double precision carry rounding noise of roughly
    |loss| * 1e-16 / (2 eps), so entries whose true gradient sits below that
    floor cannot be resolved by any implementation; the dominant entries are
    where a wrong backward rule would show.
    """
    params.zero_grads()
    tape, out = build()
    params.accumulate(tape.backward(out))
    analytic = {name: g.copy() for name, g in params.grads.items()}

    def value() -> float:
        _, o = build()
        return float(o.data[0])

    worst = 0.0
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        n = flat.size
        order = np.argsort(-np.abs(analytic[name].reshape(-1)), kind="stable")
        idxs = order[: min(n, max_entries)]
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + eps
            fp = value()
            flat[i] = keep - eps
            fm = value()
            flat[i] = keep
            fd = (fp - fm) / (2.0 * eps)
            a = float(analytic[name].reshape(-1)[i])
            worst = max(worst, abs(a - fd) / max(1e-8, abs(a) + abs(fd)))
    return worst


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_HEADER = b"TLE-CKPT v1\n"


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Header line, then per array: name line, shape line, length-prefixed payload."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_HEADER)
        for name, arr in arrays.items():
            if "\n" in name:
                raise ValueError("parameter names must be single-line")
            # tobytes() emits C order for any layout; ascontiguousarray would
            # silently promote 0-d arrays to shape (1,)
            a = np.asarray(arr, dtype="<f8")
            fh.write(name.encode("utf-8") + b"\n")
            fh.write(" ".join(str(d) for d in a.shape).encode("ascii") + b"\n")
            payload = a.tobytes()
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.read(len(CHECKPOINT_HEADER))
        if header != CHECKPOINT_HEADER:
            raise ValueError(f"bad checkpoint header {header!r}")
        out: dict[str, np.ndarray] = {}
        while True:
            name_line = fh.readline()
            if not name_line:
                break
            name = name_line.rstrip(b"\n").decode("utf-8")
            shape_line = fh.readline().rstrip(b"\n").decode("ascii")
            shape = tuple(int(s) for s in shape_line.split()) if shape_line else ()
            (nbytes,) = struct.unpack("<Q", fh.read(8))
            payload = fh.read(nbytes)
            if len(payload) != nbytes:
                raise ValueError("truncated checkpoint payload")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        return out
