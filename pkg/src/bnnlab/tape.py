"""Reverse-mode automatic differentiation on an explicit operation tape.

A :class:`Tape` records a static computation graph once (define-then-run).
Arrays are bound to named leaves at evaluation time, so a single graph can be
re-evaluated many times inside a training loop without rebuilding.  The
primitive set is deliberately small -- dense linear algebra, a handful of
elementwise nonlinearities, reductions, shape ops, and 2-D cross-correlation.
Everything else in the package is composed from these.

All values are float64.  Gradients flow through a single reverse sweep; each
node's rule fires at most once per backward call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tape",
    "Ref",
    "TapeError",
    "forward_eval",
    "backward_grad",
    "value_and_grad",
    "finite_diff_grad",
    "add",
    "mul",
    "matmul",
    "maximum",
    "exp",
    "log",
    "tanh",
    "reciprocal",
    "reduce_sum",
    "reshape",
    "conv2d",
    "detached_max",
    "softplus",
    "sigmoid",
    "logsumexp_rows",
    "relu",
]


class TapeError(RuntimeError):
    """Raised for malformed graphs or shape mismatches, naming the node."""


@dataclass
class _Node:
    op: str
    args: tuple[int, ...]
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Ref:
    """Handle to one node of a tape.  Supports arithmetic overloads."""

    tape: "Tape"
    index: int

    # make numpy defer to the reflected operators below instead of trying to
    # coerce Ref into an object array
    __array_ufunc__ = None

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Ref) else -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Ref):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return mul(reciprocal(self), other)

    def __pow__(self, k):
        if k == 2:
            return mul(self, self)
        raise TapeError("only **2 is supported on tape refs")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return self.tape._push("slice", (self.index,), {"idx": idx})


class Tape:
    """A static computation graph with named leaves and named outputs."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: dict[str, int] = {}
        self.outputs: dict[str, int] = {}

    # -- construction ---------------------------------------------------
    def leaf(self, name: str) -> Ref:
        """Declare a named input placeholder; bound at forward_eval time."""
        if name in self.leaves:
            raise TapeError(f"leaf {name!r} declared twice")
        idx = self._push("leaf", (), {"name": name}).index
        self.leaves[name] = idx
        return Ref(self, idx)

    def constant(self, value) -> Ref:
        value = np.asarray(value, dtype=np.float64)
        return self._push("const", (), {"value": value})

    def output(self, name: str, ref: Ref) -> None:
        """Mark a node as a named output of the graph."""
        if ref.tape is not self:
            raise TapeError("output ref belongs to a different tape")
        self.outputs[name] = ref.index

    def _push(self, op: str, args: tuple[int, ...], meta: dict | None = None) -> Ref:
        self.nodes.append(_Node(op, args, meta or {}))
        return Ref(self, len(self.nodes) - 1)

    def _lift(self, x) -> Ref:
        if isinstance(x, Ref):
            if x.tape is not self:
                raise TapeError("refs from two different tapes were combined")
            return x
        return self.constant(x)


def _pick_tape(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Ref):
            return x.tape
    return None


# ---------------------------------------------------------------------------
# primitive constructors; each works on Refs or plain arrays so that formula
# code can be written once and evaluated either eagerly or on a tape

def add(a, b):
    t = _pick_tape(a, b)
    if t is None:
        return np.asarray(a, dtype=np.float64) + np.asarray(b, dtype=np.float64)
    a, b = t._lift(a), t._lift(b)
    return t._push("add", (a.index, b.index))


def mul(a, b):
    t = _pick_tape(a, b)
    if t is None:
        return np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)
    a, b = t._lift(a), t._lift(b)
    return t._push("mul", (a.index, b.index))


def matmul(a, b):
    t = _pick_tape(a, b)
    if t is None:
        return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)
    a, b = t._lift(a), t._lift(b)
    return t._push("matmul", (a.index, b.index))


def maximum(a, b):
    """Elementwise max.  Gradient at exact ties is zero on both branches."""
    t = _pick_tape(a, b)
    if t is None:
        return np.maximum(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    a, b = t._lift(a), t._lift(b)
    return t._push("maximum", (a.index, b.index))


def exp(x):
    if not isinstance(x, Ref):
        return np.exp(np.asarray(x, dtype=np.float64))
    return x.tape._push("exp", (x.index,))


def log(x):
    if not isinstance(x, Ref):
        return np.log(np.asarray(x, dtype=np.float64))
    return x.tape._push("log", (x.index,))


def tanh(x):
    if not isinstance(x, Ref):
        return np.tanh(np.asarray(x, dtype=np.float64))
    return x.tape._push("tanh", (x.index,))


def reciprocal(x):
    if not isinstance(x, Ref):
        return 1.0 / np.asarray(x, dtype=np.float64)
    return x.tape._push("reciprocal", (x.index,))


def reduce_sum(x, axis=None, keepdims: bool = False):
    if not isinstance(x, Ref):
        return np.sum(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)
    return x.tape._push("sum", (x.index,), {"axis": axis, "keepdims": keepdims})


def reshape(x, shape):
    if not isinstance(x, Ref):
        return np.reshape(np.asarray(x, dtype=np.float64), shape)
    return x.tape._push("reshape", (x.index,), {"shape": tuple(shape)})


def conv2d(x, w, stride: int = 1):
    """Valid-mode 2-D cross-correlation.

    x has shape (N, C_in, H, W), the kernel w has shape (C_out, C_in, kh, kw);
    the result has shape (N, C_out, H_out, W_out).
    """
    t = _pick_tape(x, w)
    if t is None:
        return _conv2d_forward(np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64), stride)
    x, w = t._lift(x), t._lift(w)
    return t._push("conv2d", (x.index, w.index), {"stride": int(stride)})


def detached_max(x, axis=-1):
    """Row max treated as a constant: no gradient flows through it.

    Used to stabilise logsumexp/softmax; subtracting a constant shift leaves
    both the value and the gradient of those composites unchanged.
    """
    if not isinstance(x, Ref):
        return np.max(np.asarray(x, dtype=np.float64), axis=axis, keepdims=True)
    return x.tape._push("detached_max", (x.index,), {"axis": axis})


# -- composites (no new primitives) -----------------------------------------

def softplus(x):
    """ln(1 + e^x), computed as max(x, 0) + log(1 + e^{-|x|}) for stability."""
    # -|x| = -max(x, -x)
    neg_abs = mul(maximum(x, mul(x, -1.0)), -1.0)
    return add(maximum(x, 0.0), log(add(1.0, exp(neg_abs))))


def sigmoid(x):
    return reciprocal(add(1.0, exp(mul(x, -1.0))))


def relu(x):
    return maximum(x, 0.0)


def logsumexp_rows(x):
    """Stable log-sum-exp over the last axis, keepdims."""
    m = detached_max(x, axis=-1)
    return add(m, log(reduce_sum(exp(add(x, mul(m, -1.0))), axis=-1, keepdims=True)))


# ---------------------------------------------------------------------------
# evaluation

def _conv2d_forward(x, w, stride):
    if x.ndim != 4 or w.ndim != 4:
        raise TapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, ci, h, wd = x.shape
    co, ci_k, kh, kw = w.shape
    if ci != ci_k:
        raise TapeError(f"conv2d channel mismatch: input has {ci}, kernel expects {ci_k}")
    if kh > h or kw > wd:
        raise TapeError(f"conv2d kernel {kh}x{kw} larger than input {h}x{wd}")
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for u in range(kh):
        for v in range(kw):
            xs = x[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
            out += np.einsum("ncij,kc->nkij", xs, w[:, :, u, v], optimize=True)
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def forward_eval(tape: Tape, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Evaluate the whole graph; returns {output_name: value}.

    Missing or extra leaf bindings raise TapeError.
    """
    vals = _forward_values(tape, inputs)
    return {name: vals[idx] for name, idx in tape.outputs.items()}


def _forward_values(tape: Tape, inputs: dict[str, np.ndarray]) -> list:
    missing = set(tape.leaves) - set(inputs)
    if missing:
        raise TapeError(f"missing values for leaves {sorted(missing)}")
    extra = set(inputs) - set(tape.leaves)
    if extra:
        raise TapeError(f"values supplied for unknown leaves {sorted(extra)}")
    vals = [None] * len(tape.nodes)
    # non-finite values are legal intermediates (callers check; trainers abort
    # on them), so the usual overflow/invalid warnings are noise here
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return _eval_nodes(tape, inputs, vals)


def _eval_nodes(tape: Tape, inputs, vals):
    for i, node in enumerate(tape.nodes):
        a = node.args
        try:
            if node.op == "leaf":
                vals[i] = np.asarray(inputs[node.meta["name"]], dtype=np.float64)
            elif node.op == "const":
                vals[i] = node.meta["value"]
            elif node.op == "add":
                vals[i] = vals[a[0]] + vals[a[1]]
            elif node.op == "mul":
                vals[i] = vals[a[0]] * vals[a[1]]
            elif node.op == "matmul":
                x, y = vals[a[0]], vals[a[1]]
                if x.ndim != 2 or y.ndim != 2:
                    raise TapeError(f"node {i} (matmul): expects 2-D operands, got {x.shape} @ {y.shape}")
                if x.shape[1] != y.shape[0]:
                    raise TapeError(f"node {i} (matmul): inner dims differ, {x.shape} @ {y.shape}")
                vals[i] = x @ y
            elif node.op == "maximum":
                vals[i] = np.maximum(vals[a[0]], vals[a[1]])
            elif node.op == "exp":
                vals[i] = np.exp(vals[a[0]])
            elif node.op == "log":
                vals[i] = np.log(vals[a[0]])
            elif node.op == "tanh":
                vals[i] = np.tanh(vals[a[0]])
            elif node.op == "reciprocal":
                vals[i] = 1.0 / vals[a[0]]
            elif node.op == "sum":
                vals[i] = np.sum(vals[a[0]], axis=node.meta["axis"], keepdims=node.meta["keepdims"])
            elif node.op == "reshape":
                vals[i] = np.reshape(vals[a[0]], node.meta["shape"])
            elif node.op == "slice":
                vals[i] = np.asarray(vals[a[0]][node.meta["idx"]], dtype=np.float64)
            elif node.op == "conv2d":
                vals[i] = _conv2d_forward(vals[a[0]], vals[a[1]], node.meta["stride"])
            elif node.op == "detached_max":
                vals[i] = np.max(vals[a[0]], axis=node.meta["axis"], keepdims=True)
            else:  # pragma: no cover
                raise TapeError(f"node {i}: unknown op {node.op!r}")
        except TapeError:
            raise
        except ValueError as e:
            raise TapeError(f"node {i} ({node.op}): {e}") from e
    return vals


def backward_grad(tape: Tape, output: str, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Gradient of the named scalar output w.r.t. every leaf.

    Leaves the output does not depend on get zero gradients.  Raises
    TapeError if the output value is not a scalar (size 1).
    """
    _, grads = value_and_grad(tape, output, inputs)
    return grads


def value_and_grad(tape: Tape, output: str, inputs: dict[str, np.ndarray]):
    """One forward + one reverse sweep; returns ({output_name: value}, {leaf: grad})."""
    vals = _forward_values(tape, inputs)
    if output not in tape.outputs:
        raise TapeError(f"unknown output {output!r}")
    out_idx = tape.outputs[output]
    out_val = vals[out_idx]
    if np.size(out_val) != 1:
        raise TapeError(f"output {output!r} has shape {np.shape(out_val)}; gradients need a scalar")

    grads: list = [None] * len(tape.nodes)
    grads[out_idx] = np.ones_like(np.asarray(out_val, dtype=np.float64))

    def accum(idx, g):
        g = _unbroadcast(np.asarray(g, dtype=np.float64), np.shape(vals[idx]))
        grads[idx] = g if grads[idx] is None else grads[idx] + g

    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        _backward_nodes(tape, vals, grads, accum, out_idx)

    out = {}
    for name, idx in tape.leaves.items():
        g = grads[idx]
        out[name] = np.zeros_like(vals[idx]) if g is None else g
    values = {name: vals[idx] for name, idx in tape.outputs.items()}
    return values, out


def _backward_nodes(tape, vals, grads, accum, out_idx):
    for i in range(out_idx, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = tape.nodes[i]
        a = node.args
        op = node.op
        if op in ("leaf", "const", "detached_max"):
            continue
        if op == "add":
            accum(a[0], g)
            accum(a[1], g)
        elif op == "mul":
            accum(a[0], g * vals[a[1]])
            accum(a[1], g * vals[a[0]])
        elif op == "matmul":
            accum(a[0], g @ vals[a[1]].T)
            accum(a[1], vals[a[0]].T @ g)
        elif op == "maximum":
            x, y = vals[a[0]], vals[a[1]]
            accum(a[0], g * (x > y))
            accum(a[1], g * (y > x))
        elif op == "exp":
            accum(a[0], g * vals[i])
        elif op == "log":
            accum(a[0], g / vals[a[0]])
        elif op == "tanh":
            accum(a[0], g * (1.0 - vals[i] ** 2))
        elif op == "reciprocal":
            accum(a[0], -g * vals[i] ** 2)
        elif op == "sum":
            axis, keepdims = node.meta["axis"], node.meta["keepdims"]
            src_shape = np.shape(vals[a[0]])
            gg = np.asarray(g, dtype=np.float64)
            if axis is not None and not keepdims:
                ax = axis if isinstance(axis, tuple) else (axis,)
                ax = tuple(x % len(src_shape) for x in ax)
                shp = [1 if j in ax else s for j, s in enumerate(src_shape)]
                gg = gg.reshape(shp)
            elif axis is None and not keepdims:
                gg = gg.reshape((1,) * len(src_shape))
            accum(a[0], np.broadcast_to(gg, src_shape))
        elif op == "reshape":
            accum(a[0], np.reshape(g, np.shape(vals[a[0]])))
        elif op == "slice":
            gx = np.zeros_like(vals[a[0]])
            np.add.at(gx, node.meta["idx"], g)
            accum(a[0], gx)
        elif op == "conv2d":
            x, w = vals[a[0]], vals[a[1]]
            stride = node.meta["stride"]
            n, ci, h, wd = x.shape
            co, _, kh, kw = w.shape
            ho, wo = g.shape[2], g.shape[3]
            gx = np.zeros_like(x)
            gw = np.zeros_like(w)
            for u in range(kh):
                for v in range(kw):
                    xs = x[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
                    gw[:, :, u, v] = np.einsum("nkij,ncij->kc", g, xs, optimize=True)
                    gx[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += np.einsum(
                        "nkij,kc->ncij", g, w[:, :, u, v], optimize=True
                    )
            accum(a[0], gx)
            accum(a[1], gw)
        else:  # pragma: no cover
            raise TapeError(f"node {i}: no gradient rule for {op!r}")


def finite_diff_grad(f, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, h = rel_step*(1+|x_i|).

    The independent oracle used by the autodiff tests.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        h = rel_step * (1.0 + abs(flat[i]))
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        gf[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return g
