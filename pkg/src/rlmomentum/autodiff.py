"""Minimal reverse-mode automatic differentiation on numpy arrays.

A :class:`Tape` records operations as they execute (define-by-run); execution
order is a topological order, so the backward pass simply walks the node list
in reverse, skipping nodes whose adjoint never became non-zero.  Values are
float64 arrays, typically (batch, dim).  With ``record=False`` the same ops
run value-only, giving a fast inference path through identical arithmetic.

Parameters are leaf :class:`Var` objects created with ``trainable=True``;
their ``grad`` buffers survive the tape and feed the optimizer.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteInput, TapeEmpty


class Var:
    """A node value plus the plumbing backward() needs."""

    __slots__ = ("value", "grad", "parents", "bwd", "trainable", "name")

    def __init__(self, value, trainable: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = ()
        self.bwd = None
        self.trainable = trainable
        self.name = name

    @property
    def shape(self):
        return self.value.shape


def parameter(value, name: str = "") -> Var:
    return Var(value, trainable=True, name=name)


def _acc(var: Var, g: np.ndarray, own: bool = False) -> None:
    """Accumulate an adjoint; constants (untracked leaves) are skipped.

    ``own=True`` promises g is a freshly allocated array the caller will not
    touch again, letting the first accumulation take it without a copy.
    """
    if var.bwd is None and not var.trainable:
        return
    if var.grad is None:
        var.grad = g if own else np.array(g, dtype=np.float64)
    else:
        var.grad += g


def _acc_slice(var: Var, sl, g: np.ndarray) -> None:
    if var.bwd is None and not var.trainable:
        return
    if var.grad is None:
        var.grad = np.zeros_like(var.value)
    var.grad[sl] += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Operation recorder.  All math goes through these methods."""

    __slots__ = ("nodes", "record")

    def __init__(self, record: bool = True):
        self.nodes: list[Var] = []
        self.record = record

    # -- plumbing -------------------------------------------------------------

    def _node(self, value, parents, bwd) -> Var:
        out = Var(value)
        if self.record:
            out.parents = parents
            out.bwd = bwd
            self.nodes.append(out)
        return out

    def leaf(self, value) -> Var:
        """Wrap a constant input (receives no gradient)."""
        return Var(value)

    # -- core ops ---------------------------------------------------------------

    def matmul(self, a: Var, b: Var) -> Var:
        value = a.value @ b.value

        def bwd(g):
            _acc(a, g @ b.value.T, own=True)
            _acc(b, a.value.T @ g, own=True)

        return self._node(value, (a, b), bwd)

    def affine(self, x: Var, w: Var, b: Var) -> Var:
        """x @ w + b in one node (bias added in place on the fresh product)."""
        value = x.value @ w.value
        value += b.value

        def bwd(g):
            _acc(x, g @ w.value.T, own=True)
            _acc(w, x.value.T @ g, own=True)
            _acc(b, _unbroadcast(g, b.value.shape), own=g.ndim > b.value.ndim)

        return self._node(value, (x, w, b), bwd)

    def recur_pre(self, xproj: Var, start: int, stop: int, h: Var, w_h: Var) -> Var:
        """xproj[start:stop] + h @ w_h, the per-step LSTM pre-activation."""
        value = h.value @ w_h.value
        value += xproj.value[start:stop]

        def bwd(g):
            _acc_slice(xproj, slice(start, stop), g)
            _acc(h, g @ w_h.value.T, own=True)
            _acc(w_h, h.value.T @ g, own=True)

        return self._node(value, (xproj, h, w_h), bwd)

    def add(self, a: Var, b: Var) -> Var:
        value = a.value + b.value

        def bwd(g):
            ga = _unbroadcast(g, a.value.shape)
            _acc(a, ga, own=ga is not g)
            gb = _unbroadcast(g, b.value.shape)
            _acc(b, gb, own=gb is not g)

        return self._node(value, (a, b), bwd)

    def sub(self, a: Var, b: Var) -> Var:
        value = a.value - b.value

        def bwd(g):
            ga = _unbroadcast(g, a.value.shape)
            _acc(a, ga, own=ga is not g)
            _acc(b, _unbroadcast(-g, b.value.shape), own=True)

        return self._node(value, (a, b), bwd)

    def mul(self, a: Var, b: Var) -> Var:
        value = a.value * b.value

        def bwd(g):
            _acc(a, _unbroadcast(g * b.value, a.value.shape), own=True)
            _acc(b, _unbroadcast(g * a.value, b.value.shape), own=True)

        return self._node(value, (a, b), bwd)

    def mul_const(self, a: Var, c) -> Var:
        c = np.asarray(c, dtype=np.float64)
        value = a.value * c

        def bwd(g):
            _acc(a, _unbroadcast(g * c, a.value.shape), own=True)

        return self._node(value, (a,), bwd)

    def add_const(self, a: Var, c) -> Var:
        value = a.value + np.asarray(c, dtype=np.float64)

        def bwd(g):
            ga = _unbroadcast(g, a.value.shape)
            _acc(a, ga, own=ga is not g)

        return self._node(value, (a,), bwd)

    def neg(self, a: Var) -> Var:
        return self.mul_const(a, -1.0)

    def square(self, a: Var) -> Var:
        value = a.value * a.value

        def bwd(g):
            _acc(a, g * (2.0 * a.value), own=True)

        return self._node(value, (a,), bwd)

    def exp(self, a: Var) -> Var:
        value = np.exp(a.value)

        def bwd(g):
            _acc(a, g * value, own=True)

        return self._node(value, (a,), bwd)

    def log(self, a: Var) -> Var:
        value = np.log(a.value)

        def bwd(g):
            _acc(a, g / a.value, own=True)

        return self._node(value, (a,), bwd)

    # -- nonlinearities ---------------------------------------------------------

    def sigmoid(self, a: Var) -> Var:
        value = _sigmoid(a.value)

        def bwd(g):
            _acc(a, g * value * (1.0 - value), own=True)

        return self._node(value, (a,), bwd)

    def tanh(self, a: Var) -> Var:
        value = np.tanh(a.value)

        def bwd(g):
            _acc(a, g * (1.0 - value * value), own=True)

        return self._node(value, (a,), bwd)

    def leaky_relu(self, a: Var, slope: float = 0.01) -> Var:
        mask = a.value > 0.0
        value = np.where(mask, a.value, slope * a.value)

        def bwd(g):
            _acc(a, g * np.where(mask, 1.0, slope), own=True)

        return self._node(value, (a,), bwd)

    # -- shape ops ----------------------------------------------------------------

    def slice_rows(self, a: Var, start: int, stop: int) -> Var:
        value = a.value[start:stop]

        def bwd(g):
            _acc_slice(a, slice(start, stop), g)

        return self._node(value, (a,), bwd)

    def slice_cols(self, a: Var, start: int, stop: int) -> Var:
        value = a.value[:, start:stop]

        def bwd(g):
            _acc_slice(a, (slice(None), slice(start, stop)), g)

        return self._node(value, (a,), bwd)

    def concat_rows(self, parts: list[Var]) -> Var:
        value = np.concatenate([p.value for p in parts], axis=0)
        offsets = np.cumsum([0] + [p.value.shape[0] for p in parts])

        def bwd(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _acc(p, g[lo:hi])

        return self._node(value, tuple(parts), bwd)

    def gather_cols(self, a: Var, idx: np.ndarray) -> Var:
        """out[i] = a[i, idx[i]]; returns shape (batch,)."""
        rows = np.arange(a.value.shape[0])
        value = a.value[rows, idx]

        def bwd(g):
            full = np.zeros_like(a.value)
            full[rows, idx] = g
            _acc(a, full, own=True)

        return self._node(value, (a,), bwd)

    def mean_cols_keep(self, a: Var) -> Var:
        """Row means with keepdims, for advantage centering."""
        k = a.value.shape[1]
        value = a.value.mean(axis=1, keepdims=True)

        def bwd(g):
            _acc(a, np.broadcast_to(g / k, a.value.shape).copy(), own=True)

        return self._node(value, (a,), bwd)

    def log_softmax(self, a: Var) -> Var:
        shifted = a.value - a.value.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        value = shifted - log_z
        softmax = np.exp(value)

        def bwd(g):
            _acc(a, g - softmax * g.sum(axis=1, keepdims=True), own=True)

        return self._node(value, (a,), bwd)

    # -- reductions -----------------------------------------------------------------

    def sum(self, a: Var) -> Var:
        value = np.asarray(a.value.sum())

        def bwd(g):
            _acc(a, np.broadcast_to(g, a.value.shape).copy(), own=True)

        return self._node(value, (a,), bwd)

    def mean(self, a: Var) -> Var:
        n = a.value.size
        value = np.asarray(a.value.mean())

        def bwd(g):
            _acc(a, np.broadcast_to(g / n, a.value.shape).copy(), own=True)

        return self._node(value, (a,), bwd)

    # -- fused LSTM cell --------------------------------------------------------------

    def lstm_cell(self, pre: Var, c_prev: Var, hidden: int) -> tuple[Var, Var]:
        """One LSTM step from stacked pre-activations [i | f | o | g].

        The three sigmoid gates sit in one contiguous block so a single
        logistic call covers them.  Returns (h, c); backward is fused: the h
        node (visited first in reverse order) folds its cell-state
        contribution into the c node's adjoint before c propagates on.
        """
        h_n = hidden
        z = pre.value
        gates = _sigmoid(z[:, : 3 * h_n])
        i = gates[:, :h_n]
        f = gates[:, h_n : 2 * h_n]
        o = gates[:, 2 * h_n :]
        g_gate = np.tanh(z[:, 3 * h_n :])
        c_val = f * c_prev.value + i * g_gate
        tanh_c = np.tanh(c_val)
        h_val = o * tanh_c

        def bwd_c(gc):
            _acc_slice(pre, (slice(None), slice(0, h_n)), gc * g_gate * i * (1.0 - i))
            _acc_slice(
                pre, (slice(None), slice(h_n, 2 * h_n)), gc * c_prev.value * f * (1.0 - f)
            )
            _acc_slice(
                pre, (slice(None), slice(3 * h_n, None)), gc * i * (1.0 - g_gate * g_gate)
            )
            _acc(c_prev, gc * f, own=True)

        c_node = self._node(c_val, (pre, c_prev), bwd_c)

        def bwd_h(gh):
            _acc(c_node, gh * o * (1.0 - tanh_c * tanh_c), own=True)
            _acc_slice(
                pre, (slice(None), slice(2 * h_n, 3 * h_n)), gh * tanh_c * o * (1.0 - o)
            )

        h_node = self._node(h_val, (pre, c_node), bwd_h)
        return h_node, c_node


def _sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, finite for any finite input.

    exp(-x) may overflow to inf for very negative x, but 1/(1+inf) rounds to
    exactly 0.0 in IEEE arithmetic, so only the warning needs suppressing.
    """
    with np.errstate(over="ignore"):
        out = np.exp(-x)
        out += 1.0
        return np.divide(1.0, out, out=out)


def backward(tape: Tape, loss: Var) -> None:
    """Reverse accumulation from ``loss`` through every recorded node."""
    if not tape.nodes:
        raise TapeEmpty("no operations recorded on tape")
    if loss.value.size != 1:
        raise NonFiniteInput("loss must be scalar")
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node.grad is None or node.bwd is None:
            continue
        node.bwd(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
