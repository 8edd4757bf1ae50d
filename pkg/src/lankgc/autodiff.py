"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine records every operation on an append-only tape.  Because
operands must exist before the operation that consumes them, the tape
order is already topological, and the backward pass simply walks it in
reverse.  Values are scalars (shape ``()``), vectors ``(n,)`` or
matrices ``(n, m)``; there is no broadcasting and no higher-rank
support, every primitive checks its operand shapes explicitly.

Gradients live next to the data on each :class:`Value`.  They are left
unallocated (``None``) until a backward pass touches them, so pure
forward evaluation never pays for gradient buffers.  A backward pass
first clears all gradients on the tape, which makes repeated backward
calls over the same tape bit-identical.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Value",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "scale_by",
    "col_scale",
    "dot",
    "row_dot",
    "matvec",
    "matmul",
    "transpose",
    "concat",
    "narrow",
    "reshape",
    "take_rows",
    "pick_row",
    "repeat_rows",
    "tanh",
    "sigmoid",
    "relu",
    "softmax_masked",
    "mean_masked",
    "weighted_block_sum",
    "l1_norm",
    "l2_norm_sq",
    "sum_all",
    "row_sum",
    "mean_all",
    "finite_difference_check",
]


class Value:
    """One node on the tape: a float64 array plus a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 2:
            raise ValueError(f"values are at most rank 2, got shape {self.data.shape}")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.shape != ():
            raise ValueError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def accumulate(self, delta):
        """Add ``delta`` into this node's gradient, allocating on first touch."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def __repr__(self):
        return f"Value(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


class Tape:
    """Append-only record of operations; replayed in reverse for gradients."""

    def __init__(self):
        self.nodes = []

    def leaf(self, data, requires_grad=False):
        v = Value(data, requires_grad=requires_grad)
        self.nodes.append(v)
        return v

    def constant(self, data):
        return self.leaf(data, requires_grad=False)

    def _register(self, out):
        self.nodes.append(out)
        return out

    def backward(self, loss):
        """Populate gradients of every tape node w.r.t. a scalar ``loss``.

        Gradients are zeroed first, so calling this twice on the same
        tape gives identical results.  Nodes whose gradient was never
        touched (they do not influence the loss) are skipped entirely;
        their ``grad`` stays ``None`` and reads as zero.
        """
        if loss.data.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        if not any(node is loss for node in self.nodes):
            raise ValueError("loss is not a node on this tape")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            if not node.requires_grad:
                continue
            node._backward(node.grad)


def _make(tape, data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    out = Value(data, requires_grad=needs, parents=parents, backward=backward if needs else None)
    return tape._register(out)


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(tape, a, b):
    _same_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _make(tape, a.data + b.data, (a, b), backward)


def sub(tape, a, b):
    _same_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(-g)

    return _make(tape, a.data - b.data, (a, b), backward)


def neg(tape, a):
    def backward(g):
        if a.requires_grad:
            a.accumulate(-g)

    return _make(tape, -a.data, (a,), backward)


def mul(tape, a, b):
    """Elementwise product of same-shape operands."""
    _same_shape(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _make(tape, a.data * b.data, (a, b), backward)


def scale(tape, a, c):
    """Multiply by a plain python float (not differentiated through)."""
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * c)

    return _make(tape, a.data * c, (a,), backward)


def scale_by(tape, a, s):
    """Multiply an array by a scalar Value; gradients flow to both."""
    if s.data.shape != ():
        raise ValueError(f"scale_by: scalar expected, got shape {s.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * s.data)
        if s.requires_grad:
            s.accumulate(np.asarray(np.sum(g * a.data)))

    return _make(tape, a.data * s.data, (a, s), backward)


def col_scale(tape, x, v):
    """Scale row ``i`` of a matrix by ``v[i]``."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.data.shape[0] != v.data.shape[0]:
        raise ValueError(f"col_scale: incompatible shapes {x.data.shape}, {v.data.shape}")

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * v.data[:, None])
        if v.requires_grad:
            v.accumulate(np.sum(g * x.data, axis=1))

    return _make(tape, x.data * v.data[:, None], (x, v), backward)


def dot(tape, a, b):
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError(f"dot: incompatible shapes {a.data.shape}, {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _make(tape, np.asarray(a.data @ b.data), (a, b), backward)


def row_dot(tape, a, b):
    """Row-wise dot product of two equal-shape matrices, giving a vector."""
    if a.data.ndim != 2 or a.data.shape != b.data.shape:
        raise ValueError(f"row_dot: incompatible shapes {a.data.shape}, {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g[:, None] * b.data)
        if b.requires_grad:
            b.accumulate(g[:, None] * a.data)

    return _make(tape, np.sum(a.data * b.data, axis=1), (a, b), backward)


def matvec(tape, m, v):
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise ValueError(f"matvec: incompatible shapes {m.data.shape}, {v.data.shape}")

    def backward(g):
        if m.requires_grad:
            m.accumulate(np.outer(g, v.data))
        if v.requires_grad:
            v.accumulate(m.data.T @ g)

    return _make(tape, m.data @ v.data, (m, v), backward)


def matmul(tape, a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape}, {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _make(tape, a.data @ b.data, (a, b), backward)


def transpose(tape, a):
    if a.data.ndim != 2:
        raise ValueError(f"transpose: matrix expected, got shape {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.T)

    return _make(tape, a.data.T.copy(), (a,), backward)


def concat(tape, a, b):
    """Join two vectors end to end, or two matrices column-wise."""
    if a.data.ndim != b.data.ndim:
        raise ValueError(f"concat: rank mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.ndim == 1:
        data = np.concatenate([a.data, b.data])
        split = a.data.shape[0]

        def backward(g):
            if a.requires_grad:
                a.accumulate(g[:split])
            if b.requires_grad:
                b.accumulate(g[split:])

    elif a.data.ndim == 2 and a.data.shape[0] == b.data.shape[0]:
        data = np.concatenate([a.data, b.data], axis=1)
        split = a.data.shape[1]

        def backward(g):
            if a.requires_grad:
                a.accumulate(g[:, :split])
            if b.requires_grad:
                b.accumulate(g[:, split:])

    else:
        raise ValueError(f"concat: incompatible shapes {a.data.shape}, {b.data.shape}")
    return _make(tape, data, (a, b), backward)


def narrow(tape, a, lo, hi):
    """Slice elements ``lo:hi`` of a vector, or columns ``lo:hi`` of a matrix."""
    if a.data.ndim == 1:
        if not (0 <= lo <= hi <= a.data.shape[0]):
            raise ValueError(f"narrow: bad range [{lo}, {hi}) for shape {a.data.shape}")
        data = a.data[lo:hi].copy()

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[lo:hi] = g
                a.accumulate(full)

    elif a.data.ndim == 2:
        if not (0 <= lo <= hi <= a.data.shape[1]):
            raise ValueError(f"narrow: bad range [{lo}, {hi}) for shape {a.data.shape}")
        data = a.data[:, lo:hi].copy()

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[:, lo:hi] = g
                a.accumulate(full)

    else:
        raise ValueError("narrow: scalar input")
    return _make(tape, data, (a,), backward)


def reshape(tape, a, shape):
    data = a.data.reshape(shape)
    if data.ndim > 2:
        raise ValueError(f"reshape: target rank too high {shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    return _make(tape, data.copy(), (a,), backward)


def take_rows(tape, m, idx):
    """Gather rows ``m[idx]``; the backward pass scatter-adds into ``m``."""
    idx = np.asarray(idx, dtype=np.int64)
    if m.data.ndim != 2 or idx.ndim != 1:
        raise ValueError(f"take_rows: need matrix and index vector, got {m.data.shape}, {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= m.data.shape[0]):
        raise ValueError("take_rows: index out of range")

    def backward(g):
        if m.requires_grad:
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            np.add.at(m.grad, idx, g)

    return _make(tape, m.data[idx].copy(), (m,), backward)


def pick_row(tape, m, i):
    """Single row of a matrix as a vector."""
    return reshape(tape, take_rows(tape, m, np.asarray([i])), (m.data.shape[1],))


def repeat_rows(tape, a, k):
    """Repeat each row k times: ``(B, d) -> (B*k, d)``, blockwise."""
    if a.data.ndim != 2:
        raise ValueError(f"repeat_rows: matrix expected, got shape {a.data.shape}")
    n, d = a.data.shape

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(n, k, d).sum(axis=1))

    return _make(tape, np.repeat(a.data, k, axis=0), (a,), backward)


def tanh(tape, a):
    data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - data * data))

    return _make(tape, data, (a,), backward)


def sigmoid(tape, a):
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * data * (1.0 - data))

    return _make(tape, data, (a,), backward)


def relu(tape, a):
    """max(0, x); the subgradient at exactly zero is taken as zero."""
    keep = a.data > 0.0

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * keep)

    return _make(tape, np.where(keep, a.data, 0.0), (a,), backward)


def softmax_masked(tape, scores, mask):
    """Softmax over the unmasked entries of each row.

    ``scores`` is a vector or matrix Value; ``mask`` is a plain boolean
    array of the same shape (True = real entry).  Masked slots get
    weight exactly 0.  A row with no unmasked entry is an error: the
    distribution would be undefined.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.data.shape:
        raise ValueError(f"softmax_masked: mask shape {mask.shape} != scores {scores.data.shape}")
    s2 = scores.data if scores.data.ndim == 2 else scores.data[None, :]
    m2 = mask if mask.ndim == 2 else mask[None, :]
    if not m2.any(axis=1).all():
        raise ValueError("softmax_masked: a row has no unmasked entries")
    shifted = np.where(m2, s2, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(m2, np.exp(shifted), 0.0)
    p2 = e / e.sum(axis=1, keepdims=True)
    data = p2 if scores.data.ndim == 2 else p2[0]

    def backward(g):
        if scores.requires_grad:
            g2 = g if g.ndim == 2 else g[None, :]
            inner = (g2 * p2).sum(axis=1, keepdims=True)
            ds = p2 * (g2 - inner)
            scores.accumulate(ds if scores.data.ndim == 2 else ds[0])

    return _make(tape, data, (scores,), backward)


def mean_masked(tape, entries, mask):
    """Mean of the unmasked rows of ``entries``: ``(k, d) -> (d,)``.

    Divides by the count of real entries.  With nothing unmasked the
    result is the zero vector (callers flag that case themselves).
    """
    mask = np.asarray(mask, dtype=bool)
    if entries.data.ndim != 2 or mask.shape != (entries.data.shape[0],):
        raise ValueError(f"mean_masked: incompatible shapes {entries.data.shape}, {mask.shape}")
    count = int(mask.sum())
    w = mask.astype(np.float64) / max(count, 1)

    def backward(g):
        if entries.requires_grad:
            entries.accumulate(np.outer(w, g))

    return _make(tape, w @ entries.data, (entries,), backward)


def weighted_block_sum(tape, entries, weights):
    """Per-block weighted sum: ``(B*K, d)`` rows with ``(B, K)`` weights -> ``(B, d)``.

    Row ``b`` of the output is ``sum_j weights[b, j] * entries[b*K + j]``.
    """
    if entries.data.ndim != 2 or weights.data.ndim != 2:
        raise ValueError("weighted_block_sum: need (B*K, d) entries and (B, K) weights")
    bb, kk = weights.data.shape
    if entries.data.shape[0] != bb * kk:
        raise ValueError(
            f"weighted_block_sum: {entries.data.shape[0]} rows != {bb}x{kk} weights"
        )
    d = entries.data.shape[1]
    e3 = entries.data.reshape(bb, kk, d)
    data = np.einsum("bkd,bk->bd", e3, weights.data)

    def backward(g):
        if entries.requires_grad:
            entries.accumulate((np.repeat(g, kk, axis=0) * weights.data.reshape(-1, 1)))
        if weights.requires_grad:
            weights.accumulate(np.einsum("bkd,bd->bk", e3, g))

    return _make(tape, data, (entries, weights), backward)


def l1_norm(tape, a):
    """Sum of absolute values: vector -> scalar, matrix -> per-row vector.

    The subgradient of ``|x|`` at zero is taken as zero.
    """
    if a.data.ndim == 1:
        data = np.asarray(np.sum(np.abs(a.data)))

        def backward(g):
            if a.requires_grad:
                a.accumulate(g * np.sign(a.data))

    elif a.data.ndim == 2:
        data = np.sum(np.abs(a.data), axis=1)

        def backward(g):
            if a.requires_grad:
                a.accumulate(g[:, None] * np.sign(a.data))

    else:
        raise ValueError("l1_norm: scalar input")
    return _make(tape, data, (a,), backward)


def l2_norm_sq(tape, a):
    """Sum of squares of all entries, as a scalar."""

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * 2.0 * a.data)

    return _make(tape, np.asarray(np.sum(a.data * a.data)), (a,), backward)


def sum_all(tape, a):
    def backward(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.data, float(g)))

    return _make(tape, np.asarray(np.sum(a.data)), (a,), backward)


def row_sum(tape, a):
    if a.data.ndim != 2:
        raise ValueError(f"row_sum: matrix expected, got shape {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.repeat(g[:, None], a.data.shape[1], axis=1))

    return _make(tape, np.sum(a.data, axis=1), (a,), backward)


def mean_all(tape, a):
    return scale(tape, sum_all(tape, a), 1.0 / max(a.data.size, 1))


def finite_difference_check(fn, arrays, h=1e-6, tol=1e-4):
    """Compare analytic gradients with central finite differences.

    ``fn(arrays) -> (loss_value, grads_dict)`` must rebuild its tape on
    every call from the plain float64 arrays in ``arrays`` and return
    the scalar loss along with analytic gradients keyed like ``arrays``.
    Every entry of every array is perturbed by ``±h``.  Relative error
    uses a unit floor, ``|a - n| / max(|a|, |n|, 1)``, so near-zero
    gradients are compared absolutely.

    Returns ``(ok, report)`` where ``report`` maps each array name to
    its worst relative error.
    """
    _, grads = fn(arrays)
    report = {}
    for name, arr in arrays.items():
        analytic = grads.get(name)
        if analytic is None:
            analytic = np.zeros_like(arr)
        worst = 0.0
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up, _ = fn(arrays)
            flat[i] = keep - h
            down, _ = fn(arrays)
            flat[i] = keep
            numeric = (up - down) / (2.0 * h)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
        report[name] = worst
    ok = all(v <= tol for v in report.values())
    return ok, report
