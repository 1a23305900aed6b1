"""Primitive operations with analytic backward rules.

Each primitive takes :class:`Var` operands (plain arrays / floats are
wrapped as constants), computes the forward value, and registers one
backward closure on the active tape.  Broadcasting is supported for the
elementwise arithmetic primitives only, and gradients are summed back to
the operand shape.
"""

from __future__ import annotations

import math

import numpy as np

from pledgespec.diffcore.tape import ShapeError, Var, active_tape

LOG_FLOOR = 1e-12


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _record(backward) -> None:
    tape = active_tape()
    if tape is not None:
        tape.record(backward)


def _binary_elementwise(name, a, b, forward, da, db) -> Var:
    a, b = as_var(a), as_var(b)
    try:
        value = forward(a.value, b.value)
    except ValueError as exc:
        raise ShapeError(f"{name}: operands {a.shape} and {b.shape}") from exc
    out = Var(value)

    def backward():
        if out.grad is None:
            return
        a.accumulate(_unbroadcast(da(out.grad, a.value, b.value), a.value.shape))
        b.accumulate(_unbroadcast(db(out.grad, a.value, b.value), b.value.shape))

    _record(backward)
    return out


def add(a, b) -> Var:
    return _binary_elementwise(
        "add", a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g
    )


def sub(a, b) -> Var:
    return _binary_elementwise(
        "sub", a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g
    )


def mul(a, b) -> Var:
    return _binary_elementwise(
        "mul", a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x
    )


def div(a, b) -> Var:
    return _binary_elementwise(
        "div",
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def neg(a) -> Var:
    a = as_var(a)
    out = Var(-a.value)

    def backward():
        if out.grad is not None:
            a.accumulate(-out.grad)

    _record(backward)
    return out


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: operands {a.shape} and {b.shape}")
    out = Var(a.value @ b.value)

    def backward():
        if out.grad is None:
            return
        a.accumulate(out.grad @ b.value.T)
        b.accumulate(a.value.T @ out.grad)

    _record(backward)
    return out


def concat(parts: list, axis: int = 1) -> Var:
    parts = [as_var(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty operand list")
    out = Var(np.concatenate([p.value for p in parts], axis=axis))
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        if out.grad is None:
            return
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(lo, hi)
            p.accumulate(out.grad[tuple(idx)])

    _record(backward)
    return out


def _unary(a, forward, dfn) -> Var:
    a = as_var(a)
    out = Var(forward(a.value))

    def backward():
        if out.grad is not None:
            a.accumulate(out.grad * dfn(a.value, out.value))

    _record(backward)
    return out


def sigmoid(a) -> Var:
    # 1/(1+e^-x), evaluated on the stable branch for either sign
    def fwd(x):
        r = np.empty_like(x)
        pos = x >= 0
        r[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        r[~pos] = ex / (1.0 + ex)
        return r

    return _unary(a, fwd, lambda x, y: y * (1.0 - y))


def tanh(a) -> Var:
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def softplus(a) -> Var:
    # log(1+e^x) = max(x,0) + log1p(e^-|x|); derivative is sigmoid(x)
    def fwd(x):
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def dfn(x, y):
        return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))

    return _unary(a, fwd, dfn)


def exp(a) -> Var:
    return _unary(a, np.exp, lambda x, y: y)


def log(a) -> Var:
    # argument clamped at LOG_FLOOR; zero subgradient on the clamped branch
    def fwd(x):
        return np.log(np.maximum(x, LOG_FLOOR))

    def dfn(x, y):
        return np.where(x > LOG_FLOOR, 1.0 / np.maximum(x, LOG_FLOOR), 0.0)

    return _unary(a, fwd, dfn)


def sqrt(a) -> Var:
    def dfn(x, y):
        return 1.0 / (2.0 * np.maximum(y, 1e-12))

    return _unary(a, np.sqrt, dfn)


def absolute(a) -> Var:
    # subgradient 0 at the kink
    return _unary(a, np.abs, lambda x, y: np.sign(x))


def softmax(a) -> Var:
    """Row-wise softmax with max-subtraction; strictly positive output."""
    a = as_var(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    q = e / e.sum(axis=-1, keepdims=True)
    out = Var(q)

    def backward():
        if out.grad is None:
            return
        g = out.grad
        dot = (g * q).sum(axis=-1, keepdims=True)
        a.accumulate(q * (g - dot))

    _record(backward)
    return out


def cumsum(a) -> Var:
    """Cumulative sum along the last axis (cmf of a distribution row)."""
    a = as_var(a)
    out = Var(np.cumsum(a.value, axis=-1))

    def backward():
        if out.grad is None:
            return
        g = out.grad
        a.accumulate(np.flip(np.cumsum(np.flip(g, axis=-1), axis=-1), axis=-1))

    _record(backward)
    return out


def total(a) -> Var:
    """Sum of all entries, as a scalar Var."""
    a = as_var(a)
    out = Var(a.value.sum())

    def backward():
        if out.grad is not None:
            a.accumulate(np.full_like(a.value, float(out.grad)))

    _record(backward)
    return out


def mean(a) -> Var:
    a = as_var(a)
    n = a.value.size
    out = Var(a.value.sum() / n)

    def backward():
        if out.grad is not None:
            a.accumulate(np.full_like(a.value, float(out.grad) / n))

    _record(backward)
    return out


def cross_entropy_logits(logits, targets) -> Var:
    """Mean cross-entropy between row distributions and softmax(logits).

    Computed in the log domain (logsumexp) for stability; ``targets`` is a
    constant array of row distributions (one-hot or soft).  Backward is the
    classic (softmax - target) / batch.
    """
    logits = as_var(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.value.shape:
        raise ShapeError(f"cross_entropy_logits: targets {t.shape} vs logits {logits.shape}")
    z = logits.value
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    rows = (lse.squeeze(-1) - (t * z).sum(axis=-1))
    n = rows.size
    out = Var(rows.sum() / n)
    q = np.exp(z - lse)

    def backward():
        if out.grad is not None:
            logits.accumulate(float(out.grad) * (q - t) / n)

    _record(backward)
    return out


def cross_entropy(q, targets) -> Var:
    """Mean cross-entropy -sum(t * log q) against constant target rows."""
    q = as_var(q)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != q.value.shape:
        raise ShapeError(f"cross_entropy: targets {t.shape} vs q {q.shape}")
    qc = np.maximum(q.value, LOG_FLOOR)
    n = q.value.shape[0] if q.value.ndim > 1 else 1
    out = Var(-(t * np.log(qc)).sum() / n)

    def backward():
        if out.grad is not None:
            g = np.where(q.value > LOG_FLOOR, -t / qc, 0.0)
            q.accumulate(float(out.grad) * g / n)

    _record(backward)
    return out


def squared_error(pred, targets) -> Var:
    """Mean squared error against a constant target array."""
    pred = as_var(pred)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != pred.value.shape:
        raise ShapeError(f"squared_error: targets {t.shape} vs pred {pred.shape}")
    diff = pred.value - t
    n = diff.size
    out = Var((diff * diff).sum() / n)

    def backward():
        if out.grad is not None:
            pred.accumulate(float(out.grad) * 2.0 * diff / n)

    _record(backward)
    return out


def dropout(a, rate: float, rng: np.random.Generator) -> Var:
    """Inverted-scaling dropout with a mask drawn from ``rng``."""
    a = as_var(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.value.shape) >= rate) / (1.0 - rate)
    out = Var(a.value * mask)

    def backward():
        if out.grad is not None:
            a.accumulate(out.grad * mask)

    _record(backward)
    return out


def embedding(table, ids) -> Var:
    """Gather rows ``ids`` from an embedding matrix; scatter-add backward.

    A table without a gradient buffer is treated as frozen: the scatter is
    skipped entirely.  Trainable tables must come from a ParameterStore,
    whose entries always carry buffers.
    """
    table = as_var(table)
    idx = np.asarray(ids, dtype=np.intp)
    if table.value.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    out = Var(table.value[idx])

    def backward():
        if out.grad is None or table.grad is None:
            return
        np.add.at(table.grad, idx, out.grad)

    _record(backward)
    return out


def sum_rows(a) -> Var:
    """Per-row sum of a 2-D array, kept as shape (B, 1)."""
    a = as_var(a)
    if a.value.ndim != 2:
        raise ShapeError(f"sum_rows: operand must be 2-D, got {a.shape}")
    out = Var(a.value.sum(axis=1, keepdims=True))

    def backward():
        if out.grad is not None:
            a.accumulate(np.broadcast_to(out.grad, a.value.shape).copy())

    _record(backward)
    return out


def mean_rows(a) -> Var:
    """Mean over rows of a 2-D array, kept as shape (1, d)."""
    a = as_var(a)
    if a.value.ndim != 2:
        raise ShapeError(f"mean_rows: operand must be 2-D, got {a.shape}")
    n = a.value.shape[0]
    out = Var(a.value.mean(axis=0, keepdims=True))

    def backward():
        if out.grad is not None:
            a.accumulate(np.broadcast_to(out.grad / n, a.value.shape).copy())

    _record(backward)
    return out


def log_binomial_coefficients(n: int) -> np.ndarray:
    """log C(n, k) for k = 0..n, as a constant row."""
    return np.array([math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
                     for k in range(n + 1)])


def log_factorials(n: int) -> np.ndarray:
    """log k! for k = 0..n-1, as a constant row."""
    return np.array([math.lgamma(k + 1) for k in range(n)])
