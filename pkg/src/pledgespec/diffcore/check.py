"""Finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from pledgespec.diffcore.tape import ParameterStore, ShapeError, Tape

# denominator floor guards near-zero gradients against FD roundoff noise
_REL_FLOOR = 1e-4


def gradient_check(graph, params: ParameterStore, eps: float = 1e-5) -> dict[str, float]:
    """Compare analytic gradients of a scalar graph to central differences.

    ``graph`` is a zero-argument callable (closing over ``params``) that
    rebuilds the computation and returns its scalar output Var.  It must be
    deterministic: seed or disable any dropout.  Returns the max relative
    error per parameter, with relative error
    ``|a - n| / max(|a|, |n|, 1e-4)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    params.zero_grad()
    with Tape() as tape:
        out = graph()
    if out.value.size != 1:
        raise ShapeError(f"gradient_check requires a scalar output, got {out.value.shape}")
    tape.backward(out)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    errors: dict[str, float] = {}
    for name, p in params.items():
        theta = p.value
        worst = 0.0
        it = np.nditer(theta, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = theta[idx]
            theta[idx] = orig + eps
            f_plus = float(graph().value)
            theta[idx] = orig - eps
            f_minus = float(graph().value)
            theta[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[name][idx]
            denom = max(abs(a), abs(numeric), _REL_FLOOR)
            worst = max(worst, abs(a - numeric) / denom)
        errors[name] = worst
    return errors
