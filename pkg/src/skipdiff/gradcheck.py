"""Finite-difference oracle for the reverse-mode engine.

The oracle side never touches the tape: it re-evaluates the target function
on perturbed constant inputs, so it stays independent of the gradient path
it is checking.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor, backward
from .errors import OracleInvalidError, ParameterError

LossFn = Callable[[Mapping[str, Tensor]], Tensor]


def _evaluate(f: LossFn, params: Mapping[str, np.ndarray]) -> float:
    consts = {name: Tensor(value) for name, value in params.items()}
    out = f(consts)
    if out.data.size != 1:
        raise ParameterError(f"f must return a scalar, got shape {out.shape}")
    return out.item()


def finite_diff_check(f: LossFn, params: Mapping[str, np.ndarray],
                      eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f`` takes a name->Tensor mapping and returns a scalar Tensor; it must
    be deterministic (draw any randomness from a stream re-seeded inside
    ``f``). Relative error per element is |a - b| / max(|a|, |b|, 1e-8).
    """
    if not (0.0 < eps <= 1e-2):
        raise ParameterError(f"eps must lie in (0, 1e-2], got {eps}")
    arrays = {name: np.asarray(value, dtype=np.float64) for name, value in params.items()}

    if _evaluate(f, arrays) != _evaluate(f, arrays):
        raise OracleInvalidError("f is not deterministic; oracle is invalid")

    tape = Tape()
    leaves = {name: tape.leaf(value) for name, value in arrays.items()}
    loss = f(leaves)
    if loss.data.size != 1:
        raise ParameterError(f"f must return a scalar, got shape {loss.shape}")
    grads = backward(tape, loss)

    worst = 0.0
    for name, value in arrays.items():
        analytic = grads[leaves[name].node_id]
        flat = value.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            bumped = dict(arrays)
            plus = value.copy().reshape(-1)
            plus[i] += eps
            bumped[name] = plus.reshape(value.shape)
            hi = _evaluate(f, bumped)
            minus = value.copy().reshape(-1)
            minus[i] -= eps
            bumped[name] = minus.reshape(value.shape)
            lo = _evaluate(f, bumped)
            numeric[i] = (hi - lo) / (2.0 * eps)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst
