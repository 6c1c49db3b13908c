"""Adam optimizer over named parameter dictionaries.

Complex parameters are updated through their float64 view (real and imaginary
parts treated as independent coordinates), so moment accumulators are always
real and the second moments stay elementwise nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError

Params = dict[str, np.ndarray]


def _real_view(a: np.ndarray) -> np.ndarray:
    if a.dtype.kind == "c":
        return np.ascontiguousarray(a).view(np.float64)
    return a


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def init_adam(params: Params) -> AdamState:
    state = AdamState()
    for name, p in params.items():
        rv = _real_view(p)
        state.m[name] = np.zeros_like(rv)
        state.v[name] = np.zeros_like(rv)
    return state


def adam_step(params: Params, grads: Params, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[Params, AdamState]:
    """One Adam update with bias correction; returns fresh params and state."""
    if lr <= 0:
        raise UsageError("adam_step: lr must be positive")
    if set(params) != set(grads):
        raise UsageError("adam_step: params and grads name sets differ")
    t = state.step + 1
    new_params: Params = {}
    new_state = AdamState(step=t)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in params:
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise UsageError(f"adam_step: shape mismatch for {name!r}: "
                             f"{p.shape} vs {g.shape}")
        pr, gr = _real_view(p), _real_view(g)
        m = beta1 * state.m[name] + (1.0 - beta1) * gr
        v = beta2 * state.v[name] + (1.0 - beta2) * gr * gr
        upd = pr - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_state.m[name] = m
        new_state.v[name] = v
        new_params[name] = upd.view(np.complex128) if p.dtype.kind == "c" else upd
    return new_params, new_state
