"""Finite-difference verification of the reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from .autodiff import Tensor, backward, value_of


def _scalar(x) -> float:
    v = value_of(x)
    if v.size != 1:
        raise UsageError("grad_check: loss_fn must return a scalar")
    return float(v.reshape(()).real)


@dataclass
class GradCheckReport:
    max_relative_error: float
    n_checked: int
    flagged: list[tuple[str, int]] = field(default_factory=list)
    worst: tuple[str, int] | None = None


def grad_check(loss_fn, params: dict[str, np.ndarray], epsilon: float = 1e-5,
               n_samples: int = 200, rng: np.random.Generator | None = None,
               signature_fn=None, full_report: bool = False):
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` maps a name->array dict to a scalar and must be built from the
    documented differentiable operations so it runs both on plain arrays and
    on Tensors. Coordinates are sampled over the float64 view of every
    parameter (complex entries count as two coordinates). If ``signature_fn``
    is given, coordinates whose +/- epsilon evaluations change the returned
    signature (e.g. a TopK selection crossing a tie) are flagged and excluded.

    Returns max over sampled coordinates of
    ``|analytic - central| / max(|analytic|, |central|, 1e-8)``.
    """
    if epsilon <= 0:
        raise UsageError("grad_check: epsilon must be positive")
    rng = rng or np.random.default_rng(0)

    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    grads = backward(loss_fn(leaves), leaves)

    names = sorted(params)
    sizes = {k: _rv(params[k]).size for k in names}
    total = sum(sizes.values())
    n = min(n_samples, total)
    picks = rng.choice(total, size=n, replace=False)

    report = GradCheckReport(max_relative_error=0.0, n_checked=0)
    work = {k: params[k].copy() for k in names}
    for flat in np.sort(picks):
        name, offset = _locate(names, sizes, int(flat))
        view = _rv(work[name]).reshape(-1)
        orig = view[offset]

        view[offset] = orig + epsilon
        up = _scalar(loss_fn(work))
        sig_up = signature_fn(work) if signature_fn else None
        view[offset] = orig - epsilon
        down = _scalar(loss_fn(work))
        sig_down = signature_fn(work) if signature_fn else None
        view[offset] = orig

        if signature_fn and sig_up != sig_down:
            report.flagged.append((name, offset))
            continue

        numeric = (up - down) / (2.0 * epsilon)
        analytic = float(_rv(grads[name]).reshape(-1)[offset])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        report.n_checked += 1
        if rel > report.max_relative_error:
            report.max_relative_error = rel
            report.worst = (name, offset)

    return report if full_report else report.max_relative_error


def _rv(a: np.ndarray) -> np.ndarray:
    if a.dtype.kind == "c":
        return np.ascontiguousarray(a).view(np.float64)
    return a


def _locate(names, sizes, flat: int) -> tuple[str, int]:
    for name in names:
        if flat < sizes[name]:
            return name, flat
        flat -= sizes[name]
    raise UsageError("grad_check: coordinate out of range")
