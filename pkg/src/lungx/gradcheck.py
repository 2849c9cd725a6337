"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradcheckReport:
    max_rel_error: float
    passed: bool
    worst: Optional[Tuple[int, int]] = None  # (input index, flat coordinate)
    message: str = ""
    errors: List[np.ndarray] = field(default_factory=list, repr=False)


def _scalar(fn, tensors) -> float:
    with no_grad():
        out = fn(*tensors)
    if out.size != 1:
        raise ValueError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    return float(out.data.reshape(-1)[0])


def gradcheck(
    fn: Callable[..., Tensor],
    point: Sequence[np.ndarray],
    h: float = 1e-4,
    tol: float = 1e-4,
    floor: float = 1e-3,
    params: Sequence[Tensor] = (),
) -> GradcheckReport:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``point`` holds one array per argument of ``fn``; all are promoted to
    float64. The per-coordinate error is ``|analytic - numeric| /
    max(|analytic|, |numeric|, floor)``; ``floor`` keeps coordinates whose true
    derivative is (near) zero from dividing truncation noise by zero.

    ``params`` are extra tensors captured by ``fn`` (e.g. module weights); their
    data is perturbed in place and their gradients are checked too.
    """
    arrays = [np.array(p, dtype=np.float64, copy=True) for p in point]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    for p in params:
        if p.dtype != np.float64:
            raise ValueError("gradcheck params must be float64")
        p.grad = None
    out = fn(*leaves)
    if out.size != 1:
        raise ValueError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        return GradcheckReport(float("inf"), False, None, "non-finite function value at the point")
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in [*leaves, *params]]
    perturbed = arrays + [p.data for p in params]

    worst_err, worst_at, errors = 0.0, None, []
    for k, arr in enumerate(perturbed):
        flat = arr.reshape(-1)
        err = np.zeros(flat.size)
        ana = analytic[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(fn, [Tensor(a) for a in arrays])
            flat[i] = orig - h
            fm = _scalar(fn, [Tensor(a) for a in arrays])
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm) and np.isfinite(ana[i])):
                return GradcheckReport(
                    float("inf"), False, (k, i), f"non-finite value at input {k}, coordinate {i}"
                )
            num = (fp - fm) / (2.0 * h)
            err[i] = abs(ana[i] - num) / max(abs(ana[i]), abs(num), floor)
            if err[i] > worst_err:
                worst_err, worst_at = float(err[i]), (k, i)
        errors.append(err.reshape(arr.shape))
    passed = worst_err < tol
    msg = "ok" if passed else f"max rel. error {worst_err:.3e} at input {worst_at[0]}, coordinate {worst_at[1]}"
    return GradcheckReport(worst_err, passed, worst_at, msg, errors)
