"""Central finite-difference gradient checking for tensor ops."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import RealTensor


def finite_diff_check(fn: Callable[..., RealTensor],
                      params: Sequence[RealTensor],
                      h: float = 1e-6,
                      exclude: Sequence[np.ndarray | None] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(*params)`` must return a scalar tensor (compose with ``sum`` if
    needed) and must be re-evaluable at perturbed points. ``exclude``
    optionally gives one boolean mask per parameter marking coordinates to
    skip (e.g. ReLU kinks). The relative error per coordinate is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    out = fn(*params)
    if out.data.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued function")
    if not np.isfinite(out.data):
        raise FloatingPointError("non-finite value in forward pass")
    for p in params:
        p.zero_grad()
    out.backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for k, p in enumerate(params):
        mask = None if exclude is None else exclude[k]
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            if mask is not None and mask.reshape(-1)[i]:
                continue
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(*params).data.item()
            flat[i] = orig - h
            f_minus = fn(*params).data.item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            if not np.isfinite(numeric):
                raise FloatingPointError("non-finite finite-difference estimate")
            a = analytic[k].reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
