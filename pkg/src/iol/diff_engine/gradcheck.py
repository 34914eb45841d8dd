from __future__ import annotations

from typing import Callable

import numpy as np

from iol.diff_engine.nn import ParamTensor
from iol.diff_engine.tensor import Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: list[ParamTensor],
    h: float = 1e-5,
    return_details: bool = False,
):
    """Compare reverse-mode gradients of scalar ``f()`` to central differences.

    ``f`` is called with no arguments and must read the current values of
    ``params``; any randomness inside it has to be re-seeded per call.
    Returns the worst relative error ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    for p in params:
        p.zero_grad()
    out = f()
    out.backward()
    analytic = {p.name: p.gradient.copy() for p in params}

    worst = 0.0
    details = []
    for p in params:
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().data)
            flat[i] = orig - h
            down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[p.name].reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
            if return_details:
                details.append((p.name, i, a, numeric, err))
    return (worst, details) if return_details else worst
