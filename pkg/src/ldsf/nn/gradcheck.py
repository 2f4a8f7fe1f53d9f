"""Central finite-difference comparison for tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def max_relative_error(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-6,
                       floor: float = 1e-8) -> float:
    """Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over all
    entries of all ``inputs``; ``fn`` must rebuild the scalar loss from scratch."""
    for t in inputs:
        t.zero_grad()
    fn().backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = fn().item()
            flat[i] = old - step
            fm = fn().item()
            flat[i] = old
            num = (fp - fm) / (2 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst
