"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    rtol: float
    worst: str = ""
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rtol


def _rel_err(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | Tensor,
    h: float = 1e-4,
    rtol: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare ``backward`` gradients of ``f()`` with central differences.

    ``f`` takes no arguments and must rebuild its graph from the current
    values of ``params`` on each call.  ``max_entries`` limits how many
    coordinates per tensor are perturbed (sampled with ``rng``).
    """
    if isinstance(params, Tensor):
        params = [params]
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)

    worst, where, total = 0.0, "", 0
    per_tensor = {}
    for k, p in enumerate(params):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        tensor_worst = 0.0
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = float(f().data)
                flat[i] = orig - h
                down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = _rel_err(float(analytic[k].reshape(-1)[i]), numeric, floor)
            tensor_worst = max(tensor_worst, err)
            if err > worst:
                worst, where = err, f"{p.name or k}[{i}]"
            total += 1
        per_tensor[p.name or str(k)] = tensor_worst
    for p in params:
        p.zero_grad()
    return GradCheckReport(worst, total, rtol, where, per_tensor)
