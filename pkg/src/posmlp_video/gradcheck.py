"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from .tensor import Tensor, no_grad


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def finite_diff_check(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                      indices: Optional[Iterable[int]] = None) -> float:
    """Worst relative error between the taped gradient of ``f`` w.r.t. ``x`` and
    central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h``.

    ``f`` takes no arguments and must re-run its forward pass on every call;
    ``x`` is perturbed in place and restored.  ``indices`` restricts the check
    to a subset of flat positions.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if not x.requires_grad:
        raise ValueError("x must require grad")
    x.grad = None
    loss = f()
    loss.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = flat[i]
            fp = f().item()
            flat[i] = orig - h
            step = up - flat[i]  # the step actually taken after rounding
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / step
            worst = max(worst, _rel_err(analytic.reshape(-1)[i], numeric))
    return worst


def check_parameters(f: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5,
                     max_entries: Optional[int] = None, seed: int = 0) -> dict[str, float]:
    """Run ``finite_diff_check`` on every named parameter.

    With ``max_entries`` set, only that many randomly chosen entries per
    parameter are probed (the full model has too many for exhaustive checks).
    """
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        idx = None
        if max_entries is not None and p.size > max_entries:
            idx = rng.choice(p.size, size=max_entries, replace=False)
        errors[name] = finite_diff_check(f, p, h, idx)
    return errors
