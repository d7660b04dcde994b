from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    entries: list = field(default_factory=list)  # (param name, flat index, analytic, numeric, rel. error)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def relative_error(a, n, floor=1e-8):
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(loss_fn, params, tolerance=1e-4, num_checks=30, eps=1e-5, rng=None, names=None):
    """Compare backprop gradients with central differences on random entries.

    loss_fn() must rebuild the graph and return a scalar Tensor, and must be
    deterministic (fixed dropout masks etc.). Parameters should be float64.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    params = list(params)
    names = names or [p.name or f"param{i}" for i, p in enumerate(params)]
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    entries, worst = [], 0.0
    for _ in range(num_checks):
        i = int(rng.integers(len(params)))
        p = params[i]
        j = int(rng.integers(p.data.size))
        flat = p.data.reshape(-1)
        old = flat[j]
        flat[j] = old + eps
        up = loss_fn().item()
        flat[j] = old - eps
        down = loss_fn().item()
        flat[j] = old
        numeric = (up - down) / (2 * eps)
        a = float(analytic[i].reshape(-1)[j])
        rel = relative_error(a, numeric)
        worst = max(worst, rel)
        entries.append((names[i], j, a, numeric, rel))
    return GradCheckReport(worst, tolerance, entries)
