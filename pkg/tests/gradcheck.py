"""Central finite-difference oracle shared by the unit and acceptance tests."""

import numpy as np

H = 1e-5


def relative_error(analytic, numeric, floor=1e-7):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def probe(f, x, grad, indices, h=H):
    """Max relative error between ``grad[i]`` and the central difference of scalar ``f`` in ``x[i]``.

    ``x`` is perturbed in place and restored.
    """
    worst = 0.0
    for i in indices:
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        worst = max(worst, relative_error(grad[i], (up - down) / (2 * h)))
    return worst


def probe_indices(rng, size, count):
    return rng.choice(size, size=min(count, size), replace=False)
