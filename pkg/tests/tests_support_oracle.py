"""Shared helper: the fixed smooth two-pole family and its oracle errors.

Lives outside test modules so both the geometry tests and the acceptance
suite use the identical pinned family.
"""

from math import pi

import numpy as np

from coupledflow import geometry, oracles
from coupledflow.geometry import Grid, ScalarField, WarpedMetric


def fixed_family(nodes):
    h = pi / (nodes - 1)
    grid = Grid(geometry.TOPOLOGY_INTERVAL, nodes, h)
    x = grid.x
    pole = np.minimum(np.arange(nodes), np.arange(nodes)[::-1]) * h

    def a_fn(xx):
        return 1.0 + 0.03 * np.cos(2.0 * xx)

    def w_fn(xx):
        return np.sin(xx) * (1.0 + 0.01 * np.cos(2.0 * xx))

    def phi_grad(xx):
        return -0.1 * np.sin(xx)

    metric = WarpedMetric(grid, a_fn(x),
                          np.sin(pole) * (1.0 + 0.01 * np.cos(2.0 * x)))
    phi = ScalarField(0.1 * np.cos(x), "phi")
    return metric, phi, (a_fn, w_fn, phi_grad)


def oracle_errors(nodes, mask_lo=0.25):
    metric, phi, (a_fn, w_fn, phi_grad) = fixed_family(nodes)
    curv = geometry.curvature(metric, phi)
    x = metric.grid.x
    mask = (x > mask_lo) & (x < pi - mask_lo)
    ora = oracles.oracle_warped_curvature(a_fn, w_fn, 1, 0.0, x[mask],
                                          phi_grad_fn=phi_grad, delta=2e-3)
    errs = {}
    for name in ("k_rad", "ric_rad", "ric_fib", "scal", "s", "sic_rad"):
        ours = getattr(curv, name)[mask]
        scale = max(np.max(np.abs(ora[name])), 1.0)
        errs[name] = float(np.max(np.abs(ours - ora[name])) / scale)
    return errs
