"""Named initial-data families for the flow runs.

Every constructor returns (WarpedMetric, ScalarField); the same names are
accepted by the run configuration.  All families satisfy the metric
invariants exactly at the grid level (w = 0 and |dw/ds| = 1 at poles).
"""

from __future__ import annotations

from math import pi, sqrt

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ConfigError
from .geometry import (
    EVEN,
    TOPOLOGY_INTERVAL,
    TOPOLOGY_PERIODIC,
    Grid,
    ScalarField,
    WarpedMetric,
)


def flat_torus(nodes=256, circumference=2.0 * pi, warp=1.0,
               phi_amplitude=0.0, phi_mode=1):
    """Flat product of two circles; stationary point of the flow when
    phi is constant."""
    grid = Grid(TOPOLOGY_PERIODIC, int(nodes), circumference / int(nodes),
                fiber_dim=1, fiber_curvature=0.0)
    x = grid.x * (2.0 * pi / circumference)
    metric = WarpedMetric(grid, np.ones(grid.node_count), warp * np.ones(grid.node_count))
    phi = ScalarField(phi_amplitude * np.sin(phi_mode * x), "phi")
    return metric, phi


def perturbed_flat(nodes=256, eps=1e-2, mode=1, warp_eps=0.0, circumference=2.0 * pi):
    """Flat torus with a small scalar (and optionally warp) perturbation."""
    metric, phi = flat_torus(nodes, circumference, 1.0, eps, mode)
    if warp_eps:
        x = metric.grid.x * (2.0 * pi / circumference)
        metric.w = 1.0 + warp_eps * np.cos(mode * x)
    return metric, phi


def round_sphere(nodes=256, k0=1.0, fiber_dim=1, phi_amplitude=0.0):
    """Round S^n of constant sectional curvature k0 (radius 1/sqrt(k0)).

    Warped form: a = rho, w = rho sin(x) on [0, pi], rho = 1/sqrt(k0).
    The optional scalar is the first zonal harmonic, pole-regular.
    """
    if k0 <= 0:
        raise ConfigError("round_sphere requires k0 > 0")
    rho = 1.0 / sqrt(k0)
    n = int(nodes)
    h = pi / (n - 1)
    grid = Grid(TOPOLOGY_INTERVAL, n, h, fiber_dim=int(fiber_dim),
                fiber_curvature=0.0 if fiber_dim == 1 else 1.0)
    x = grid.x
    # evaluate sin at the exact distance to the nearest pole: sin(pi - x)
    # loses relative precision right where 1/w amplifies it
    pole_dist = np.minimum(np.arange(n), np.arange(n)[::-1]) * h
    w = rho * np.sin(pole_dist)
    metric = WarpedMetric(grid, rho * np.ones(n), w)
    phi = ScalarField(phi_amplitude * np.cos(x), "phi")
    return metric, phi


def dumbbell(nodes=384, neck_w=0.2, fiber_dim=2, phi_amplitude=0.0):
    """Two spherical bulbs joined by a thin neck: w = sin(x)(1 - B sin^2 x).

    For fiber_dim = 2 and a thin enough neck the flow pinches at the
    equator (S^3-type neck singularity).
    """
    if not 0.0 < neck_w < 1.0:
        raise ConfigError("dumbbell neck_w must lie in (0, 1)")
    b = 1.0 - neck_w
    n = int(nodes)
    h = pi / (n - 1)
    grid = Grid(TOPOLOGY_INTERVAL, n, h, fiber_dim=int(fiber_dim),
                fiber_curvature=0.0 if fiber_dim == 1 else 1.0)
    x = grid.x
    pole_dist = np.minimum(np.arange(n), np.arange(n)[::-1]) * h
    sx = np.sin(pole_dist)
    w = sx * (1.0 - b * sx ** 2)
    metric = WarpedMetric(grid, np.ones(n), w)
    phi = ScalarField(phi_amplitude * np.cos(x), "phi")
    return metric, phi


def _cap_bump(u):
    """C^2 compactly supported bump on [-1, 1]."""
    out = np.zeros_like(u)
    mask = np.abs(u) < 1.0
    out[mask] = (1.0 - u[mask] ** 2) ** 3
    return out


def gaussian_cap(nodes=256, flat_radius=1.0, belt_width=0.5, fiber_dim=1,
                 phi_amplitude=0.0):
    """Two-pole geometry that is exactly flat (w = s) out to flat_radius
    from each pole, closed up by a curvature belt in the middle.

    Built by integrating w'' = -K(s) w with K a symmetric bump centered at
    s_c = flat_radius + belt_width, with the bump amplitude tuned so
    w'(s_c) = 0; mirroring then gives a smooth closed profile with
    w'(L) = -1 at the far pole.  The flat caps are where point-based
    Gaussian data, reduced volume and the Gaussian-soliton identities are
    exactly Euclidean.
    """
    s_c = flat_radius + belt_width

    def solve(amplitude):
        def rhs(s, y):
            k = amplitude * _cap_bump(np.array([(s - s_c) / belt_width]))[0]
            return [y[1], -k * y[0]]

        return solve_ivp(rhs, (0.0, s_c), [0.0, 1.0], rtol=1e-12, atol=1e-14,
                         dense_output=True, max_step=belt_width / 50.0)

    def slope_at_center(amplitude):
        return solve(amplitude).y[1, -1]

    # first sign change of w'(s_c) going up in amplitude (larger roots are
    # oscillatory profiles with w <= 0 somewhere)
    lo, hi = 1e-3, 2e-3
    while slope_at_center(hi) > 0:
        lo, hi = hi, hi * 1.7
        if hi > 1e5 / belt_width ** 2:
            raise ConfigError("gaussian_cap: no closing amplitude found")
    amp = brentq(slope_at_center, lo, hi, xtol=1e-13)
    sol = solve(amp)

    n = int(nodes)
    length = 2.0 * s_c
    grid = Grid(TOPOLOGY_INTERVAL, n, length / (n - 1), fiber_dim=int(fiber_dim),
                fiber_curvature=0.0 if fiber_dim == 1 else 1.0)
    s = grid.x
    half = np.minimum(s, length - s)
    w = sol.sol(half)[0]
    w[0] = w[-1] = 0.0
    metric = WarpedMetric(grid, np.ones(n), w)
    phi = ScalarField(phi_amplitude * np.cos(pi * s / length), "phi")
    return metric, phi


FAMILIES = {
    "flat_torus": flat_torus,
    "perturbed_flat": perturbed_flat,
    "round_sphere": round_sphere,
    "dumbbell": dumbbell,
    "gaussian_cap": gaussian_cap,
}


def build(name: str, **params):
    if name not in FAMILIES:
        raise ConfigError(f"unknown initial-data family {name!r}; "
                          f"known: {sorted(FAMILIES)}")
    try:
        return FAMILIES[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for family {name!r}: {exc}") from exc
