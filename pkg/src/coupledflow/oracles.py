"""Independent oracles used to cross-check the production code paths.

Two live here:

  * a finite-difference Riemann-tensor evaluator working on the full
    (x, fiber) coordinate chart of the warped ansatz, fed by closed-form
    profile callables (never by the grid code it is checking);
  * a direct variational minimizer for the backward path-length functional,
    optimizing over discretized curves (used to cross-validate the
    shooting solver in lgeodesic).

Both are deliberately slow and structurally unrelated to the production
discretizations.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

# 4th-order central difference weights for f' at offsets (-2,-1,1,2)/delta
_D1_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])
_D1_WEIGHTS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0


def warped_chart_metric(a_fn, w_fn, fiber_dim, fiber_curvature):
    """Metric callable for the full chart, batched over points.

    Coordinates: (x, theta) for a 1-dim fiber, (x, theta, psi) for a round
    2-sphere fiber with metric w^2 (dtheta^2 + sin^2 theta dpsi^2).
    """
    n = fiber_dim + 1

    def metric(points):
        points = np.atleast_2d(points)
        k = points.shape[0]
        x = points[:, 0]
        g = np.zeros((k, n, n))
        a = a_fn(x)
        w = w_fn(x)
        g[:, 0, 0] = a * a
        g[:, 1, 1] = w * w
        if fiber_dim == 2:
            if fiber_curvature != 1.0:
                raise ValueError("2-dim fiber must be the unit round sphere")
            theta = points[:, 1]
            g[:, 2, 2] = (w * np.sin(theta)) ** 2
        elif fiber_dim != 1:
            raise ValueError("oracle chart supports fiber_dim in {1, 2}")
        return g

    return metric, n


def _metric_and_grads(metric_fn, points, delta):
    """g, dg (dg[p, k, i, j] = d_k g_ij) by 4th-order differences."""
    points = np.atleast_2d(points)
    k, n = points.shape
    g = metric_fn(points)
    dg = np.zeros((k, n, n, n))
    for axis in range(n):
        acc = np.zeros((k, n, n))
        for off, wt in zip(_D1_OFFSETS, _D1_WEIGHTS):
            shifted = points.copy()
            shifted[:, axis] += off * delta
            acc += wt * metric_fn(shifted)
        dg[:, axis] = acc / delta
    return g, dg


def _christoffel(metric_fn, points, delta):
    g, dg = _metric_and_grads(metric_fn, points, delta)
    ginv = np.linalg.inv(g)
    # Gamma^i_{jk} = 1/2 g^{il} (d_j g_{lk} + d_k g_{lj} - d_l g_{jk});
    # dg[p, k, i, j] = d_k g_{ij}
    term = (np.einsum("pjlk->pljk", dg) + np.einsum("pklj->pljk", dg)
            - np.einsum("pljk->pljk", dg))
    return 0.5 * np.einsum("pil,pljk->pijk", ginv, term), g, ginv


def riemann_fd(metric_fn, points, delta=5e-3):
    """Riemann, Ricci and scalar curvature at each point by nested FD.

    Uses R^i_{jkl} = d_k Gamma^i_{lj} - d_l Gamma^i_{kj}
                     + Gamma^i_{km} Gamma^m_{lj} - Gamma^i_{lm} Gamma^m_{kj},
    Ric_{jl} = R^k_{jkl}.  Returns (riem_lower, ric, scal, g).
    """
    points = np.atleast_2d(points)
    k, n = points.shape
    gamma, g, ginv = _christoffel(metric_fn, points, delta)
    dgamma = np.zeros((k, n, n, n, n))  # [p, k, i, j, l] = d_k Gamma^i_{jl}
    for axis in range(n):
        acc = np.zeros((k, n, n, n))
        for off, wt in zip(_D1_OFFSETS, _D1_WEIGHTS):
            shifted = points.copy()
            shifted[:, axis] += off * delta
            acc += wt * _christoffel(metric_fn, shifted, delta)[0]
        dgamma[:, axis] = acc / delta

    # dgamma[p, k, i, j, l] = d_k Gamma^i_{jl}; note Gamma^i_{jl} = Gamma^i_{lj}
    riem_up = (
        np.einsum("pkilj->pijkl", dgamma)
        - np.einsum("plikj->pijkl", dgamma)
        + np.einsum("pikm,pmlj->pijkl", gamma, gamma)
        - np.einsum("pilm,pmkj->pijkl", gamma, gamma)
    )
    riem = np.einsum("pim,pmjkl->pijkl", g, riem_up)
    ric = np.einsum("pkjkl->pjl", riem_up)
    scal = np.einsum("pjl,pjl->p", ginv, ric)
    return riem, ric, scal, g


def oracle_warped_curvature(a_fn, w_fn, fiber_dim, fiber_curvature, x_values,
                            phi_grad_fn=None, theta0=1.0, delta=5e-3):
    """Curvature fields of the warped metric straight from the chart.

    Returns a dict with the same field names as geometry.curvature, valid
    away from poles of the base (the chart degenerates where w = 0).
    """
    metric_fn, n = warped_chart_metric(a_fn, w_fn, fiber_dim, fiber_curvature)
    x_values = np.asarray(x_values, dtype=float)
    pts = np.zeros((x_values.size, n))
    pts[:, 0] = x_values
    if n >= 3:
        pts[:, 1] = theta0
    riem, ric, scal, g = riemann_fd(metric_fn, pts, delta)

    def sectional(i, j):
        return riem[:, i, j, i, j] / (g[:, i, i] * g[:, j, j])

    out = {
        "k_rad": sectional(0, 1),
        "ric_rad": ric[:, 0, 0] / g[:, 0, 0],
        "ric_fib": ric[:, 1, 1] / g[:, 1, 1],
        "scal": scal,
    }
    out["k_fib"] = sectional(1, 2) if fiber_dim >= 2 else np.zeros_like(scal)
    if phi_grad_fn is not None:
        grad2 = phi_grad_fn(x_values) ** 2 / g[:, 0, 0]
        out["grad_phi2"] = grad2
        out["s"] = scal - grad2
        out["sic_rad"] = out["ric_rad"] - grad2
        out["sic_fib"] = out["ric_fib"].copy()
    else:
        out["grad_phi2"] = np.zeros_like(scal)
        out["s"] = scal
        out["sic_rad"] = out["ric_rad"]
        out["sic_fib"] = out["ric_fib"]
    return out


# ---------------------------------------------------------------------------
# direct variational oracle for the backward path functional


def path_energy(x_nodes, s_grid, field_eval, t0):
    """Energy int (1/2 a^2 (dx/ds)^2 + 2 s^2 S) ds of a discretized curve.

    x_nodes are positions at the s_grid points; metric and S are sampled
    at segment midpoints at the backward time t = t0 - s^2.
    """
    ds = np.diff(s_grid)
    s_mid = 0.5 * (s_grid[1:] + s_grid[:-1])
    x_mid = 0.5 * (x_nodes[1:] + x_nodes[:-1])
    t_mid = t0 - s_mid * s_mid
    u = np.diff(x_nodes) / ds
    a_mid = field_eval("a", x_mid, t_mid)
    s_val = field_eval("s", x_mid, t_mid)
    return float(np.sum((0.5 * a_mid ** 2 * u ** 2 + 2.0 * s_mid ** 2 * s_val) * ds))


def minimize_path(q_x, tau_bar, field_eval, p_x, t0, n_control=60, x0=None):
    """L-BFGS minimization of the path energy over interior control points.

    Independent of the shooting solver: different parametrization, different
    optimizer, numerical gradients handled analytically per segment.
    """
    s_grid = np.sqrt(tau_bar) * np.linspace(0.0, 1.0, n_control + 2) ** 1.0
    if x0 is None:
        x0 = np.linspace(p_x, q_x, n_control + 2)[1:-1]

    def assemble(interior):
        return np.concatenate(([p_x], interior, [q_x]))

    def objective(interior):
        return path_energy(assemble(interior), s_grid, field_eval, t0)

    def gradient(interior):
        # centered differences per control point; cheap at this size
        eps = 1e-6 * max(1.0, np.sqrt(tau_bar))
        grad = np.zeros_like(interior)
        for i in range(interior.size):
            up = interior.copy()
            dn = interior.copy()
            up[i] += eps
            dn[i] -= eps
            grad[i] = (objective(up) - objective(dn)) / (2.0 * eps)
        return grad

    res = minimize(objective, x0, jac=gradient, method="L-BFGS-B",
                   options={"maxiter": 400, "ftol": 1e-14, "gtol": 1e-12})
    length = float(res.fun)
    return {
        "L": length,
        "ell": length / (2.0 * np.sqrt(tau_bar)),
        "path": assemble(res.x),
        "s_grid": s_grid,
        "converged": bool(res.success),
    }
