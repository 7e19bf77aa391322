"""Hot right-hand-side kernel for the time stepper.

The numpy implementation in flow._deriv is the reference; this module
provides a numba-compiled twin used inside the RK4 loop (4 evaluations per
step at ~10^5 steps make python dispatch the bottleneck).  A test pins the
two paths together to 1e-13.  Falls back to numpy silently when numba is
unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is in the standard env
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap(args[0]) if args and callable(args[0]) else wrap


@njit(cache=True)
def _deriv_core(a2, w2, ph, h, m, c_f, periodic):
    """(da2, dw2, dphi, rm_sup, min_a2, min_w2_interior).

    Mirrors geometry.curvature + geometry.laplacian_values for the flow
    right-hand side; ghost nodes by parity reflection (w odd, a/phi even).
    """
    n_nodes = a2.shape[0]
    n_dim = m + 1
    a = np.sqrt(a2)
    w = np.sqrt(w2)
    inv2h = 1.0 / (2.0 * h)
    invh2 = 1.0 / (h * h)

    w_x = np.empty(n_nodes)
    w_xx = np.empty(n_nodes)
    a_x = np.empty(n_nodes)
    ph_x = np.empty(n_nodes)
    for i in range(n_nodes):
        if periodic:
            ip = i + 1 if i + 1 < n_nodes else 0
            im = i - 1 if i > 0 else n_nodes - 1
            wp, wm = w[ip], w[im]
            ap, am = a[ip], a[im]
            pp, pm = ph[ip], ph[im]
        else:
            if i == 0:
                wp, wm = w[1], -w[1]
                ap, am = a[1], a[1]
                pp, pm = ph[1], ph[1]
            elif i == n_nodes - 1:
                wp, wm = -w[n_nodes - 2], w[n_nodes - 2]
                ap, am = a[n_nodes - 2], a[n_nodes - 2]
                pp, pm = ph[n_nodes - 2], ph[n_nodes - 2]
            else:
                wp, wm = w[i + 1], w[i - 1]
                ap, am = a[i + 1], a[i - 1]
                pp, pm = ph[i + 1], ph[i - 1]
        w_x[i] = (wp - wm) * inv2h
        w_xx[i] = (wp - 2.0 * w[i] + wm) * invh2
        a_x[i] = (ap - am) * inv2h
        ph_x[i] = (pp - pm) * inv2h

    k_rad = np.empty(n_nodes)
    lo = 0 if periodic else 1
    hi = n_nodes if periodic else n_nodes - 1
    for i in range(lo, hi):
        w_ss = w_xx[i] / a2[i] - w_x[i] * a_x[i] / (a2[i] * a[i])
        k_rad[i] = -w_ss / w[i]
    if not periodic:
        k_rad[0] = (4.0 * k_rad[1] - k_rad[2]) / 3.0
        k_rad[n_nodes - 1] = (4.0 * k_rad[n_nodes - 2] - k_rad[n_nodes - 3]) / 3.0

    k_fib = np.zeros(n_nodes)
    if m >= 2:
        if periodic:
            for i in range(n_nodes):
                w_s = w_x[i] / a[i]
                k_fib[i] = (c_f - w_s * w_s) / w2[i]
        else:
            # pole-anchored integral c_F - w_s^2(s) = int_0^s K_rad d(w^2),
            # re-anchored at the right pole beyond the widest point (the
            # total integral vanishes analytically)
            defect = np.zeros(n_nodes)
            prev = k_rad[0] * 2.0 * w[0] * w_x[0]
            for i in range(1, n_nodes):
                cur = k_rad[i] * 2.0 * w[i] * w_x[i]
                defect[i] = defect[i - 1] + 0.5 * (prev + cur) * h
                prev = cur
            switch = 0
            w_big = w[0]
            for i in range(n_nodes):
                if w[i] > w_big:
                    w_big = w[i]
                    switch = i
            total = defect[n_nodes - 1]
            for i in range(1, n_nodes - 1):
                d_here = defect[i] - total if i >= switch else defect[i]
                k_fib[i] = d_here / w2[i]
            k_fib[0] = (4.0 * k_fib[1] - k_fib[2]) / 3.0
            k_fib[n_nodes - 1] = (4.0 * k_fib[n_nodes - 2] - k_fib[n_nodes - 3]) / 3.0

    da2 = np.empty(n_nodes)
    dw2 = np.empty(n_nodes)
    rm_sup = 0.0
    for i in range(n_nodes):
        grad2 = ph_x[i] * ph_x[i] / a2[i]
        ric_rad = m * k_rad[i]
        ric_fib = k_rad[i] + (m - 1) * k_fib[i]
        da2[i] = -2.0 * (ric_rad - grad2) * a2[i]
        dw2[i] = -2.0 * ric_fib * w2[i]
        rm = abs(k_rad[i])
        if m >= 2 and abs(k_fib[i]) > rm:
            rm = abs(k_fib[i])
        if rm > rm_sup:
            rm_sup = rm

    # flux-form Laplacian of phi
    dphi = np.empty(n_nodes)
    n_edges = n_nodes if periodic else n_nodes - 1
    flux = np.empty(n_edges)
    for e in range(n_edges):
        j = e + 1 if e + 1 < n_nodes else 0
        w_half = 0.5 * (w[e] + w[j])
        a_half = 0.5 * (a[e] + a[j])
        dens = w_half
        for _ in range(m - 1):
            dens *= w_half
        flux[e] = dens / a_half * (ph[j] - ph[e]) / h
    if periodic:
        for i in range(n_nodes):
            em = i - 1 if i > 0 else n_edges - 1
            rho = a[i] * w[i] ** m
            dphi[i] = (flux[i] - flux[em]) / (h * rho)
    else:
        for i in range(1, n_nodes - 1):
            rho = a[i] * w[i] ** m
            dphi[i] = (flux[i] - flux[i - 1]) / (h * rho)
        rho_pole = a[0] ** (m + 1) * h ** m / (2.0 ** (m + 1) * (m + 1))
        dphi[0] = flux[0] / (h * rho_pole)
        rho_pole = a[n_nodes - 1] ** (m + 1) * h ** m / (2.0 ** (m + 1) * (m + 1))
        dphi[n_nodes - 1] = -flux[n_edges - 1] / (h * rho_pole)

    min_a2 = a2[0]
    min_w2 = w2[lo]
    for i in range(n_nodes):
        if a2[i] < min_a2:
            min_a2 = a2[i]
    for i in range(lo, hi):
        if w2[i] < min_w2:
            min_w2 = w2[i]
    return da2, dw2, dphi, rm_sup, min_a2, min_w2
