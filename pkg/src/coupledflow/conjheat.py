"""Backward conjugate heat solutions and the pointwise Harnack machinery.

The conjugate operator along the flow is  B* = -d/dt - Lap + S ; its
solutions u, written u = (4 pi (tbar - t))^{-n/2} e^{-f}, carry

    v = ( (tbar - t)(2 Lap f - |grad f|^2 + S) + f - n ) u,

which satisfies the identity

    B* v = -2 (tbar - t) ( |Sic + Hess f - g/(2(tbar-t))|^2
                           + (Lap phi - <grad phi, grad f>)^2 ) u  <=  0,

vanishing exactly on gradient-soliton configurations.  Delta data is
regularized to a Riemannian Gaussian of width sigma0 started at
tbar - sigma0^2; all sign tolerances are therefore reported as functions
of (sigma0, h).

The integral of v is the entropy-like functional

    W = (4 pi (tbar-t))^{-n/2} int ( (tbar-t)(|grad f|^2 + S) + f - n ) e^{-f} dV,

equal to int v dV on closed slices by parts.  The localized variant uses
the cutoff profile ph with ph = 1 below 1, 0 above 2, and
(ph')^2 <= 10 ph, -ph'' <= 10 ph, composed with the inflated distance
d + 200 n sqrt(t).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log, pi, sqrt
from typing import Optional

import numpy as np

from .errors import CoupledFlowError, DomainError
from .geometry import (
    EVEN,
    ODD,
    ScalarField,
    WarpedMetric,
    curvature,
    distance_profile,
    dx1,
    integrate,
    laplacian_values,
    volume_weights,
)

U_FLOOR = 1e-280


@dataclass
class ConjHeatState:
    center: int
    t_center: float
    t: float
    u: np.ndarray
    mass: float

    @property
    def tau_back(self) -> float:
        return self.t_center - self.t


def hessian_components(metric: WarpedMetric, values: np.ndarray):
    """(radial, fiber) orthonormal components of the Hessian of a radial
    scalar: (f_ss, (w_s/w) f_s), fiber -> f_ss at poles by regularity."""
    g = metric.grid
    f_x = dx1(values, g, EVEN)
    f_s = f_x / metric.a
    rad = dx1(f_s, g, ODD) / metric.a
    w_x = dx1(metric.w, g, ODD)
    with np.errstate(divide="ignore", invalid="ignore"):
        fib = np.where(metric.w > 0,
                       (w_x / metric.a) * f_s / np.where(metric.w > 0, metric.w, 1.0),
                       0.0)
    if not g.periodic:
        fib[0], fib[-1] = rad[0], rad[-1]
    return rad, fib


def gaussian_profile(metric: WarpedMetric, center: int, width: float,
                     n_dim: Optional[int] = None) -> np.ndarray:
    """(4 pi width^2)^{-n/2} exp(-d^2 / (4 width^2)) on the grid."""
    n = metric.grid.n if n_dim is None else n_dim
    d = distance_profile(metric, center)
    return (4.0 * pi * width ** 2) ** (-0.5 * n) * np.exp(
        -d * d / (4.0 * width ** 2))


def solve_backward(history, center: int, t_center: float, t_stop: float,
                   sigma0: float, save_interval: Optional[float] = None,
                   cfl_factor: float = 0.9):
    """Integrate B* u = 0 backward from the regularized delta at
    (center, t_center).  Returns a list of ConjHeatState, earliest last.

    The start time is t_center - sigma0^2; mass is measured with the
    finite-volume weights that make the discrete Laplacian telescope, and
    the initial datum is normalized against them so the reported drift is
    purely a property of the scheme.
    """
    grid = history.grid
    n = grid.n
    h = grid.spacing
    t_start = t_center - sigma0 * sigma0
    if not (history.t_first <= t_stop < t_start <= history.t_last + 1e-12):
        raise DomainError("need t_first <= t_stop < t_center - sigma0^2 <= t_last")

    state0 = history.state_at(t_start)
    u = gaussian_profile(state0.metric, center, sigma0)

    if save_interval is None:
        save_interval = (t_start - t_stop) / 60.0

    # row-blended fast path: a, w, S at time t come from the precomputed
    # per-save arrays (same linear-in-t convention as everything else)
    from .interp import get_interpolator

    itp = get_interpolator(history)
    grid = history.grid
    m = grid.fiber_dim
    pole_rho = None
    if not grid.periodic:
        pole_rho = h ** m / (2.0 ** (m + 1) * (m + 1))

    def deriv(u_arr, t):
        sl = itp.time_slice(t)
        a = sl.rows["a"]
        w = sl.rows["w"]
        s_row = sl.rows["s"]
        if grid.periodic:
            a_half = 0.5 * (a + np.roll(a, -1))
            w_half = 0.5 * (w + np.roll(w, -1))
            flux = w_half ** m / a_half * (np.roll(u_arr, -1) - u_arr) / h
            lap = (flux - np.roll(flux, 1)) / (h * a * w ** m)
        else:
            a_half = 0.5 * (a[:-1] + a[1:])
            w_half = 0.5 * (w[:-1] + w[1:])
            flux = w_half ** m / a_half * (u_arr[1:] - u_arr[:-1]) / h
            lap = np.empty_like(u_arr)
            lap[1:-1] = (flux[1:] - flux[:-1]) / (h * a[1:-1] * w[1:-1] ** m)
            lap[0] = flux[0] / (h * a[0] ** (m + 1) * pole_rho)
            lap[-1] = -flux[-1] / (h * a[-1] ** (m + 1) * pole_rho)
        return lap - s_row * u_arr, s_row, a

    states = []
    t = t_start

    def blended_weights(t_now):
        sl = itp.time_slice(t_now)
        a, w = sl.rows["a"], sl.rows["w"]
        rho = a * w ** m
        if not grid.periodic:
            rho = rho.copy()
            rho[0] = a[0] ** (m + 1) * pole_rho
            rho[-1] = a[-1] ** (m + 1) * pole_rho
        return rho * h * grid.fiber_volume

    def save(u_arr, t_now):
        mass = float(np.sum(u_arr * blended_weights(t_now)))
        states.append(ConjHeatState(center, t_center, t_now, u_arr.copy(), mass))

    u = u / float(np.sum(u * blended_weights(t)))
    save(u, t)
    next_save = t - save_interval

    while t > t_stop + 1e-15:
        du, s_row, a_row = deriv(u, t)
        base = float(np.min(a_row)) ** 2 * h * h
        s_sup = float(np.max(np.abs(s_row)))
        dt = cfl_factor * base / (2.0 * n * max(1.0, s_sup * base))
        dt = min(dt, t - t_stop)
        # backward in t: step -dt using tau = t_center - t as forward clock
        k1 = du
        k2 = deriv(u + 0.5 * dt * k1, t - 0.5 * dt)[0]
        k3 = deriv(u + 0.5 * dt * k2, t - 0.5 * dt)[0]
        k4 = deriv(u + dt * k3, t - dt)[0]
        u = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t -= dt
        if not np.all(np.isfinite(u)):
            raise CoupledFlowError("conjugate-heat solve went non-finite")
        if float(np.min(u)) < -1e-8 * float(np.max(np.abs(u))):
            raise CoupledFlowError("conjugate-heat positivity lost (scheme failure)")
        if t <= next_save + 1e-15 or t <= t_stop + 1e-15:
            save(u, t)
            next_save = t - save_interval
    return states


def f_from_u(state: ConjHeatState, n_dim: int):
    """f with u = (4 pi (tbar - t))^{-n/2} e^{-f}; floored where u underflows.

    Returns (f, mask) with mask marking nodes above the floor.
    """
    tau = state.tau_back
    mask = state.u > U_FLOOR
    safe_u = np.where(mask, state.u, U_FLOOR)
    f = -np.log(safe_u) - 0.5 * n_dim * log(4.0 * pi * tau)
    return f, mask


def v_field(state: ConjHeatState, history):
    """Pointwise Harnack field v and its node mask.

    v <= 0 for true fundamental solutions; for sigma0-regularized data the
    positive excess decays like (sigma0^2 + h^2)/tau.
    """
    st = history.state_at(state.t)
    metric = st.metric
    n = metric.grid.n
    tau = state.tau_back
    f, mask = f_from_u(state, n)
    curv = curvature(metric, st.phi)
    lap_f = laplacian_values(metric, f)
    grad_f = dx1(f, metric.grid, EVEN) / metric.a
    v = (tau * (2.0 * lap_f - grad_f ** 2 + curv.s) + f - n) * state.u
    # one stencil width inside the floor boundary is still contaminated
    eroded = mask.copy()
    if metric.grid.periodic:
        eroded &= np.roll(mask, 1) & np.roll(mask, -1)
    else:
        eroded[1:] &= mask[:-1]
        eroded[:-1] &= mask[1:]
    return ScalarField(v, "v"), eroded


def w_functional(state: ConjHeatState, history) -> float:
    """W entropy of the state; equals int v dV up to quadrature."""
    st = history.state_at(state.t)
    metric = st.metric
    n = metric.grid.n
    tau = state.tau_back
    f, _ = f_from_u(state, n)
    curv = curvature(metric, st.phi)
    grad_f = dx1(f, metric.grid, EVEN) / metric.a
    dens = (tau * (grad_f ** 2 + curv.s) + f - n) * state.u
    return integrate(metric, dens)


def integral_v(state: ConjHeatState, history) -> float:
    v, _ = v_field(state, history)
    st = history.state_at(state.t)
    return integrate(st.metric, np.asarray(v.values))


def box_star_v_residual(states, history):
    """(residual field, lhs, rhs) of the B* v identity on a state triple.

    states = (earlier, mid, later) in increasing t; time derivative by the
    centered difference, everything else on the middle slice.
    """
    lo, mid, hi = states
    if not (lo.t < mid.t < hi.t):
        raise DomainError("states must be time-ordered lo < mid < hi")
    st = history.state_at(mid.t)
    metric = st.metric
    n = metric.grid.n
    tau = mid.tau_back

    v_lo, _ = v_field(lo, history)
    v_mid, mask = v_field(mid, history)
    v_hi, _ = v_field(hi, history)
    dv_dt = (np.asarray(v_hi.values) - np.asarray(v_lo.values)) / (hi.t - lo.t)
    curv = curvature(metric, st.phi)
    vm = np.asarray(v_mid.values)
    lhs = -dv_dt - laplacian_values(metric, vm) + curv.s * vm

    f, _ = f_from_u(mid, n)
    hess_rad, hess_fib = hessian_components(metric, f)
    m = metric.grid.fiber_dim
    res_rad = curv.sic_rad + hess_rad - 1.0 / (2.0 * tau)
    res_fib = curv.sic_fib + hess_fib - 1.0 / (2.0 * tau)
    phiv = np.asarray(st.phi.values)
    lap_phi = laplacian_values(metric, phiv)
    grad_phi = dx1(phiv, metric.grid, EVEN) / metric.a
    grad_f = dx1(f, metric.grid, EVEN) / metric.a
    scalar_term = lap_phi - grad_phi * grad_f
    rhs = -2.0 * tau * (res_rad ** 2 + m * res_fib ** 2 + scalar_term ** 2) * mid.u
    if not metric.grid.periodic:
        # the pole cell's truncation constant differs from the interior's,
        # so u carries an O(h^2) kink there that Lap amplifies to O(1);
        # the identity is checked on the pole-free interior
        mask = mask.copy()
        mask[:3] = mask[-3:] = False
    return (lhs - rhs), lhs, rhs, mask


# ---------------------------------------------------------------------------
# cutoff machinery


def profile(y):
    """The cutoff profile: 1 below 1, (1-(y-1)^2)^3 on [1,2], 0 above 2."""
    y = np.asarray(y, dtype=float)
    xi = np.clip(y - 1.0, 0.0, 1.0)
    return np.where(y <= 1.0, 1.0, np.where(y >= 2.0, 0.0, (1.0 - xi ** 2) ** 3))


def profile_d1(y):
    y = np.asarray(y, dtype=float)
    xi = y - 1.0
    inside = (y > 1.0) & (y < 2.0)
    out = np.zeros_like(y)
    out[inside] = -6.0 * xi[inside] * (1.0 - xi[inside] ** 2) ** 2
    return out


def profile_d2(y):
    y = np.asarray(y, dtype=float)
    xi = y - 1.0
    inside = (y > 1.0) & (y < 2.0)
    out = np.zeros_like(y)
    out[inside] = -6.0 * (1.0 - xi[inside] ** 2) * (1.0 - 5.0 * xi[inside] ** 2)
    return out


@dataclass
class CutoffFunction:
    a_param: float
    eps: float
    center: int

    def __post_init__(self):
        if self.a_param < 1.0 or self.eps <= 0.0:
            raise DomainError("cutoff needs A >= 1 and eps > 0")
        self.scale = 10.0 * self.a_param * self.eps
        # constructed profile must satisfy the defining constraints
        y = np.linspace(0.0, 2.5, 10001)
        p, d1, d2 = profile(y), profile_d1(y), profile_d2(y)
        if np.any(d1 ** 2 > 10.0 * p + 1e-12) or np.any(-d2 > 10.0 * p + 1e-12):
            raise CoupledFlowError("cutoff profile violates its constraints")

    def inflated_distance(self, history, t: float, t_origin: float = 0.0):
        st = history.state_at(t)
        n = st.metric.grid.n
        d = distance_profile(st.metric, self.center)
        return d + 200.0 * n * sqrt(max(t - t_origin, 0.0))

    def h(self, history, t: float, t_origin: float = 0.0) -> np.ndarray:
        return profile(self.inflated_distance(history, t, t_origin) / self.scale)


def build_cutoff(a_param: float, eps: float, center: int) -> CutoffFunction:
    return CutoffFunction(a_param, eps, center)


def constraint_margins(samples: int = 10000):
    """min(10 ph - (ph')^2) and min(10 ph + ph'') over a dense sample."""
    y = np.linspace(0.0, 2.2, samples)
    p, d1, d2 = profile(y), profile_d1(y), profile_d2(y)
    return float(np.min(10.0 * p - d1 ** 2)), float(np.min(10.0 * p + d2))


def localized_integral(cutoff: CutoffFunction, states, history,
                       t_origin: float = 0.0):
    """Series int h v dV over the states plus the log-derivative margins of
    d/dt log int h (-v) <= 1/(10 (A eps)^2)."""
    ts, ihv, ihnegv = [], [], []
    for st in sorted(states, key=lambda s: s.t):
        v, _ = v_field(st, history)
        hv = cutoff.h(history, st.t, t_origin) * np.asarray(v.values)
        metric = history.state_at(st.t).metric
        ts.append(st.t)
        ihv.append(integrate(metric, hv))
        ihnegv.append(integrate(metric, -hv))
    ts = np.array(ts)
    ihv = np.array(ihv)
    ihnegv = np.array(ihnegv)
    bound = 1.0 / (10.0 * (cutoff.a_param * cutoff.eps) ** 2)
    margins = []
    for k in range(ts.size - 1):
        if ihnegv[k] > 0 and ihnegv[k + 1] > 0:
            rate = (log(ihnegv[k + 1]) - log(ihnegv[k])) / (ts[k + 1] - ts[k])
            margins.append(bound - rate)
    return {"t": ts, "int_hv": ihv, "int_h_negv": ihnegv,
            "log_rate_margins": np.array(margins), "bound": bound}


# ---------------------------------------------------------------------------
# distance evolution


def distance_evolution_check(history, x0: int, r0: float, times=None,
                             dt_frac: float = 0.02):
    """Margins of d_t d - Lap d >= -(n-1)(2/3 K r0 + 1/r0) off B(x0, r0).

    K is the measured sup of Ricci over the ball divided by (n-1); Lap d
    uses the closed form m (w_s/w) sign(d_s) valid along radial geodesics.
    Returns per-(t, x) margin array and the sample grids.
    """
    grid = history.grid
    n = grid.n
    m = grid.fiber_dim
    if times is None:
        span = history.t_last - history.t_first
        times = history.t_first + span * np.linspace(0.25, 0.75, 5)
    dt = dt_frac * (history.t_last - history.t_first)
    margins = np.full((len(times), grid.node_count), np.nan)
    for j, t in enumerate(times):
        st = history.state_at(t)
        metric = st.metric
        d_mid = distance_profile(metric, x0)
        d_hi = distance_profile(history.state_at(t + dt).metric, x0)
        d_lo = distance_profile(history.state_at(t - dt).metric, x0)
        dd_dt = (d_hi - d_lo) / (2.0 * dt)
        curv = curvature(metric, st.phi)
        on_ball = d_mid <= r0
        if not np.any(on_ball):
            continue
        ric_max = float(np.max(np.maximum(curv.ric_rad, curv.ric_fib)[on_ball]))
        k_ric = max(ric_max, 0.0) / (n - 1)
        w_s = dx1(metric.w, grid, ODD) / metric.a
        s_coord = np.cumsum(np.concatenate(([0.0], 0.5 * (metric.a[1:] + metric.a[:-1])))) * grid.spacing
        sgn = np.sign(s_coord - s_coord[x0])
        with np.errstate(divide="ignore", invalid="ignore"):
            lap_d = m * w_s / np.where(metric.w > 0, metric.w, np.nan) * sgn
        bound = -(n - 1) * (2.0 / 3.0 * k_ric * r0 + 1.0 / r0)
        row = dd_dt - lap_d - bound
        row[on_ball] = np.nan          # lemma applies outside the ball only
        if not grid.periodic:
            row[0] = row[-1] = np.nan  # focal poles
        margins[j] = row
    return np.asarray(times), margins


def pair_distance_evolution_check(history, x1: int, x2: int, r0: float,
                                  times=None, dt_frac: float = 0.02):
    """Two-ball variant: d/dt d(x1,x2) >= -2(n-1)(2/3 K r0 + 1/r0)."""
    from .geometry import radial_distance

    grid = history.grid
    n = grid.n
    if times is None:
        span = history.t_last - history.t_first
        times = history.t_first + span * np.linspace(0.25, 0.75, 5)
    dt = dt_frac * (history.t_last - history.t_first)
    out = []
    for t in times:
        st = history.state_at(t)
        metric = st.metric
        if radial_distance(metric, x1, x2) < 2.0 * r0:
            out.append(np.nan)
            continue
        d_hi = radial_distance(history.state_at(t + dt).metric, x1, x2)
        d_lo = radial_distance(history.state_at(t - dt).metric, x1, x2)
        dd_dt = (d_hi - d_lo) / (2.0 * dt)
        curv = curvature(metric, st.phi)
        d1 = distance_profile(metric, x1)
        d2 = distance_profile(metric, x2)
        balls = (d1 <= r0) | (d2 <= r0)
        ric_max = float(np.max(np.maximum(curv.ric_rad, curv.ric_fib)[balls]))
        k_ric = max(ric_max, 0.0) / (n - 1)
        out.append(dd_dt + 2.0 * (n - 1) * (2.0 / 3.0 * k_ric * r0 + 1.0 / r0))
    return np.asarray(times), np.asarray(out)
