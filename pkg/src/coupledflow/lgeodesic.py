"""Backward path-length functional, its geodesics, and the reduced volume.

For a history (g(t), phi(t)) and base (p, t0), with tau = t0 - t, the
backward length of a radial curve gamma is

    L(gamma) = int_0^taubar sqrt(tau) ( S(gamma) + |gamma'|^2 ) dtau,

evaluated in the metric at time t0 - tau.  In the regular parameter
s = sqrt(tau), with u = dx/ds and the coordinate velocity form,

    L = int_0^sbar ( 1/2 a^2 u^2 + 2 s^2 S ) ds,

whose critical curves satisfy (radial component, Gamma = a_x/a)

    u' = -Gamma u^2 + 2 s^2 S_x / a^2 - 4 s Sic_rad u,

the transform of the tau-form equation
nabla_X X - (1/2) grad S + X/(2 tau) + 2 Sic(X, .) = 0.  Shots start with
u(0) = 2 v / a(p, t0), v the arclength initial vector, so a straight flat
shot lands at distance 2 sqrt(taubar) |v|.

The reduced distance is ell(q, taubar) = L_min / (2 sqrt(taubar)); the
solver shoots a dense fan of v values once per taubar, then intersects the
(endpoint, L) curve with every grid node (including all pole-reflected and
periodic images, which is how cut-locus branches enter) and refines each
crossing through local cubics.  Along minimizers it accumulates

    K = int_0^taubar tau^{3/2} H(X) dtau,
    H(X) = -S_tau - S/tau - 2 <grad S, X> + 2 Sic(X, X),

and the first-derivative identities

    L_taubar = 2 sqrt(taubar) S - L/(2 taubar) + K/taubar
    |grad L|^2 = -4 taubar S + (2/sqrt(taubar)) L - (4/sqrt(taubar)) K
    grad L = 2 sqrt(taubar) X(taubar)

are exposed as residual checks, together with the differential
inequalities for ell and the monotonicity of the reduced volume

    Vtilde(tau) = int (4 pi tau)^{-n/2} e^{-ell} dV.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import pi, sqrt
from typing import Optional

import numpy as np

from . import oracles
from .errors import CoupledFlowError, DomainError
from .geometry import (
    EVEN,
    ODD,
    ScalarField,
    curvature,
    dx1,
    integrate,
    laplacian_values,
)
from .interp import FieldInterpolator, get_interpolator

STATUS_OK = "ok"
STATUS_UNREACHED = "unreached"


def _newton_poly(xs, ys):
    """Monomial coefficients (ascending) of the interpolant through up to
    four centered points; plain floats, hot path of the envelope."""
    m = len(xs)
    dd = list(ys)
    for k in range(1, m):
        for j in range(m - 1, k - 1, -1):
            denom = xs[j] - xs[j - k]
            dd[j] = (dd[j] - dd[j - 1]) / denom if denom != 0.0 else 0.0
    poly = [dd[m - 1]]
    for k in range(m - 2, -1, -1):
        new = [0.0] * (len(poly) + 1)
        for idx, c in enumerate(poly):
            new[idx + 1] += c
            new[idx] -= c * xs[k]
        new[0] += dd[k]
        poly = new
    return poly


def _horner(poly, x):
    acc = 0.0
    for c in reversed(poly):
        acc = acc * x + c
    return acc


def _horner_d1(poly, x):
    acc = 0.0
    for k in range(len(poly) - 1, 0, -1):
        acc = acc * x + k * poly[k]
    return acc


@dataclass
class LGeodesic:
    p_x: float
    t0: float
    v: float
    s: np.ndarray
    x: np.ndarray            # unfolded coordinate along the shot
    u: np.ndarray            # dx/ds
    length: np.ndarray       # accumulated L(s)
    k_integral: np.ndarray   # accumulated K(s)
    s_path: np.ndarray       # S along the path
    sic_xx: np.ndarray       # Sic(X, X) along the path (tau-velocity)
    grad_s_dot_x: np.ndarray
    partial: bool = False

    @property
    def l_value(self) -> float:
        return float(self.length[-1])

    @property
    def k_value(self) -> float:
        return float(self.k_integral[-1])


@dataclass
class ReducedDistanceSample:
    q_x: float
    tau_bar: float
    l_value: float
    ell_value: float
    k_value: float
    v_min: float
    status: str
    h_samples: Optional[np.ndarray] = None
    geodesic: Optional[LGeodesic] = None
    oracle_ell: Optional[float] = None

    @property
    def resolved(self) -> bool:
        return self.status == STATUS_OK


@dataclass
class ReducedVolumeSeries:
    tau: np.ndarray
    vtilde: np.ndarray
    quad_err: np.ndarray
    unresolved_fraction: np.ndarray


@dataclass
class EllField:
    """Per-node reduced distance at one taubar."""

    tau_bar: float
    ell: np.ndarray
    v_min: np.ndarray
    l_value: np.ndarray
    status: np.ndarray       # STATUS_OK / STATUS_UNREACHED per node


class LGeodesicSolver:
    """Shooting solver bound to (history, base point, base time)."""

    def __init__(self, history, p_x: float, t0: float, fan_size: int = 4097,
                 v_max: Optional[float] = None, n_steps: int = 256):
        self.history = history
        self.grid = history.grid
        self.p_x = float(p_x)
        self.t0 = float(t0)
        if not history.t_first <= t0 <= history.t_last + 1e-12:
            raise DomainError("base time outside history")
        self.itp = get_interpolator(history)
        self.fan_size = fan_size
        self.n_steps = n_steps
        self.v_max = v_max
        st0 = history.state_at(self.t0)
        self._rm_base = float(np.max(curvature(st0.metric, st0.phi).rm_norm))
        self._fans = {}
        self._fields = {}

    # -- core integration ---------------------------------------------------

    def _rhs(self, s, x, u, want_aux=False):
        sl = self.itp.time_slice(self.t0 - s * s)
        a = sl.eval("a", x)
        s_val = sl.eval("s", x)
        s_x = sl.eval("s_x", x)
        sic_rad = sl.eval("sic_rad", x)
        a2 = a * a
        du = (-sl.eval("loga_x", x) * u * u + 2.0 * s * s * s_x / a2
              - 4.0 * s * sic_rad * u)
        dlen = 0.5 * a2 * u * u + 2.0 * s * s * s_val
        # K' = 2 s^4 H with H regular at s = 0
        s_t = sl.eval("s_t", x)
        dk = (2.0 * s ** 4 * s_t - 2.0 * s * s * s_val
              - 2.0 * s ** 3 * s_x * u + s * s * sic_rad * a2 * u * u)
        if want_aux:
            with np.errstate(divide="ignore", invalid="ignore"):
                big_x = np.where(s > 0, u / (2.0 * s), 0.0)
            aux = {
                "s": s_val,
                "sic_xx": sic_rad * a2 * big_x * big_x,
                "grad_s_dot_x": s_x * big_x,
            }
            return du, dlen, dk, aux
        return du, dlen, dk

    def s_nodes(self, tau_bar: float) -> np.ndarray:
        """Geometrically graded integration nodes.

        From a near-singular base the geodesic equation has a drag layer
        4 s Sic u with Sic ~ 1/(2(gap + s^2)), so explicit stepping needs
        ds ~ sqrt(gap) through s ~ sqrt(gap); geometric spacing from
        s_min ~ 0.35/sqrt(sup|Rm|(t0)) up to sbar resolves every parabolic
        scale at fixed step count.
        """
        s_bar = sqrt(tau_bar)
        s_min = min(s_bar / 8.0, 0.35 / sqrt(max(self._rm_base, 1e-12)))
        nodes = np.geomspace(s_min, s_bar, self.n_steps)
        return np.concatenate(([0.0], nodes))

    def _integrate(self, v, tau_bar, record=False):
        """RK4 in s for an array of initial vectors v.

        Returns endpoints (x, u, L, K) and, when record is set, the full
        sampled path arrays (for single shots).
        """
        v = np.atleast_1d(np.asarray(v, dtype=float))
        ns = self.n_steps
        nodes = self.s_nodes(tau_bar)
        sl0 = self.itp.time_slice(self.t0)
        a0 = sl0.eval("a", np.array([self.p_x]))[0]
        x = np.full(v.shape, self.p_x)
        u = 2.0 * v / a0
        length = np.zeros_like(v)
        kint = np.zeros_like(v)

        rec = None
        if record:
            rec = {key: np.zeros((ns + 1,) + v.shape) for key in
                   ("x", "u", "length", "k_integral", "s_path", "sic_xx",
                    "grad_s_dot_x")}
            _, _, _, aux = self._rhs(0.0, x, u, want_aux=True)
            rec["x"][0], rec["u"][0] = x, u
            rec["s_path"][0] = aux["s"]
            rec["sic_xx"][0] = aux["sic_xx"]
            rec["grad_s_dot_x"][0] = aux["grad_s_dot_x"]

        for step in range(ns):
            s = nodes[step]
            ds = nodes[step + 1] - nodes[step]
            du1, dl1, dk1 = self._rhs(s, x, u)
            x2, u2 = x + 0.5 * ds * u, u + 0.5 * ds * du1
            du2, dl2, dk2 = self._rhs(s + 0.5 * ds, x2, u2)
            x3, u3 = x + 0.5 * ds * u2, u + 0.5 * ds * du2
            du3, dl3, dk3 = self._rhs(s + 0.5 * ds, x3, u3)
            x4, u4 = x + ds * u3, u + ds * du3
            du4, dl4, dk4 = self._rhs(s + ds, x4, u4)
            x = x + ds / 6.0 * (u + 2 * u2 + 2 * u3 + u4)
            u = u + ds / 6.0 * (du1 + 2 * du2 + 2 * du3 + du4)
            length = length + ds / 6.0 * (dl1 + 2 * dl2 + 2 * dl3 + dl4)
            kint = kint + ds / 6.0 * (dk1 + 2 * dk2 + 2 * dk3 + dk4)
            if record:
                _, _, _, aux = self._rhs(nodes[step + 1], x, u, want_aux=True)
                rec["x"][step + 1], rec["u"][step + 1] = x, u
                rec["length"][step + 1] = length
                rec["k_integral"][step + 1] = kint
                rec["s_path"][step + 1] = aux["s"]
                rec["sic_xx"][step + 1] = aux["sic_xx"]
                rec["grad_s_dot_x"][step + 1] = aux["grad_s_dot_x"]
        return x, u, length, kint, rec

    def shoot(self, v: float, tau_bar: float) -> LGeodesic:
        """Single L-geodesic with along-path data."""
        x, u, length, kint, rec = self._integrate(np.array([v]), tau_bar,
                                                  record=True)
        s_samples = self.s_nodes(tau_bar)
        partial = not (np.isfinite(x[0]) and np.isfinite(u[0]))
        return LGeodesic(
            p_x=self.p_x, t0=self.t0, v=float(v), s=s_samples,
            x=rec["x"][:, 0], u=rec["u"][:, 0], length=rec["length"][:, 0],
            k_integral=rec["k_integral"][:, 0], s_path=rec["s_path"][:, 0],
            sic_xx=rec["sic_xx"][:, 0], grad_s_dot_x=rec["grad_s_dot_x"][:, 0],
            partial=partial,
        )

    # -- fan + envelope -----------------------------------------------------

    def _fan(self, tau_bar: float):
        key = round(float(tau_bar), 14)
        if key in self._fans:
            return self._fans[key]
        v_max = self.v_max if self.v_max is not None else 10.0 / sqrt(tau_bar)
        v = np.linspace(-v_max, v_max, self.fan_size)
        x_end, u_end, length, kint, _ = self._integrate(v, tau_bar)
        good = np.isfinite(x_end) & np.isfinite(length)
        fan = {"v": v, "x_end": x_end, "u_end": u_end, "L": length,
               "K": kint, "good": good, "tau_bar": tau_bar}
        self._fans[key] = fan
        return fan

    def _images(self, lo: float, hi: float):
        """(node index, image coordinate) pairs of all grid nodes whose
        reflected/translated copies fall inside [lo, hi]."""
        g = self.grid
        nodes = g.x
        out_idx, out_pos = [], []
        if g.periodic:
            period = g.extent
            k0 = int(np.floor((lo - nodes[-1]) / period))
            k1 = int(np.ceil((hi - nodes[0]) / period))
            for k in range(k0, k1 + 1):
                shifted = nodes + k * period
                mask = (shifted >= lo) & (shifted <= hi)
                out_idx.append(np.flatnonzero(mask))
                out_pos.append(shifted[mask])
        else:
            period = 2.0 * g.extent
            k0 = int(np.floor((lo - period) / period))
            k1 = int(np.ceil((hi + period) / period))
            for k in range(k0, k1 + 1):
                for sign in (1.0, -1.0):
                    shifted = sign * nodes + k * period
                    mask = (shifted >= lo) & (shifted <= hi)
                    out_idx.append(np.flatnonzero(mask))
                    out_pos.append(shifted[mask])
        if not out_idx:
            return np.array([], dtype=int), np.array([])
        return np.concatenate(out_idx), np.concatenate(out_pos)

    def ell_field(self, tau_bar: float) -> EllField:
        """Reduced distance on every grid node (min across all branches)."""
        key = round(float(tau_bar), 14)
        if key in self._fields:
            return self._fields[key]
        fan = self._fan(tau_bar)
        n = self.grid.node_count
        best_l = np.full(n, np.inf)
        best_v = np.full(n, np.nan)
        v, xe, lv = fan["v"], fan["x_end"], fan["L"]
        good = fan["good"]
        for i in range(v.size - 1):
            if not (good[i] and good[i + 1]):
                continue
            lo, hi = (xe[i], xe[i + 1]) if xe[i] <= xe[i + 1] else (xe[i + 1], xe[i])
            if hi - lo > 0.5 * self.grid.extent * 4:
                continue  # wild segment (numerical blow-through)
            idx, pos = self._images(lo, hi)
            if idx.size == 0:
                continue
            j0 = max(i - 1, 0)
            j1 = min(i + 3, v.size)
            ok_win = good[j0:j1]
            vv = (v[j0:j1] - v[i])[ok_win]
            cx = _newton_poly(list(vv), list(xe[j0:j1][ok_win]))
            cl = _newton_poly(list(vv), list(lv[j0:j1][ok_win]))
            denom = xe[i + 1] - xe[i]
            v_span = v[i + 1] - v[i]
            v_lo, v_hi = float(vv[0]), float(vv[-1])
            for node, q_img in zip(idx, pos):
                v_loc = 0.0 if denom == 0.0 else (q_img - xe[i]) / denom * v_span
                # Newton refinement on the local interpolant
                for _ in range(3):
                    fder = _horner_d1(cx, v_loc)
                    if fder == 0.0:
                        break
                    v_loc -= (_horner(cx, v_loc) - q_img) / fder
                v_loc = min(max(v_loc, v_lo), v_hi)
                l_here = _horner(cl, v_loc)
                if l_here < best_l[node]:
                    best_l[node] = l_here
                    best_v[node] = v[i] + v_loc
        status = np.where(np.isfinite(best_l), STATUS_OK, STATUS_UNREACHED)
        ell = best_l / (2.0 * sqrt(tau_bar))
        fld = EllField(tau_bar=tau_bar, ell=ell, v_min=best_v, l_value=best_l,
                       status=status)
        self._fields[key] = fld
        return fld

    def sample(self, q: int, tau_bar: float, oracle: bool = False,
               oracle_control: int = 60) -> ReducedDistanceSample:
        """Reduced distance to grid node q, with along-path K data.

        With oracle=True also runs the independent path-space minimizer
        and reports its value alongside (never substitutes it).
        """
        fld = self.ell_field(tau_bar)
        q_x = float(self.grid.x[q])
        if fld.status[q] != STATUS_OK:
            return ReducedDistanceSample(q_x, tau_bar, np.inf, np.inf, np.nan,
                                         np.nan, STATUS_UNREACHED)
        v_min = float(fld.v_min[q])
        geo = self.shoot(v_min, tau_bar)
        sample = ReducedDistanceSample(
            q_x=q_x, tau_bar=tau_bar, l_value=float(fld.l_value[q]),
            ell_value=float(fld.ell[q]), k_value=geo.k_value, v_min=v_min,
            status=STATUS_OK, geodesic=geo,
            h_samples=self._h_along(geo),
        )
        if oracle:
            res = oracles.minimize_path(q_x, tau_bar, self._oracle_eval,
                                        self.p_x, self.t0,
                                        n_control=oracle_control,
                                        x0=np.interp(
                                            np.linspace(0, 1, oracle_control + 2),
                                            np.linspace(0, 1, geo.x.size),
                                            geo.x)[1:-1])
            sample.oracle_ell = res["ell"]
        return sample

    def _h_along(self, geo: LGeodesic) -> np.ndarray:
        """H(X) samples along a shot (integrand of K without tau^{3/2})."""
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = np.maximum(geo.s ** 2, 1e-300)
            s_t = np.array([
                self.itp.time_slice(self.t0 - t).eval("s_t", np.array([xx]))[0]
                for t, xx in zip(tau, geo.x)
            ])
            h = (s_t - geo.s_path / tau - 2.0 * geo.grad_s_dot_x
                 + 2.0 * geo.sic_xx)
        return h

    def _oracle_eval(self, name, x, t):
        """Pointwise (a, S) evaluation for the independent path oracle."""
        t = np.atleast_1d(t)
        x = np.atleast_1d(x)
        out = np.empty_like(x, dtype=float)
        for i in range(x.size):
            sl = self.itp.time_slice(float(t[i] if t.size > 1 else t[0]))
            out[i] = sl.eval(name, np.array([x[i]]))[0]
        return out

    # -- reduced volume -----------------------------------------------------

    def reduced_volume(self, taus) -> ReducedVolumeSeries:
        """Vtilde(tau) by quadrature of (4 pi tau)^{-n/2} e^{-ell} dV.

        Unresolved nodes inherit the nearest resolved ell and bump the
        quadrature error estimate for that tau.
        """
        taus = np.asarray(sorted(taus), dtype=float)
        n_dim = self.grid.n
        vt = np.empty(taus.shape)
        qerr = np.empty(taus.shape)
        unres = np.empty(taus.shape)
        for j, tau in enumerate(taus):
            fld = self.ell_field(float(tau))
            ell = fld.ell.copy()
            bad = fld.status != STATUS_OK
            unres[j] = float(np.mean(bad))
            if np.any(bad):
                goodix = np.flatnonzero(~bad)
                if goodix.size == 0:
                    vt[j], qerr[j] = np.nan, np.nan
                    continue
                badix = np.flatnonzero(bad)
                nearest = goodix[np.argmin(np.abs(badix[:, None] - goodix[None, :]),
                                           axis=1)]
                ell[badix] = ell[nearest]
            state = self.history.state_at(self.t0 - float(tau))
            dens = (4.0 * pi * tau) ** (-0.5 * n_dim) * np.exp(-np.clip(ell, -700, 700))
            val = integrate(state.metric, dens, endpoint_correction=True)
            raw = integrate(state.metric, dens, endpoint_correction=False)
            vt[j] = val
            qerr[j] = abs(val - raw) + (1e3 * np.finfo(float).eps * abs(val))
            if np.any(bad):
                qerr[j] += float(np.mean(bad))
        return ReducedVolumeSeries(taus, vt, qerr, unres)

    # -- Jacobian of the backward exponential map ---------------------------

    def l_jacobian(self, v: float, tau_bar: float, dv: Optional[float] = None):
        """J(v, s) along the shot, normalized so flat static gives (2s)^n.

        Radial factor by centered differencing of the endpoint map over
        the fan direction; fiber factor from the angular-momentum Jacobi
        equation (or the w/|v| spreading rate for a pole base).  Returns
        (s_samples, J(s)); a sign flip in the radial factor marks a
        conjugate point and raises a flag via NaN.
        """
        if dv is None:
            dv = max(1e-4, 1e-4 * abs(v))
        geo = self.shoot(v, tau_bar)
        rec_p = self._integrate(np.array([v + dv]), tau_bar, record=True)[4]
        rec_m = self._integrate(np.array([v - dv]), tau_bar, record=True)[4]
        s_samples = geo.s
        t_samples = self.t0 - s_samples ** 2
        a_end = np.array([
            self.itp.time_slice(t).eval("a", np.array([xx]))[0]
            for t, xx in zip(t_samples, geo.x)
        ])
        j_rad = a_end * (rec_p["x"][:, 0] - rec_m["x"][:, 0]) / (2.0 * dv)

        m = self.grid.fiber_dim
        base_is_pole = (not self.grid.periodic) and (
            abs(self.p_x) < 1e-12 or abs(self.p_x - self.grid.extent) < 1e-12)
        w_path = np.array([
            self.itp.time_slice(t).eval("w", np.array([xx]))[0]
            for t, xx in zip(t_samples, geo.x)
        ])
        if base_is_pole:
            if v == 0.0:
                fib = j_rad.copy()
            else:
                fib = w_path / abs(v)
        else:
            # angular Jacobi: q' = -(2 w_x u / w + 4 s Sic_fib) q, eta' = q
            ns = self.n_steps
            w0 = w_path[0]
            q = 2.0 / w0
            eta = np.zeros(ns + 1)
            qs = np.zeros(ns + 1)
            qs[0] = q
            for i in range(ns):
                def coef(si, xi, ui):
                    sl = self.itp.time_slice(self.t0 - si * si)
                    wv = sl.eval("w", np.array([xi]))[0]
                    wx = sl.eval("w_x", np.array([xi]))[0]
                    sf = sl.eval("sic_fib", np.array([xi]))[0]
                    return -(2.0 * wx * ui / wv + 4.0 * si * sf)

                si, xi, ui = s_samples[i], geo.x[i], geo.u[i]
                ds = s_samples[i + 1] - s_samples[i]
                xm = 0.5 * (geo.x[i] + geo.x[i + 1])
                um = 0.5 * (geo.u[i] + geo.u[i + 1])
                c1 = coef(si, xi, ui)
                c2 = coef(si + 0.5 * ds, xm, um)
                c4 = coef(si + ds, geo.x[i + 1], geo.u[i + 1])
                k1 = c1 * q
                k2 = c2 * (q + 0.5 * ds * k1)
                k3 = c2 * (q + 0.5 * ds * k2)
                k4 = c4 * (q + ds * k3)
                q_new = q + ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                eta[i + 1] = eta[i] + 0.5 * ds * (q + q_new)
                q = q_new
                qs[i + 1] = q
            fib = w_path * eta
        jac = j_rad * fib ** m
        return s_samples, jac

    def monotone_integrand(self, v: float, tau_bar: float):
        """(4 pi tau)^{-n/2} e^{-ell_shot} J(v, tau) along the shot, plus
        its claimed ceiling pi^{-n/2} e^{-|v|^2}."""
        geo = self.shoot(v, tau_bar)
        s_samples, jac = self.l_jacobian(v, tau_bar)
        n_dim = self.grid.n
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = s_samples ** 2
            ell = np.where(s_samples > 0, geo.length / (2.0 * s_samples), v * v)
            vals = (4.0 * pi * tau) ** (-0.5 * n_dim) * np.exp(-ell) * np.abs(jac)
        ceiling = pi ** (-0.5 * n_dim) * np.exp(-v * v)
        return s_samples, vals, ceiling

    # -- tau-form consistency ----------------------------------------------

    def fold_orientation(self, x: float) -> float:
        """+1/-1 according to the parity of pole reflections taking the
        unfolded coordinate x back into the chart (odd fields flip)."""
        if self.grid.periodic:
            return 1.0
        period = 2.0 * self.grid.extent
        y = x % period
        return -1.0 if y > self.grid.extent else 1.0

    def reintegrate_tau_form(self, geo: LGeodesic, s_from: float):
        """Integrate the tau-form equation from the shot's state at s_from.

        Returns the endpoint coordinate at taubar; used by the
        parametrization-consistency check.
        """
        s_samples = geo.s
        i0 = int(np.argmin(np.abs(s_samples - s_from)))
        if s_samples[i0] <= 0:
            i0 = 1
        tau = s_samples[i0] ** 2
        tau_bar = s_samples[-1] ** 2
        x = float(geo.x[i0])
        big_u = float(geo.u[i0] / (2.0 * s_samples[i0]))
        nsteps = 4 * self.n_steps
        dtau = (tau_bar - tau) / nsteps

        def rhs(tau_c, xc, uc):
            sl = self.itp.time_slice(self.t0 - tau_c)
            xa = np.array([xc])
            a = sl.eval("a", xa)[0]
            gam = sl.eval("loga_x", xa)[0]
            s_x = sl.eval("s_x", xa)[0]
            sic = sl.eval("sic_rad", xa)[0]
            du = (-gam * uc * uc + s_x / (2.0 * a * a) - uc / (2.0 * tau_c)
                  - 2.0 * sic * uc)
            return uc, du

        for _ in range(nsteps):
            k1 = rhs(tau, x, big_u)
            k2 = rhs(tau + 0.5 * dtau, x + 0.5 * dtau * k1[0], big_u + 0.5 * dtau * k1[1])
            k3 = rhs(tau + 0.5 * dtau, x + 0.5 * dtau * k2[0], big_u + 0.5 * dtau * k2[1])
            k4 = rhs(tau + dtau, x + dtau * k3[0], big_u + dtau * k3[1])
            x += dtau / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            big_u += dtau / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            tau += dtau
        return x


# ---------------------------------------------------------------------------
# free functions per the module surface


def l_length(s_grid, x_nodes, history, p_x, t0):
    """Backward length of an explicit discretized curve (s-parametrized)."""
    solver_itp = get_interpolator(history)

    def field_eval(name, x, t):
        x = np.atleast_1d(x)
        t = np.atleast_1d(t)
        out = np.empty(x.shape)
        for i in range(x.size):
            sl = solver_itp.time_slice(float(t[i] if t.size > 1 else t[0]))
            out[i] = sl.eval(name, np.array([x[i]]))[0]
        return out

    if abs(x_nodes[0] - p_x) > 1e-9:
        raise DomainError("path must start at the base point")
    return oracles.path_energy(np.asarray(x_nodes, dtype=float),
                               np.asarray(s_grid, dtype=float),
                               field_eval, t0)


def reduced_distance(history, p: int, t0: float, q: int, tau_bar: float,
                     oracle: bool = False, **solver_kw) -> ReducedDistanceSample:
    solver = LGeodesicSolver(history, history.grid.x[p], t0, **solver_kw)
    return solver.sample(q, tau_bar, oracle=oracle)


def derivative_identity_check(solver: LGeodesicSolver, q: int, tau_bar: float,
                              rel_dtau: float = 0.02):
    """Residuals of the three first-derivative identities at (q, taubar).

    Skipped (returns None) when the node fails the kink filter at taubar.
    """
    fld_mid = solver.ell_field(tau_bar)
    if fld_mid.status[q] != STATUS_OK:
        return None
    if not smooth_mask(solver, tau_bar)[q]:
        return None
    dt = rel_dtau * tau_bar
    fld_lo = solver.ell_field(tau_bar - dt)
    fld_hi = solver.ell_field(tau_bar + dt)
    if fld_lo.status[q] != STATUS_OK or fld_hi.status[q] != STATUS_OK:
        return None
    sample = solver.sample(q, tau_bar)
    geo = sample.geodesic
    st = solver.history.state_at(solver.t0 - tau_bar)
    metric = st.metric
    curv = curvature(metric, st.phi)
    s_q = float(curv.s[q])
    l_q = sample.l_value
    k_q = sample.k_value
    rt = sqrt(tau_bar)

    l_tau_num = (fld_hi.l_value[q] - fld_lo.l_value[q]) / (2.0 * dt)
    r1 = l_tau_num - (2.0 * rt * s_q - l_q / (2.0 * tau_bar) + k_q / tau_bar)

    l_x = dx1(fld_mid.l_value, solver.grid, EVEN)[q]
    grad_l = l_x / metric.a[q]
    r2 = grad_l ** 2 - (-4.0 * tau_bar * s_q + 2.0 / rt * l_q - 4.0 / rt * k_q)

    orient = solver.fold_orientation(float(geo.x[-1]))
    x_s_end = orient * metric.a[q] * geo.u[-1] / (2.0 * rt)
    r3 = grad_l - 2.0 * rt * x_s_end

    return {"l_tau": float(r1), "grad_l_sq": float(r2), "grad_ell_vs_x": float(r3)}


def smooth_mask(solver: LGeodesicSolver, tau_bar: float,
                rel_change: float = 0.5) -> np.ndarray:
    """Kink filter: a node is smooth when the centered second difference
    of ell agrees between the h and 2h stencils to within rel_change."""
    fld = solver.ell_field(tau_bar)
    ell = fld.ell
    g = solver.grid
    ok = fld.status == STATUS_OK
    # direct second differences at spacing h and 2h
    e = np.where(np.isfinite(ell), ell, 0.0)
    if g.periodic:
        em1, ep1 = np.roll(e, 1), np.roll(e, -1)
        em2, ep2 = np.roll(e, 2), np.roll(e, -2)
    else:
        pad = np.concatenate((e[2:0:-1], e, e[-3:-1][::-1]))
        em1, ep1 = pad[1:-3], pad[3:-1]
        em2, ep2 = pad[0:-4], pad[4:]
    h = g.spacing
    d2_h = (ep1 - 2 * e + em1) / h ** 2
    d2_2h = (ep2 - 2 * e + em2) / (2 * h) ** 2
    floor = 1e-8 + 1e-3 * np.nanmax(np.abs(d2_h))
    scale = np.maximum(np.maximum(np.abs(d2_h), np.abs(d2_2h)), floor)
    mask = np.abs(d2_h - d2_2h) < rel_change * scale
    mask &= ok
    if not g.periodic:
        mask[0] = mask[-1] = False
    return mask


def inequality_check(solver: LGeodesicSolver, tau_bar: float,
                     rel_dtau: float = 0.02):
    """Pointwise margins of the ell differential inequalities at taubar.

    Returns dict with per-node margins (masked to kink-free nodes) of
      ell_tau - lap ell + |grad ell|^2 - S + n/(2 tau) >= 0,
      2n - (Lbar_tau + lap Lbar) >= 0   (Lbar = 4 tau ell),
    and the scalar min ell (to compare against n/2).
    """
    g = solver.grid
    n_dim = g.n
    dt = rel_dtau * tau_bar
    f0 = solver.ell_field(tau_bar)
    f_lo = solver.ell_field(tau_bar - dt)
    f_hi = solver.ell_field(tau_bar + dt)
    st = solver.history.state_at(solver.t0 - tau_bar)
    metric = st.metric
    curv = curvature(metric, st.phi)

    ell = f0.ell
    ell_tau = (f_hi.ell - f_lo.ell) / (2.0 * dt)
    lap = laplacian_values(metric, np.where(np.isfinite(ell), ell, 0.0))
    grad = dx1(np.where(np.isfinite(ell), ell, 0.0), g, EVEN) / metric.a
    margin_ell = ell_tau - lap + grad * grad - curv.s + n_dim / (2.0 * tau_bar)

    lbar_tau = 4.0 * ell + 4.0 * tau_bar * ell_tau
    lap_lbar = 4.0 * tau_bar * lap
    margin_lbar = 2.0 * n_dim - (lbar_tau + lap_lbar)

    mask = smooth_mask(solver, tau_bar)
    mask &= np.isfinite(ell_tau) & np.isfinite(ell)
    return {
        "mask": mask,
        "ell_inequality": margin_ell,
        "lbar_inequality": margin_lbar,
        "min_ell": float(np.nanmin(np.where(f0.status == STATUS_OK, ell, np.nan))),
        "n_half": 0.5 * n_dim,
    }


def lemma_estimate_monitor(solver: LGeodesicSolver, tau_bars, nodes=None):
    """Smallest constant C making the distance-comparison bounds hold.

    Bounds (per sampled (q, taubar), d = d(p, q) at time t0 - taubar):
      C^-1 d^2/taubar - C <= ell <= C d^2/taubar + C
      |grad ell| <= (C/taubar)(d^2/taubar + 1)
      |d ell/d tau| <= (C/taubar)(d^2/taubar + 1)
    """
    from .geometry import distance_profile

    g = solver.grid
    if nodes is None:
        nodes = range(0, g.node_count, max(1, g.node_count // 64))
    c_needed = 0.0
    for tau_bar in tau_bars:
        f0 = solver.ell_field(tau_bar)
        dt = 0.02 * tau_bar
        f_hi = solver.ell_field(tau_bar + dt)
        f_lo = solver.ell_field(tau_bar - dt)
        st = solver.history.state_at(solver.t0 - tau_bar)
        d = distance_profile(st.metric, int(np.argmin(np.abs(g.x - solver.p_x))))
        grad = dx1(np.where(np.isfinite(f0.ell), f0.ell, 0.0), g, EVEN) / st.metric.a
        ell_tau = (f_hi.ell - f_lo.ell) / (2.0 * dt)
        for q in nodes:
            if f0.status[q] != STATUS_OK:
                continue
            ell = f0.ell[q]
            ratio = d[q] ** 2 / tau_bar
            c_needed = max(c_needed, ell / (ratio + 1.0))
            c_needed = max(c_needed, 0.5 * (-ell + sqrt(ell * ell + 4.0 * ratio)))
            c_needed = max(c_needed, abs(grad[q]) * tau_bar / (ratio + 1.0))
            c_needed = max(c_needed, abs(ell_tau[q]) * tau_bar / (ratio + 1.0))
    return float(c_needed)
