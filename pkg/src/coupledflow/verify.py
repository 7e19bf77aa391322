"""Property harness: evolution residuals, noncollapse, point selection,
pseudo-locality experiments, soliton identities, and blow-up analysis.

Every check produces a VerificationReport carrying a pass/fail/monitor
status, a dimensionless margin, and, where the check is a refinement
statement, the raw values at both resolutions.  The anchor field records
the formula or statement being checked, e.g. the trace evolution equation

    dS/dt = Lap S + 2 |Sic|^2 + 2 (Lap phi)^2,

the noncollapse ratio vol(B(x, r))/r^n under the curvature premise
|Rm| < r^-2 on the parabolic neighborhood, the locality conclusion
|Rm| <= alpha/t + (eps r0)^-2 near an almost-Euclidean ball, and the
gradient-soliton system

    Sic + Hess f - g/(2(T-t)) = 0,      Lap phi - <grad f, grad phi> = 0,

with its scalar consequences S + |grad f|^2 - f = const,
Lap S = <grad f, grad S> + S - 2|Sic|^2 - 2(Lap phi)^2, S >= 0 and
|grad sqrt(f)| <= 1/2 (Gaussian-saturated bound).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt
from typing import Optional

import numpy as np

from .errors import CoupledFlowError, DomainError
from .flow import FlowHistory, detect_blowup, type_one_diagnostic
from .geometry import (
    EVEN,
    ODD,
    ScalarField,
    WarpedMetric,
    ball_geometry,
    curvature,
    distance_profile,
    dx1,
    integrate,
    isoperimetric_deficit,
    laplacian_direct,
    laplacian_values,
)

PASS, FAIL, MONITOR = "pass", "fail", "monitor"


@dataclass
class VerificationReport:
    check_id: str
    anchor: str
    status: str
    margin: float
    resolutions: dict = field(default_factory=dict)
    notes: str = ""
    offending: Optional[tuple] = None   # (node, time) for failures

    def as_dict(self):
        return {
            "id": self.check_id, "anchor": self.anchor, "status": self.status,
            "margin": self.margin, "resolutions": self.resolutions,
            "notes": self.notes,
            "offending": list(self.offending) if self.offending else None,
        }


@dataclass
class SolitonCandidate:
    metric: WarpedMetric
    phi: ScalarField
    potential: ScalarField
    time_scale: float          # T - t > 0

    def __post_init__(self):
        if self.time_scale <= 0:
            raise DomainError("soliton time scale must be positive")


# ---------------------------------------------------------------------------
# evolution residual


def _s_residual_max(history: FlowHistory, k: Optional[int] = None,
                    mask_poles: int = 2):
    """max-norm residual of the trace evolution identity at save index k."""
    if len(history) < 3:
        raise CoupledFlowError("need at least three saved states")
    if k is None:
        k = len(history) // 2
    k = int(np.clip(k, 1, len(history) - 2))
    st_lo, st_mid, st_hi = (history.state(k - 1), history.state(k),
                            history.state(k + 1))
    curv_lo = curvature(st_lo.metric, st_lo.phi)
    curv_mid = curvature(st_mid.metric, st_mid.phi)
    curv_hi = curvature(st_hi.metric, st_hi.phi)
    ds_dt = (curv_hi.s - curv_lo.s) / (st_hi.t - st_lo.t)
    m = history.grid.fiber_dim
    sic_sq = curv_mid.sic_rad ** 2 + m * curv_mid.sic_fib ** 2
    lap_phi = laplacian_values(st_mid.metric, np.asarray(st_mid.phi.values))
    rhs = laplacian_values(st_mid.metric, curv_mid.s) + 2.0 * sic_sq \
        + 2.0 * lap_phi ** 2
    res = ds_dt - rhs
    sl = slice(None)
    if not history.grid.periodic and mask_poles:
        sl = slice(mask_poles, -mask_poles)
    scale = float(np.max(np.abs(rhs[sl]))) + float(np.max(np.abs(ds_dt[sl]))) + 1e-300
    return float(np.max(np.abs(res[sl]))), scale


def s_evolution_residual(history: FlowHistory,
                         history_fine: Optional[FlowHistory] = None,
                         check_id: str = "s-evolution") -> VerificationReport:
    anchor = "dS/dt = Lap S + 2|Sic|^2 + 2(Lap phi)^2"
    res, scale = _s_residual_max(history)
    resolutions = {f"N={history.grid.node_count}": res}
    if history_fine is None:
        return VerificationReport(check_id, anchor, MONITOR, res / scale,
                                  resolutions,
                                  notes="single resolution; monitoring only")
    res_f, scale_f = _s_residual_max(history_fine)
    resolutions[f"N={history_fine.grid.node_count}"] = res_f
    ratio = res / max(res_f, 1e-300)
    ok = ratio >= 1.8 ** 2 * 0.5 and res_f <= 1e-2 * scale_f
    # ratio >= 1.8 per halving in the spec's order metric: rate >= log2(ratio)/1
    rate = np.log2(max(ratio, 1e-300)) / np.log2(
        history_fine.grid.node_count / history.grid.node_count)
    ok = rate >= 1.8 and res_f <= 1e-2 * scale_f
    return VerificationReport(
        check_id, anchor, PASS if ok else FAIL,
        float(rate), resolutions,
        notes=f"order {rate:.2f}; fine residual {res_f:.3e} vs scale {scale_f:.3e}")


# ---------------------------------------------------------------------------
# kappa-noncollapse


def _rm_matrix(history: FlowHistory, stride: int = 1):
    idx = range(0, len(history), stride)
    rows = []
    for k in idx:
        st = history.state(k)
        rows.append(curvature(st.metric, st.phi).rm_norm)
    return np.array(list(idx)), np.array(rows)


def kappa_check(history: FlowHistory, scales, centers=None,
                time_stride: int = 8, check_id: str = "kappa-noncollapse"
                ) -> VerificationReport:
    """kappa_measured = min vol(B)/r^n over lattice triples satisfying the
    curvature premise on the parabolic neighborhood."""
    anchor = "|Rm| < r^-2 on B(x,r) x [t-r^2, t]  =>  vol(B_t(x, r)) >= kappa r^n"
    grid = history.grid
    if centers is None:
        centers = range(0, grid.node_count, max(1, grid.node_count // 8))
    kidx, rm = _rm_matrix(history, time_stride)
    times = history.times[kidx]
    n = grid.n
    kappa = np.inf
    tried = 0
    for kk, t0 in enumerate(times):
        st = history.state_at(t0)
        for c in centers:
            d = distance_profile(st.metric, c)
            for r in scales:
                if t0 - history.t_first < r * r:
                    continue
                window = (times >= t0 - r * r) & (times <= t0 + 1e-15)
                ball = d <= r
                if not np.any(ball) or not np.any(window):
                    continue
                if float(np.max(rm[window][:, ball])) >= 1.0 / (r * r):
                    continue
                vol, _ = ball_geometry(st.metric, c, float(r))
                kappa = min(kappa, vol / r ** n)
                tried += 1
    if not np.isfinite(kappa):
        return VerificationReport(check_id, anchor, MONITOR, np.nan,
                                  notes="no lattice triple met the premise")
    return VerificationReport(check_id, anchor, PASS, float(kappa),
                              {"triples": tried},
                              notes=f"kappa_measured = {kappa:.6g}")


# ---------------------------------------------------------------------------
# point selection


def select_from_lattice(rm, dists, times, alpha, eps, a_param):
    """Point selection on a (time, node) lattice.

    rm[k, i] = |Rm|, dists[k, i] = d_{g(t_k)}(x_i, p).  Returns dict with
    the selected point and exhaustive verification flags, or None when the
    hypothesis set is empty.
    """
    rm = np.asarray(rm)
    dists = np.asarray(dists)
    times = np.asarray(times)
    positive = times > 0
    m_alpha = positive[:, None] & (times[:, None] <= eps ** 2) \
        & (rm > alpha / np.maximum(times, 1e-300)[:, None])
    hyp = m_alpha & (rm >= alpha / np.maximum(times, 1e-300)[:, None] + eps ** -2) \
        & (dists <= eps)
    if not np.any(hyp):
        return None
    k0, i0 = map(int, np.argwhere(hyp)[np.argmax(rm[hyp])])

    k, i = k0, i0
    for _ in range(200):
        q = rm[k, i]
        reach = dists[k, i] + a_param / sqrt(q)
        cond = m_alpha & (times[:, None] <= times[k]) & (dists <= reach)
        viol = cond & (rm > 4.0 * q)
        if not np.any(viol):
            break
        k, i = map(int, np.argwhere(viol)[np.argmax(rm[viol])])
    else:
        return None

    q = rm[k, i]
    reach = dists[k, i] + a_param / sqrt(q)
    cond = m_alpha & (times[:, None] <= times[k]) & (dists <= reach)
    verified_first = bool(np.all(rm[cond] <= 4.0 * q + 1e-12))
    # parabolic neighborhood of the second lemma
    nbhd = (dists <= 0.1 * a_param / sqrt(q)) \
        & (times[:, None] >= times[k] - 0.5 * alpha / q) \
        & (times[:, None] <= times[k])
    verified_nbhd = bool(np.all(rm[nbhd] <= 4.0 * q + 1e-12))
    return {
        "k": k, "i": i, "t": float(times[k]), "q": float(q),
        "d": float(dists[k, i]),
        "dist_bound": float((1.0 + 2.0 * a_param) * eps),
        "within_dist_bound": bool(dists[k, i] <= (1.0 + 2.0 * a_param) * eps),
        "verified_growth_bound": verified_first,
        "verified_neighborhood": verified_nbhd,
    }


def point_select(history: FlowHistory, alpha: float, eps: float,
                 a_param: float = 2.0, p: int = 0, time_stride: int = 4,
                 check_id: str = "point-selection"):
    """Curvature point selection with exhaustive lattice verification."""
    kidx, rm = _rm_matrix(history, time_stride)
    times = history.times[kidx] - history.t_first
    dists = np.empty_like(rm)
    for row, k in enumerate(kidx):
        dists[row] = distance_profile(history.state(int(k)).metric, p)
    sel = select_from_lattice(rm, dists, times, alpha, eps, a_param)
    anchor = ("|Rm|(x,t) <= 4|Rm|(xb,tb) on M_alpha below tb within "
              "d(xb) + A |Rm|(xb,tb)^-1/2, and on the parabolic neighborhood")
    if sel is None:
        return VerificationReport(check_id, anchor, MONITOR, np.nan,
                                  notes="hypothesis set empty"), None
    ok = sel["verified_growth_bound"] and sel["verified_neighborhood"] \
        and sel["within_dist_bound"]
    rep = VerificationReport(check_id, anchor, PASS if ok else FAIL,
                             sel["q"],
                             {"lattice": list(rm.shape)},
                             notes=f"selected t={sel['t']:.4g} Q={sel['q']:.4g}")
    return rep, sel


# ---------------------------------------------------------------------------
# pseudo-locality experiment


def pseudolocality_experiment(history: FlowHistory, alpha: float, eps: float,
                              r0: float, p: int = 0, eps_grid: int = 12,
                              check_id: str = "pseudo-locality"
                              ) -> VerificationReport:
    """Hypothesis margins at t = 0 plus the largest eps' <= eps whose
    locality conclusion holds on the saved lattice.

    Hypothesis (1) is applied in the scale-consistent reading
    S(g(0)) >= -1/r0^2; the verbatim form (-r0^2) is quoted in the notes.
    """
    anchor = ("S(0) >= -r0^-2, near-Euclidean isoperimetry and |phi_0| <= C "
              "on B(p, r0)  =>  |Rm| <= alpha/t + (eps r0)^-2 near p")
    st0 = history.state(0)
    d0 = distance_profile(st0.metric, p)
    ball0 = d0 <= r0
    curv0 = curvature(st0.metric, st0.phi)
    s_margin = float(np.min(curv0.s[ball0]) + 1.0 / r0 ** 2)
    delta_measured = max(isoperimetric_deficit(st0.metric, p, r0), 0.0)
    c_measured = float(np.max(np.abs(np.asarray(st0.phi.values)[ball0])))

    kidx, rm = _rm_matrix(history, max(1, len(history) // 200))
    times = history.times[kidx] - history.t_first
    dists = np.empty_like(rm)
    for row, k in enumerate(kidx):
        dists[row] = distance_profile(history.state(int(k)).metric, p)

    def conclusion_holds(eps_try):
        sel_t = (times > 0) & (times <= (eps_try * r0) ** 2)
        if not np.any(sel_t):
            return True
        bound = alpha / times[sel_t][:, None] + (eps_try * r0) ** -2
        region = dists[sel_t] <= eps_try * r0
        vals = rm[sel_t]
        return bool(np.all(np.where(region, vals <= bound, True)))

    eps_ok = 0.0
    for eps_try in np.linspace(eps / eps_grid, eps, eps_grid):
        if conclusion_holds(float(eps_try)):
            eps_ok = float(eps_try)
        else:
            break
    hypotheses_ok = s_margin >= 0 and c_measured < np.inf
    status = PASS if (hypotheses_ok and abs(eps_ok - eps) < 1e-12) else FAIL
    return VerificationReport(
        check_id, anchor, status, eps_ok / eps,
        {"s_margin": s_margin, "delta_measured": delta_measured,
         "sup_phi0": c_measured, "eps_ok": eps_ok},
        notes=("scale-consistent hypothesis S >= -r0^-2 (verbatim source "
               f"states -r0^2); delta measured over radial balls = "
               f"{delta_measured:.4g}"))


# ---------------------------------------------------------------------------
# soliton identities


def soliton_residuals(candidate: SolitonCandidate, order: int = 4,
                      region: Optional[np.ndarray] = None,
                      check_id: str = "soliton-residuals"):
    """Residuals of the normalized gradient-soliton system.

    The candidate is rescaled to unit time scale (ghat = g / time_scale),
    in which the system reads Sic + Hess f = ghat/2, Lap phi = <grad f,
    grad phi>, with consequences S + |grad f|^2 - f = const,
    Lap S = <grad f, grad S> + S - 2|Sic|^2 - 2(Lap phi)^2, S >= 0 and
    |grad sqrt f| <= 1/2.  Reported dict carries all margins; min S is in
    the original (unrescaled) metric for direct reading.  Defaults to
    5-point stencils: the pinned 1e-6 tolerance sits below the 3-point
    truncation floor h^2/24 on 512-node shrinkers.
    """
    metric = candidate.metric
    g = metric.grid
    m = g.fiber_dim
    lam = candidate.time_scale
    ghat = WarpedMetric(g, metric.a / sqrt(lam), metric.w / sqrt(lam))
    fvals = np.asarray(candidate.potential.values, dtype=float)
    phiv = np.asarray(candidate.phi.values, dtype=float)

    curv = curvature(ghat, ScalarField(phiv, "phi"), order=order)

    f_s = dx1(fvals, g, EVEN, order) / ghat.a
    hess_rad = dx1(f_s, g, ODD, order) / ghat.a
    w_s = dx1(ghat.w, g, ODD, order) / ghat.a
    with np.errstate(divide="ignore", invalid="ignore"):
        hess_fib = np.where(ghat.w > 0, w_s * f_s / np.where(ghat.w > 0, ghat.w, 1.0), 0.0)
    if not g.periodic:
        hess_fib[0], hess_fib[-1] = hess_rad[0], hess_rad[-1]
    res_rad = curv.sic_rad + hess_rad - 0.5
    res_fib = curv.sic_fib + hess_fib - 0.5
    grad_f = f_s
    grad_phi = dx1(phiv, g, EVEN, order) / ghat.a
    lap_phi = laplacian_direct(ghat, phiv, order)
    res_phi = lap_phi - grad_f * grad_phi

    first_integral = curv.s + grad_f ** 2 - fvals

    lap_s = laplacian_direct(ghat, curv.s, order)
    grad_s = dx1(curv.s, g, EVEN, order) / ghat.a
    sic_sq = curv.sic_rad ** 2 + m * curv.sic_fib ** 2
    res_eqn10 = lap_s - (grad_f * grad_s + curv.s - 2.0 * sic_sq
                         - 2.0 * lap_phi ** 2)

    curv_orig = curvature(metric, ScalarField(phiv, "phi"), order=order)
    min_s = float(np.min(curv_orig.s))

    keep = np.ones(g.node_count, dtype=bool)
    keep2 = np.ones(g.node_count, dtype=bool)
    if not g.periodic:
        keep[:4] = keep[-4:] = False    # stencil reach of the pole values
        keep2[:8] = keep2[-8:] = False  # doubled for curvature-of-curvature
    if region is not None:
        keep &= np.asarray(region, dtype=bool)
        keep2 &= np.asarray(region, dtype=bool)
    if not np.any(keep) or not np.any(keep2):
        raise DomainError("soliton residual region is empty")

    with np.errstate(divide="ignore", invalid="ignore"):
        sqrt_f = np.sqrt(np.maximum(fvals, 0.0))
        grad_sqrt_f = np.where((fvals > 1e-12) & keep,
                               np.abs(grad_f) / (2.0 * sqrt_f), np.nan)
    sup_grad_sqrt_f = float(np.nanmax(grad_sqrt_f)) \
        if np.any((fvals > 1e-12) & keep) else np.nan

    def fi_disp():
        vals = first_integral[keep]
        return float(np.max(vals) - np.min(vals))

    return {
        "soliton_rad": float(np.max(np.abs(res_rad[keep]))),
        "soliton_fib": float(np.max(np.abs(res_fib[keep]))),
        "scalar_coupling": float(np.max(np.abs(res_phi[keep]))),
        "first_integral_dispersion": fi_disp(),
        "eqn_s_residual": float(np.max(np.abs(res_eqn10[keep2]))),
        "min_s": float(np.min(curv_orig.s[keep])),
        "sup_grad_sqrt_f": sup_grad_sqrt_f,
    }


def soliton_report(candidate: SolitonCandidate, tol: float = 1e-6,
                   check_id: str = "soliton-residuals") -> VerificationReport:
    anchor = ("Sic + Hess f - g/(2(T-t)) = 0; Lap phi = <grad f, grad phi>; "
              "S + |grad f|^2 - f = const; S >= 0")
    out = soliton_residuals(candidate, check_id)
    worst = max(out["soliton_rad"], out["soliton_fib"],
                out["scalar_coupling"], out["first_integral_dispersion"],
                out["eqn_s_residual"])
    ok = worst <= tol and out["min_s"] >= -tol
    return VerificationReport(check_id, anchor, PASS if ok else FAIL, worst,
                              out, notes=f"min S = {out['min_s']:.3g}")


# ---------------------------------------------------------------------------
# blow-up analysis


def blowup_analysis(history: FlowHistory, lambdas, p: int = 0,
                    solver_kw: Optional[dict] = None,
                    check_id: str = "blowup-analysis"):
    """Per-lambda rescaled diagnostics at t' = -1.

    For each lambda the state at t = T - 1/lambda is tested as a soliton
    with the reduced distance (base (p, T_base)) as potential, in the
    rescaled metric lambda g; the scalar-gradient bound margin
    C^2/(t' + lambda T) - sup|grad phi|^2 and the rescaled curvature at
    the singular nodes are reported alongside.
    """
    from .lgeodesic import LGeodesicSolver, smooth_mask

    if history.t_est is None:
        if detect_blowup(history) is None:
            return VerificationReport(check_id, "Type I rescaling", MONITOR,
                                      np.nan, notes="run is not singular"), None
    t_est, singular = detect_blowup(history)
    c0 = type_one_diagnostic(history)
    t_base = history.t_last
    grid = history.grid
    c_phi = float(np.max(np.abs(history.phi[0])))
    solver = LGeodesicSolver(history, grid.x[p], t_base,
                             **(solver_kw or {}))
    rows = []
    for lam in lambdas:
        t_eval = t_est - 1.0 / lam
        if t_eval <= history.t_first or t_eval >= t_base:
            rows.append({"lam": lam, "status": "out-of-window"})
            continue
        tau_bar = t_base - t_eval
        fld = solver.ell_field(tau_bar)
        st = history.state_at(t_eval)
        curv = curvature(st.metric, st.phi)
        from .conjheat import hessian_components

        ell = np.where(np.isfinite(fld.ell), fld.ell, 0.0)
        hess_rad, hess_fib = hessian_components(st.metric, ell)
        scale = 1.0 / (2.0 * (t_est - t_eval))
        res_rad = (curv.sic_rad + hess_rad - scale) / lam
        res_fib = (curv.sic_fib + hess_fib - scale) / lam
        grad_f = dx1(ell, grid, EVEN) / st.metric.a
        grad_phi = dx1(np.asarray(st.phi.values), grid, EVEN) / st.metric.a
        res_phi = (laplacian_values(st.metric, np.asarray(st.phi.values))
                   - grad_f * grad_phi) / lam
        mask = smooth_mask(solver, tau_bar)
        if not grid.periodic:
            mask[:2] = mask[-2:] = False
        # the proxy reduced distance has its cut locus at the far pole,
        # where the 1/w fiber Hessian is only a barrier-sense object;
        # evaluate the fiber component away from the degenerate orbits
        fib_mask = mask & (st.metric.w >= 0.2 * float(np.max(st.metric.w)))
        resid = float(np.sqrt(
            np.max(res_rad[mask] ** 2 + res_phi[mask] ** 2)
            + grid.fiber_dim * np.max(res_fib[fib_mask] ** 2)))
        grad_margin = (c_phi ** 2 / (lam * t_est - 1.0)
                       - float(np.max(curv.grad_phi2)) / lam) if c_phi > 0 else 0.0
        rm_rescaled = float(np.max(curv.rm_norm[singular]) / lam) \
            if np.any(singular) else np.nan
        rows.append({"lam": lam, "soliton_residual": resid,
                     "grad_bound_margin": grad_margin,
                     "rescaled_rm_singular": rm_rescaled, "status": "ok"})
    anchor = ("rescaled flows g_i(t) = lam_i g(T + t/lam_i) approach a "
              "gradient soliton with potential the reduced distance; "
              "sup|grad phi_i|^2 <= C^2/(t + lam_i T)")
    good = [r for r in rows if r.get("status") == "ok"]
    residuals = [r["soliton_residual"] for r in good]
    nonincreasing = all(residuals[i + 1] <= residuals[i] + 1e-12
                        for i in range(len(residuals) - 1))
    margins_ok = all(r["grad_bound_margin"] >= -1e-12 for r in good)
    status = PASS if (good and nonincreasing and margins_ok) else FAIL
    rep = VerificationReport(check_id, anchor, status,
                             residuals[-1] if residuals else np.nan,
                             {f"lam={r['lam']}": r for r in rows},
                             notes=f"C0 = {c0:.4g}, T_est = {t_est:.6g}")
    return rep, rows


def reduced_volume_limit(history: FlowHistory, base_times, eval_times,
                         p: int = 0, solver_kw: Optional[dict] = None,
                         check_id: str = "reduced-volume-limit"):
    """Table of V_{T_i}(t) for base times T_i increasing toward the
    singular time; checks V <= 1 + tol and monotonicity in t."""
    from .lgeodesic import LGeodesicSolver

    anchor = "V_Ti(t) = (4 pi (Ti - t))^{-n/2} int e^{-ell} dV <= 1, nondecreasing in t"
    table = {}
    for t_base in base_times:
        solver = LGeodesicSolver(history, history.grid.x[p], t_base,
                                 **(solver_kw or {}))
        taus = [t_base - t for t in eval_times if t < t_base - 1e-9]
        series = solver.reduced_volume(taus)
        table[t_base] = {
            "t": [t_base - tau for tau in series.tau][::-1],
            "V": list(series.vtilde[::-1]),
        }
    vmax = max(max(col["V"]) for col in table.values())
    mono_margin = min(
        min(np.diff(col["V"])) if len(col["V"]) > 1 else 0.0
        for col in table.values())
    ok = vmax <= 1.0 + 1e-3 and mono_margin >= -1e-6
    rep = VerificationReport(check_id, anchor, PASS if ok else FAIL,
                             float(vmax),
                             {str(k): v for k, v in table.items()},
                             notes=f"max V = {vmax:.6f}, monotone margin "
                                   f"{mono_margin:.2e}")
    return rep, table
