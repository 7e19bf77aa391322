"""Harness checks: evolution residual, noncollapse, point selection,
pseudo-locality, solitons, blow-up and reduced-volume limits."""

from math import cos, pi

import numpy as np
import pytest

from coupledflow import families, flow, geometry, verify
from coupledflow.geometry import ScalarField
from coupledflow.verify import FAIL, MONITOR, PASS, SolitonCandidate


def test_s_evolution_flat_static(flat_static_256):
    rep = verify.s_evolution_residual(flat_static_256)
    assert rep.status == MONITOR
    assert rep.margin == 0.0


def test_s_evolution_sphere_closed_form(sphere_hist_512):
    # dS/dt = 1/(T-t)^2 = 2|Sic|^2 with S = 1/(T-t); residual < 1e-3 of scale
    res, scale = verify._s_residual_max(sphere_hist_512, k=len(sphere_hist_512) // 3)
    assert res / scale < 1e-3


def test_s_evolution_coupled_order(coupled_flat_pair):
    coarse, fine = coupled_flat_pair
    rep = verify.s_evolution_residual(coarse, fine)
    assert rep.status == PASS
    assert rep.margin >= 1.8  # measured order in h


def test_kappa_flat_torus_tube(flat_static_256):
    # radial balls on the torus are tubes: vol/r^2 = 4 pi w / r, so the
    # measured kappa at scale rho is 4 pi / rho (orbit-family reading)
    rep = verify.kappa_check(flat_static_256, scales=[0.5], time_stride=1)
    assert rep.status == PASS
    assert rep.margin == pytest.approx(4.0 * pi / 0.5, rel=1e-3)


def test_kappa_sphere_cap_value(sphere_hist_256):
    # pole cap at r=1 on the unit sphere: vol/r^2 = 2 pi (1 - cos 1)
    rep = verify.kappa_check(sphere_hist_256, scales=[1.0], centers=[0],
                             time_stride=10_000)
    if rep.status == MONITOR:
        pytest.skip("premise window not covered")
    assert rep.margin <= 2.0 * pi * (1.0 - cos(1.0)) * 1.01


def test_kappa_scale_invariance_late_time(sphere_hist_256):
    # vol(B_t(x, r))/r^n at r = injectivity-scaled radius is t-independent
    hist = sphere_hist_256
    vals = []
    for t in (0.1, 0.3, 0.42):
        st = hist.state_at(t)
        scale = np.sqrt(1.0 - 2.0 * t)
        vol, _ = geometry.ball_geometry(st.metric, 0, 1.0 * scale)
        vals.append(vol / scale ** 2)
    assert np.max(vals) - np.min(vals) < 1e-2 * vals[0]


# ---------------------------------------------------------------------------
# point selection


def test_point_select_flat_none(flat_static_256):
    rep, sel = verify.point_select(flat_static_256, alpha=1.0 / 400, eps=0.5)
    assert rep.status == MONITOR
    assert sel is None


def test_point_select_synthetic_spike():
    times = np.linspace(1e-3, 0.04, 40)
    nodes = 64
    rm = np.ones((40, nodes)) * 0.1
    dists = np.tile(np.linspace(0.0, 0.3, nodes), (40, 1))
    rm[30, 10] = 500.0     # an isolated spike inside the hypothesis window
    sel = verify.select_from_lattice(rm, dists, times, alpha=1.0 / 400,
                                     eps=0.2, a_param=2.0)
    assert sel is not None
    assert sel["k"] == 30 and sel["i"] == 10
    assert sel["verified_growth_bound"]
    assert sel["verified_neighborhood"]


def test_point_select_sphere_too_local_is_empty(sphere_hist_256):
    # at eps = 0.35 the sphere never violates locality before eps^2:
    # the hypothesis set must come back empty
    rep, sel = verify.point_select(sphere_hist_256, alpha=1.0 / 400,
                                   eps=0.35, a_param=2.0)
    assert rep.status == MONITOR
    assert sel is None


def test_point_select_sphere_verified(sphere_hist_256):
    # eps^2 beyond the blow-up time admits hypothesis points near T
    rep, sel = verify.point_select(sphere_hist_256, alpha=1.0 / 400,
                                   eps=0.68, a_param=2.0)
    assert sel is not None
    assert rep.status == PASS
    assert sel["verified_growth_bound"] and sel["verified_neighborhood"]


# ---------------------------------------------------------------------------
# pseudo-locality


def test_pseudolocality_flat(flat_static_256):
    rep = verify.pseudolocality_experiment(flat_static_256, alpha=1.0 / 400,
                                           eps=0.5, r0=1.0)
    assert rep.status == PASS
    assert rep.resolutions["eps_ok"] == pytest.approx(0.5)
    assert rep.resolutions["s_margin"] >= 1.0 / 1.0 ** 2  # S = 0 >= -1


def test_pseudolocality_near_euclidean_cap():
    cfg = flow.FlowConfig(family="round_sphere",
                          params={"nodes": 256, "k0": 0.01},
                          t_max=0.5, save_interval=5e-3)
    hist = flow.run(cfg)
    n = hist.grid.n
    rep = verify.pseudolocality_experiment(hist, alpha=1.0 / (200.0 * n),
                                           eps=0.5, r0=1.0)
    assert rep.status == PASS
    assert rep.resolutions["delta_measured"] < 1e-2
    assert rep.resolutions["eps_ok"] == pytest.approx(0.5)


def test_pseudolocality_dumbbell_locality(dumbbell_hist):
    hist = dumbbell_hist
    n = hist.grid.n
    growth = np.max(hist.diag("sup_rm")) / hist.diag("sup_rm")[0]
    assert growth >= 1e3
    rep = verify.pseudolocality_experiment(hist, alpha=1.0 / (200.0 * n),
                                           eps=0.35, r0=0.6)
    assert rep.status == PASS, rep.resolutions
    assert rep.resolutions["eps_ok"] == pytest.approx(0.35)


# ---------------------------------------------------------------------------
# solitons


def test_soliton_round_sphere_exact():
    metric, phi = families.round_sphere(nodes=512, k0=1.0)
    n = metric.grid.n
    cand = SolitonCandidate(metric, phi,
                            ScalarField(np.full(512, n / 2.0), "f"), 0.5)
    out = verify.soliton_residuals(cand)
    worst = max(out["soliton_rad"], out["soliton_fib"],
                out["scalar_coupling"], out["first_integral_dispersion"],
                out["eqn_s_residual"])
    assert worst < 1e-6
    assert out["min_s"] == pytest.approx(2.0, abs=1e-6)
    rep = verify.soliton_report(cand)
    assert rep.status == PASS


def test_soliton_gaussian_cap_exact():
    metric, _ = families.gaussian_cap(nodes=512, flat_radius=1.0,
                                      belt_width=0.5)
    d = geometry.distance_profile(metric, 0)
    t_scale = 0.5
    cand = SolitonCandidate(metric,
                            ScalarField(np.zeros(512), "phi"),
                            ScalarField(d ** 2 / (4.0 * t_scale), "f"),
                            t_scale)
    out = verify.soliton_residuals(cand, region=d < 0.85)
    worst = max(out["soliton_rad"], out["soliton_fib"],
                out["scalar_coupling"], out["first_integral_dispersion"],
                out["eqn_s_residual"])
    assert worst < 1e-6
    assert out["min_s"] >= -1e-6
    # the Gaussian saturates the normalized bound |grad sqrt f| = 1/2
    assert out["sup_grad_sqrt_f"] == pytest.approx(0.5, abs=1e-6)


def test_soliton_perturbation_linear_response():
    metric, phi = families.round_sphere(nodes=256, k0=1.0)
    n = metric.grid.n
    x = metric.grid.x
    sizes = (1e-3, 1e-2, 1e-1)
    worst = []
    for eps in sizes:
        fp = ScalarField(n / 2.0 + eps * np.cos(x), "f")
        out = verify.soliton_residuals(SolitonCandidate(metric, phi, fp, 0.5))
        worst.append(max(out["soliton_rad"], out["soliton_fib"]))
    slope = (np.log(worst[-1]) - np.log(worst[0])) \
        / (np.log(sizes[-1]) - np.log(sizes[0]))
    assert slope == pytest.approx(1.0, abs=0.2)


# ---------------------------------------------------------------------------
# blow-up analysis and reduced-volume limit


def test_blowup_analysis_coupled_sphere(coupled_sphere_256):
    rep, rows = verify.blowup_analysis(
        coupled_sphere_256, [4.0, 16.0, 64.0],
        solver_kw={"fan_size": 1025, "n_steps": 120})
    good = [r for r in rows if r["status"] == "ok"]
    assert len(good) == 3
    residuals = [r["soliton_residual"] for r in good]
    assert residuals[1] <= residuals[0] + 1e-12
    assert residuals[2] <= residuals[1] + 1e-12
    assert residuals[2] < 1e-2
    assert all(r["grad_bound_margin"] > 0 for r in good)
    assert all(r["rescaled_rm_singular"] >= 0.4 for r in good)
    assert rep.status == PASS


def test_blowup_monitor_on_flat(flat_static_256):
    rep, rows = verify.blowup_analysis(flat_static_256, [4.0])
    assert rep.status == MONITOR
    assert rows is None


def test_reduced_volume_limit_sphere(sphere_hist_256):
    rep, table = verify.reduced_volume_limit(
        sphere_hist_256, base_times=[0.40, 0.45, 0.48],
        eval_times=[0.1, 0.2, 0.3],
        solver_kw={"fan_size": 1025, "n_steps": 120})
    assert rep.status == PASS
    assert rep.margin <= 1.0 + 1e-3
    for col in table.values():
        assert np.all(np.diff(col["V"]) >= -1e-6)


def test_reduced_volume_lambda_constancy(coupled_sphere_256):
    """Self-similar runs: reduced volumes agree across lambda when base
    and evaluation times rescale together (T - T_i = delta/lambda,
    T - t = 1/lambda), the discrete stand-in for the constant V^infty."""
    from coupledflow.lgeodesic import LGeodesicSolver

    hist = coupled_sphere_256
    t_est = hist.t_est
    vals = []
    for lam in (8.0, 16.0, 32.0):
        t_base = t_est - 0.5 / lam
        solver = LGeodesicSolver(hist, 0.0, t_base,
                                 fan_size=1025, n_steps=120)
        tau = t_base - (t_est - 1.0 / lam)     # = 0.5 / lam
        series = solver.reduced_volume([tau])
        vals.append(float(series.vtilde[0]))
    assert np.max(vals) - np.min(vals) < 0.02
    assert all(v <= 1.0 + 1e-3 for v in vals)
