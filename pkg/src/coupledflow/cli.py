"""Command-line entry point and orchestration.

Subcommands: run, lgeo, conj, verify, logsob, symm, pseudoloc, blowup.
Exit codes: 0 = all checks pass or monitor, 1 = some check failed,
2 = usage or configuration error.  Reruns with identical configs produce
byte-identical artifact sets (no timestamps, 17-digit decimals, hashed
manifest written last).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import conjheat, flow, runio
from . import functional as functional_mod
from . import lgeodesic, verify
from .errors import ConfigError, CoupledFlowError


def _worker_cap() -> int:
    env = os.environ.get("COUPLED_FLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("COUPLED_FLOW_THREADS must be an integer")
    return os.cpu_count() or 1


def _load_config(path) -> flow.FlowConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON ({exc})")
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return flow.FlowConfig.from_dict(data)


def cmd_run(args) -> int:
    config = _load_config(args.config)
    history = flow.run(config)
    flow.detect_blowup(history)
    if history.t_est is not None:
        flow.type_one_diagnostic(history)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runio.save_run(out, config, history, snapshot_count=args.snapshots)
    print(f"run: status={history.status} steps={history.steps} "
          f"t_last={history.t_last:.6g}"
          + (f" T_est={history.t_est:.6g}" if history.t_est else ""))
    return 0


def cmd_lgeo(args) -> int:
    history = runio.load_history(args.run)
    taus = [float(v) for v in args.taus.split(",")]
    solver = lgeodesic.LGeodesicSolver(history, args.base_x, args.base_time,
                                       fan_size=args.fan_size,
                                       n_steps=args.ode_steps)
    out = Path(args.out or args.run)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    stride = max(1, history.grid.node_count // args.sample_nodes)
    for tau in taus:
        fld = solver.ell_field(tau)
        for q in range(0, history.grid.node_count, stride):
            sample = solver.sample(q, tau, oracle=args.oracle) \
                if fld.status[q] == lgeodesic.STATUS_OK else None
            rows.append([
                tau, history.grid.x[q], fld.l_value[q], fld.ell[q],
                sample.k_value if sample else np.nan,
                fld.v_min[q], str(fld.status[q]),
            ])
    runio.write_csv(out / "lgeo.csv",
                    ["tau", "q_x", "L", "ell", "K", "v_min", "status"], rows)
    series = solver.reduced_volume(taus)
    runio.write_csv(out / "vtilde.csv", ["tau", "vtilde", "quad_err"],
                    list(zip(series.tau, series.vtilde, series.quad_err)))
    drops = np.diff(series.vtilde)
    ok = bool(np.all(drops <= 1e-6))
    print(f"lgeo: {len(taus)} tau values, reduced volume monotone: {ok}")
    return 0 if ok else 1


def cmd_conj(args) -> int:
    history = runio.load_history(args.run)
    base_x, t_center = (float(v) for v in args.base.split(","))
    center = int(np.argmin(np.abs(history.grid.x - base_x)))
    states = conjheat.solve_backward(history, center, t_center, args.tstop,
                                     args.sigma0)
    out = Path(args.out or args.run)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    worst_mass = 0.0
    for st in states:
        v, mask = conjheat.v_field(st, history)
        vmax = float(np.max(np.asarray(v.values)[mask])) if np.any(mask) else np.nan
        rows.append([st.t, st.mass, vmax,
                     conjheat.integral_v(st, history),
                     conjheat.w_functional(st, history)])
        worst_mass = max(worst_mass, abs(st.mass - 1.0))
    runio.write_csv(out / "conj.csv", ["t", "mass", "max_v", "int_v", "W"], rows)
    last = states[-1]
    st_last = history.state_at(last.t)
    n_dim = history.grid.n
    f_vals, _ = conjheat.f_from_u(last, n_dim)
    v_last, _ = conjheat.v_field(last, history)
    from .geometry import ScalarField

    for tag, vals in (("u", last.u), ("f", f_vals),
                      ("v", np.asarray(v_last.values))):
        runio.write_snapshot(out / f"conj_{tag}.txt", st_last.metric,
                             ScalarField(vals, tag), last.t)
    print(f"conj: {len(states)} states, worst mass drift {worst_mass:.2e}")
    return 0 if worst_mass <= 1e-3 else 1


def cmd_verify(args) -> int:
    history = runio.load_history(args.run)
    manifest = runio.load_manifest(args.run)
    reports = run_suite(history, args.suite, manifest)
    out = Path(args.out or args.run)
    out.mkdir(parents=True, exist_ok=True)
    payload = [r.as_dict() for r in reports]
    (out / "report.json").write_text(json.dumps(payload, sort_keys=True,
                                                indent=2) + "\n")
    failed = [r for r in reports if r.status == verify.FAIL]
    for r in reports:
        print(f"  [{r.status:7s}] {r.check_id}: margin={r.margin:.4g}")
    print(f"verify: {len(reports)} checks, {len(failed)} failed")
    return 1 if failed else 0


def run_suite(history, suite: str, manifest=None):
    checks = []

    def core():
        out = []
        cfg = None
        if manifest and manifest.get("config"):
            try:
                cfg = flow.FlowConfig.from_dict(manifest["config"])
            except ConfigError:
                cfg = None
        if cfg is not None and cfg.params.get("nodes", 0) >= 64:
            # rerun both resolutions with save cadence scaled as h^2 so the
            # residual's time-differencing error refines with the grid
            # (the loaded history only carries snapshot-cadence states)
            fine_cfg = flow.FlowConfig(**cfg.to_dict())
            coarse_params = dict(cfg.params)
            coarse_params["nodes"] = max(int(coarse_params["nodes"]) // 2, 32)
            coarse_kw = {**cfg.to_dict(), "params": coarse_params}
            if cfg.save_interval:
                coarse_kw["save_interval"] = 4.0 * cfg.save_interval
            coarse_cfg = flow.FlowConfig(**coarse_kw)
            out.append(verify.s_evolution_residual(flow.run(coarse_cfg),
                                                   flow.run(fine_cfg)))
        else:
            out.append(verify.s_evolution_residual(history))
        margins = flow.phi_monitors(history)
        worst = min(margins.values())
        out.append(verify.VerificationReport(
            "phi-monitors",
            "inf phi_0 <= phi(t) <= sup phi_0;  sup|grad phi|^2 <= C^2/t",
            verify.PASS if worst >= -1e-8 else verify.FAIL, float(worst),
            {k: float(v) for k, v in margins.items()}))
        span = history.t_last - history.t_first
        scales = [0.25 * np.sqrt(span), 0.5 * np.sqrt(span)]
        out.append(verify.kappa_check(history, scales))
        return out

    def pseudoloc():
        n = history.grid.n
        return [verify.pseudolocality_experiment(
            history, alpha=1.0 / (200.0 * n), eps=0.5, r0=1.0)]

    def soliton():
        from . import families
        from .geometry import ScalarField, distance_profile

        out = []
        nodes = history.grid.node_count
        metric, phi = families.round_sphere(nodes=max(nodes, 64), k0=1.0)
        cand = verify.SolitonCandidate(
            metric, phi,
            ScalarField(np.full(metric.grid.node_count, metric.grid.n / 2.0), "f"),
            0.5)
        out.append(verify.soliton_report(cand, check_id="soliton-round-sphere"))
        mc, pc = families.gaussian_cap(nodes=max(nodes, 64))
        d = distance_profile(mc, 0)
        cand2 = verify.SolitonCandidate(
            mc, ScalarField(np.zeros(mc.grid.node_count), "phi"),
            ScalarField(d * d / 2.0, "f"), 0.5)
        out.append(verify.soliton_report(cand2, check_id="soliton-gaussian-cap"))
        # evaluated away from the curvature belt
        out[-1].notes += "; flat-cap region"
        return out

    def blowup():
        rep, _ = verify.blowup_analysis(history, [4.0, 16.0, 64.0])
        return [rep]

    suites = {"core": core, "pseudoloc": pseudoloc, "soliton": soliton,
              "blowup": blowup}
    if suite == "all":
        parts = [suites[k] for k in ("core", "pseudoloc", "soliton", "blowup")]
    elif suite in suites:
        parts = [suites[suite]]
    else:
        raise ConfigError(f"unknown suite {suite!r}")

    with ThreadPoolExecutor(max_workers=_worker_cap()) as pool:
        futures = [pool.submit(p) for p in parts]
        for fut in futures:               # deterministic order by submission
            checks.extend(fut.result())
    return checks


def cmd_logsob(args) -> int:
    rows = []
    worst = 0.0
    cases = []
    if args.profile == "gaussian-family":
        for sigma in (0.5, 1.0, 2.0):
            cases.append((f"gaussian sigma={sigma}",
                          functional_mod.gaussian_profile_radial(args.dim, sigma)))
        cases.append(("perturbed",
                      functional_mod.perturbed_gaussian_profile(args.dim)))
    else:
        name, _, params = args.profile.partition(":")
        if name != "gaussian":
            raise ConfigError("profile must be 'gaussian-family' or "
                              "'gaussian:<sigma>'")
        sigma = float(params or 1.0)
        cases.append((f"gaussian sigma={sigma}",
                      functional_mod.gaussian_profile_radial(args.dim, sigma)))
    failed = False
    for label, prof in cases:
        if args.optimized:
            res = functional_mod.log_sobolev_optimized(prof)
            margin = res["lhs"] - res["rhs"]
            rows.append([label, res["lhs"], res["rhs"], margin])
            failed |= margin < -1e-6
        else:
            res = functional_mod.log_sobolev_basic(prof)
            rows.append([label, res["lhs"], 0.0, -res["lhs"]])
            failed |= res["lhs"] > 1e-6
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    runio.write_csv(out / "logsob.csv", ["case", "lhs", "rhs", "margin"], rows)
    print(f"logsob: {len(rows)} cases")
    return 1 if failed else 0


def cmd_symm(args) -> int:
    history = runio.load_history(args.run)
    st = history.state_at(args.state)
    if args.field != "phi":
        raise ConfigError("only the phi field is stored in run snapshots")
    values = np.asarray(st.phi.values)
    values = np.maximum(values, 0.0) if args.clip_negative else values
    from .geometry import ScalarField

    result = functional_mod.symmetrize(st.metric, ScalarField(values, "phi"))
    out = Path(args.out or args.run)
    out.mkdir(parents=True, exist_ok=True)
    runio.write_csv(out / "symm.csv", ["s", "vol_M", "vol_Rn"],
                    list(zip(result.levels, result.vol_m, result.vol_rn)))
    match = float(np.max(np.abs(result.vol_m - result.vol_rn)))
    print(f"symm: {result.levels.size} levels, distribution match {match:.2e}")
    return 0 if match <= 1e-6 else 1


def cmd_pseudoloc(args) -> int:
    history = runio.load_history(args.run)
    n = history.grid.n
    alpha = args.alpha if args.alpha is not None else 1.0 / (200.0 * n)
    rep = verify.pseudolocality_experiment(history, alpha, args.eps, args.r0,
                                           p=args.center)
    out = Path(args.out or args.run)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps([rep.as_dict()], sort_keys=True, indent=2) + "\n")
    print(f"pseudoloc: {rep.status} eps_ok/eps = {rep.margin:.3f}")
    return 0 if rep.status != verify.FAIL else 1


def cmd_blowup(args) -> int:
    history = runio.load_history(args.run)
    lambdas = [float(v) for v in args.lambdas.split(",")]
    rep, rows = verify.blowup_analysis(history, lambdas)
    out = Path(args.out or args.run)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps([rep.as_dict()], sort_keys=True, indent=2, default=float)
        + "\n")
    print(f"blowup: {rep.status}")
    return 0 if rep.status != verify.FAIL else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coupledflow",
        description="coupled Ricci-flow laboratory on warped products")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate a flow from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--snapshots", type=int, default=65)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("lgeo", help="reduced distance / volume analysis")
    p.add_argument("--run", required=True)
    p.add_argument("--base-time", type=float, required=True)
    p.add_argument("--taus", required=True)
    p.add_argument("--base-x", type=float, default=0.0)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--fan-size", type=int, default=2049)
    p.add_argument("--ode-steps", type=int, default=160)
    p.add_argument("--sample-nodes", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=cmd_lgeo)

    p = sub.add_parser("conj", help="backward conjugate heat solve")
    p.add_argument("--run", required=True)
    p.add_argument("--base", required=True, metavar="X,T")
    p.add_argument("--sigma0", type=float, required=True)
    p.add_argument("--tstop", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_conj)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--run", required=True)
    p.add_argument("--suite", default="core",
                   choices=["core", "pseudoloc", "soliton", "blowup", "all"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("logsob", help="log-Sobolev checks on radial profiles")
    p.add_argument("--profile", default="gaussian-family")
    p.add_argument("--optimized", action="store_true")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_logsob)

    p = sub.add_parser("symm", help="decreasing rearrangement of a state field")
    p.add_argument("--run", required=True)
    p.add_argument("--state", type=float, required=True)
    p.add_argument("--field", default="phi")
    p.add_argument("--clip-negative", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_symm)

    p = sub.add_parser("pseudoloc", help="pseudo-locality experiment")
    p.add_argument("--run", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--r0", type=float, default=1.0)
    p.add_argument("--center", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pseudoloc)

    p = sub.add_parser("blowup", help="Type I rescaling analysis")
    p.add_argument("--run", required=True)
    p.add_argument("--lambdas", default="4,16,64")
    p.add_argument("--out")
    p.set_defaults(func=cmd_blowup)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CoupledFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
