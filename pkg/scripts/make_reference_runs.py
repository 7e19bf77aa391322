#!/usr/bin/env python3
"""Build the three reference run directories (flat, sphere, coupled) with
the full analysis artifact set the offline report tool consumes.

Usage: python scripts/make_reference_runs.py [out_root]   (default: runs/)
"""

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from coupledflow import cli, flow, runio  # noqa: E402


def build(out_root: Path):
    out_root.mkdir(parents=True, exist_ok=True)

    configs = {
        "ref_flat": {"family": "flat_torus",
                     "params": {"nodes": 128, "phi_amplitude": 0.01},
                     "t_max": 0.5, "save_interval": 5e-3},
        "ref_sphere": {"family": "round_sphere", "params": {"nodes": 192},
                       "t_max": 10.0, "rm_max": 100.0,
                       "save_interval": 1e-3},
        "ref_coupled": {"family": "round_sphere",
                        "params": {"nodes": 192, "phi_amplitude": 0.1},
                        "t_max": 10.0, "rm_max": 100.0,
                        "save_interval": 1e-3},
    }

    for name, cfg in configs.items():
        run_dir = out_root / name
        cfg_path = out_root / f"{name}.json"
        cfg_path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        assert cli.main(["run", "--config", str(cfg_path), "--out",
                         str(run_dir)]) == 0
        extra = []

        assert cli.main(["verify", "--run", str(run_dir),
                         "--suite", "core"]) == 0
        extra.append("report.json")

        if name != "ref_flat":
            history = runio.load_history(run_dir)
            t0 = 0.45
            assert cli.main(["lgeo", "--run", str(run_dir),
                             "--base-time", str(t0),
                             "--taus", "0.005,0.02,0.05,0.1,0.2,0.4",
                             "--fan-size", "1025", "--ode-steps", "120"]) == 0
            extra += ["lgeo.csv", "vtilde.csv"]
            h = history.grid.spacing
            assert cli.main(["conj", "--run", str(run_dir),
                             "--base", f"0.0,{t0}",
                             "--sigma0", f"{4 * h}",
                             "--tstop", "0.05"]) == 0
            extra += ["conj.csv", "conj_u.txt", "conj_f.txt", "conj_v.txt"]

        assert cli.main(["logsob", "--profile", "gaussian-family",
                         "--out", str(run_dir)]) == 0
        extra.append("logsob.csv")

        assert cli.main(["pseudoloc", "--run", str(run_dir), "--eps", "0.4",
                         "--r0", "0.8" if name != "ref_flat" else "1.0",
                         "--out", str(run_dir / "pseudoloc")]) in (0, 1)
        extra.append("pseudoloc/report.json")

        runio.register_outputs(run_dir, extra)
        print(f"built {run_dir}")


if __name__ == "__main__":
    build(Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "runs")
