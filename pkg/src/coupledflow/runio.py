"""Run-directory persistence: snapshots, CSV tables, manifest.

All floats are written with 17 significant digits so reruns with an
identical config produce byte-identical artifacts; the manifest lists a
sha256 for every emitted file and is written last as the completion
marker.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, CoupledFlowError
from .flow import DIAG_COLUMNS, FlowConfig, FlowHistory
from .geometry import Grid, ScalarField, WarpedMetric

FLOAT_FMT = "{:.17g}"


def fmt(x) -> str:
    return FLOAT_FMT.format(float(x))


def write_snapshot(path, metric: WarpedMetric, phi: ScalarField, t: float):
    g = metric.grid
    lines = [f"# n={g.n} m={g.fiber_dim} topology={g.topology} "
             f"nodes={g.node_count} t={fmt(t)}"]
    x = g.x
    vals = np.asarray(phi.values)
    for i in range(g.node_count):
        lines.append(" ".join(fmt(v) for v in
                              (x[i], metric.a[i], metric.w[i], vals[i])))
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path):
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0]
    if not header.startswith("#"):
        raise CoupledFlowError(f"snapshot {path} lacks a header line")
    meta = dict(item.split("=", 1) for item in header[1:].split())
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    n_nodes = int(meta["nodes"])
    if rows.shape != (n_nodes, 4):
        raise CoupledFlowError(f"snapshot {path} malformed")
    spacing = rows[1, 0] - rows[0, 0]
    m = int(meta["m"])
    grid = Grid(meta["topology"], n_nodes, spacing, fiber_dim=m,
                fiber_curvature=0.0 if m == 1 else 1.0)
    metric = WarpedMetric(grid, rows[:, 1].copy(), rows[:, 2].copy())
    phi = ScalarField(rows[:, 3].copy(), "phi")
    return metric, phi, float(meta["t"])


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    data = [ln.split(",") for ln in lines[1:]]
    return header, data


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def save_run(out_dir, config: FlowConfig, history: FlowHistory,
             snapshot_count: int = 9):
    """Materialize a run directory: states/, diagnostics.csv, manifest.json."""
    out = Path(out_dir)
    (out / "states").mkdir(parents=True, exist_ok=True)

    keep = np.unique(np.linspace(0, len(history) - 1, snapshot_count).astype(int))
    state_files = []
    for j, k in enumerate(keep):
        st = history.state(int(k))
        name = f"states/state_{j:04d}.txt"
        write_snapshot(out / name, st.metric, st.phi, st.t)
        state_files.append(name)

    write_csv(out / "diagnostics.csv", DIAG_COLUMNS,
              [list(row) for row in history.diagnostics])

    files = ["diagnostics.csv"] + state_files
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "grid": {
            "topology": history.grid.topology,
            "node_count": history.grid.node_count,
            "spacing": history.grid.spacing,
            "fiber_dim": history.grid.fiber_dim,
            "fiber_curvature": history.grid.fiber_curvature,
        },
        "status": history.status,
        "steps": history.steps,
        "t_first": history.t_first,
        "t_last": history.t_last,
        "t_est": history.t_est,
        "c0_measured": history.type_one_constant,
        "saved_states": len(history),
        "files": {},
    }
    for name in files:
        manifest["files"][name] = sha256_of(out / name)
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def register_outputs(run_dir, names):
    """Add analysis output files (with hashes) to an existing manifest.

    Keeps the every-output-hashed invariant when subcommands write into a
    run directory after the fact; the manifest is rewritten atomically
    last, preserving determinism.
    """
    run = Path(run_dir)
    manifest = json.loads((run / "manifest.json").read_text())
    for name in names:
        manifest["files"][name] = sha256_of(run / name)
    (run / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def load_manifest(run_dir, verify_hashes: bool = True):
    run = Path(run_dir)
    mf_path = run / "manifest.json"
    if not mf_path.exists():
        raise ConfigError(f"no manifest.json under {run_dir}")
    manifest = json.loads(mf_path.read_text())
    if verify_hashes:
        for name, digest in manifest.get("files", {}).items():
            actual = sha256_of(run / name)
            if actual != digest:
                raise CoupledFlowError(f"hash mismatch for {name} in {run_dir}")
    return manifest


def load_history(run_dir) -> FlowHistory:
    """Rebuild a history from a run directory.

    Uses the saved snapshots for the states and diagnostics.csv for the
    full diagnostic series.  Sufficient for the analysis subcommands; the
    temporal resolution equals the snapshot cadence.
    """
    run = Path(run_dir)
    manifest = load_manifest(run_dir)
    names = sorted(n for n in manifest["files"] if n.startswith("states/"))
    metrics, phis, times = [], [], []
    for name in names:
        metric, phi, t = read_snapshot(run / name)
        metrics.append(metric)
        phis.append(phi)
        times.append(t)
    grid = metrics[0].grid
    from .flow import _diag_row
    from .geometry import curvature

    a2 = np.array([m.a ** 2 for m in metrics])
    w2 = np.array([m.w ** 2 for m in metrics])
    ph = np.array([np.asarray(p.values) for p in phis])
    diags = np.array([
        _diag_row(t, curvature(m, p), np.asarray(p.values), m)
        for t, m, p in zip(times, metrics, phis)
    ])
    hist = FlowHistory(grid, np.array(times), a2, w2, ph, diags,
                       status=manifest.get("status", "loaded"),
                       steps=manifest.get("steps", 0))
    hist.t_est = manifest.get("t_est")
    hist.type_one_constant = manifest.get("c0_measured")
    return hist
