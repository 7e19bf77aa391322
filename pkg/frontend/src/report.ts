#!/usr/bin/env node
// Offline report generator: consumes a run directory's documented
// artifacts (manifest.json, diagnostics.csv, vtilde.csv, conj.csv,
// logsob.csv, report.json) and writes static SVG plots plus summary.md.
// Read-only with respect to the run; never recomputes physics.
//
// Usage: coupledflow-report <run_dir> [--out <dir>]

import { existsSync, mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { column, parseCsv, textColumn } from "./csv";
import { HashMismatchError, loadManifest, Manifest } from "./manifest";
import { barChart, linePlot, Series } from "./svg";

export interface CheckEntry {
  id: string;
  anchor: string;
  status: string;
  margin: number;
  notes?: string;
}

export interface ReportResult {
  written: string[];
  skipped: string[];
  typeOneMaxDeviation: number | null;
  failedChecks: string[];
}

function readTable(runDir: string, name: string) {
  return parseCsv(readFileSync(join(runDir, name), "utf8"));
}

export function typeOneDeviation(
  t: number[],
  supRm: number[],
  tEst: number,
  c0: number,
): number {
  // relative gap to the reference c0/(T-t) over the plotted band
  // (curvature at least 10% above its initial value)
  const floor = supRm[0] * 1.1;
  let worst = 0;
  for (let i = 0; i < t.length; i++) {
    if (supRm[i] < floor || t[i] >= tEst) continue;
    const ref = c0 / (tEst - t[i]);
    worst = Math.max(worst, Math.abs(supRm[i] - ref) / ref);
  }
  return worst;
}

export function renderRun(runDir: string, outDir: string): ReportResult {
  const manifest: Manifest = loadManifest(runDir);
  mkdirSync(outDir, { recursive: true });
  const written: string[] = [];
  const skipped: string[] = [];
  const failedChecks: string[] = [];
  let typeOneMaxDeviation: number | null = null;

  const put = (name: string, content: string) => {
    writeFileSync(join(outDir, name), content);
    written.push(name);
  };

  // --- curvature history with Type I reference -------------------------
  const diag = readTable(runDir, "diagnostics.csv");
  const t = column(diag, "t");
  const supRm = column(diag, "sup_rm");
  const series: Series[] = [{ x: t, y: supRm, label: "sup|Rm|(t)" }];
  let title = "curvature history";
  if (manifest.t_est != null && manifest.c0_measured != null) {
    const ref = t.map((tv) =>
      tv < manifest.t_est! ? manifest.c0_measured! / (manifest.t_est! - tv) : NaN,
    );
    series.push({ x: t, y: ref, label: "C0/(T-t) reference", dashed: true });
    typeOneMaxDeviation = typeOneDeviation(
      t,
      supRm,
      manifest.t_est,
      manifest.c0_measured,
    );
    title += ` (max deviation from reference ${(typeOneMaxDeviation * 100).toFixed(3)}%)`;
  }
  const positive = supRm.some((v) => v > 0);
  put(
    "sup_rm.svg",
    linePlot(series, {
      title,
      logY: positive,
      xLabel: "t",
      yLabel: positive ? "log10 sup|Rm|" : "sup|Rm|",
    }),
  );

  const gradSeries: Series[] = [
    { x: t, y: column(diag, "sup_gradphi2"), label: "sup|grad phi|^2" },
    { x: t, y: column(diag, "max_S"), label: "max S" },
    { x: t, y: column(diag, "min_S"), label: "min S" },
  ];
  put(
    "scalars.svg",
    linePlot(gradSeries, { title: "scalar diagnostics", xLabel: "t" }),
  );

  // --- reduced volume ---------------------------------------------------
  if (existsSync(join(runDir, "vtilde.csv"))) {
    const vt = readTable(runDir, "vtilde.csv");
    put(
      "vtilde.svg",
      linePlot(
        [{ x: column(vt, "tau"), y: column(vt, "vtilde"), label: "Vtilde(tau)" }],
        { title: "reduced volume (nonincreasing in tau)", xLabel: "tau" },
      ),
    );
  } else {
    skipped.push("vtilde.csv");
  }

  // --- conjugate heat ----------------------------------------------------
  let convTable = "";
  if (existsSync(join(runDir, "conj.csv"))) {
    const conj = readTable(runDir, "conj.csv");
    const ct = column(conj, "t");
    put(
      "conj.svg",
      linePlot(
        [
          { x: ct, y: column(conj, "max_v"), label: "max v" },
          { x: ct, y: column(conj, "int_v"), label: "int v dV" },
          { x: ct, y: column(conj, "W"), label: "W" },
        ],
        { title: "conjugate-heat monitors", xLabel: "t" },
      ),
    );
    const rows = ct
      .map(
        (tv, i) =>
          `| ${tv.toPrecision(6)} | ${column(conj, "mass")[i].toPrecision(8)} | ` +
          `${column(conj, "max_v")[i].toExponential(2)} | ` +
          `${column(conj, "int_v")[i].toExponential(2)} |`,
      )
      .filter((_, i) => i % Math.ceil(ct.length / 12) === 0);
    convTable =
      "\n## conjugate-heat convergence\n\n| t | mass | max v | int v |\n|---|---|---|---|\n" +
      rows.join("\n") +
      "\n";
  } else {
    skipped.push("conj.csv");
  }

  // --- log-Sobolev margins ----------------------------------------------
  if (existsSync(join(runDir, "logsob.csv"))) {
    const ls = readTable(runDir, "logsob.csv");
    put(
      "logsob.svg",
      barChart(textColumn(ls, "case"), column(ls, "margin"), {
        title: "log-Sobolev margins (nonnegative = inequality holds)",
      }),
    );
  } else {
    skipped.push("logsob.csv");
  }

  // --- checks + pseudo-locality ------------------------------------------
  const checks: CheckEntry[] = [];
  for (const name of ["report.json", "pseudoloc/report.json"]) {
    const p = join(runDir, name);
    if (existsSync(p)) {
      checks.push(...(JSON.parse(readFileSync(p, "utf8")) as CheckEntry[]));
    } else {
      skipped.push(name);
    }
  }
  const pseudo = checks.filter((c) => c.id.startsWith("pseudo-locality"));
  if (pseudo.length > 0) {
    put(
      "pseudoloc.svg",
      barChart(
        pseudo.map((c) => c.id),
        pseudo.map((c) => c.margin),
        { title: "pseudo-locality eps_ok / eps" },
      ),
    );
  }
  for (const c of checks) {
    if (c.status === "fail") failedChecks.push(c.id);
  }

  // --- summary ------------------------------------------------------------
  const lines: string[] = [
    `# Run summary: ${runDir}`,
    "",
    `- status: ${manifest.status}`,
    `- grid: ${manifest.grid.topology}, ${manifest.grid.node_count} nodes, fiber dim ${manifest.grid.fiber_dim}`,
    `- time span: [${manifest.t_first}, ${manifest.t_last}]`,
  ];
  if (manifest.t_est != null) {
    lines.push(
      `- estimated singular time: ${manifest.t_est}`,
      `- Type I constant: ${manifest.c0_measured}`,
    );
    if (typeOneMaxDeviation != null) {
      lines.push(
        `- max deviation from the C0/(T-t) reference: ${(typeOneMaxDeviation * 100).toFixed(4)}%`,
      );
    }
  }
  lines.push("", "## checks", "");
  if (checks.length > 0) {
    lines.push("| id | status | margin | anchor |", "|---|---|---|---|");
    for (const c of checks) {
      const mark = c.status === "fail" ? `**${c.status}**` : c.status;
      lines.push(
        `| ${c.id} | ${mark} | ${Number(c.margin).toPrecision(4)} | ${c.anchor} |`,
      );
    }
  } else {
    lines.push("(no report.json found)");
  }
  if (convTable) lines.push(convTable);
  if (skipped.length > 0) {
    lines.push("", "## skipped artifacts", "");
    for (const s of skipped) lines.push(`- ${s} (not present)`);
  }
  lines.push("", "## plots", "");
  for (const w of written) lines.push(`- ${w}`);
  put("summary.md", lines.join("\n") + "\n");

  return { written, skipped, typeOneMaxDeviation, failedChecks };
}

export function main(argv: string[]): number {
  const args = argv.filter((a) => a !== "");
  if (args.length < 1) {
    console.error("usage: coupledflow-report <run_dir> [--out <dir>]");
    return 2;
  }
  const runDir = args[0];
  let outDir = join(runDir, "report");
  const outIdx = args.indexOf("--out");
  if (outIdx >= 0) {
    if (outIdx + 1 >= args.length) {
      console.error("--out needs a directory");
      return 2;
    }
    outDir = args[outIdx + 1];
  }
  try {
    const result = renderRun(runDir, outDir);
    console.log(
      `report: wrote ${result.written.length} files to ${outDir}` +
        (result.skipped.length > 0
          ? `, skipped ${result.skipped.join(", ")}`
          : ""),
    );
    if (result.failedChecks.length > 0) {
      console.log(`failing checks: ${result.failedChecks.join(", ")}`);
    }
    return 0;
  } catch (err) {
    if (err instanceof HashMismatchError) {
      console.error(`corrupt run directory: ${(err as Error).message}`);
      return 1;
    }
    console.error(`report failed: ${(err as Error).message}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
