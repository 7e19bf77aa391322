// Unit tests for the parsers/renderers plus the end-to-end render of the
// three reference runs produced by scripts/make_reference_runs.py.

import { cpSync, existsSync, mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { column, parseCsv } from "../src/csv";
import { HashMismatchError, loadManifest } from "../src/manifest";
import { barChart, linePlot } from "../src/svg";
import { main, renderRun, typeOneDeviation } from "../src/report";

const RUNS = join(__dirname, "..", "..", "runs");

describe("csv", () => {
  it("parses headers and numeric columns", () => {
    const t = parseCsv("a,b\n1,2\n3,4.5e-1\n");
    expect(t.header).toEqual(["a", "b"]);
    expect(column(t, "b")).toEqual([2, 0.45]);
  });

  it("rejects ragged rows and unknown columns", () => {
    expect(() => parseCsv("a,b\n1\n")).toThrow();
    expect(() => column(parseCsv("a\n1\n"), "zz")).toThrow();
  });
});

describe("svg", () => {
  it("renders a polyline per series plus a reference style", () => {
    const svg = linePlot(
      [
        { x: [0, 1, 2], y: [1, 2, 4], label: "data" },
        { x: [0, 1, 2], y: [1, 2, 4], label: "ref", dashed: true },
      ],
      { title: "demo", logY: true },
    );
    expect(svg).toContain("<svg");
    expect((svg.match(/<polyline/g) ?? []).length).toBe(2);
    expect(svg).toContain("stroke-dasharray");
  });

  it("drops nonpositive values under log scaling", () => {
    const svg = linePlot(
      [{ x: [0, 1, 2], y: [0, 1, 10], label: "d" }],
      { title: "t", logY: true },
    );
    expect(svg).toContain("polyline");
  });

  it("bar chart encodes signs by color", () => {
    const svg = barChart(["a", "b"], [0.5, -0.25], { title: "bars" });
    expect(svg).toContain("#2ca02c");
    expect(svg).toContain("#d62728");
  });
});

describe("type one overlay", () => {
  it("measures relative deviation over the grown band only", () => {
    const tEst = 0.5;
    const t = [0.0, 0.2, 0.4, 0.45];
    const ref = t.map((tv) => 0.5 / (tEst - tv));
    expect(typeOneDeviation(t, ref, tEst, 0.5)).toBeLessThan(1e-12);
    const off = ref.map((v) => v * 1.02);
    const dev = typeOneDeviation(t, off, tEst, 0.5);
    expect(dev).toBeGreaterThan(0.019);
    expect(dev).toBeLessThan(0.021);
  });
});

describe("reference runs", () => {
  const names = ["ref_flat", "ref_sphere", "ref_coupled"];

  it.each(names)("renders %s without error", (name) => {
    const runDir = join(RUNS, name);
    expect(existsSync(runDir)).toBe(true);
    const out = mkdtempSync(join(tmpdir(), `report-${name}-`));
    const result = renderRun(runDir, out);
    expect(result.written).toContain("summary.md");
    expect(result.written).toContain("sup_rm.svg");
    expect(result.failedChecks).toEqual([]);
    const summary = readFileSync(join(out, "summary.md"), "utf8");
    expect(summary).toContain("## checks");
    expect(summary).toContain("| id | status |");
  });

  it("overlays the Type I reference within the 1% band on the sphere", () => {
    const out = mkdtempSync(join(tmpdir(), "report-sphere-"));
    const result = renderRun(join(RUNS, "ref_sphere"), out);
    expect(result.typeOneMaxDeviation).not.toBeNull();
    expect(result.typeOneMaxDeviation!).toBeLessThan(0.01);
    const svg = readFileSync(join(out, "sup_rm.svg"), "utf8");
    expect(svg).toContain("C0/(T-t) reference");
  });

  it("renders the full plot set for the sphere run", () => {
    const out = mkdtempSync(join(tmpdir(), "report-full-"));
    const result = renderRun(join(RUNS, "ref_sphere"), out);
    for (const f of ["sup_rm.svg", "scalars.svg", "vtilde.svg", "conj.svg",
                     "logsob.svg", "pseudoloc.svg", "summary.md"]) {
      expect(result.written).toContain(f);
    }
  });

  it("skips missing artifacts with a note on the flat run", () => {
    const out = mkdtempSync(join(tmpdir(), "report-flat-"));
    const result = renderRun(join(RUNS, "ref_flat"), out);
    expect(result.skipped).toContain("vtilde.csv");
    const summary = readFileSync(join(out, "summary.md"), "utf8");
    expect(summary).toContain("skipped artifacts");
  });

  it("aborts on a corrupted run directory", () => {
    const tmp = mkdtempSync(join(tmpdir(), "corrupt-"));
    const copy = join(tmp, "run");
    cpSync(join(RUNS, "ref_flat"), copy, { recursive: true });
    writeFileSync(join(copy, "diagnostics.csv"), "tampered\n");
    expect(() => loadManifest(copy)).toThrow(HashMismatchError);
    const code = main([copy, "--out", join(tmp, "out")]);
    expect(code).toBe(1);
  });

  it("cli happy path returns 0", () => {
    const tmp = mkdtempSync(join(tmpdir(), "cli-out-"));
    expect(main([join(RUNS, "ref_flat"), "--out", tmp])).toBe(0);
    expect(existsSync(join(tmp, "summary.md"))).toBe(true);
  });

  it("cli usage errors return 2", () => {
    expect(main([])).toBe(2);
    expect(main([join(RUNS, "ref_flat"), "--out"])).toBe(2);
  });
});
