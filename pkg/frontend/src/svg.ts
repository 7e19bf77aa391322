// Hand-rolled SVG renderers: line plots (optionally log-scaled, with a
// dashed reference curve) and simple bar charts. No drawing dependencies;
// output is deterministic text.

export interface Series {
  x: number[];
  y: number[];
  label: string;
  color?: string;
  dashed?: boolean;
}

export interface PlotOptions {
  title: string;
  width?: number;
  height?: number;
  logY?: boolean;
  xLabel?: string;
  yLabel?: string;
}

const MARGIN = { left: 64, right: 16, top: 28, bottom: 40 };
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

function fmt(v: number): string {
  return Number.isFinite(v) ? v.toPrecision(4) : "nan";
}

function transform(
  vals: number[],
  lo: number,
  hi: number,
  outLo: number,
  outHi: number,
): number[] {
  const span = hi - lo || 1;
  return vals.map((v) => outLo + ((v - lo) / span) * (outHi - outLo));
}

export function linePlot(seriesList: Series[], opts: PlotOptions): string {
  const width = opts.width ?? 640;
  const height = opts.height ?? 420;
  const innerW = width - MARGIN.left - MARGIN.right;
  const innerH = height - MARGIN.top - MARGIN.bottom;

  const prep = seriesList.map((s) => {
    const pairs = s.x
      .map((x, i) => [x, s.y[i]] as [number, number])
      .filter(
        ([x, y]) =>
          Number.isFinite(x) && Number.isFinite(y) && (!opts.logY || y > 0),
      );
    return {
      ...s,
      x: pairs.map((p) => p[0]),
      y: pairs.map((p) => (opts.logY ? Math.log10(p[1]) : p[1])),
    };
  });

  const allX = prep.flatMap((s) => s.x);
  const allY = prep.flatMap((s) => s.y);
  if (allX.length === 0) {
    throw new Error(`nothing to plot for ${opts.title}`);
  }
  const [xLo, xHi] = [Math.min(...allX), Math.max(...allX)];
  const [yLo, yHi] = [Math.min(...allY), Math.max(...allY)];

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
    `<text x="${width / 2}" y="18" text-anchor="middle" font-size="14" font-family="sans-serif">${opts.title}</text>`,
  );
  // frame + axis labels
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${innerW}" height="${innerH}" fill="none" stroke="#333"/>`,
  );
  for (const frac of [0, 0.5, 1]) {
    const xv = xLo + frac * (xHi - xLo);
    const yv = yLo + frac * (yHi - yLo);
    const px = MARGIN.left + frac * innerW;
    const py = MARGIN.top + innerH - frac * innerH;
    parts.push(
      `<text x="${px}" y="${height - 20}" text-anchor="middle" font-size="11" font-family="sans-serif">${fmt(xv)}</text>`,
      `<text x="${MARGIN.left - 6}" y="${py + 4}" text-anchor="end" font-size="11" font-family="sans-serif">${opts.logY ? "1e" + fmt(yv) : fmt(yv)}</text>`,
    );
  }
  if (opts.xLabel) {
    parts.push(
      `<text x="${width / 2}" y="${height - 4}" text-anchor="middle" font-size="12" font-family="sans-serif">${opts.xLabel}</text>`,
    );
  }
  if (opts.yLabel) {
    parts.push(
      `<text x="14" y="${height / 2}" font-size="12" font-family="sans-serif" transform="rotate(-90 14 ${height / 2})" text-anchor="middle">${opts.yLabel}</text>`,
    );
  }

  prep.forEach((s, k) => {
    const px = transform(s.x, xLo, xHi, MARGIN.left, MARGIN.left + innerW);
    const py = transform(s.y, yLo, yHi, MARGIN.top + innerH, MARGIN.top);
    const pts = px.map((x, i) => `${x.toFixed(2)},${py[i].toFixed(2)}`).join(" ");
    const color = s.color ?? COLORS[k % COLORS.length];
    const dash = s.dashed ? ` stroke-dasharray="6,4"` : "";
    parts.push(
      `<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="1.6"${dash}/>`,
      `<text x="${MARGIN.left + 8}" y="${MARGIN.top + 16 + 16 * k}" font-size="11" fill="${color}" font-family="sans-serif">${s.label}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n");
}

export function barChart(
  labels: string[],
  values: number[],
  opts: PlotOptions,
): string {
  const width = opts.width ?? 520;
  const height = opts.height ?? 320;
  const innerW = width - MARGIN.left - MARGIN.right;
  const innerH = height - MARGIN.top - MARGIN.bottom;
  const vMax = Math.max(...values, 0);
  const vMin = Math.min(...values, 0);
  const span = vMax - vMin || 1;
  const bw = innerW / values.length;

  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
    `<text x="${width / 2}" y="18" text-anchor="middle" font-size="14" font-family="sans-serif">${opts.title}</text>`,
  ];
  const zeroY = MARGIN.top + ((vMax - 0) / span) * innerH;
  parts.push(
    `<line x1="${MARGIN.left}" y1="${zeroY}" x2="${MARGIN.left + innerW}" y2="${zeroY}" stroke="#333"/>`,
  );
  values.forEach((v, i) => {
    const x = MARGIN.left + i * bw + 0.15 * bw;
    const yTop = MARGIN.top + ((vMax - Math.max(v, 0)) / span) * innerH;
    const h = (Math.abs(v) / span) * innerH;
    parts.push(
      `<rect x="${x.toFixed(1)}" y="${yTop.toFixed(1)}" width="${(0.7 * bw).toFixed(1)}" height="${Math.max(h, 0.5).toFixed(1)}" fill="${v >= 0 ? "#2ca02c" : "#d62728"}"/>`,
      `<text x="${(x + 0.35 * bw).toFixed(1)}" y="${height - 22}" text-anchor="middle" font-size="10" font-family="sans-serif">${labels[i]}</text>`,
      `<text x="${(x + 0.35 * bw).toFixed(1)}" y="${(yTop - 4).toFixed(1)}" text-anchor="middle" font-size="10" font-family="sans-serif">${fmt(v)}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n");
}
