// Minimal CSV reader for the run-directory tables: header row plus
// 17-significant-digit decimal columns (strings pass through untouched).

export interface Table {
  header: string[];
  rows: string[][];
}

export function parseCsv(text: string): Table {
  const lines = text
    .split(/\r?\n/)
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new Error("empty CSV");
  }
  const header = lines[0].split(",");
  const rows = lines.slice(1).map((l) => l.split(","));
  for (const row of rows) {
    if (row.length !== header.length) {
      throw new Error(
        `CSV row has ${row.length} fields, header has ${header.length}`,
      );
    }
  }
  return { header, rows };
}

export function column(table: Table, name: string): number[] {
  const idx = table.header.indexOf(name);
  if (idx < 0) {
    throw new Error(`column ${name} not found (have ${table.header.join()})`);
  }
  return table.rows.map((r) => Number(r[idx]));
}

export function textColumn(table: Table, name: string): string[] {
  const idx = table.header.indexOf(name);
  if (idx < 0) {
    throw new Error(`column ${name} not found`);
  }
  return table.rows.map((r) => r[idx]);
}
