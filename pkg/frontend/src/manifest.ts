// Run-directory manifest loading with mandatory hash verification: the
// manifest is the completion marker and every consumed file must match
// its recorded sha256 before any rendering happens.

import { createHash } from "node:crypto";
import { existsSync, readFileSync } from "node:fs";
import { join } from "node:path";

export interface Manifest {
  version: string;
  config: Record<string, unknown>;
  grid: {
    topology: string;
    node_count: number;
    spacing: number;
    fiber_dim: number;
  };
  status: string;
  t_first: number;
  t_last: number;
  t_est: number | null;
  c0_measured: number | null;
  files: Record<string, string>;
}

export class HashMismatchError extends Error {}

export function sha256(path: string): string {
  return createHash("sha256").update(readFileSync(path)).digest("hex");
}

export function loadManifest(runDir: string): Manifest {
  const path = join(runDir, "manifest.json");
  if (!existsSync(path)) {
    throw new Error(`no manifest.json under ${runDir}`);
  }
  const manifest = JSON.parse(readFileSync(path, "utf8")) as Manifest;
  for (const [name, digest] of Object.entries(manifest.files)) {
    const filePath = join(runDir, name);
    if (!existsSync(filePath)) {
      throw new HashMismatchError(`listed file missing: ${name}`);
    }
    const actual = sha256(filePath);
    if (actual !== digest) {
      throw new HashMismatchError(`hash mismatch for ${name}`);
    }
  }
  return manifest;
}
