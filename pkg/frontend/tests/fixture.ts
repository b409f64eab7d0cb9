/**
 * Deterministic synthetic dataset for UI tests: three recorded covariates,
 * two unrecorded concepts that drive treatment and outcome, and a notes
 * column. The same CSV string uploads to the same content-addressed dataset
 * id, so every test file shares one dataset per server.
 */

import type { RolesRequest } from "../src/api.js";

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function makeFixtureCsv(n = 120): string {
  const rand = mulberry32(20240817);
  const gauss = (): number => {
    let u = 0;
    while (u === 0) u = rand();
    const v = rand();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  };
  const r4 = (x: number) => x.toFixed(4);
  const lines = ["x,y,z1,z2,z3,u1,u2,note"];
  for (let k = 0; k < n; k++) {
    const z1 = gauss();
    const z2 = gauss();
    const z3 = gauss();
    const u1 = gauss();
    const u2 = gauss();
    const x = z1 + 0.8 * u1 + 0.5 * gauss() > 0 ? 1 : 0;
    const y = z2 + u2 + 0.3 * x + 0.5 * gauss() > 0 ? 1 : 0;
    lines.push(
      [x, y, r4(z1), r4(z2), r4(z3), r4(u1), r4(u2), `unit ${k}`].join(","),
    );
  }
  return lines.join("\n") + "\n";
}

export const FIXTURE_ROLES: RolesRequest = {
  treatment: "x",
  outcome: "y",
  covariates: ["z1", "z2", "z3"],
  unobserved: ["u1", "u2"],
  notes: "note",
};
