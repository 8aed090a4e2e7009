/** Linear axis scale with nice tick placement. */

export interface Scale {
  domain: [number, number];
  range: [number, number];
  map(x: number): number;
}

export function linearScale(
  domain: [number, number],
  range: [number, number],
): Scale {
  let [d0, d1] = domain;
  if (d0 === d1) {
    // degenerate domain: pad so every point lands mid-range
    d0 -= 0.5;
    d1 += 0.5;
  }
  const [r0, r1] = range;
  const k = (r1 - r0) / (d1 - d0);
  return {
    domain: [d0, d1],
    range,
    map: (x: number) => r0 + (x - d0) * k,
  };
}

/** Round tick step to the nearest 1/2/5 multiple of a power of ten. */
export function tickStep(span: number, count: number): number {
  const raw = Math.abs(span) / Math.max(1, count);
  const mag = Math.pow(10, Math.floor(Math.log10(raw)));
  const norm = raw / mag;
  if (norm >= 5) return 10 * mag;
  if (norm >= 2) return 5 * mag;
  if (norm >= 1) return 2 * mag;
  return mag;
}

export function ticks(domain: [number, number], count = 5): number[] {
  const [d0, d1] = domain;
  if (d0 === d1) return [d0];
  const step = tickStep(d1 - d0, count);
  const start = Math.ceil(d0 / step) * step;
  const out: number[] = [];
  for (let t = start; t <= d1 + step * 1e-9; t += step) {
    // snap away float accumulation so labels stay clean
    out.push(Number(t.toPrecision(12)));
  }
  return out;
}

export function extent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!Number.isFinite(lo) || !Number.isFinite(hi)) {
    throw new Error("extent of empty or non-finite data");
  }
  return [lo, hi];
}

/** Widen a domain by a fractional margin on both sides. */
export function padded(domain: [number, number], frac = 0.05): [number, number] {
  const [lo, hi] = domain;
  const pad = (hi - lo) * frac || 0.5;
  return [lo - pad, hi + pad];
}

export function formatTick(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e5 || a < 1e-3) return v.toExponential(1);
  return String(Number(v.toPrecision(6)));
}
