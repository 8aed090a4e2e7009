/** Gaussian kernel density estimate with the reference-rule bandwidth. */

function quantile(sorted: number[], q: number): number {
  const n = sorted.length;
  if (n === 1) return sorted[0];
  const pos = q * (n - 1);
  const lo = Math.floor(pos);
  const hi = Math.min(lo + 1, n - 1);
  const frac = pos - lo;
  return sorted[lo] * (1 - frac) + sorted[hi] * frac;
}

/** Silverman bandwidth: 0.9 * min(sd, IQR/1.34) * n^(-1/5). */
export function silvermanBandwidth(values: number[]): number {
  const n = values.length;
  if (n < 2) throw new Error("bandwidth needs at least 2 values");
  const mean = values.reduce((a, b) => a + b, 0) / n;
  const ss = values.reduce((a, b) => a + (b - mean) * (b - mean), 0);
  const sd = Math.sqrt(ss / (n - 1));
  const sorted = [...values].sort((a, b) => a - b);
  const iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
  let spread = Math.min(sd, iqr / 1.34);
  if (spread <= 0) spread = sd > 0 ? sd : 1e-6;
  return 0.9 * spread * Math.pow(n, -0.2);
}

export interface Density {
  x: number[];
  y: number[];
}

const INV_SQRT_2PI = 1 / Math.sqrt(2 * Math.PI);

export function kde(values: number[], gridSize = 200): Density {
  const h = silvermanBandwidth(values);
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  lo -= 3 * h;
  hi += 3 * h;
  const x: number[] = [];
  const y: number[] = [];
  const step = (hi - lo) / (gridSize - 1);
  const n = values.length;
  for (let i = 0; i < gridSize; i++) {
    const xi = lo + i * step;
    let acc = 0;
    for (const v of values) {
      const z = (xi - v) / h;
      acc += Math.exp(-0.5 * z * z);
    }
    x.push(xi);
    y.push((acc * INV_SQRT_2PI) / (n * h));
  }
  return { x, y };
}
