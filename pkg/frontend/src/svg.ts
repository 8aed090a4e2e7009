/**
 * Minimal deterministic SVG builder. All coordinates are emitted with a
 * fixed number of decimals so identical inputs produce identical bytes.
 */

const PRECISION = 2;

export function fmt(v: number): string {
  const s = v.toFixed(PRECISION);
  return s === "-0.00" ? "0.00" : s;
}

function escapeText(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;");
}

function escapeAttr(s: string): string {
  return escapeText(s).replace(/"/g, "&quot;");
}

export class Svg {
  private parts: string[] = [];
  readonly width: number;
  readonly height: number;

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
  }

  private attrs(a: Record<string, string | number>): string {
    const keys = Object.keys(a);
    return keys
      .map((k) => {
        const v = a[k];
        const s = typeof v === "number" ? fmt(v) : escapeAttr(v);
        return ` ${k}="${s}"`;
      })
      .join("");
  }

  line(x1: number, y1: number, x2: number, y2: number, style: Record<string, string | number> = {}): void {
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}"${this.attrs(style)}/>`,
    );
  }

  circle(cx: number, cy: number, r: number, style: Record<string, string | number> = {}): void {
    this.parts.push(
      `<circle cx="${fmt(cx)}" cy="${fmt(cy)}" r="${fmt(r)}"${this.attrs(style)}/>`,
    );
  }

  rect(x: number, y: number, w: number, h: number, style: Record<string, string | number> = {}): void {
    this.parts.push(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(h)}"${this.attrs(style)}/>`,
    );
  }

  polyline(points: Array<[number, number]>, style: Record<string, string | number> = {}): void {
    const pts = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
    this.parts.push(`<polyline points="${pts}" fill="none"${this.attrs(style)}/>`);
  }

  text(x: number, y: number, content: string, style: Record<string, string | number> = {}): void {
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}"${this.attrs(style)}>${escapeText(content)}</text>`,
    );
  }

  render(): string {
    const head =
      `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" height="${this.height}" ` +
      `viewBox="0 0 ${this.width} ${this.height}" font-family="sans-serif">`;
    return [head, ...this.parts, "</svg>", ""].join("\n");
  }
}

export const PALETTE = [
  "#4269d0",
  "#efb118",
  "#ff725c",
  "#6cc5b0",
  "#3ca951",
  "#ff8ab7",
  "#a463f2",
  "#97bbf5",
  "#9c6b4e",
  "#9498a0",
];

export function seriesColor(i: number): string {
  return PALETTE[i % PALETTE.length];
}
