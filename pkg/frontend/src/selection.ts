// Screen-space selection geometry, kept free of renderer types so the same
// code runs under tests and in the browser.

export interface Vec2 {
  x: number;
  y: number;
}

/** Project 3D points through a column-major 4x4 view-projection matrix to
 * normalized device coordinates; w <= 0 (behind the camera) yields null. */
export function projectPoints(
  coords: Float32Array | number[][],
  viewProj: number[]
): (Vec2 | null)[] {
  const n = Array.isArray(coords) ? coords.length : coords.length / 3;
  const out: (Vec2 | null)[] = new Array(n);
  const m = viewProj;
  for (let i = 0; i < n; i++) {
    const x = Array.isArray(coords) ? coords[i][0] : coords[3 * i];
    const y = Array.isArray(coords) ? coords[i][1] : coords[3 * i + 1];
    const z = Array.isArray(coords) ? coords[i][2] : coords[3 * i + 2];
    const cx = m[0] * x + m[4] * y + m[8] * z + m[12];
    const cy = m[1] * x + m[5] * y + m[9] * z + m[13];
    const cw = m[3] * x + m[7] * y + m[11] * z + m[15];
    out[i] = cw > 0 ? { x: cx / cw, y: cy / cw } : null;
  }
  return out;
}

export function pointInRect(p: Vec2, a: Vec2, b: Vec2): boolean {
  const x0 = Math.min(a.x, b.x);
  const x1 = Math.max(a.x, b.x);
  const y0 = Math.min(a.y, b.y);
  const y1 = Math.max(a.y, b.y);
  return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
}

/** Even-odd rule point-in-polygon. */
export function pointInPolygon(p: Vec2, polygon: Vec2[]): boolean {
  let inside = false;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const a = polygon[i];
    const b = polygon[j];
    const crosses =
      a.y > p.y !== b.y > p.y &&
      p.x < ((b.x - a.x) * (p.y - a.y)) / (b.y - a.y) + a.x;
    if (crosses) inside = !inside;
  }
  return inside;
}

export function selectRect(
  projected: (Vec2 | null)[],
  a: Vec2,
  b: Vec2
): number[] {
  const out: number[] = [];
  projected.forEach((p, i) => {
    if (p && pointInRect(p, a, b)) out.push(i);
  });
  return out;
}

export function selectLasso(projected: (Vec2 | null)[], polygon: Vec2[]): number[] {
  const out: number[] = [];
  projected.forEach((p, i) => {
    if (p && pointInPolygon(p, polygon)) out.push(i);
  });
  return out;
}
