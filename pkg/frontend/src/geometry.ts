/** Polyline math shared by stroke capture and curve hit-testing. */

export interface Point {
  x: number;
  y: number;
}

export function dist(a: Point, b: Point): number {
  return Math.hypot(a.x - b.x, a.y - b.y);
}

export function polylineLength(points: Point[]): number {
  let total = 0;
  for (let i = 1; i < points.length; i++) total += dist(points[i - 1], points[i]);
  return total;
}

/** Cumulative arc length normalized to [0, 1] (zeros for degenerate input). */
export function arcParams(points: Point[]): number[] {
  const cum = [0];
  for (let i = 1; i < points.length; i++) {
    cum.push(cum[i - 1] + dist(points[i - 1], points[i]));
  }
  const total = cum[cum.length - 1];
  if (total <= 0) return points.map((_, i) => i / Math.max(points.length - 1, 1));
  return cum.map((c) => c / total);
}

/** Point on the polyline at normalized arc parameter t. */
export function evalAt(points: Point[], t: number): Point {
  const params = arcParams(points);
  const tt = Math.min(Math.max(t, 0), 1);
  for (let i = 1; i < points.length; i++) {
    if (tt <= params[i]) {
      const span = params[i] - params[i - 1];
      const u = span > 0 ? (tt - params[i - 1]) / span : 0;
      return {
        x: points[i - 1].x + u * (points[i].x - points[i - 1].x),
        y: points[i - 1].y + u * (points[i].y - points[i - 1].y),
      };
    }
  }
  return { ...points[points.length - 1] };
}

/**
 * Resample so consecutive points are at most `spacing` px apart (endpoints
 * preserved). Freehand strokes go through this before being posted.
 */
export function resampleMaxSpacing(points: Point[], spacing = 2): Point[] {
  if (points.length < 2) return points.map((p) => ({ ...p }));
  const total = polylineLength(points);
  if (total === 0) return [{ ...points[0] }, { ...points[points.length - 1] }];
  const n = Math.max(Math.ceil(total / spacing) + 1, 2);
  const out: Point[] = [];
  for (let i = 0; i < n; i++) out.push(evalAt(points, i / (n - 1)));
  return out;
}

/** Closest point on a polyline: squared distance and normalized parameter. */
export function closestParam(points: Point[], p: Point): { t: number; d: number } {
  const params = arcParams(points);
  let best = { t: 0, d: Infinity };
  for (let i = 1; i < points.length; i++) {
    const a = points[i - 1];
    const b = points[i];
    const vx = b.x - a.x;
    const vy = b.y - a.y;
    const len2 = vx * vx + vy * vy;
    let u = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0;
    u = Math.min(Math.max(u, 0), 1);
    const qx = a.x + u * vx;
    const qy = a.y + u * vy;
    const d = Math.hypot(p.x - qx, p.y - qy);
    if (d < best.d) {
      best = { t: params[i - 1] + u * (params[i] - params[i - 1]), d };
    }
  }
  return best;
}
