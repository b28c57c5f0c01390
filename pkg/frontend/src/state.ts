/**
 * Server-authoritative sketch editing state machine.
 *
 * The displayed sketch is always the last server-acknowledged one; pointer
 * gestures only build an erase mark and a freehand stroke, which become a
 * single edit request. One edit is in flight at a time, later strokes queue.
 */

import {
  ApiError,
  EditPreview,
  EditRequestBody,
  ForgeApi,
  SketchData,
  View,
} from "./api.js";
import { Point, closestParam, resampleMaxSpacing } from "./geometry.js";

export interface EraseMark {
  curve: string;
  s0: number;
  s1: number;
}

interface QueueItem {
  edit: EditRequestBody;
  resolve: (preview: EditPreview | null) => void;
  reject: (err: unknown) => void;
}

export const ERASE_HIT_RADIUS = 8;
export const STROKE_SPACING = 2;

export class SketchEditor {
  view: View = "frontal";
  /** last server-acknowledged sketch (never mutated locally) */
  sketch: SketchData | null = null;
  /** in-progress freehand stroke */
  stroke: Point[] | null = null;
  eraseMark: EraseMark | null = null;
  /** stroke the server rejected, kept for red highlighting */
  rejectedStroke: Point[] | null = null;
  lastPreview: EditPreview | null = null;
  warning: string | null = null;
  /** network failure: banner shown, editing disabled */
  stale = false;
  /** bumps whenever a new synthesis result is available */
  resultVersion = 0;
  readonly requestLog: EditRequestBody[] = [];

  private queue: QueueItem[] = [];
  private inFlight: Promise<void> | null = null;

  constructor(
    private api: ForgeApi,
    public sessionId: string,
    public hitRadius: number = ERASE_HIT_RADIUS,
  ) {}

  get editingEnabled(): boolean {
    return !this.stale && this.sketch !== null;
  }

  get pendingEdits(): number {
    return this.queue.length + (this.inFlight ? 1 : 0);
  }

  async init(): Promise<void> {
    this.sketch = await this.api.getSketch(this.sessionId, this.view);
  }

  // -- gestures --------------------------------------------------------

  beginStroke(p: Point): void {
    if (!this.editingEnabled) return;
    this.stroke = [p];
    this.rejectedStroke = null;
  }

  extendStroke(p: Point): void {
    if (this.stroke) this.stroke.push(p);
  }

  /** Finish an erase drag: mark [s0, s1] on the curve the drag followed. */
  endErase(): EraseMark | null {
    const samples = this.stroke;
    this.stroke = null;
    if (!samples || samples.length < 2 || !this.sketch) return null;
    const hits = new Map<string, { count: number; lo: number; hi: number }>();
    for (const p of samples) {
      for (const curve of this.sketch.curves) {
        const pts = curve.points.map(([x, y]) => ({ x, y }));
        const { t, d } = closestParam(pts, p);
        if (d > this.hitRadius) continue;
        const h = hits.get(curve.name) ?? { count: 0, lo: 1, hi: 0 };
        h.count += 1;
        h.lo = Math.min(h.lo, t);
        h.hi = Math.max(h.hi, t);
        hits.set(curve.name, h);
      }
    }
    let best: { name: string; count: number; lo: number; hi: number } | null = null;
    for (const [name, h] of hits) {
      if (!best || h.count > best.count) best = { name, ...h };
    }
    if (!best || best.count < 2 || best.hi - best.lo < 1e-3) {
      this.warning = "erase gesture did not follow a curve";
      return null;
    }
    this.eraseMark = { curve: best.name, s0: best.lo, s1: best.hi };
    this.warning = null;
    return this.eraseMark;
  }

  /**
   * Finish a freehand redraw: resample to <= 2 px spacing and post the edit
   * for the previously erased interval. Returns null for ignored strokes.
   */
  endDraw(): Promise<EditPreview | null> | null {
    const samples = this.stroke;
    this.stroke = null;
    if (!samples || samples.length < 2) return null; // 1-point strokes ignored
    if (!this.eraseMark) {
      this.warning = "erase a curve segment before redrawing";
      return null;
    }
    const mark = this.eraseMark;
    this.eraseMark = null;
    const pts = resampleMaxSpacing(samples, STROKE_SPACING);
    const edit: EditRequestBody = {
      view: this.view,
      curve: mark.curve,
      s0: mark.s0,
      s1: mark.s1,
      replacement: pts.map((p) => [p.x, p.y] as [number, number]),
    };
    return this.submit(edit, samples);
  }

  // -- edit submission (single in-flight, later strokes queued) ---------

  submit(edit: EditRequestBody, strokeForHighlight?: Point[]): Promise<EditPreview | null> {
    return new Promise((resolve, reject) => {
      this.queue.push({
        edit,
        resolve: (preview) => {
          if (preview === null && strokeForHighlight) {
            this.rejectedStroke = strokeForHighlight;
          }
          resolve(preview);
        },
        reject,
      });
      this.pump();
    });
  }

  private pump(): void {
    if (this.inFlight || this.queue.length === 0) return;
    const item = this.queue.shift()!;
    this.inFlight = (async () => {
      this.requestLog.push(item.edit);
      try {
        const preview = await this.api.postEdit(this.sessionId, item.edit);
        this.sketch = preview.sketch; // server-acknowledged state
        this.lastPreview = preview;
        this.warning = null;
        item.resolve(preview);
      } catch (err) {
        if (err instanceof ApiError && err.status === 422) {
          this.warning = err.detail; // stroke rejected; state unchanged
          item.resolve(null);
        } else {
          this.stale = true;
          item.reject(err);
        }
      } finally {
        this.inFlight = null;
        this.pump();
      }
    })();
  }

  async idle(): Promise<void> {
    while (this.inFlight) {
      await this.inFlight.catch(() => undefined);
    }
  }

  // -- view switching ----------------------------------------------------

  /**
   * Switch frontal/side. Discards the in-progress stroke and any queued
   * edits (with a warning), then fetches the sketch regenerated from the
   * latest exaggerated model.
   */
  async toggleView(): Promise<SketchData | null> {
    const target: View = this.view === "frontal" ? "side" : "frontal";
    this.stroke = null;
    this.eraseMark = null;
    const dropped = this.queue.length;
    for (const item of this.queue) item.resolve(null);
    this.queue = [];
    await this.idle();
    if (dropped > 0) {
      this.warning = `${dropped} pending edit(s) discarded by view switch`;
    }
    try {
      const sketch = await this.api.getSketch(this.sessionId, target);
      this.view = target;
      this.sketch = sketch;
      this.stale = false;
      return sketch;
    } catch {
      this.stale = true; // banner shown, editing disabled
      return null;
    }
  }

  async synthesize(): Promise<string | null> {
    try {
      const res = await this.api.synthesize(this.sessionId);
      this.resultVersion += 1;
      return res.result;
    } catch (err) {
      if (err instanceof ApiError) {
        this.warning = err.detail;
        return null;
      }
      this.stale = true;
      return null;
    }
  }
}
