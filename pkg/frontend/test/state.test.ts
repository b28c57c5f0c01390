import assert from "node:assert/strict";
import { test } from "node:test";

import { ApiError, EditPreview, EditRequestBody, SketchData } from "../src/api.js";
import { SketchEditor } from "../src/state.js";

function sketchFixture(view: "frontal" | "side" = "frontal"): SketchData {
  return {
    view,
    curves: [
      {
        name: "mouth",
        points: [
          [100, 200],
          [120, 205],
          [140, 205],
          [160, 200],
        ],
        closed: false,
      },
      {
        name: "nose",
        points: [
          [130, 120],
          [130, 150],
          [130, 180],
        ],
        closed: false,
      },
    ],
  };
}

interface Deferred {
  resolve: (p: EditPreview) => void;
  reject: (e: unknown) => void;
}

class FakeApi {
  edits: EditRequestBody[] = [];
  deferred: Deferred[] = [];
  failNetwork = false;
  rejectNext = false;

  async getSketch(_id: string, view: "frontal" | "side"): Promise<SketchData> {
    if (this.failNetwork) throw new Error("network down");
    return sketchFixture(view);
  }

  postEdit(_id: string, edit: EditRequestBody): Promise<EditPreview> {
    if (this.failNetwork) return Promise.reject(new Error("network down"));
    this.edits.push(edit);
    if (this.rejectNext) {
      this.rejectNext = false;
      return Promise.reject(new ApiError(422, "unsnappable edit", "apply_edit"));
    }
    return new Promise((resolve, reject) => {
      this.deferred.push({
        resolve: () =>
          resolve({
            sketch: sketchFixture(),
            station_error: 0.4,
            lambda_min: 0.9,
            lambda_max: 1.2,
          }),
        reject,
      });
    });
  }

  flush(): void {
    const d = this.deferred.shift();
    if (d) d.resolve(undefined as never);
  }

  async synthesize(): Promise<{ result: string }> {
    return { result: "result.png" };
  }
}

function makeEditor(): { ed: SketchEditor; api: FakeApi } {
  const api = new FakeApi();
  const ed = new SketchEditor(api as never, "s1");
  return { ed, api };
}

function dragAlongMouth(ed: SketchEditor): void {
  ed.beginStroke({ x: 108, y: 202 });
  ed.extendStroke({ x: 120, y: 206 });
  ed.extendStroke({ x: 135, y: 207 });
  ed.extendStroke({ x: 150, y: 203 });
  ed.endErase();
}

test("erase drag along a curve marks an interval", async () => {
  const { ed } = makeEditor();
  await ed.init();
  dragAlongMouth(ed);
  assert.ok(ed.eraseMark);
  assert.equal(ed.eraseMark!.curve, "mouth");
  assert.ok(ed.eraseMark!.s0 < ed.eraseMark!.s1);
});

test("erase drag far from curves warns and marks nothing", async () => {
  const { ed } = makeEditor();
  await ed.init();
  ed.beginStroke({ x: 400, y: 400 });
  ed.extendStroke({ x: 420, y: 420 });
  ed.endErase();
  assert.equal(ed.eraseMark, null);
  assert.ok(ed.warning);
});

test("single-point stroke is ignored", async () => {
  const { ed, api } = makeEditor();
  await ed.init();
  dragAlongMouth(ed);
  ed.beginStroke({ x: 110, y: 210 });
  const res = ed.endDraw();
  assert.equal(res, null);
  assert.equal(api.edits.length, 0);
});

test("draw without erase mark warns", async () => {
  const { ed, api } = makeEditor();
  await ed.init();
  ed.beginStroke({ x: 110, y: 210 });
  ed.extendStroke({ x: 130, y: 215 });
  const res = ed.endDraw();
  assert.equal(res, null);
  assert.ok(ed.warning);
  assert.equal(api.edits.length, 0);
});

test("accepted edit replaces sketch with server acknowledgment", async () => {
  const { ed, api } = makeEditor();
  await ed.init();
  dragAlongMouth(ed);
  ed.beginStroke({ x: 110, y: 210 });
  ed.extendStroke({ x: 130, y: 215 });
  ed.extendStroke({ x: 150, y: 208 });
  const promise = ed.endDraw()!;
  assert.equal(ed.pendingEdits, 1);
  api.flush();
  const preview = await promise;
  assert.ok(preview);
  assert.equal(ed.pendingEdits, 0);
  assert.equal(ed.requestLog.length, 1);
  const spacing = ed.requestLog[0].replacement;
  for (let i = 1; i < spacing.length; i++) {
    const d = Math.hypot(
      spacing[i][0] - spacing[i - 1][0],
      spacing[i][1] - spacing[i - 1][1],
    );
    assert.ok(d <= 2 + 1e-9);
  }
});

test("second stroke queues behind the in-flight edit", async () => {
  const { ed, api } = makeEditor();
  await ed.init();
  dragAlongMouth(ed);
  ed.beginStroke({ x: 110, y: 210 });
  ed.extendStroke({ x: 150, y: 212 });
  const first = ed.endDraw()!;
  dragAlongMouth(ed);
  ed.beginStroke({ x: 112, y: 195 });
  ed.extendStroke({ x: 148, y: 193 });
  const second = ed.endDraw()!;
  assert.equal(ed.pendingEdits, 2);
  assert.equal(api.edits.length, 1); // only one actually sent
  api.flush();
  await first;
  assert.equal(api.edits.length, 2);
  api.flush();
  await second;
  assert.equal(ed.pendingEdits, 0);
  assert.equal(ed.requestLog.length, 2);
});

test("server rejection keeps state and highlights the stroke red", async () => {
  const { ed, api } = makeEditor();
  await ed.init();
  const before = JSON.stringify(ed.sketch);
  api.rejectNext = true;
  dragAlongMouth(ed);
  ed.beginStroke({ x: 110, y: 240 });
  ed.extendStroke({ x: 150, y: 260 });
  const res = await ed.endDraw()!;
  assert.equal(res, null);
  assert.equal(JSON.stringify(ed.sketch), before);
  assert.ok(ed.rejectedStroke && ed.rejectedStroke.length >= 2);
  assert.ok(ed.warning);
  assert.equal(ed.stale, false);
});

test("view toggle discards stroke and queued edits with a warning", async () => {
  const { ed, api } = makeEditor();
  await ed.init();
  dragAlongMouth(ed);
  ed.beginStroke({ x: 110, y: 210 });
  ed.extendStroke({ x: 150, y: 212 });
  const first = ed.endDraw()!;
  dragAlongMouth(ed);
  ed.beginStroke({ x: 112, y: 195 });
  ed.extendStroke({ x: 148, y: 193 });
  const queued = ed.endDraw()!;
  ed.beginStroke({ x: 120, y: 200 }); // in-progress stroke
  const togglePromise = ed.toggleView();
  assert.equal(ed.stroke, null); // discarded immediately
  api.flush(); // let the in-flight edit finish
  await first;
  const sketch = await togglePromise;
  assert.ok(sketch);
  assert.equal(ed.view, "side");
  assert.equal(await queued, null); // queued edit dropped
  assert.match(ed.warning ?? "", /discarded/);
  assert.equal(api.edits.length, 1);
});

test("network failure marks the session stale and disables editing", async () => {
  const { ed, api } = makeEditor();
  await ed.init();
  api.failNetwork = true;
  dragAlongMouth(ed);
  assert.equal(ed.editingEnabled, true);
  ed.beginStroke({ x: 110, y: 210 });
  ed.extendStroke({ x: 150, y: 212 });
  await assert.rejects(ed.endDraw()!);
  assert.equal(ed.stale, true);
  assert.equal(ed.editingEnabled, false);
});
