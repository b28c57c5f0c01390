/** Canvas rendering and pointer wiring around the SketchEditor state. */

import { SketchEditor } from "./state.js";
import { ForgeApi } from "./api.js";
import { Point } from "./geometry.js";

type Tool = "erase" | "draw";

export class CanvasEditor {
  private tool: Tool = "erase";
  private drawing = false;

  constructor(
    private canvas: HTMLCanvasElement,
    private state: SketchEditor,
    private api: ForgeApi,
    private onChange: () => void,
  ) {
    canvas.addEventListener("pointerdown", (e) => this.down(e));
    canvas.addEventListener("pointermove", (e) => this.move(e));
    canvas.addEventListener("pointerup", (e) => this.up(e));
  }

  setTool(tool: Tool): void {
    this.tool = tool;
  }

  private pos(e: PointerEvent): Point {
    const r = this.canvas.getBoundingClientRect();
    return {
      x: ((e.clientX - r.left) / r.width) * this.canvas.width,
      y: ((e.clientY - r.top) / r.height) * this.canvas.height,
    };
  }

  private down(e: PointerEvent): void {
    if (!this.state.editingEnabled) return;
    this.drawing = true;
    this.canvas.setPointerCapture(e.pointerId);
    this.state.beginStroke(this.pos(e));
    this.onChange();
  }

  private move(e: PointerEvent): void {
    if (!this.drawing) return;
    this.state.extendStroke(this.pos(e));
    this.onChange();
  }

  private up(e: PointerEvent): void {
    if (!this.drawing) return;
    this.drawing = false;
    this.canvas.releasePointerCapture(e.pointerId);
    if (this.tool === "erase") {
      this.state.endErase();
      this.onChange();
    } else {
      const p = this.state.endDraw();
      this.onChange();
      if (p) void p.then(() => this.onChange());
    }
  }

  render(photo: HTMLImageElement | null): void {
    const ctx = this.canvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (photo && photo.complete && photo.naturalWidth > 0) {
      ctx.drawImage(photo, 0, 0, this.canvas.width, this.canvas.height);
    } else {
      ctx.fillStyle = "#222";
      ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    }
    const sketch = this.state.sketch;
    if (sketch) {
      for (const curve of sketch.curves) {
        const erased =
          this.state.eraseMark && this.state.eraseMark.curve === curve.name;
        ctx.strokeStyle = erased ? "#888" : "#35d24a";
        ctx.lineWidth = 2;
        ctx.beginPath();
        curve.points.forEach(([x, y], i) =>
          i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y),
        );
        ctx.stroke();
      }
    }
    const live = this.state.stroke;
    if (live && live.length > 1) {
      ctx.strokeStyle = this.tool === "erase" ? "#ffb300" : "#4ab3ff";
      ctx.lineWidth = 2;
      ctx.beginPath();
      live.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
      ctx.stroke();
    }
    const rejected = this.state.rejectedStroke;
    if (rejected && rejected.length > 1) {
      ctx.strokeStyle = "#ff3333";
      ctx.lineWidth = 2;
      ctx.beginPath();
      rejected.forEach((p, i) =>
        i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y),
      );
      ctx.stroke();
    }
  }
}
