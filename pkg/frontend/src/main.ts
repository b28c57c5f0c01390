/** Demo page entry: create (or join) a session and wire the editor UI. */

import { ForgeApi } from "./api.js";
import { CanvasEditor } from "./editor.js";
import { SketchEditor } from "./state.js";

async function boot(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const api = new ForgeApi(params.get("api") ?? "http://127.0.0.1:8000");
  let sessionId = params.get("session");
  if (!sessionId) {
    const created = await api.newSyntheticSession({ seed: 0, size: 512 });
    sessionId = created.id;
  }

  const state = new SketchEditor(api, sessionId);
  await state.init();

  const canvas = document.getElementById("sketch") as HTMLCanvasElement;
  const photo = new Image();
  photo.crossOrigin = "anonymous";
  photo.src = api.photoUrl(sessionId);
  const banner = document.getElementById("banner")!;
  const result = document.getElementById("result") as HTMLImageElement;

  const editor = new CanvasEditor(canvas, state, api, refresh);
  photo.onload = refresh;

  function refresh(): void {
    editor.render(photo);
    const notes: string[] = [];
    if (state.stale) notes.push("connection lost: editing disabled");
    if (state.warning) notes.push(state.warning);
    if (state.pendingEdits > 0) notes.push(`${state.pendingEdits} edit(s) pending`);
    banner.textContent = notes.join(" | ");
    banner.style.display = notes.length ? "block" : "none";
  }

  (document.getElementById("tool-erase") as HTMLButtonElement).onclick = () => {
    editor.setTool("erase");
  };
  (document.getElementById("tool-draw") as HTMLButtonElement).onclick = () => {
    editor.setTool("draw");
  };
  (document.getElementById("toggle-view") as HTMLButtonElement).onclick = () => {
    void state.toggleView().then(refresh);
  };
  (document.getElementById("synthesize") as HTMLButtonElement).onclick = () => {
    void state.synthesize().then(() => {
      result.src = `${api.resultUrl(sessionId!)}?v=${state.resultVersion}`;
      refresh();
    });
  };
  refresh();
}

void boot();
