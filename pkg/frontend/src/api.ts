/** Typed client for the engine's HTTP JSON API. */

export type View = "frontal" | "side";

export interface CurveData {
  name: string;
  points: [number, number][];
  closed: boolean;
}

export interface SketchData {
  view: View;
  curves: CurveData[];
}

export interface EditRequestBody {
  view: View;
  curve: string;
  s0: number;
  s1: number;
  replacement: [number, number][];
}

export interface EditPreview {
  sketch: SketchData;
  station_error: number;
  lambda_min: number;
  lambda_max: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
    public stage?: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

export class ForgeApi {
  constructor(public base: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.base + path, init);
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      throw new ApiError(
        resp.status,
        (body as { error?: string; detail?: string }).error ??
          (body as { detail?: string }).detail ??
          resp.statusText,
        (body as { stage?: string }).stage,
      );
    }
    return body as T;
  }

  newSyntheticSession(opts: Record<string, unknown> = {}): Promise<{ id: string }> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ synthetic: opts }),
    });
  }

  getSketch(id: string, view: View): Promise<SketchData> {
    return this.request(`/sessions/${id}/sketch?view=${view}`);
  }

  postEdit(id: string, edit: EditRequestBody): Promise<EditPreview> {
    return this.request(`/sessions/${id}/edits`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(edit),
    });
  }

  synthesize(id: string, dumpStages = false): Promise<{ result: string }> {
    return this.request(`/sessions/${id}/synthesize`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ dump_stages: dumpStages }),
    });
  }

  state(id: string): Promise<Record<string, unknown>> {
    return this.request(`/sessions/${id}/state`);
  }

  resultUrl(id: string): string {
    return `${this.base}/sessions/${id}/result`;
  }

  photoUrl(id: string): string {
    return `${this.base}/sessions/${id}/photo`;
  }
}
