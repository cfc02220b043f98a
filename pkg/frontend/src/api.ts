import type {
  EcgWindow,
  HemoReport,
  PlaybackState,
  PoseJson,
  SceneMeta,
  ServiceClient,
  SessionState,
} from "./types.js";

export class HttpStatusError extends Error {
  constructor(
    readonly status: number,
    readonly kind: string,
    message: string,
  ) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let kind = "http";
    let message = response.statusText;
    try {
      const body = await response.json();
      kind = body?.error?.type ?? kind;
      message = body?.error?.message ?? message;
    } catch {
      /* non-JSON error body */
    }
    throw new HttpStatusError(response.status, kind, message);
  }
  return (await response.json()) as T;
}

/** Thin typed wrapper around the service endpoints; all state lives server-side. */
export class ApiClient implements ServiceClient {
  constructor(private readonly base: string = "") {}

  async scene(): Promise<SceneMeta> {
    return asJson(await fetch(`${this.base}/api/scene`));
  }

  async session(): Promise<SessionState> {
    return asJson(await fetch(`${this.base}/api/session`));
  }

  async updateSession(body: {
    pose?: PoseJson;
    playback?: Partial<PlaybackState>;
    version: number;
  }): Promise<SessionState> {
    return asJson(
      await fetch(`${this.base}/api/session`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      }),
    );
  }

  renderUrl(params: {
    alpha_deg: number;
    beta_deg: number;
    phase: number;
    enhance: boolean;
    w?: number;
    h?: number;
  }): string {
    const q = new URLSearchParams({
      alpha_deg: String(params.alpha_deg),
      beta_deg: String(params.beta_deg),
      phase: String(params.phase),
      enhance: params.enhance ? "1" : "0",
    });
    if (params.w) q.set("w", String(params.w));
    if (params.h) q.set("h", String(params.h));
    return `${this.base}/api/render?${q.toString()}`;
  }

  async fetchFrame(url: string): Promise<Blob> {
    const response = await fetch(url);
    if (!response.ok) {
      throw new HttpStatusError(response.status, "render", response.statusText);
    }
    return response.blob();
  }

  async ecg(fromS: number, toS: number): Promise<EcgWindow> {
    return asJson(await fetch(`${this.base}/api/ecg?from=${fromS}&to=${toS}`));
  }

  async hemodynamics(): Promise<HemoReport> {
    return asJson(await fetch(`${this.base}/api/hemodynamics`));
  }

  streamUrl(fps: number): string {
    return `${this.base}/api/stream?fps=${fps}`;
  }
}
