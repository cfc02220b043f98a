import { vi } from "vitest";
import type {
  EcgWindow,
  HemoReport,
  PoseJson,
  SceneMeta,
  ServiceClient,
  SessionState,
} from "../src/types.js";

export const DEFAULT_POSE: PoseJson = {
  alpha_deg: 0,
  beta_deg: 0,
  sid_mm: 1200,
  spd_mm: 800,
  fd_mm: 300,
  n_u: 512,
  n_v: 512,
  table_mm: [0, 0, 0],
};

export const HEMO_PAYLOAD: HemoReport = {
  edv_ml: 150.0,
  esv_ml: 55.0,
  sv_ml: 95.0,
  ef_pct: 63.33333333333333,
  co_l_min: 4.845,
  per_ml_s: -501.7,
  pfr_ml_s: 388.2,
  t_avo_s: 0.05,
  t_avc_s: 0.41,
  rv_ml: 0.0,
  sv_eff_ml: 95.0,
  mean_hr_bpm: 51.0,
  curve: { times_s: [0, 0.3, 0.6, 0.9, 1.18], volumes_ml: [150, 70, 55, 120, 150] },
};

export interface MockService extends ServiceClient {
  sessionUpdates: Array<{ pose?: PoseJson; playback?: object; version: number }>;
  renderRequests: Array<Record<string, string>>;
  state: SessionState;
}

/** In-memory stand-in for the HTTP service; records every mutation. */
export function mockService(overrides: Partial<{ hemo: HemoReport | null }> = {}): MockService {
  const state: SessionState = {
    scene_id: "mock",
    pose: { ...DEFAULT_POSE },
    playback: { running: false, speed: 1, phase: 0 },
    version: 0,
    last_frame_id: 0,
  };
  const svc: MockService = {
    state,
    sessionUpdates: [],
    renderRequests: [],
    scene: vi.fn(async (): Promise<SceneMeta> => ({
      id: "mock",
      n_phases: 4,
      dims: [64, 64, 64],
      spacing_mm: [1, 1, 1],
      default_pose: { ...DEFAULT_POSE },
      ecg: { fs_hz: 500, duration_s: 10, n_peaks: 8, mean_hr_bpm: 51 },
    })),
    session: vi.fn(async () => structuredClone(state)),
    updateSession: vi.fn(async (body) => {
      svc.sessionUpdates.push(structuredClone(body));
      if (body.pose) state.pose = { ...body.pose };
      Object.assign(state.playback, body.playback ?? {});
      state.version += 1;
      return structuredClone(state);
    }),
    renderUrl: (params) => {
      const q: Record<string, string> = {
        alpha_deg: String(params.alpha_deg),
        beta_deg: String(params.beta_deg),
        phase: String(params.phase),
        enhance: params.enhance ? "1" : "0",
      };
      svc.renderRequests.push(q);
      return `mock://render?${new URLSearchParams(q)}`;
    },
    fetchFrame: vi.fn(async () => new Blob([new Uint8Array([1, 2, 3])])),
    ecg: vi.fn(async (): Promise<EcgWindow> => ({
      fs_hz: 500,
      t0_s: 0,
      samples_mv: [0, 0.1, 1.0, 0.1, 0, 0.05, 0],
      r_peaks_s: [1.0, 2.18],
    })),
    hemodynamics: vi.fn(async () => {
      if (overrides.hemo === null) throw new Error("no report");
      return structuredClone(overrides.hemo ?? HEMO_PAYLOAD);
    }),
  };
  return svc;
}

export function stubObjectUrls(): void {
  (URL as unknown as Record<string, unknown>).createObjectURL = vi.fn(
    () => `blob:mock-${Math.random()}`,
  );
  (URL as unknown as Record<string, unknown>).revokeObjectURL = vi.fn();
}

export function poseElements() {
  document.body.innerHTML = `
    <input type="range" id="alpha" min="-90" max="90" step="0.1" value="0" />
    <input type="range" id="beta" min="-45" max="45" step="0.1" value="0" />
    <input type="number" id="sid" value="1200" />
    <input type="number" id="spd" value="800" />
    <input type="number" id="table-x" value="0" />
    <input type="number" id="table-y" value="0" />
    <input type="number" id="table-z" value="0" />
    <input type="checkbox" id="enhance" />
    <div id="presets"></div>
    <div id="angle-readout"></div>
    <div id="pose-message"></div>
    <img id="frame" />
    <span id="latency"></span>
    <canvas id="ecg-strip" width="360" height="90"></canvas>
    <button id="play">Play</button>
    <select id="speed"><option value="0.5">x0.5</option><option value="1" selected>x1</option></select>
    <span id="phase-readout"></span>
    <span id="stream-status"></span>
    <div id="hemo-values"></div>
    <canvas id="hemo-curve" width="360" height="120"></canvas>
    <div id="hemo-empty"></div>
  `;
  const byId = (id: string) => document.getElementById(id)!;
  return {
    pose: {
      alphaSlider: byId("alpha") as HTMLInputElement,
      betaSlider: byId("beta") as HTMLInputElement,
      sidInput: byId("sid") as HTMLInputElement,
      spdInput: byId("spd") as HTMLInputElement,
      tableInputs: [
        byId("table-x") as HTMLInputElement,
        byId("table-y") as HTMLInputElement,
        byId("table-z") as HTMLInputElement,
      ] as [HTMLInputElement, HTMLInputElement, HTMLInputElement],
      enhanceToggle: byId("enhance") as HTMLInputElement,
      presetHost: byId("presets"),
      angleReadout: byId("angle-readout"),
      message: byId("pose-message"),
    },
    frame: byId("frame") as HTMLImageElement,
    latency: byId("latency"),
    playback: {
      strip: byId("ecg-strip") as HTMLCanvasElement,
      playButton: byId("play") as HTMLButtonElement,
      speedSelect: byId("speed") as HTMLSelectElement,
      phaseReadout: byId("phase-readout"),
      streamStatus: byId("stream-status"),
    },
    hemo: {
      host: byId("hemo-values"),
      curve: byId("hemo-curve") as HTMLCanvasElement,
      empty: byId("hemo-empty"),
    },
  };
}

export async function flush(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
}
