/** Payload shapes of the cathlab service API. */

export interface PoseJson {
  alpha_deg: number;
  beta_deg: number;
  sid_mm: number;
  spd_mm: number;
  fd_mm: number;
  n_u: number;
  n_v: number;
  table_mm: [number, number, number];
}

export interface EcgSummary {
  fs_hz: number;
  duration_s: number;
  n_peaks: number;
  mean_hr_bpm: number | null;
}

export interface SceneMeta {
  id: string;
  n_phases: number;
  dims: number[];
  spacing_mm: number[];
  default_pose: PoseJson;
  ecg: EcgSummary | null;
}

export interface PlaybackState {
  running: boolean;
  speed: number;
  phase: number;
}

export interface SessionState {
  scene_id: string;
  pose: PoseJson;
  playback: PlaybackState;
  version: number;
  last_frame_id: number;
}

export interface EcgWindow {
  fs_hz: number;
  t0_s: number;
  samples_mv: number[];
  r_peaks_s: number[];
}

export interface HemoReport {
  edv_ml: number;
  esv_ml: number;
  sv_ml: number;
  ef_pct: number;
  co_l_min: number;
  per_ml_s: number;
  pfr_ml_s: number;
  t_avo_s: number;
  t_avc_s: number;
  rv_ml: number;
  sv_eff_ml: number;
  mean_hr_bpm: number;
  curve?: { times_s: number[]; volumes_ml: number[] };
}

export interface FrameEvent {
  frame_id: number;
  phase: number;
  t_s: number;
  running: boolean;
  version: number;
}

export interface ApiError {
  error: { type: string; message: string };
}

/** Subset of the service client the panels depend on (mockable in tests). */
export interface ServiceClient {
  scene(): Promise<SceneMeta>;
  session(): Promise<SessionState>;
  updateSession(body: {
    pose?: PoseJson;
    playback?: Partial<PlaybackState>;
    version: number;
  }): Promise<SessionState>;
  renderUrl(params: {
    alpha_deg: number;
    beta_deg: number;
    phase: number;
    enhance: boolean;
    w?: number;
    h?: number;
  }): string;
  fetchFrame(url: string): Promise<Blob>;
  ecg(fromS: number, toS: number): Promise<EcgWindow>;
  hemodynamics(): Promise<HemoReport>;
}
