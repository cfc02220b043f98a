import type { PoseJson } from "./types.js";

/**
 * Single source of truth for the console.
 *
 * The pose held here is always the last one the service acknowledged; every
 * number shown in the UI traces back to a service response.  In-flight frame
 * requests carry a monotonically increasing token so responses arriving out
 * of order can never move the display backwards.
 */
export class ConsoleState {
  pose: PoseJson;
  version = 0;
  running = false;
  speed = 1.0;
  phase = 0;
  enhance = false;
  lastFrameLatencyMs: number | null = null;

  private nextToken = 0;
  private shownToken = -1;

  constructor(initialPose: PoseJson) {
    this.pose = { ...initialPose };
  }

  issueToken(): number {
    return this.nextToken++;
  }

  /** True when a response with this token is current and may be displayed. */
  acceptFrame(token: number): boolean {
    if (token <= this.shownToken) {
      return false;
    }
    this.shownToken = token;
    return true;
  }

  get displayedPhasePct(): string {
    return `${(this.phase * 100).toFixed(1)}%`;
  }
}

/** Clinical label for a signed primary/secondary angle pair. */
export function clinicalLabel(alphaDeg: number, betaDeg: number): string {
  const primary = `${alphaDeg >= 0 ? "LAO" : "RAO"} ${Math.abs(alphaDeg).toFixed(1)}°`;
  const secondary = `${betaDeg >= 0 ? "CRA" : "CAU"} ${Math.abs(betaDeg).toFixed(1)}°`;
  return `${primary} / ${secondary}`;
}

export interface Preset {
  label: string;
  alpha_deg: number;
  beta_deg: number;
}

/** The four standard angiographic working projections. */
export const PRESETS: Preset[] = [
  { label: "LAO 34.3° / CRA 29.7°", alpha_deg: 34.3, beta_deg: 29.7 },
  { label: "RAO 30.2° / CRA 0.2°", alpha_deg: -30.2, beta_deg: 0.2 },
  { label: "RAO 32.4° / CAU 0.3°", alpha_deg: -32.4, beta_deg: -0.3 },
  { label: "RAO 32.4° / CAU 32.1°", alpha_deg: -32.4, beta_deg: -32.1 },
];

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
): (...args: A) => void {
  let handle: ReturnType<typeof setTimeout> | undefined;
  return (...args: A) => {
    if (handle !== undefined) clearTimeout(handle);
    handle = setTimeout(() => fn(...args), waitMs);
  };
}
