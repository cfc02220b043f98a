import type { ServiceClient } from "./types.js";
import type { ConsoleState } from "./state.js";

/**
 * The fluoroscopy frame display.  Every request carries a token; a response
 * is dropped unless its token is newer than the newest frame already shown.
 */
export class FluoroView {
  private objectUrl: string | null = null;

  constructor(
    private readonly img: HTMLImageElement,
    private readonly latencyEl: HTMLElement,
    private readonly state: ConsoleState,
    private readonly api: ServiceClient,
  ) {}

  async requestFrame(phase: number): Promise<boolean> {
    const token = this.state.issueToken();
    const url = this.api.renderUrl({
      alpha_deg: this.state.pose.alpha_deg,
      beta_deg: this.state.pose.beta_deg,
      phase,
      enhance: this.state.enhance,
    });
    const started = performance.now();
    const blob = await this.api.fetchFrame(url);
    return this.present(token, blob, phase, performance.now() - started);
  }

  /** Display a fetched frame unless a newer one has already been shown. */
  present(token: number, blob: Blob, phase: number, latencyMs: number): boolean {
    if (!this.state.acceptFrame(token)) {
      return false;
    }
    if (this.objectUrl) URL.revokeObjectURL(this.objectUrl);
    this.objectUrl = URL.createObjectURL(blob);
    this.img.src = this.objectUrl;
    this.state.phase = phase;
    this.state.lastFrameLatencyMs = latencyMs;
    this.latencyEl.textContent = `${latencyMs.toFixed(0)} ms`;
    return true;
  }
}
