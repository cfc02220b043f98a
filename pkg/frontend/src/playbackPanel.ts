import { ConsoleState } from "./state.js";
import type { FluoroView } from "./fluoroView.js";
import type { EcgWindow, FrameEvent, ServiceClient } from "./types.js";

export interface PlaybackElements {
  strip: HTMLCanvasElement;
  playButton: HTMLButtonElement;
  speedSelect: HTMLSelectElement;
  phaseReadout: HTMLElement;
  streamStatus: HTMLElement;
}

interface EventSourceLike {
  addEventListener(type: string, listener: (ev: MessageEvent) => void): void;
  close(): void;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onerror: ((ev: any) => any) | null;
}

/**
 * ECG strip with a phase cursor.  Play drives frames from the service's
 * stream events (the displayed phase is always the service-reported phase of
 * the shown frame); pause freezes cursor and frame together.
 */
export class PlaybackPanel {
  private ecgWindow: EcgWindow | null = null;
  private source: EventSourceLike | null = null;
  private reconnectHandle: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly el: PlaybackElements,
    private readonly state: ConsoleState,
    private readonly api: ServiceClient,
    private readonly view: FluoroView,
    private readonly openStream: (fps: number) => EventSourceLike,
    private readonly streamFps = 5,
  ) {
    el.playButton.addEventListener("click", () => void this.toggle());
    el.speedSelect.addEventListener("change", () => void this.setSpeed(Number(el.speedSelect.value)));
    el.strip.addEventListener("click", (ev) => void this.scrubTo(this.phaseAtPixel(ev.offsetX)));
    this.renderPhase(this.state.phase);
  }

  async loadEcg(): Promise<void> {
    this.ecgWindow = await this.api.ecg(0, 4);
    this.drawStrip();
  }

  async toggle(): Promise<void> {
    const running = !this.state.running;
    const snapshot = await this.api.updateSession({
      playback: { running },
      version: this.state.version,
    });
    this.state.version = snapshot.version;
    this.state.running = snapshot.playback.running;
    this.el.playButton.textContent = this.state.running ? "Pause" : "Play";
    if (this.state.running) {
      this.connect();
    } else {
      this.disconnect();
      // freeze exactly at the service-reported phase
      this.renderPhase(snapshot.playback.phase);
      this.state.phase = snapshot.playback.phase;
    }
  }

  async setSpeed(speed: number): Promise<void> {
    const snapshot = await this.api.updateSession({
      playback: { speed },
      version: this.state.version,
    });
    this.state.version = snapshot.version;
    this.state.speed = snapshot.playback.speed;
  }

  async scrubTo(phase: number): Promise<void> {
    const snapshot = await this.api.updateSession({
      playback: { phase },
      version: this.state.version,
    });
    this.state.version = snapshot.version;
    this.state.phase = snapshot.playback.phase;
    this.renderPhase(snapshot.playback.phase);
    await this.view.requestFrame(snapshot.playback.phase);
  }

  /** Handle one service frame event (exposed for the contract tests). */
  async onFrameEvent(event: FrameEvent): Promise<void> {
    this.renderPhase(event.phase);
    if (this.state.running) {
      await this.view.requestFrame(event.phase);
    }
  }

  renderPhase(phase: number): void {
    this.state.phase = phase;
    this.el.phaseReadout.textContent = this.state.displayedPhasePct;
    this.drawStrip();
  }

  private phaseAtPixel(x: number): number {
    const frac = Math.min(Math.max(x / this.el.strip.width, 0), 0.999);
    return frac;
  }

  connect(): void {
    this.disconnect();
    const source = this.openStream(this.streamFps);
    this.source = source;
    this.el.streamStatus.textContent = "live";
    source.addEventListener("frame", (ev) => {
      const data = JSON.parse(ev.data) as FrameEvent;
      void this.onFrameEvent(data);
    });
    source.onerror = () => {
      this.el.streamStatus.textContent = "reconnecting…";
      source.close();
      this.reconnectHandle = setTimeout(() => {
        if (this.state.running) this.connect();
      }, 1000);
    };
  }

  disconnect(): void {
    if (this.reconnectHandle !== null) clearTimeout(this.reconnectHandle);
    if (this.source) {
      this.source.close();
      this.source = null;
    }
    this.el.streamStatus.textContent = "idle";
  }

  private drawStrip(): void {
    const ctx = this.el.strip.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.el.strip;
    ctx.fillStyle = "#10151c";
    ctx.fillRect(0, 0, width, height);
    const win = this.ecgWindow;
    if (win && win.samples_mv.length > 1) {
      const lo = Math.min(...win.samples_mv);
      const hi = Math.max(...win.samples_mv);
      const span = hi - lo || 1;
      ctx.strokeStyle = "#3ddc84";
      ctx.beginPath();
      win.samples_mv.forEach((v, i) => {
        const x = (i / (win.samples_mv.length - 1)) * width;
        const y = height - 6 - ((v - lo) / span) * (height - 12);
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.stroke();
    }
    ctx.strokeStyle = "#ffb300";
    const cursorX = this.state.phase * width;
    ctx.beginPath();
    ctx.moveTo(cursorX, 0);
    ctx.lineTo(cursorX, height);
    ctx.stroke();
  }
}
