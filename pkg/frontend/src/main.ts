import { ApiClient } from "./api.js";
import { ConsoleState } from "./state.js";
import { FluoroView } from "./fluoroView.js";
import { HemoPanel } from "./hemoPanel.js";
import { PlaybackPanel } from "./playbackPanel.js";
import { PosePanel } from "./posePanel.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const meta = await api.scene();
  const session = await api.session();
  const state = new ConsoleState(session.pose);
  state.version = session.version;
  state.phase = session.playback.phase;

  byId<HTMLElement>("scene-name").textContent =
    `${meta.id} · ${meta.dims.join("×")} · ${meta.n_phases} phases`;

  const view = new FluoroView(
    byId<HTMLImageElement>("frame"),
    byId<HTMLElement>("latency"),
    state,
    api,
  );

  const posePanel = new PosePanel(
    {
      alphaSlider: byId<HTMLInputElement>("alpha"),
      betaSlider: byId<HTMLInputElement>("beta"),
      sidInput: byId<HTMLInputElement>("sid"),
      spdInput: byId<HTMLInputElement>("spd"),
      tableInputs: [
        byId<HTMLInputElement>("table-x"),
        byId<HTMLInputElement>("table-y"),
        byId<HTMLInputElement>("table-z"),
      ],
      enhanceToggle: byId<HTMLInputElement>("enhance"),
      presetHost: byId<HTMLElement>("presets"),
      angleReadout: byId<HTMLElement>("angle-readout"),
      message: byId<HTMLElement>("pose-message"),
    },
    state,
    api,
    view,
  );

  const playback = new PlaybackPanel(
    {
      strip: byId<HTMLCanvasElement>("ecg-strip"),
      playButton: byId<HTMLButtonElement>("play"),
      speedSelect: byId<HTMLSelectElement>("speed"),
      phaseReadout: byId<HTMLElement>("phase-readout"),
      streamStatus: byId<HTMLElement>("stream-status"),
    },
    state,
    api,
    view,
    (fps) => new EventSource(api.streamUrl(fps)),
  );

  const hemo = new HemoPanel(
    {
      host: byId<HTMLElement>("hemo-values"),
      curve: byId<HTMLCanvasElement>("hemo-curve"),
      empty: byId<HTMLElement>("hemo-empty"),
    },
    api,
  );

  posePanel.syncControls();
  await Promise.all([playback.loadEcg(), hemo.load()]);
  await view.requestFrame(state.phase);
}

void boot().catch((err) => {
  const banner = document.getElementById("pose-message");
  if (banner) banner.textContent = `console failed to start: ${err}`;
});
