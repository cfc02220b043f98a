import { HttpStatusError } from "./api.js";
import { ConsoleState, PRESETS, clinicalLabel, debounce } from "./state.js";
import type { FluoroView } from "./fluoroView.js";
import type { PoseJson, ServiceClient } from "./types.js";

export interface PosePanelElements {
  alphaSlider: HTMLInputElement;
  betaSlider: HTMLInputElement;
  sidInput: HTMLInputElement;
  spdInput: HTMLInputElement;
  tableInputs: [HTMLInputElement, HTMLInputElement, HTMLInputElement];
  enhanceToggle: HTMLInputElement;
  presetHost: HTMLElement;
  angleReadout: HTMLElement;
  message: HTMLElement;
}

/**
 * Angle/table controls.  Edits are debounced (50 ms), sent as a session
 * update, and only an acknowledged pose is rendered; a rejected pose snaps
 * the controls back to the last acknowledged values with a visible message.
 */
export class PosePanel {
  private readonly apply: () => void;

  constructor(
    private readonly el: PosePanelElements,
    private readonly state: ConsoleState,
    private readonly api: ServiceClient,
    private readonly view: FluoroView,
    debounceMs = 50,
  ) {
    this.apply = debounce(() => void this.submit(), debounceMs);
    el.alphaSlider.addEventListener("input", () => this.onEdit());
    el.betaSlider.addEventListener("input", () => this.onEdit());
    for (const input of [el.sidInput, el.spdInput, ...el.tableInputs]) {
      input.addEventListener("change", () => this.onEdit());
    }
    el.enhanceToggle.addEventListener("change", () => {
      this.state.enhance = el.enhanceToggle.checked;
      void this.view.requestFrame(this.state.phase);
    });
    for (const preset of PRESETS) {
      const button = el.presetHost.ownerDocument.createElement("button");
      button.textContent = preset.label;
      button.dataset.alphaDeg = String(preset.alpha_deg);
      button.dataset.betaDeg = String(preset.beta_deg);
      button.addEventListener("click", () => void this.applyPreset(preset.alpha_deg, preset.beta_deg));
      el.presetHost.appendChild(button);
    }
    this.syncControls();
  }

  private onEdit(): void {
    this.el.angleReadout.textContent = clinicalLabel(
      Number(this.el.alphaSlider.value),
      Number(this.el.betaSlider.value),
    );
    this.apply();
  }

  private editedPose(): PoseJson {
    const t = this.el.tableInputs;
    return {
      ...this.state.pose,
      alpha_deg: Number(this.el.alphaSlider.value),
      beta_deg: Number(this.el.betaSlider.value),
      sid_mm: Number(this.el.sidInput.value),
      spd_mm: Number(this.el.spdInput.value),
      table_mm: [Number(t[0].value), Number(t[1].value), Number(t[2].value)],
    };
  }

  async applyPreset(alphaDeg: number, betaDeg: number): Promise<void> {
    this.el.alphaSlider.value = String(alphaDeg);
    this.el.betaSlider.value = String(betaDeg);
    this.el.angleReadout.textContent = clinicalLabel(alphaDeg, betaDeg);
    await this.submit({ ...this.state.pose, alpha_deg: alphaDeg, beta_deg: betaDeg });
  }

  async submit(pose?: PoseJson): Promise<void> {
    const candidate = pose ?? this.editedPose();
    try {
      const snapshot = await this.api.updateSession({
        pose: candidate,
        version: this.state.version,
      });
      this.state.pose = snapshot.pose;
      this.state.version = snapshot.version;
      this.el.message.textContent = "";
      this.syncControls();
      await this.view.requestFrame(this.state.phase);
    } catch (err) {
      if (err instanceof HttpStatusError && err.status === 409) {
        // somebody else moved the session: resync and retry once
        const current = await this.api.session();
        this.state.version = current.version;
        await this.submit(candidate);
        return;
      }
      if (err instanceof HttpStatusError && err.status === 422) {
        this.el.message.textContent = `rejected: ${err.message}`;
        this.syncControls(); // snap back to the acknowledged pose
        return;
      }
      throw err;
    }
  }

  /** Reflect the acknowledged pose in every control. */
  syncControls(): void {
    const p = this.state.pose;
    this.el.alphaSlider.value = String(p.alpha_deg);
    this.el.betaSlider.value = String(p.beta_deg);
    this.el.sidInput.value = String(p.sid_mm);
    this.el.spdInput.value = String(p.spd_mm);
    this.el.tableInputs.forEach((input, i) => {
      input.value = String(p.table_mm[i]);
    });
    this.el.angleReadout.textContent = clinicalLabel(p.alpha_deg, p.beta_deg);
  }
}
