import type { HemoReport, ServiceClient } from "./types.js";

export interface HemoElements {
  host: HTMLElement;
  curve: HTMLCanvasElement;
  empty: HTMLElement;
}

/** Readouts shown, in order; values are rendered verbatim from the payload. */
export const HEMO_FIELDS: Array<{ key: keyof HemoReport; label: string; unit: string }> = [
  { key: "edv_ml", label: "EDV", unit: "ml" },
  { key: "esv_ml", label: "ESV", unit: "ml" },
  { key: "sv_ml", label: "SV", unit: "ml" },
  { key: "ef_pct", label: "EF", unit: "%" },
  { key: "co_l_min", label: "CO", unit: "L/min" },
  { key: "mean_hr_bpm", label: "HR", unit: "bpm" },
];

/**
 * Hemodynamics readouts plus the volume-time curve with the ejection window
 * shaded.  Numbers come from the service payload unmodified; the console
 * computes nothing.
 */
export class HemoPanel {
  constructor(
    private readonly el: HemoElements,
    private readonly api: ServiceClient,
  ) {}

  async load(): Promise<void> {
    let report: HemoReport;
    try {
      report = await this.api.hemodynamics();
    } catch {
      this.el.empty.textContent = "no data";
      this.el.host.replaceChildren();
      return;
    }
    this.el.empty.textContent = "";
    this.render(report);
  }

  render(report: HemoReport): void {
    const doc = this.el.host.ownerDocument;
    this.el.host.replaceChildren();
    for (const field of HEMO_FIELDS) {
      const row = doc.createElement("div");
      row.className = "hemo-row";
      const label = doc.createElement("span");
      label.className = "hemo-label";
      label.textContent = field.label;
      const value = doc.createElement("span");
      value.className = "hemo-value";
      value.dataset.key = field.key;
      value.textContent = String(report[field.key]);
      const unit = doc.createElement("span");
      unit.className = "hemo-unit";
      unit.textContent = field.unit;
      row.append(label, value, unit);
      this.el.host.appendChild(row);
    }
    this.drawCurve(report);
  }

  private drawCurve(report: HemoReport): void {
    const ctx = this.el.curve.getContext("2d");
    if (!ctx || !report.curve) return;
    const { width, height } = this.el.curve;
    const { times_s: ts, volumes_ml: vs } = report.curve;
    if (ts.length < 2) return;
    const t0 = ts[0];
    const t1 = ts[ts.length - 1];
    const lo = Math.min(...vs);
    const hi = Math.max(...vs);
    const x = (t: number) => ((t - t0) / (t1 - t0)) * width;
    const y = (v: number) => height - 8 - ((v - lo) / (hi - lo || 1)) * (height - 16);
    ctx.fillStyle = "#10151c";
    ctx.fillRect(0, 0, width, height);
    // ejection window (valve open to valve closed)
    ctx.fillStyle = "rgba(255, 214, 0, 0.25)";
    ctx.fillRect(x(report.t_avo_s), 0, x(report.t_avc_s) - x(report.t_avo_s), height);
    ctx.strokeStyle = "#4fc3f7";
    ctx.beginPath();
    ts.forEach((t, i) => {
      if (i === 0) ctx.moveTo(x(t), y(vs[i]));
      else ctx.lineTo(x(t), y(vs[i]));
    });
    ctx.stroke();
  }
}
