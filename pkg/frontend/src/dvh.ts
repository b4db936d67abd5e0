import { structureColor } from "./colormap.js";
import type { DvhSeries } from "./types.js";

/** Redraw the DVH chart: one polyline per structure, axes in Gy and
 *  volume fraction. No animation between states. */
export function renderDvh(canvas: HTMLCanvasElement, series: DvhSeries[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  const pad = { left: 42, right: 10, top: 10, bottom: 30 };
  const plotW = width - pad.left - pad.right;
  const plotH = height - pad.top - pad.bottom;
  ctx.clearRect(0, 0, width, height);

  const maxDose = Math.max(1e-9, ...series.map((s) => s.dose_gy[s.dose_gy.length - 1] ?? 0));
  const x = (dose: number) => pad.left + (dose / maxDose) * plotW;
  const y = (frac: number) => pad.top + (1 - frac) * plotH;

  ctx.strokeStyle = "#888";
  ctx.lineWidth = 1;
  ctx.strokeRect(pad.left, pad.top, plotW, plotH);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.textAlign = "center";
  for (let i = 0; i <= 4; i++) {
    const dose = (maxDose * i) / 4;
    ctx.fillText(dose.toFixed(0), x(dose), height - 12);
  }
  ctx.save();
  ctx.translate(12, pad.top + plotH / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText("volume fraction", 0, 0);
  ctx.restore();
  ctx.fillText("dose (Gy)", pad.left + plotW / 2, height - 2);
  ctx.textAlign = "left";
  for (let i = 0; i <= 2; i++) {
    ctx.fillText((1 - i / 2).toFixed(1), 4, y(1 - i / 2) + 4);
  }

  series.forEach((s, idx) => {
    ctx.strokeStyle = structureColor(idx);
    ctx.lineWidth = 1.6;
    ctx.beginPath();
    s.dose_gy.forEach((dose, i) => {
      const px = x(dose);
      const py = y(s.volume_fraction[i]);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
  });
}

export function renderDvhLegend(el: HTMLElement, series: DvhSeries[]): void {
  el.textContent = "";
  series.forEach((s, idx) => {
    const item = document.createElement("span");
    item.className = "legend-item";
    const swatch = document.createElement("span");
    swatch.className = "legend-swatch";
    swatch.style.background = structureColor(idx);
    item.append(swatch, document.createTextNode(s.structure));
    el.append(item);
  });
}
