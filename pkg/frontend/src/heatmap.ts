import { doseColor } from "./colormap.js";
import type { DoseField } from "./types.js";

/** Paint the downsampled dose field, nearest-neighbor upscaled, plus a
 *  Gy colorbar. */
export function renderHeatmap(
  canvas: HTMLCanvasElement,
  colorbar: HTMLCanvasElement,
  field: DoseField,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { nx, ny, values, max_gy } = field;
  const image = ctx.createImageData(nx, ny);
  const scale = max_gy > 0 ? 1 / max_gy : 0;
  for (let i = 0; i < values.length; i++) {
    const [r, g, b] = doseColor(values[i] * scale);
    // flip vertically: row 0 of the grid is the bottom of the image
    const row = ny - 1 - Math.floor(i / nx);
    const offset = 4 * (row * nx + (i % nx));
    image.data[offset] = r;
    image.data[offset + 1] = g;
    image.data[offset + 2] = b;
    image.data[offset + 3] = 255;
  }
  const tile = document.createElement("canvas");
  tile.width = nx;
  tile.height = ny;
  tile.getContext("2d")?.putImageData(image, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(tile, 0, 0, canvas.width, canvas.height);

  const bctx = colorbar.getContext("2d");
  if (!bctx) return;
  const h = colorbar.height;
  for (let yPix = 0; yPix < h; yPix++) {
    const [r, g, b] = doseColor(1 - yPix / (h - 1));
    bctx.fillStyle = `rgb(${r},${g},${b})`;
    bctx.fillRect(0, yPix, 14, 1);
  }
  bctx.fillStyle = "#333";
  bctx.font = "10px sans-serif";
  bctx.textAlign = "left";
  bctx.fillText(`${max_gy.toFixed(1)} Gy`, 17, 10);
  bctx.fillText("0 Gy", 17, h - 2);
}
