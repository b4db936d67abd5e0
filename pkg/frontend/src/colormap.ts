/** Dose colormap: cold-to-hot ramp over [0, 1] with fixed stops. */

const STOPS: Array<[number, [number, number, number]]> = [
  [0.0, [8, 8, 40]],
  [0.25, [20, 80, 200]],
  [0.5, [30, 180, 140]],
  [0.75, [240, 200, 40]],
  [1.0, [250, 60, 40]],
];

export function doseColor(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t));
  for (let i = 1; i < STOPS.length; i++) {
    const [x1, c1] = STOPS[i];
    const [x0, c0] = STOPS[i - 1];
    if (x <= x1) {
      const w = x1 === x0 ? 0 : (x - x0) / (x1 - x0);
      return [
        Math.round(c0[0] + w * (c1[0] - c0[0])),
        Math.round(c0[1] + w * (c1[1] - c0[1])),
        Math.round(c0[2] + w * (c1[2] - c0[2])),
      ];
    }
  }
  return STOPS[STOPS.length - 1][1];
}

const STRUCTURE_PALETTE = [
  "#e4572e", "#2e86ab", "#44af69", "#a23bbd", "#e0a100",
  "#19857b", "#c7443f", "#5561d9",
];

export function structureColor(index: number): string {
  return STRUCTURE_PALETTE[index % STRUCTURE_PALETTE.length];
}
