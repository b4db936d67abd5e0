/** Display formatting. The underlying numbers stay raw in the store;
 *  only their on-screen string form is shortened. */

export function formatValue(value: number): string {
  if (!Number.isFinite(value)) return String(value);
  const magnitude = Math.abs(value);
  if (magnitude >= 1000 || (magnitude > 0 && magnitude < 0.01)) {
    return value.toExponential(2);
  }
  return value.toFixed(magnitude >= 100 ? 1 : magnitude >= 1 ? 2 : 4);
}

export function sliderStep(min: number, max: number): number {
  const span = max - min;
  return span > 0 ? span / 1000 : 1;
}
