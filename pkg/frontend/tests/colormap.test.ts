import { describe, expect, it } from "vitest";

import { doseColor, structureColor } from "../src/colormap.js";
import { formatValue, sliderStep } from "../src/format.js";

describe("doseColor", () => {
  it("clamps out-of-range inputs", () => {
    expect(doseColor(-1)).toEqual(doseColor(0));
    expect(doseColor(2)).toEqual(doseColor(1));
  });

  it("hits the cold and hot endpoints", () => {
    expect(doseColor(0)).toEqual([8, 8, 40]);
    expect(doseColor(1)).toEqual([250, 60, 40]);
  });

  it("returns valid channel values across the ramp", () => {
    for (let i = 0; i <= 100; i++) {
      const [r, g, b] = doseColor(i / 100);
      for (const c of [r, g, b]) {
        expect(Number.isInteger(c)).toBe(true);
        expect(c).toBeGreaterThanOrEqual(0);
        expect(c).toBeLessThanOrEqual(255);
      }
    }
  });
});

describe("structureColor", () => {
  it("cycles a deterministic palette", () => {
    expect(structureColor(0)).toBe(structureColor(8));
    expect(structureColor(1)).not.toBe(structureColor(2));
  });
});

describe("formatValue", () => {
  it("keeps mid-range numbers fixed-point", () => {
    expect(formatValue(12.3456)).toBe("12.35");
    expect(formatValue(0.12345)).toBe("0.1235");
  });

  it("switches to scientific for extremes", () => {
    expect(formatValue(12345.6)).toContain("e");
    expect(formatValue(0.0001)).toContain("e");
  });
});

describe("sliderStep", () => {
  it("divides the span into 1000 steps", () => {
    expect(sliderStep(0, 10)).toBeCloseTo(0.01);
  });

  it("degenerate ranges fall back to a unit step", () => {
    expect(sliderStep(5, 5)).toBe(1);
  });
});
