import { describe, expect, it } from "vitest";

import { ApiError } from "../src/api.js";
import { SessionStore } from "../src/state.js";
import type { SessionState } from "../src/types.js";

function fakeState(currents: number[]): SessionState {
  return {
    session_id: "sess-0001",
    case_id: "case-0001",
    n_plans: 4,
    alpha: [0.25, 0.25, 0.25, 0.25],
    active_plans: null,
    objectives: currents.map((value, index) => ({
      id: `f${index}`,
      structure: `s${index}`,
      kind: "mean_dose",
      unit: "Gy",
      min: 0,
      max: 10,
      current: value,
      interpolated: value + 0.01,
      locked: false,
      bound: 10,
    })),
    dvh: [],
    dose: { nx: 2, ny: 2, voxel_size_mm: 3, max_gy: 1, values: [0, 0, 0, 1] },
    feasible: true,
    constraints: {},
  };
}

describe("SessionStore", () => {
  it("mirrors server values exactly, no client arithmetic", () => {
    const store = new SessionStore();
    const state = fakeState([1.234567890123, 2.5]);
    store.apply(state);
    expect(store.sliderValue(0)).toBe(1.234567890123);
    expect(store.sliderValue(1)).toBe(2.5);
    expect(store.state).toBe(state);
  });

  it("a 422 keeps the previous numbers and highlights blocking locks", () => {
    const store = new SessionStore();
    store.apply(fakeState([3.0, 4.0]));
    store.setPending(true);
    store.applyError(new ApiError(422, "locked bounds conflict", [
      { objective_index: 1, bound: 2.0, achievable_min: 2.5 },
    ]));
    expect(store.pending).toBe(false);
    expect(store.sliderValue(0)).toBe(3.0); // snap-back: state untouched
    expect(store.sliderValue(1)).toBe(4.0);
    expect(store.isHighlighted(1)).toBe(true);
    expect(store.isHighlighted(0)).toBe(false);
    expect(store.lastError).toContain("conflict");
  });

  it("a successful response clears highlights and errors", () => {
    const store = new SessionStore();
    store.apply(fakeState([1, 2]));
    store.applyError(new ApiError(422, "nope", [
      { objective_index: 0, bound: 1, achievable_min: 2 },
    ]));
    expect(store.highlightedLocks).toEqual([0]);
    store.apply(fakeState([0.5, 2]));
    expect(store.highlightedLocks).toEqual([]);
    expect(store.lastError).toBeNull();
    expect(store.sliderValue(0)).toBe(0.5);
  });

  it("non-422 errors do not highlight locks", () => {
    const store = new SessionStore();
    store.apply(fakeState([1]));
    store.applyError(new ApiError(409, "busy"));
    expect(store.highlightedLocks).toEqual([]);
    expect(store.lastError).toContain("busy");
  });

  it("notifies subscribers on every change", () => {
    const store = new SessionStore();
    let calls = 0;
    store.subscribe(() => calls++);
    store.apply(fakeState([1]));
    store.setPending(true);
    store.applyError(new Error("x"));
    expect(calls).toBe(3);
  });
});
