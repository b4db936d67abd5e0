import { describe, expect, it } from "vitest";

import { LatestWins, debounce } from "../src/inflight.js";

function deferred<T>() {
  let resolve!: (v: T) => void;
  let reject!: (e: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

describe("LatestWins", () => {
  it("runs a single task and delivers its result", async () => {
    const results: number[] = [];
    const queue = new LatestWins<number>(
      (r) => results.push(r),
      () => results.push(-1),
    );
    queue.submit(async () => 42);
    await new Promise((r) => setTimeout(r, 0));
    expect(results).toEqual([42]);
  });

  it("keeps at most one request in flight and drops stale submissions", async () => {
    const started: number[] = [];
    const results: number[] = [];
    const first = deferred<number>();
    const queue = new LatestWins<number>(
      (r) => results.push(r),
      () => results.push(-1),
    );
    queue.submit(() => {
      started.push(1);
      return first.promise;
    });
    await new Promise((r) => setTimeout(r, 0));
    expect(queue.busy).toBe(true);
    // three more submissions while busy: only the last may run
    queue.submit(async () => {
      started.push(2);
      return 2;
    });
    queue.submit(async () => {
      started.push(3);
      return 3;
    });
    queue.submit(async () => {
      started.push(4);
      return 4;
    });
    first.resolve(1);
    await new Promise((r) => setTimeout(r, 10));
    expect(started).toEqual([1, 4]);
    expect(results).toEqual([1, 4]);
    expect(queue.busy).toBe(false);
  });

  it("reports errors through the error callback and keeps pumping", async () => {
    const results: Array<number | string> = [];
    const queue = new LatestWins<number>(
      (r) => results.push(r),
      (e) => results.push(String(e)),
    );
    queue.submit(async () => {
      throw new Error("boom");
    });
    await new Promise((r) => setTimeout(r, 0));
    queue.submit(async () => 7);
    await new Promise((r) => setTimeout(r, 0));
    expect(results).toEqual(["Error: boom", 7]);
  });
});

describe("debounce", () => {
  it("fires only the trailing call", async () => {
    const seen: number[] = [];
    const fn = debounce((v: number) => seen.push(v), 15);
    fn(1);
    fn(2);
    fn(3);
    await new Promise((r) => setTimeout(r, 40));
    expect(seen).toEqual([3]);
  });

  it("fires again after the window elapses", async () => {
    const seen: number[] = [];
    const fn = debounce((v: number) => seen.push(v), 10);
    fn(1);
    await new Promise((r) => setTimeout(r, 25));
    fn(2);
    await new Promise((r) => setTimeout(r, 25));
    expect(seen).toEqual([1, 2]);
  });
});
