/** Serializes mutating requests: at most one in flight per session, and
 *  while one is running only the latest submitted task survives
 *  (last-wins). Prevents drag storms from queueing up on the server. */
export class LatestWins<T> {
  private inflight = false;
  private pending: (() => Promise<T>) | null = null;

  constructor(
    private onResult: (result: T) => void,
    private onError: (error: unknown) => void,
  ) {}

  submit(task: () => Promise<T>): void {
    this.pending = task;
    void this.pump();
  }

  get busy(): boolean {
    return this.inflight;
  }

  private async pump(): Promise<void> {
    if (this.inflight) return;
    while (this.pending !== null) {
      const task = this.pending;
      this.pending = null;
      this.inflight = true;
      try {
        const result = await task();
        this.onResult(result);
      } catch (error) {
        this.onError(error);
      } finally {
        this.inflight = false;
      }
    }
  }
}

/** Trailing-edge debounce; each call restarts the timer. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  ms: number,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | undefined;
  return (...args: A) => {
    if (timer !== undefined) clearTimeout(timer);
    timer = setTimeout(() => fn(...args), ms);
  };
}
