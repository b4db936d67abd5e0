import { ApiError } from "./api.js";
import type { SessionState } from "./types.js";

/** Client-side session view model. Holds exactly the latest server
 *  response plus transient UI flags (pending request, highlighted locks
 *  after a 422, last error text). Never recomputes any dose value. */
export class SessionStore {
  state: SessionState | null = null;
  pending = false;
  highlightedLocks: number[] = [];
  lastError: string | null = null;

  private listeners: Array<() => void> = [];

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  setPending(flag: boolean): void {
    this.pending = flag;
    this.emit();
  }

  /** A successful mutation replaces the whole state (server authority)
   *  and clears any error highlighting. */
  apply(state: SessionState): void {
    this.state = state;
    this.pending = false;
    this.highlightedLocks = [];
    this.lastError = null;
    this.emit();
  }

  /** A failed mutation leaves the numbers untouched (sliders snap back
   *  to the last server state) and highlights the blocking locks. */
  applyError(error: unknown): void {
    this.pending = false;
    if (error instanceof ApiError) {
      this.lastError = error.message;
      this.highlightedLocks =
        error.status === 422 ? error.blockingLocks.map((l) => l.objective_index) : [];
    } else {
      // network/transport failure: state is untouched, interacting again retries
      const message = error instanceof Error ? error.message : String(error);
      this.lastError = `${message} (drag again to retry)`;
      this.highlightedLocks = [];
    }
    this.emit();
  }

  /** Slider thumb positions always mirror the server's exact values. */
  sliderValue(index: number): number {
    const state = this.state;
    if (!state) throw new Error("no session state yet");
    return state.objectives[index].current;
  }

  isHighlighted(index: number): boolean {
    return this.highlightedLocks.includes(index);
  }
}
