import { formatValue, sliderStep } from "./format.js";
import { SessionStore } from "./state.js";
import type { ObjectiveRow } from "./types.js";

export interface SliderCallbacks {
  onDrag(objectiveIndex: number, value: number): void;
  onLock(objectiveIndex: number, bound: number): void;
  onUnlock(objectiveIndex: number): void;
}

interface RowElements {
  root: HTMLElement;
  slider: HTMLInputElement;
  value: HTMLElement;
  lock: HTMLInputElement;
  bound: HTMLInputElement;
}

/** One slider row per objective with a lock toggle and a bound input.
 *  After every server response the thumb snaps to the server's exact
 *  value; the cursor never drives the displayed number. */
export class SliderPanel {
  private rows: RowElements[] = [];

  constructor(
    private container: HTMLElement,
    private store: SessionStore,
    private callbacks: SliderCallbacks,
  ) {
    store.subscribe(() => this.refresh());
  }

  private buildRows(objectives: ObjectiveRow[]): void {
    this.container.textContent = "";
    this.rows = objectives.map((obj, index) => {
      const root = document.createElement("div");
      root.className = "slider-row";

      const label = document.createElement("label");
      label.className = "slider-label";
      label.textContent = `${obj.id} (${obj.unit})`;

      const slider = document.createElement("input");
      slider.type = "range";
      slider.min = String(obj.min);
      slider.max = String(obj.max);
      slider.step = String(sliderStep(obj.min, obj.max));
      if (obj.max <= obj.min) slider.disabled = true;  // pinned: single plan
      slider.addEventListener("input", () => {
        this.callbacks.onDrag(index, Number(slider.value));
      });

      const value = document.createElement("span");
      value.className = "slider-value";

      const lock = document.createElement("input");
      lock.type = "checkbox";
      lock.title = "lock upper bound";
      lock.addEventListener("change", () => {
        if (lock.checked) {
          // the bound handle appears at the current (server) value
          const current = this.store.state?.objectives[index].current;
          bound.value = String(current ?? bound.value);
          this.callbacks.onLock(index, Number(bound.value));
        } else {
          this.callbacks.onUnlock(index);
        }
      });

      const bound = document.createElement("input");
      bound.type = "number";
      bound.className = "bound-input";
      bound.addEventListener("change", () => {
        if (lock.checked) this.callbacks.onLock(index, Number(bound.value));
      });

      root.append(label, slider, value, lock, bound);
      this.container.append(root);
      return { root, slider, value, lock, bound };
    });
  }

  refresh(): void {
    const state = this.store.state;
    if (!state) return;
    if (this.rows.length !== state.objectives.length) this.buildRows(state.objectives);
    state.objectives.forEach((obj, index) => {
      const row = this.rows[index];
      // server authority: thumb and number follow the achieved value
      row.slider.value = String(obj.current);
      row.value.textContent = formatValue(obj.current);
      row.lock.checked = obj.locked;
      if (document.activeElement !== row.bound) {
        row.bound.value = String(obj.bound);
      }
      row.bound.style.visibility = obj.locked ? "visible" : "hidden";
      row.root.classList.toggle("blocked", this.store.isHighlighted(index));
      row.root.classList.toggle("pending", this.store.pending);
    });
  }
}
