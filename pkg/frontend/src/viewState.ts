/** Session + navigation state for the single-page dashboard. */

import type { FilterWindow, StreamId } from "./types.js";

export class ViewState {
  token: string | null = null;
  selectedStream: StreamId = "esp32_energy";
  liveMode = false;
  private window: FilterWindow | null = null;

  get filterWindow(): FilterWindow | null {
    return this.window;
  }

  setWindow(window: FilterWindow | null): void {
    if (window && window.from > window.to) {
      throw new Error("window start must not be after its end");
    }
    this.window = window;
  }

  get loggedIn(): boolean {
    return this.token !== null;
  }

  reset(): void {
    this.token = null;
    this.liveMode = false;
    this.window = null;
  }
}

/** Trailing-edge debounce; the table view uses it so dragging a datetime
 * picker issues exactly one range request. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs: number,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, delayMs);
  };
}
