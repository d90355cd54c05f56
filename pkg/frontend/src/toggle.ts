/**
 * Hold-to-toggle state with a rolling rate limit.
 *
 * The test image is shown by default; pressing shows the reference,
 * releasing returns to the test image. At most `maxTransitions` visible
 * switches may happen inside any rolling window of `windowMs`
 * milliseconds. A switch that would exceed the budget is *deferred*: the
 * desired side is remembered, the view is flagged as throttled so the
 * button can indicate it, and the switch fires as soon as the window
 * allows. Rapid flicker is thereby impossible while no user intent is
 * ever silently dropped.
 */

export type Showing = "TEST" | "REFERENCE";

export interface ToggleView {
  showing: Showing;
  throttled: boolean;
  ready: boolean;
  toggleCount: number;
}

export interface ToggleOptions {
  now?: () => number;
  schedule?: (fn: () => void, delayMs: number) => unknown;
  cancel?: (handle: unknown) => void;
  windowMs?: number;
  maxTransitions?: number;
  initial?: Showing;
  onChange?: (view: ToggleView) => void;
}

export class ToggleController {
  private readonly now: () => number;
  private readonly schedule: (fn: () => void, delayMs: number) => unknown;
  private readonly cancel: (handle: unknown) => void;
  private readonly windowMs: number;
  private readonly maxTransitions: number;
  private readonly onChange?: (view: ToggleView) => void;

  private shown: Showing;
  private desired: Showing;
  private ready = false;
  private throttled = false;
  private pending: unknown = null;
  private applied: number[] = []; // only those inside the rolling window
  private log: number[] = [];
  private count = 0;

  constructor(options: ToggleOptions = {}) {
    this.now = options.now ?? (() => performance.now());
    this.schedule = options.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.cancel = options.cancel ?? ((handle) => clearTimeout(handle as number));
    this.windowMs = options.windowMs ?? 1000;
    this.maxTransitions = options.maxTransitions ?? 2;
    this.shown = options.initial ?? "TEST";
    this.desired = this.shown;
    this.onChange = options.onChange;
  }

  /** Enable toggling once both images are decoded. */
  setReady(ready: boolean): void {
    this.ready = ready;
    this.notify();
  }

  press(): void {
    this.request("REFERENCE");
  }

  release(): void {
    this.request("TEST");
  }

  view(): ToggleView {
    return {
      showing: this.shown,
      throttled: this.throttled,
      ready: this.ready,
      toggleCount: this.count,
    };
  }

  /** Timestamps of every applied transition (for tests and audits). */
  transitionLog(): readonly number[] {
    return this.log;
  }

  private request(target: Showing): void {
    if (!this.ready) {
      return; // images still decoding: a no-op, the view shows a loader
    }
    this.desired = target;
    if (this.desired === this.shown) {
      // intent satisfied (e.g. release while the press was still deferred)
      this.clearPending();
      this.throttled = false;
      this.notify();
      return;
    }
    this.attempt();
  }

  private attempt(): void {
    const now = this.now();
    this.prune(now);
    if (this.applied.length < this.maxTransitions) {
      this.apply(now);
      return;
    }
    // budget exhausted: defer to the instant the oldest blocker expires
    const blocker = this.applied[this.applied.length - this.maxTransitions];
    const wait = Math.max(0, blocker + this.windowMs - now);
    this.throttled = true;
    this.clearPending();
    this.pending = this.schedule(() => {
      this.pending = null;
      if (this.desired !== this.shown) {
        this.attempt();
      } else {
        this.throttled = false;
        this.notify();
      }
    }, wait);
    this.notify();
  }

  private apply(at: number): void {
    this.shown = this.desired;
    this.applied.push(at);
    this.log.push(at);
    this.count += 1;
    this.throttled = false;
    this.clearPending();
    this.notify();
  }

  private prune(now: number): void {
    const cutoff = now - this.windowMs;
    while (this.applied.length > 0 && this.applied[0] <= cutoff) {
      this.applied.shift();
    }
  }

  private clearPending(): void {
    if (this.pending !== null) {
      this.cancel(this.pending);
      this.pending = null;
    }
  }

  private notify(): void {
    this.onChange?.(this.view());
  }
}
