/**
 * The in-place rating view: one image visible at a time at one fixed
 * position, a hold-to-compare control, and an unmarked continuous
 * impairment slider.
 *
 * Both stimulus images are absolutely positioned over the same box and
 * differ only in their `visibility`, so swapping them can never shift
 * layout. Nothing in the view (ids, labels, URLs) distinguishes trap
 * questions from study questions; the view only knows two opaque image
 * URLs.
 */

import { ToggleController, ToggleOptions, ToggleView } from "./toggle.js";

export interface QuestionSubmission {
  score: number;
  toggleCount: number;
  elapsedMs: number;
}

export interface QuestionViewOptions {
  referenceUrl: string;
  testUrl: string;
  progressText?: string;
  now?: () => number;
  toggle?: Partial<ToggleOptions>;
  onSubmit: (submission: QuestionSubmission) => void;
}

const STIMULUS_STYLE =
  "position:absolute;top:0;left:0;width:100%;height:100%;object-fit:contain;";

export class QuestionView {
  readonly root: HTMLElement;
  readonly toggle: ToggleController;

  private readonly now: () => number;
  private readonly renderedAt: number;
  private readonly testImage: HTMLImageElement;
  private readonly referenceImage: HTMLImageElement;
  private readonly toggleButton: HTMLButtonElement;
  private readonly slider: HTMLInputElement;
  private readonly submitButton: HTMLButtonElement;
  private readonly prompt: HTMLElement;
  private readonly loading: HTMLElement;
  private sliderTouched = false;
  private decoded = 0;
  private submitted = false;

  constructor(private readonly options: QuestionViewOptions) {
    this.now = options.now ?? (() => performance.now());
    this.renderedAt = this.now();

    this.root = document.createElement("section");
    this.root.className = "question";
    this.root.innerHTML = `
      <div class="stage" style="position:relative;width:620px;height:800px;">
        <img class="stimulus" data-role="test" alt="image A">
        <img class="stimulus" data-role="reference" alt="image B">
        <div class="loading">loading images…</div>
      </div>
      <div class="controls">
        <button type="button" class="toggle-button" disabled>hold to compare</button>
        <span class="progress"></span>
      </div>
      <div class="rating">
        <span class="endpoint endpoint-low">0 — imperceptible</span>
        <input class="impairment-slider" type="range" min="0" max="100" step="any" value="50">
        <span class="endpoint endpoint-high">100 — severe</span>
        <button type="button" class="submit-button">submit rating</button>
        <span class="prompt" hidden>move the slider to rate this image first</span>
      </div>
    `;

    this.testImage = this.root.querySelector('[data-role="test"]') as HTMLImageElement;
    this.referenceImage = this.root.querySelector('[data-role="reference"]') as HTMLImageElement;
    this.toggleButton = this.root.querySelector(".toggle-button") as HTMLButtonElement;
    this.slider = this.root.querySelector(".impairment-slider") as HTMLInputElement;
    this.submitButton = this.root.querySelector(".submit-button") as HTMLButtonElement;
    this.prompt = this.root.querySelector(".prompt") as HTMLElement;
    this.loading = this.root.querySelector(".loading") as HTMLElement;
    const progress = this.root.querySelector(".progress") as HTMLElement;
    progress.textContent = options.progressText ?? "";

    for (const image of [this.testImage, this.referenceImage]) {
      image.setAttribute("style", STIMULUS_STYLE);
      image.draggable = false;
    }

    this.toggle = new ToggleController({
      ...options.toggle,
      now: options.toggle?.now ?? this.now,
      initial: "TEST",
      onChange: (view) => this.renderToggleState(view),
    });
    this.renderToggleState(this.toggle.view());
    this.wireEvents();
    this.loadImages();
  }

  private wireEvents(): void {
    const press = (event: Event) => {
      event.preventDefault();
      this.toggle.press();
    };
    const release = () => this.toggle.release();
    this.toggleButton.addEventListener("pointerdown", press);
    this.toggleButton.addEventListener("pointerup", release);
    this.toggleButton.addEventListener("pointerleave", release);
    this.root.addEventListener("keydown", (event) => {
      if ((event as KeyboardEvent).code === "Space" && !(event as KeyboardEvent).repeat) {
        press(event);
      }
    });
    this.root.addEventListener("keyup", (event) => {
      if ((event as KeyboardEvent).code === "Space") {
        release();
      }
    });

    this.slider.addEventListener("input", () => {
      this.sliderTouched = true;
      this.prompt.hidden = true;
    });
    this.submitButton.addEventListener("click", () => this.submit());
  }

  private loadImages(): void {
    const done = () => {
      this.decoded += 1;
      if (this.decoded >= 2) {
        this.loading.hidden = true;
        this.toggleButton.disabled = false;
        this.toggle.setReady(true);
      }
    };
    for (const [image, url] of [
      [this.testImage, this.options.testUrl],
      [this.referenceImage, this.options.referenceUrl],
    ] as const) {
      image.addEventListener("load", done, { once: true });
      image.addEventListener("error", done, { once: true }); // fail open: rating stays possible
      image.src = url;
    }
  }

  private renderToggleState(view: ToggleView): void {
    this.testImage.style.visibility = view.showing === "TEST" ? "visible" : "hidden";
    this.referenceImage.style.visibility = view.showing === "REFERENCE" ? "visible" : "hidden";
    this.toggleButton.classList.toggle("throttled", view.throttled);
    this.toggleButton.setAttribute("data-throttled", String(view.throttled));
  }

  /** Current slider value clamped to the rating scale. */
  score(): number {
    const value = Number.parseFloat(this.slider.value);
    return Math.min(100, Math.max(0, Number.isFinite(value) ? value : 0));
  }

  submit(): void {
    if (this.submitted) {
      return;
    }
    if (!this.sliderTouched) {
      this.prompt.hidden = false;
      return;
    }
    this.submitted = true;
    this.submitButton.disabled = true;
    this.options.onSubmit({
      score: this.score(),
      toggleCount: this.toggle.view().toggleCount,
      elapsedMs: Math.max(0, Math.round(this.now() - this.renderedAt)),
    });
  }
}
