/**
 * Session flow: renders whatever the service directs next
 * (consent -> acuity -> training -> batch 1 -> break -> batch 2 -> done)
 * into a single mount point. The break countdown disables all controls
 * until the mandated pause has elapsed.
 */

import { ApiError, StudyApi } from "./api.js";
import { QuestionView } from "./questionView.js";
import type { Directive, QuestionPayload, TrainingFeedback, TrainingItemPayload } from "./types.js";

export interface AppOptions {
  now?: () => number;
  setInterval?: (fn: () => void, ms: number) => unknown;
  clearInterval?: (handle: unknown) => void;
}

export class SessionApp {
  private sessionId: string | null = null;
  private readonly now: () => number;
  private readonly setIntervalFn: (fn: () => void, ms: number) => unknown;
  private readonly clearIntervalFn: (handle: unknown) => void;

  constructor(
    private readonly api: StudyApi,
    private readonly mount: HTMLElement,
    options: AppOptions = {},
  ) {
    this.now = options.now ?? (() => performance.now());
    this.setIntervalFn = options.setInterval ?? ((fn, ms) => setInterval(fn, ms));
    this.clearIntervalFn = options.clearInterval ?? ((h) => clearInterval(h as number));
  }

  async start(subjectId: string): Promise<void> {
    try {
      const session = await this.api.createSession(subjectId, {
        resolution: [window.screen.width, window.screen.height],
        display_diagonal: null,
      });
      this.sessionId = session.session_id;
      await this.advance();
    } catch (error) {
      this.renderError(error);
    }
  }

  async advance(): Promise<void> {
    if (!this.sessionId) {
      return;
    }
    try {
      const directive = await this.api.nextDirective(this.sessionId);
      this.render(directive);
    } catch (error) {
      this.renderError(error);
    }
  }

  private render(directive: Directive): void {
    switch (directive.directive) {
      case "consent":
        this.renderConsent();
        break;
      case "acuity":
        this.renderAcuity(directive.plates);
        break;
      case "training":
        this.renderTraining(directive.items);
        break;
      case "question":
        this.renderQuestion(directive);
        break;
      case "break":
        this.renderBreak(directive.wait_remaining);
        break;
      case "break_over":
        this.renderBreakChoice();
        break;
      case "done":
        this.renderMessage("done", "All batches complete. Thank you for participating.");
        break;
      case "rejected":
        this.renderMessage("rejected", "This session did not pass the screening steps.");
        break;
    }
  }

  private clear(): HTMLElement {
    this.mount.innerHTML = "";
    return this.mount;
  }

  private renderConsent(): void {
    const mount = this.clear();
    mount.innerHTML = `
      <section class="gate consent">
        <h2>Consent</h2>
        <p>You will compare pairs of images and rate the impairment of one
           relative to the other. Participation is voluntary.</p>
        <label><input type="checkbox" class="consent-agree"> I agree to participate</label>
        <button type="button" class="consent-continue">continue</button>
      </section>
    `;
    const checkbox = mount.querySelector(".consent-agree") as HTMLInputElement;
    const button = mount.querySelector(".consent-continue") as HTMLButtonElement;
    button.addEventListener("click", async () => {
      if (!checkbox.checked || !this.sessionId) {
        return;
      }
      await this.api.passGate(this.sessionId, "consent", { agreed: true });
      await this.advance();
    });
  }

  private renderAcuity(plates: { plate_id: string; image_url: string }[]): void {
    const mount = this.clear();
    const rows = plates
      .map(
        (plate) => `
        <div class="plate">
          <img src="${this.api.resolve(plate.image_url)}" alt="screening plate">
          <input type="text" data-plate="${plate.plate_id}" placeholder="what number do you see?">
        </div>`,
      )
      .join("");
    mount.innerHTML = `
      <section class="gate acuity">
        <h2>Vision check</h2>
        ${rows}
        <button type="button" class="acuity-submit">submit answers</button>
      </section>
    `;
    const button = mount.querySelector(".acuity-submit") as HTMLButtonElement;
    button.addEventListener("click", async () => {
      if (!this.sessionId) {
        return;
      }
      const answers: Record<string, string> = {};
      mount.querySelectorAll("input[data-plate]").forEach((element) => {
        const input = element as HTMLInputElement;
        answers[input.dataset.plate as string] = input.value;
      });
      try {
        await this.api.passGate(this.sessionId, "acuity", { answers });
        await this.advance();
      } catch (error) {
        if (error instanceof ApiError && error.code === "REJECTED") {
          this.renderMessage("rejected", "This session did not pass the vision check.");
          return;
        }
        this.renderError(error);
      }
    });
  }

  private renderTraining(items: TrainingItemPayload[]): void {
    const pendingItem = items.find((item) => !item.passed);
    if (!pendingItem || !this.sessionId) {
      // nothing left to practice: acknowledge so the phase advances
      void this.api
        .passGate(this.sessionId as string, "training", {})
        .then(() => this.advance())
        .catch((error) => this.renderError(error));
      return;
    }
    const mount = this.clear();
    const header = document.createElement("p");
    header.className = "training-note";
    header.textContent = "Training: rate the image pair. You will get feedback.";
    mount.appendChild(header);
    const view = new QuestionView({
      referenceUrl: this.api.resolve(pendingItem.reference_url),
      testUrl: this.api.resolve(pendingItem.test_url),
      progressText: "training",
      now: this.now,
      onSubmit: async ({ score }) => {
        try {
          const feedback = (await this.api.passGate(this.sessionId as string, "training", {
            question_id: pendingItem.question_id,
            score,
          })) as TrainingFeedback;
          if (feedback.ok === false) {
            const [lo, hi] = feedback.expected;
            header.textContent =
              `That rating is outside the expected range (${lo}..${hi}). ` +
              "Toggle again and look closely, then retry.";
          }
          await this.advance();
        } catch (error) {
          this.renderError(error);
        }
      },
    });
    mount.appendChild(view.root);
  }

  private renderQuestion(payload: QuestionPayload): void {
    const mount = this.clear();
    const view = new QuestionView({
      referenceUrl: this.api.resolve(payload.reference_url),
      testUrl: this.api.resolve(payload.test_url),
      progressText: `question ${payload.index + 1} of ${payload.total} (batch ${payload.batch_number})`,
      now: this.now,
      onSubmit: async ({ score, toggleCount, elapsedMs }) => {
        try {
          await this.api.submitResponse(this.sessionId as string, {
            question_id: payload.question_id,
            score,
            toggle_count: toggleCount,
            elapsed_ms: elapsedMs,
          });
          await this.advance();
        } catch (error) {
          this.renderError(error);
        }
      },
    });
    mount.appendChild(view.root);
  }

  private renderBreak(waitRemaining: number): void {
    const mount = this.clear();
    mount.innerHTML = `
      <section class="break">
        <h2>Break</h2>
        <p>Please rest your eyes. The study continues in
           <span class="countdown">${waitRemaining}</span> s.</p>
        <button type="button" class="break-continue" disabled>start second batch</button>
        <button type="button" class="break-decline" disabled>finish without second batch</button>
      </section>
    `;
    let remaining = waitRemaining;
    const countdown = mount.querySelector(".countdown") as HTMLElement;
    const handle = this.setIntervalFn(() => {
      remaining -= 1;
      countdown.textContent = String(Math.max(0, remaining));
      if (remaining <= 0) {
        this.clearIntervalFn(handle);
        void this.advance(); // the service now reports break_over
      }
    }, 1000);
  }

  private renderBreakChoice(): void {
    const mount = this.clear();
    mount.innerHTML = `
      <section class="break">
        <h3>Break complete</h3>
        <button type="button" class="break-continue">start second batch</button>
        <button type="button" class="break-decline">finish without second batch</button>
      </section>
    `;
    (mount.querySelector(".break-continue") as HTMLButtonElement).addEventListener(
      "click",
      async () => {
        await this.api.secondBatch(this.sessionId as string, true);
        await this.advance();
      },
    );
    (mount.querySelector(".break-decline") as HTMLButtonElement).addEventListener(
      "click",
      async () => {
        await this.api.secondBatch(this.sessionId as string, false);
        await this.advance();
      },
    );
  }

  private renderMessage(kind: string, text: string): void {
    const mount = this.clear();
    mount.innerHTML = `<section class="terminal ${kind}"><p>${text}</p></section>`;
  }

  private renderError(error: unknown): void {
    const mount = this.clear();
    const detail = error instanceof Error ? error.message : String(error);
    mount.innerHTML = `
      <section class="error">
        <p>Something went wrong: <span class="detail"></span></p>
        <button type="button" class="retry">retry</button>
      </section>
    `;
    (mount.querySelector(".detail") as HTMLElement).textContent = detail;
    (mount.querySelector(".retry") as HTMLButtonElement).addEventListener("click", () =>
      this.advance(),
    );
  }
}
