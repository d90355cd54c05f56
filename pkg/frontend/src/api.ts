/** Thin typed client for the study service. Configuration is the base URL. */

import type {
  Directive,
  ResponseBody,
  SessionInfo,
  TrainingFeedback,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    public readonly status: number,
    public readonly detail: string,
    public readonly extra: Record<string, unknown> = {},
  ) {
    super(`${code}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class StudyApi {
  private readonly base: string;

  constructor(
    baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    private readonly sleep: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
  ) {
    this.base = baseUrl.replace(/\/+$/, "");
  }

  resolve(path: string): string {
    return path.startsWith("/") ? this.base + path : `${this.base}/${path}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.resolve(path), {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (response.ok) {
      return (await response.json()) as T;
    }
    let body: Record<string, unknown> = {};
    try {
      body = await response.json();
    } catch {
      // non-JSON error body; keep the status only
    }
    const { error, detail, ...extra } = body as {
      error?: string;
      detail?: string;
    };
    throw new ApiError(
      error ?? `HTTP_${response.status}`,
      response.status,
      detail ?? response.statusText,
      extra,
    );
  }

  createSession(subjectId: string, clientMetadata: Record<string, unknown>): Promise<SessionInfo> {
    return this.request("/sessions", {
      method: "POST",
      body: JSON.stringify({ subject_id: subjectId, client_metadata: clientMetadata }),
    });
  }

  nextDirective(sessionId: string): Promise<Directive> {
    return this.request(`/sessions/${sessionId}/next`);
  }

  /**
   * Submit one rating. Submission is idempotent per question: transient
   * failures are retried, and a DUPLICATE_RESPONSE error means an earlier
   * attempt already landed, so it counts as success.
   */
  async submitResponse(
    sessionId: string,
    body: ResponseBody,
    retries = 2,
    retryDelayMs = 400,
  ): Promise<void> {
    for (let attempt = 0; ; attempt += 1) {
      try {
        await this.request(`/sessions/${sessionId}/responses`, {
          method: "POST",
          body: JSON.stringify(body),
        });
        return;
      } catch (error) {
        if (error instanceof ApiError) {
          if (error.code === "DUPLICATE_RESPONSE") {
            return;
          }
          if (error.status < 500) {
            throw error; // the request itself is wrong; retrying cannot help
          }
        }
        if (attempt >= retries) {
          throw error;
        }
        await this.sleep(retryDelayMs);
      }
    }
  }

  passGate(
    sessionId: string,
    gate: "consent" | "acuity" | "training",
    payload: Record<string, unknown>,
  ): Promise<TrainingFeedback | { phase: string }> {
    return this.request(`/sessions/${sessionId}/gates/${gate}`, {
      method: "POST",
      body: JSON.stringify(payload),
    });
  }

  secondBatch(sessionId: string, accept: boolean): Promise<{ phase: string }> {
    return this.request(`/sessions/${sessionId}/second-batch`, {
      method: "POST",
      body: JSON.stringify({ accept }),
    });
  }
}
