/**
 * Typed client over the documented session endpoints.
 *
 * Session state only ever changes through the three documented POSTs; the
 * client exposes nothing else, which is what the console's no-client-side-
 * business-logic invariant rests on.
 */

import {
  AnswersResponse,
  ApiError,
  CreateSessionResponse,
  GenerateResponse,
  MetricsResponse,
  SessionView,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        detail = body.error ?? JSON.stringify(body);
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  createSession(prompt: string, promptId?: string): Promise<CreateSessionResponse> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ prompt, prompt_id: promptId ?? null }),
    });
  }

  submitAnswers(sessionId: string, answers: string[]): Promise<AnswersResponse> {
    return this.request(`/sessions/${sessionId}/answers`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ answers }),
    });
  }

  generate(sessionId: string): Promise<GenerateResponse> {
    return this.request(`/sessions/${sessionId}/generate`, { method: "POST" });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request(`/sessions/${sessionId}`);
  }

  async getMesh(sessionId: string): Promise<ArrayBuffer> {
    const resp = await this.fetchImpl(`${this.baseUrl}/sessions/${sessionId}/mesh`);
    if (!resp.ok) {
      throw new ApiError(resp.status, "no mesh for session");
    }
    return await resp.arrayBuffer();
  }

  async getMetrics(sessionId: string): Promise<MetricsResponse | null> {
    try {
      return await this.request<MetricsResponse>(`/sessions/${sessionId}/metrics`);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        return null; // no reference registered for this prompt
      }
      throw err;
    }
  }
}
