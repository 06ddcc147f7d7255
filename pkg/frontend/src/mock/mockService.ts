/**
 * In-memory stand-in for the clarification service, for headless e2e runs.
 *
 * Implements the documented endpoints over scripted scenarios and records
 * every request so tests can assert the console never touches an
 * undocumented route. Responses mirror the production JSON shapes.
 */

import { SessionView, ValidityInfo } from "../types.js";
import { FetchLike } from "../api.js";

export interface Scenario {
  /** matched by substring against the submitted prompt */
  match: string;
  questions?: string[];
  corrected: string;
  program: string;
  lints?: string[];
  validity: ValidityInfo;
  meshBuffer?: ArrayBuffer;
  metrics?: { value: number; value_scaled: number; n_points: number } | null;
}

interface SessionRecord {
  id: string;
  prompt: string;
  scenario: Scenario;
  phase: string;
  pending: string[];
  history: { question: string; answer: string }[];
  corrected: string | null;
  generated: boolean;
}

export interface LoggedRequest {
  method: string;
  path: string;
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function makeCubeStlBuffer(size = 1): ArrayBuffer {
  // 12-triangle binary STL of an axis-aligned cube
  const v: [number, number, number][] = [
    [0, 0, 0], [size, 0, 0], [size, size, 0], [0, size, 0],
    [0, 0, size], [size, 0, size], [size, size, size], [0, size, size],
  ];
  const t: [number, number, number][] = [
    [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
    [0, 1, 5], [0, 5, 4], [1, 2, 6], [1, 6, 5],
    [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7],
  ];
  const buffer = new ArrayBuffer(84 + 50 * t.length);
  const view = new DataView(buffer);
  view.setUint32(80, t.length, true);
  t.forEach((tri, i) => {
    let offset = 84 + i * 50 + 12;
    for (const vi of tri) {
      for (let axis = 0; axis < 3; axis++) {
        view.setFloat32(offset, v[vi][axis], true);
        offset += 4;
      }
    }
  });
  return buffer;
}

export class MockService {
  requests: LoggedRequest[] = [];
  private sessions = new Map<string, SessionRecord>();
  private nextId = 1;

  constructor(private scenarios: Scenario[]) {}

  /** fetch-compatible entry point to hand to the ServiceClient */
  fetch: FetchLike = async (url, init) => {
    const method = (init?.method ?? "GET").toUpperCase();
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    this.requests.push({ method, path });
    const body = init?.body ? JSON.parse(String(init.body)) : null;

    if (method === "POST" && path === "/sessions") {
      return this.createSession(body.prompt as string);
    }
    let m = path.match(/^\/sessions\/([^/]+)\/answers$/);
    if (method === "POST" && m) {
      return this.submitAnswers(m[1], body.answers as string[]);
    }
    m = path.match(/^\/sessions\/([^/]+)\/generate$/);
    if (method === "POST" && m) {
      return this.generate(m[1]);
    }
    m = path.match(/^\/sessions\/([^/]+)\/mesh$/);
    if (method === "GET" && m) {
      return this.mesh(m[1]);
    }
    m = path.match(/^\/sessions\/([^/]+)\/metrics$/);
    if (method === "GET" && m) {
      return this.metrics(m[1]);
    }
    m = path.match(/^\/sessions\/([^/]+)$/);
    if (method === "GET" && m) {
      return this.getSession(m[1]);
    }
    return jsonResponse(404, { error: `no such route ${method} ${path}` });
  };

  private createSession(prompt: string): Response {
    const scenario = this.scenarios.find((s) => prompt.includes(s.match));
    if (!scenario) {
      return jsonResponse(502, { error: "no scripted scenario matches the prompt" });
    }
    const id = `mock-${this.nextId++}`;
    const questions = scenario.questions ?? [];
    const record: SessionRecord = {
      id,
      prompt,
      scenario,
      phase: questions.length ? "AwaitingAnswers" : "Finalized",
      pending: [...questions],
      history: [],
      corrected: questions.length ? null : scenario.corrected,
      generated: false,
    };
    this.sessions.set(id, record);
    if (questions.length) {
      return jsonResponse(200, { id, phase: record.phase, questions });
    }
    return jsonResponse(200, { id, phase: record.phase, corrected: record.corrected });
  }

  private submitAnswers(id: string, answers: string[]): Response {
    const record = this.sessions.get(id);
    if (!record) return jsonResponse(404, { error: `unknown session ${id}` });
    if (record.phase !== "AwaitingAnswers") {
      return jsonResponse(409, { error: `answers not legal in phase ${record.phase}` });
    }
    if (answers.length !== record.pending.length) {
      return jsonResponse(422, {
        error: `${answers.length} answers for ${record.pending.length} questions`,
      });
    }
    record.history = record.pending.map((q, i) => ({ question: q, answer: answers[i] }));
    record.pending = [];
    record.phase = "Finalized";
    record.corrected = record.scenario.corrected;
    return jsonResponse(200, { phase: record.phase, corrected: record.corrected });
  }

  private generate(id: string): Response {
    const record = this.sessions.get(id);
    if (!record) return jsonResponse(404, { error: `unknown session ${id}` });
    if (record.phase !== "Finalized") {
      return jsonResponse(409, { error: `cannot generate in phase ${record.phase}` });
    }
    record.generated = true;
    return jsonResponse(200, {
      program: record.scenario.program,
      lints: record.scenario.lints ?? [],
      validity: record.scenario.validity,
    });
  }

  private mesh(id: string): Response {
    const record = this.sessions.get(id);
    if (!record || !record.generated || !record.scenario.validity.valid || !record.scenario.meshBuffer) {
      return jsonResponse(404, { error: "no mesh for session" });
    }
    return new Response(record.scenario.meshBuffer, {
      status: 200,
      headers: { "Content-Type": "model/stl" },
    });
  }

  private metrics(id: string): Response {
    const record = this.sessions.get(id);
    if (!record || !record.generated || !record.scenario.metrics) {
      return jsonResponse(404, { error: "no metrics (reference not registered?)" });
    }
    return jsonResponse(200, record.scenario.metrics);
  }

  private getSession(id: string): Response {
    const record = this.sessions.get(id);
    if (!record) return jsonResponse(404, { error: `unknown session ${id}` });
    const view: SessionView = {
      id,
      prompt: { text: record.prompt, id },
      history: record.history,
      phase: record.phase,
      corrected: record.corrected ? { text: record.corrected } : null,
      pending: record.pending,
      program: record.generated
        ? { text: record.scenario.program, lints: record.scenario.lints ?? [] }
        : null,
      validity: record.generated ? record.scenario.validity : null,
      metrics: record.generated ? (record.scenario.metrics ?? null) : null,
    };
    return jsonResponse(200, view);
  }
}
