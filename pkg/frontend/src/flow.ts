/**
 * Session view-model: a state machine the DOM layer renders verbatim.
 *
 * Every state is derived from server responses; the console performs no
 * business logic beyond gating the submit button on answer completeness,
 * which mirrors the server's arity rule. Reloading at any phase rebuilds
 * the same state from GET /sessions/{id}.
 */

import { ServiceClient } from "./api.js";
import { DiffSegment, diffTokens } from "./diff.js";
import { ApiError, MetricsResponse, ValidityInfo } from "./types.js";

export type ViewState =
  | { kind: "prompt-entry"; error?: string }
  | {
      kind: "questions";
      sessionId: string;
      prompt: string;
      questions: string[];
      answers: string[];
      formError?: string;
    }
  | {
      kind: "spec-review";
      sessionId: string;
      prompt: string;
      corrected: string;
      diff: DiffSegment[];
      generating: boolean;
      formError?: string;
    }
  | {
      kind: "model-view";
      sessionId: string;
      prompt: string;
      corrected: string;
      program: string;
      lints: string[];
      validity: ValidityInfo;
      mesh: ArrayBuffer | null;
      metrics: MetricsResponse | null;
    }
  | { kind: "banner-error"; message: string };

export class ConsoleFlow {
  state: ViewState = { kind: "prompt-entry" };
  private lastAction: (() => Promise<void>) | null = null;

  constructor(
    private client: ServiceClient,
    private onChange: (state: ViewState) => void = () => {},
  ) {}

  private setState(state: ViewState): void {
    this.state = state;
    this.onChange(state);
  }

  /** Server-side failures become a retryable banner; 4xx become form guidance. */
  private async guarded(action: () => Promise<void>, formState?: ViewState): Promise<void> {
    this.lastAction = action;
    try {
      await action();
    } catch (err) {
      if (err instanceof ApiError && (err.status === 409 || err.status === 422) && formState) {
        this.setState({ ...formState, formError: err.message } as ViewState);
        return;
      }
      const message = err instanceof Error ? err.message : String(err);
      this.setState({ kind: "banner-error", message });
    }
  }

  async retry(): Promise<void> {
    if (this.lastAction) {
      await this.guarded(this.lastAction);
    }
  }

  async start(prompt: string): Promise<void> {
    if (!prompt.trim()) {
      this.setState({ kind: "prompt-entry", error: "enter a prompt first" });
      return;
    }
    await this.guarded(async () => {
      const created = await this.client.createSession(prompt.trim());
      if (created.questions && created.questions.length > 0) {
        this.setState({
          kind: "questions",
          sessionId: created.id,
          prompt: prompt.trim(),
          questions: created.questions,
          answers: created.questions.map(() => ""),
        });
      } else {
        this.enterReview(created.id, prompt.trim(), created.corrected ?? prompt.trim());
      }
    });
  }

  private enterReview(sessionId: string, prompt: string, corrected: string): void {
    this.setState({
      kind: "spec-review",
      sessionId,
      prompt,
      corrected,
      diff: diffTokens(prompt, corrected),
      generating: false,
    });
  }

  setAnswer(index: number, value: string): void {
    if (this.state.kind !== "questions") return;
    const answers = [...this.state.answers];
    answers[index] = value;
    this.setState({ ...this.state, answers, formError: undefined });
  }

  /** Mirror of the server's arity rule: all answer fields must be filled. */
  canSubmit(): boolean {
    return (
      this.state.kind === "questions" && this.state.answers.every((a) => a.trim().length > 0)
    );
  }

  async submitAnswers(): Promise<void> {
    if (this.state.kind !== "questions" || !this.canSubmit()) return;
    const current = this.state;
    await this.guarded(async () => {
      const resp = await this.client.submitAnswers(
        current.sessionId,
        current.answers.map((a) => a.trim()),
      );
      this.enterReview(current.sessionId, current.prompt, resp.corrected ?? current.prompt);
    }, current);
  }

  async generate(): Promise<void> {
    if (this.state.kind !== "spec-review") return;
    const current = this.state;
    this.setState({ ...current, generating: true });
    await this.guarded(async () => {
      const generated = await this.client.generate(current.sessionId);
      let mesh: ArrayBuffer | null = null;
      let metrics: MetricsResponse | null = null;
      if (generated.validity.valid) {
        mesh = await this.client.getMesh(current.sessionId);
        metrics = await this.client.getMetrics(current.sessionId);
      }
      this.setState({
        kind: "model-view",
        sessionId: current.sessionId,
        prompt: current.prompt,
        corrected: current.corrected,
        program: generated.program,
        lints: generated.lints,
        validity: generated.validity,
        mesh,
        metrics,
      });
    }, current);
  }

  /** Rebuild the view from server state alone (page reload at any phase). */
  async refresh(sessionId: string): Promise<void> {
    await this.guarded(async () => {
      const view = await this.client.getSession(sessionId);
      if (view.phase === "AwaitingAnswers") {
        this.setState({
          kind: "questions",
          sessionId,
          prompt: view.prompt.text,
          questions: view.pending,
          answers: view.pending.map(() => ""),
        });
        return;
      }
      if (view.phase === "Finalized" && view.program && view.validity) {
        let mesh: ArrayBuffer | null = null;
        let metrics: MetricsResponse | null = null;
        if (view.validity.valid) {
          mesh = await this.client.getMesh(sessionId);
          metrics = view.metrics;
        }
        this.setState({
          kind: "model-view",
          sessionId,
          prompt: view.prompt.text,
          corrected: view.corrected?.text ?? view.prompt.text,
          program: view.program.text,
          lints: view.program.lints,
          validity: view.validity,
          mesh,
          metrics,
        });
        return;
      }
      if (view.phase === "Finalized" && view.corrected) {
        this.enterReview(sessionId, view.prompt.text, view.corrected.text);
        return;
      }
      this.setState({ kind: "prompt-entry" });
    });
  }
}
