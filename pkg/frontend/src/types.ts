/** Wire types mirroring the clarification service JSON. */

export interface CreateSessionResponse {
  id: string;
  phase: string;
  questions?: string[];
  corrected?: string;
}

export interface AnswersResponse {
  phase: string;
  corrected?: string;
}

export interface ValidityInfo {
  valid: boolean;
  failure_kind: string | null;
  stderr_excerpt: string;
}

export interface GenerateResponse {
  program: string;
  lints: string[];
  validity: ValidityInfo;
}

export interface MetricsResponse {
  value: number;
  value_scaled: number;
  n_points: number;
}

export interface SessionView {
  id: string;
  prompt: { text: string; id: string };
  history: { question: string; answer: string }[];
  phase: string;
  corrected: { text: string } | null;
  pending: string[];
  program: { text: string; lints: string[] } | null;
  validity: ValidityInfo | null;
  metrics: MetricsResponse | null;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}
