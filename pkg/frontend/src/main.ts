/** DOM wiring: renders the flow's view states into the page. */

import { ServiceClient } from "./api.js";
import { addedTokens } from "./diff.js";
import { ConsoleFlow, ViewState } from "./flow.js";
import { parseStl } from "./stl.js";
import { createViewer, Viewer } from "./viewer.js";

const SERVICE_URL = (window as any).CLARIFY_SERVICE_URL ?? "http://127.0.0.1:8321";

const root = document.getElementById("app")!;
let viewer: Viewer | null = null;

const client = new ServiceClient(SERVICE_URL);
const flow = new ConsoleFlow(client, render);

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

function render(state: ViewState): void {
  if (viewer && state.kind !== "model-view") {
    viewer.dispose();
    viewer = null;
  }
  root.textContent = "";
  if (state.kind === "prompt-entry") return renderPromptEntry(state);
  if (state.kind === "questions") return renderQuestions(state);
  if (state.kind === "spec-review") return renderReview(state);
  if (state.kind === "model-view") return renderModel(state);
  renderBanner(state.message);
}

function renderPromptEntry(state: Extract<ViewState, { kind: "prompt-entry" }>): void {
  root.append(el("h2", {}, "Describe the part"));
  const input = el("textarea", { id: "prompt-input", rows: "5", cols: "80" });
  const button = el("button", { id: "start" }, "Clarify");
  button.onclick = () => void flow.start(input.value);
  root.append(input, button);
  if (state.error) root.append(el("p", { class: "form-error" }, state.error));
}

function renderQuestions(state: Extract<ViewState, { kind: "questions" }>): void {
  root.append(el("h2", {}, "A few questions first"));
  state.questions.forEach((q, i) => {
    const card = el("div", { class: "question-card" });
    card.append(el("p", {}, q));
    const input = el("input", { id: `answer-${i}`, value: state.answers[i] });
    input.oninput = () => {
      flow.setAnswer(i, input.value);
      submit.disabled = !flow.canSubmit();
    };
    card.append(input);
    root.append(card);
  });
  const submit = el("button", { id: "submit-answers" }, "Submit answers") as HTMLButtonElement;
  submit.disabled = !flow.canSubmit();
  submit.onclick = () => void flow.submitAnswers();
  root.append(submit);
  if (state.formError) root.append(el("p", { class: "form-error" }, state.formError));
}

function renderReview(state: Extract<ViewState, { kind: "spec-review" }>): void {
  root.append(el("h2", {}, "Corrected specification"));
  const spec = el("p", { id: "corrected-spec" });
  for (const segment of state.diff) {
    const span = el("span", segment.added ? { class: "added" } : {}, segment.text + " ");
    spec.append(span);
  }
  root.append(spec);
  const inserted = addedTokens(state.diff);
  if (inserted.length) {
    root.append(el("p", { class: "insertions" }, `clarified values: ${inserted.join(" ")}`));
  }
  const button = el("button", { id: "generate" }, state.generating ? "Generating…" : "Generate model") as HTMLButtonElement;
  button.disabled = state.generating;
  button.onclick = () => void flow.generate();
  root.append(button);
  if (state.formError) root.append(el("p", { class: "form-error" }, state.formError));
}

function renderModel(state: Extract<ViewState, { kind: "model-view" }>): void {
  root.append(el("h2", {}, "Generated model"));
  const badge = el(
    "span",
    { id: "validity-badge", class: state.validity.valid ? "badge-valid" : "badge-invalid" },
    state.validity.valid ? "valid" : `invalid: ${state.validity.failure_kind}`,
  );
  root.append(badge);
  if (!state.validity.valid) {
    root.append(el("pre", { id: "stderr" }, state.validity.stderr_excerpt));
  } else if (state.mesh) {
    const canvas = el("canvas", { id: "viewport", width: "720", height: "480" });
    root.append(canvas);
    viewer = createViewer(canvas);
    viewer.showMesh(parseStl(state.mesh));
  }
  const metrics = el("div", { id: "metrics-panel" });
  if (state.metrics) {
    metrics.append(el("p", {}, `CD (x10^3): ${state.metrics.value_scaled.toFixed(3)}`));
  }
  if (state.lints.length) {
    metrics.append(el("p", {}, `lints: ${state.lints.join(", ")}`));
  }
  root.append(metrics);
  root.append(el("pre", { id: "program" }, state.program));
}

function renderBanner(message: string): void {
  const banner = el("div", { id: "error-banner", class: "banner" });
  banner.append(el("p", {}, `Server error: ${message}`));
  const retry = el("button", { id: "retry" }, "Retry");
  retry.onclick = () => void flow.retry();
  banner.append(retry);
  root.append(banner);
}

render(flow.state);
