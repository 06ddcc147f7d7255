/**
 * Headless e2e golden traces against the mock service:
 * unambiguous, 2-question with arity gating, invalid-program.
 */

import { describe, expect, it } from "vitest";

import { ServiceClient } from "../src/api.js";
import { ConsoleFlow, ViewState } from "../src/flow.js";
import { MockService, Scenario, makeCubeStlBuffer } from "../src/mock/mockService.js";

const CYLINDER_GT =
  "a solid cylindrical rod of radius 19 and length 200, workplane origin shifted to (-19, 0, -100)";

const SCENARIOS: Scenario[] = [
  {
    match: "plain plate",
    corrected: "a plain plate 200 by 150 extruded 7",
    program: "import cadquery as cq\nr = cq.Workplane('XY').box(200, 150, 7)",
    validity: { valid: true, failure_kind: null, stderr_excerpt: "" },
    meshBuffer: makeCubeStlBuffer(10),
    metrics: { value: 0.00015, value_scaled: 0.15, n_points: 4096 },
  },
  {
    match: "cylindrical rod",
    questions: [
      "What are the coordinates of the shifted workplane origin?",
      "What radius should the sketched circle have?",
    ],
    corrected: CYLINDER_GT,
    program: "import cadquery as cq\nr = cq.Workplane('XY', origin=(-19, 0, -100)).circle(19).extrude(200)",
    validity: { valid: true, failure_kind: null, stderr_excerpt: "" },
    meshBuffer: makeCubeStlBuffer(19),
    metrics: null,
  },
  {
    match: "impossible bracket",
    corrected: "an impossible bracket",
    program: "import cadquery as cq\nr = cq.Workplane('XY').box(-1, 0, 0)",
    validity: {
      valid: false,
      failure_kind: "ExecutionError",
      stderr_excerpt: "ValueError: box dimensions must be positive",
    },
    metrics: null,
  },
];

function harness() {
  const service = new MockService(SCENARIOS);
  const states: ViewState[] = [];
  const client = new ServiceClient("http://mock", service.fetch);
  const flow = new ConsoleFlow(client, (s) => states.push(s));
  return { service, states, flow };
}

const DOCUMENTED = [
  /^POST \/sessions$/,
  /^POST \/sessions\/[^/]+\/answers$/,
  /^POST \/sessions\/[^/]+\/generate$/,
  /^GET \/sessions\/[^/]+$/,
  /^GET \/sessions\/[^/]+\/mesh$/,
  /^GET \/sessions\/[^/]+\/metrics$/,
];

function assertOnlyDocumentedRoutes(service: MockService): void {
  for (const req of service.requests) {
    const line = `${req.method} ${req.path}`;
    expect(DOCUMENTED.some((p) => p.test(line)), `undocumented request: ${line}`).toBe(true);
  }
}

describe("golden trace: unambiguous flow", () => {
  it("skips the question stage and reaches the model view", async () => {
    const { service, flow } = harness();
    await flow.start("a plain plate 200 by 150 extruded 7");
    expect(flow.state.kind).toBe("spec-review");

    await flow.generate();
    expect(flow.state.kind).toBe("model-view");
    const model = flow.state as Extract<ViewState, { kind: "model-view" }>;
    expect(model.validity.valid).toBe(true);
    expect(model.mesh).not.toBeNull();
    expect(model.metrics?.value_scaled).toBeCloseTo(0.15);
    // never entered the questions stage
    expect(service.requests.some((r) => r.path.endsWith("/answers"))).toBe(false);
    assertOnlyDocumentedRoutes(service);
  });
});

describe("golden trace: two-question flow", () => {
  it("gates submission on answer arity and diffs the corrected spec", async () => {
    const { service, flow } = harness();
    await flow.start("a solid cylindrical rod of length 200");
    expect(flow.state.kind).toBe("questions");
    const questions = flow.state as Extract<ViewState, { kind: "questions" }>;
    expect(questions.questions).toHaveLength(2);

    // submit stays disabled until every field is non-empty
    expect(flow.canSubmit()).toBe(false);
    flow.setAnswer(0, "(-19, 0, -100)");
    expect(flow.canSubmit()).toBe(false);
    await flow.submitAnswers(); // no-op while gated
    expect(flow.state.kind).toBe("questions");
    flow.setAnswer(1, "19");
    expect(flow.canSubmit()).toBe(true);

    await flow.submitAnswers();
    expect(flow.state.kind).toBe("spec-review");
    const review = flow.state as Extract<ViewState, { kind: "spec-review" }>;
    expect(review.corrected).toBe(CYLINDER_GT);
    const added = review.diff.filter((s) => s.added).map((s) => s.text);
    expect(added.join(" ")).toContain("19");
    expect(added.join(" ")).toContain("-100)");

    await flow.generate();
    expect(flow.state.kind).toBe("model-view");
    assertOnlyDocumentedRoutes(service);
  });

  it("server arity rejection renders as form-level guidance", async () => {
    const { flow } = harness();
    await flow.start("a solid cylindrical rod of length 200");
    // bypass the client-side gate to exercise the server rule
    const state = flow.state as Extract<ViewState, { kind: "questions" }>;
    state.answers[0] = "x";
    state.answers[1] = "y";
    state.answers.pop();
    await flow.submitAnswers();
    expect(flow.state.kind).toBe("questions");
    expect((flow.state as any).formError).toMatch(/1 answers for 2 questions/);
  });
});

describe("golden trace: invalid program flow", () => {
  it("shows the red badge and stderr, no viewport, no mesh fetch", async () => {
    const { service, flow } = harness();
    await flow.start("an impossible bracket");
    await flow.generate();
    expect(flow.state.kind).toBe("model-view");
    const model = flow.state as Extract<ViewState, { kind: "model-view" }>;
    expect(model.validity.valid).toBe(false);
    expect(model.validity.failure_kind).toBe("ExecutionError");
    expect(model.validity.stderr_excerpt).toContain("ValueError");
    expect(model.mesh).toBeNull();
    expect(service.requests.some((r) => r.path.endsWith("/mesh"))).toBe(false);
    assertOnlyDocumentedRoutes(service);
  });
});

describe("reload reconstruction", () => {
  it("rebuilds the questions view from server state alone", async () => {
    const { flow } = harness();
    await flow.start("a solid cylindrical rod of length 200");
    const sessionId = (flow.state as any).sessionId as string;

    const fresh = harnessAttached(flow);
    await fresh.refresh(sessionId);
    expect(fresh.state.kind).toBe("questions");
    expect((fresh.state as any).questions).toHaveLength(2);
  });

  it("rebuilds the model view after generation", async () => {
    const { service, flow } = harness();
    await flow.start("a plain plate 200 by 150 extruded 7");
    await flow.generate();
    const sessionId = (flow.state as any).sessionId as string;

    const fresh = new ConsoleFlow(new ServiceClient("http://mock", service.fetch));
    await fresh.refresh(sessionId);
    expect(fresh.state.kind).toBe("model-view");
    const model = fresh.state as Extract<ViewState, { kind: "model-view" }>;
    expect(model.validity.valid).toBe(true);
    expect(model.program).toContain("box(200, 150, 7)");
  });
});

describe("server failure banner", () => {
  it("502 surfaces as a retryable banner", async () => {
    const { flow } = harness();
    await flow.start("a prompt no scenario matches");
    expect(flow.state.kind).toBe("banner-error");
    expect((flow.state as any).message).toMatch(/no scripted scenario/);
  });
});

// reuse the same mock service across "page loads" of the cylinder scenario
function harnessAttached(original: ConsoleFlow): ConsoleFlow {
  const client = (original as any).client as ServiceClient;
  return new ConsoleFlow(client);
}
