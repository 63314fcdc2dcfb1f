import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { ConsoleActions } from "../src/actions.js";
import { Frame } from "../src/frames.js";
import { applyFrame, initialState, trialRows } from "../src/state.js";
import { renderProgress, renderTimeline } from "../src/render.js";

const fixture = JSON.parse(
  readFileSync(new URL("./fixtures/finished-session.json", import.meta.url), "utf-8"),
);
const FRAMES: Frame[] = fixture.entries;

function stateAtTraining() {
  let state = initialState("s-0001");
  for (const frame of FRAMES) {
    state = applyFrame(state, frame);
    if (state.currentStage === "Training") break;
  }
  return state;
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("steering round-trip", () => {
  it("an intervention during Training retraces the timeline within one frame", async () => {
    let state = stateAtTraining();
    const posts: { url: string; body: string }[] = [];
    const fetchImpl = (async (input: any, init?: RequestInit) => {
      posts.push({ url: String(input), body: String(init?.body ?? "") });
      return jsonResponse(202, { routed: "intervention" });
    }) as typeof fetch;

    const actions = new ConsoleActions("http://svc.test", "s-0001", fetchImpl);
    const result = await actions.sendMessage("use a smaller vision model instead");
    expect(result.ok).toBe(true);
    expect(result.routed).toBe("intervention");
    expect(posts[0].url).toBe("http://svc.test/sessions/s-0001/messages");

    // the service answers with the user frame then the retrace frame
    state = applyFrame(state, {
      ordinal: state.lastOrdinal + 1,
      kind: "UserMessage",
      stage: "Training",
      payload: { text: "use a smaller vision model instead", role: "intervention" },
      at_ms: 0,
    });
    state = applyFrame(state, {
      ordinal: state.lastOrdinal + 1,
      kind: "Retrace",
      stage: "ModelSelection",
      payload: { target: "ModelSelection", discarded: [] },
      at_ms: 0,
    });
    expect(state.currentStage).toBe("ModelSelection");
    const timeline = renderTimeline(state);
    expect(timeline).toContain('class="stage stage-current" data-stage="ModelSelection"');
    expect(timeline).toContain('class="stage stage-pending" data-stage="Preprocessing"');
    expect(timeline).toContain('class="stage stage-pending" data-stage="Training"');
  });

  it("a trial abort flips the row to Aborted on the next frame", async () => {
    let state = stateAtTraining();
    state = applyFrame(state, {
      ordinal: state.lastOrdinal + 1,
      kind: "Progress",
      stage: "Training",
      payload: { trial_id: 2, event: "trial_started", assignment: { lr: 0.01 } },
      at_ms: 0,
    });
    let rendered = renderProgress(state);
    expect(rendered).toContain('<button class="abort" data-trial="2">');

    const fetchImpl = (async () => jsonResponse(202, { trial_id: 2 })) as typeof fetch;
    const actions = new ConsoleActions("http://svc.test", "s-0001", fetchImpl);
    const result = await actions.abortTrial(2);
    expect(result.ok).toBe(true);

    state = applyFrame(state, {
      ordinal: state.lastOrdinal + 1,
      kind: "Progress",
      stage: "Training",
      payload: { trial_id: 2, event: "trial_finished", status: "Aborted", value: null },
      at_ms: 0,
    });
    const trial = trialRows(state).find((t) => t.trialId === 2)!;
    expect(trial.status).toBe("aborted");
    rendered = renderProgress(state);
    expect(rendered).toContain('trial-aborted');
    expect(rendered).toContain("badge-aborted");
    expect(rendered).not.toContain('<button class="abort" data-trial="2">');
  });

  it("surfaces a 409 inline instead of throwing", async () => {
    const fetchImpl = (async () =>
      jsonResponse(409, { detail: "trial is finished" })) as typeof fetch;
    const actions = new ConsoleActions("http://svc.test", "s-0001", fetchImpl);
    const result = await actions.abortTrial(0);
    expect(result.ok).toBe(false);
    expect(result.status).toBe(409);
    expect(result.detail).toBe("trial is finished");
  });
});
