import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { Frame } from "../src/frames.js";
import {
  applyEnd,
  applyFrame,
  initialState,
  modalityRows,
  searchSpaceRows,
  shortlistRows,
  stageRail,
  stageSections,
  trialRows,
} from "../src/state.js";

const fixture = JSON.parse(
  readFileSync(new URL("./fixtures/finished-session.json", import.meta.url), "utf-8"),
);
const FRAMES: Frame[] = fixture.entries;

function loadFinished() {
  let state = initialState(fixture.summary.session_id);
  for (const frame of FRAMES) state = applyFrame(state, frame);
  return applyEnd(state, fixture.summary.status);
}

describe("console replay of a finished session", () => {
  it("renders seven stage sections", () => {
    const state = loadFinished();
    expect(stageSections(state)).toEqual([
      "Intake",
      "TaskAnalysis",
      "ModelSelection",
      "Preprocessing",
      "Configuration",
      "Training",
      "Report",
    ]);
  });

  it("shows a shortlist of at most ten rows with scores", () => {
    const state = loadFinished();
    const rows = shortlistRows(state);
    expect(rows.length).toBeGreaterThan(0);
    expect(rows.length).toBeLessThanOrEqual(10);
    for (const [model, score] of rows) {
      expect(typeof model).toBe("string");
      expect(score).toBeGreaterThanOrEqual(-1);
      expect(score).toBeLessThanOrEqual(1);
    }
    const scores = rows.map(([, s]) => s);
    expect([...scores].sort((a, b) => b - a)).toEqual(scores);
  });

  it("shows the modality table and search-space editor rows", () => {
    const state = loadFinished();
    expect(Object.fromEntries(modalityRows(state))).toEqual({
      image_path: "image",
      price: "numerical",
      sold: "label",
    });
    const space = Object.fromEntries(searchSpaceRows(state));
    expect(space.lr).toEqual([0.0001, 0.001, 0.01]);
  });

  it("marks every stage done and keeps the chat ordered", () => {
    const state = loadFinished();
    for (const { status } of stageRail(state)) expect(status).toBe("done");
    const ordinals = state.chat.map((c) => c.ordinal);
    expect([...ordinals].sort((a, b) => a - b)).toEqual(ordinals);
    expect(state.finalStatus).toBe("Completed");
  });

  it("collects the mock trials with their sparkline points", () => {
    const state = loadFinished();
    const trials = trialRows(state);
    expect(trials.length).toBe(4);
    for (const trial of trials) {
      expect(trial.status).toBe("finished");
      expect(trial.points.length).toBe(10);
    }
  });

  it("is stateless: replaying from ordinal zero reproduces the same state", () => {
    const a = loadFinished();
    const b = loadFinished();
    expect(JSON.stringify({ ...a, trials: [...a.trials], pending: [] }))
      .toEqual(JSON.stringify({ ...b, trials: [...b.trials], pending: [] }));
  });
});

describe("frame application discipline", () => {
  it("drops duplicates and holds out-of-order frames until contiguous", () => {
    let state = initialState("s");
    state = applyFrame(state, FRAMES[0]);
    state = applyFrame(state, FRAMES[0]); // duplicate
    expect(state.frameCount).toBe(1);
    state = applyFrame(state, FRAMES[2]); // gap: held
    expect(state.frameCount).toBe(1);
    state = applyFrame(state, FRAMES[1]); // fills the gap, flushes both
    expect(state.frameCount).toBe(3);
    expect(state.lastOrdinal).toBe(3);
  });
});

describe("retrace handling", () => {
  it("resets downstream stages when a retrace frame arrives", () => {
    let state = initialState("s");
    // replay until Training is current
    for (const frame of FRAMES) {
      state = applyFrame(state, frame);
      if (state.currentStage === "Training") break;
    }
    expect(state.stages.Configuration.status).toBe("done");
    const retrace: Frame = {
      ordinal: state.lastOrdinal + 1,
      kind: "Retrace",
      stage: "ModelSelection",
      payload: { target: "ModelSelection", discarded: [] },
      at_ms: 0,
    };
    state = applyFrame(state, retrace);
    expect(state.currentStage).toBe("ModelSelection");
    expect(state.stages.ModelSelection.status).toBe("current");
    expect(state.stages.Preprocessing.status).toBe("pending");
    expect(state.stages.Configuration.status).toBe("pending");
    expect(Object.keys(state.stages.Configuration.artifacts)).toHaveLength(0);
  });
});

describe("failure view", () => {
  it("keeps the error card and attaches the explanation sections", () => {
    let state = initialState("s");
    state = applyFrame(state, FRAMES[0]);
    state = applyFrame(state, {
      ordinal: 2,
      kind: "Error",
      stage: "Configuration",
      payload: { code: "SPACE_INVALID", message: "original value not in range: lr" },
      at_ms: 0,
    });
    state = applyFrame(state, {
      ordinal: 3,
      kind: "SystemExplanation",
      stage: "Configuration",
      payload: {
        text: "summary\n\nProbable causes:\n- range left out the original\n\n" +
          "Potential resolutions:\n- include the original value",
      },
      at_ms: 0,
    });
    const error = state.stages.Configuration.error;
    expect(state.stages.Configuration.status).toBe("failed");
    expect(error?.code).toBe("SPACE_INVALID");
    expect(error?.explanation).toContain("Probable causes:");
    expect(error?.explanation).toContain("Potential resolutions:");
  });
});

describe("stage inspection selection", () => {
  it("narrows the inspected artifacts to the selected stage", async () => {
    const { selectStage, inspectedStages } = await import("../src/state.js");
    const { renderTimeline } = await import("../src/render.js");
    const all = loadFinished();
    expect(inspectedStages(all).length).toBe(7);
    const onlySelection = selectStage(all, "ModelSelection");
    expect(inspectedStages(onlySelection)).toEqual(["ModelSelection"]);
    const html = renderTimeline(onlySelection);
    expect(html).toContain("shortlist-table");
    expect(html).not.toContain("modality-table");
    expect(html).not.toContain("search-space");
  });
});
