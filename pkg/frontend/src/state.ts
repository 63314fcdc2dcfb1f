// Pure reducer from event frames to the console view model. No hidden state:
// replaying the same frames always reproduces the same ConsoleState.

import {
  Frame,
  MetricPoint,
  ProgressEstimate,
  STAGES,
  StageName,
  stageOrdinal,
} from "./frames.js";

export type StageStatus = "pending" | "current" | "done" | "awaiting" | "failed";

export interface ChatItem {
  ordinal: number;
  kind: "user" | "explanation" | "briefing" | "refusal" | "error";
  stage: StageName;
  text: string;
  role?: string;
}

export interface ErrorCard {
  code: string;
  message: string;
  explanation?: string; // carries the causes/resolutions sections
}

export interface StageView {
  name: StageName;
  status: StageStatus;
  artifacts: Record<string, any>;
  directives: string[];
  error?: ErrorCard;
}

export interface TrialView {
  trialId: number;
  status: "running" | "finished" | "aborted" | "errored";
  assignment: Record<string, unknown>;
  points: MetricPoint[];
  estimate?: ProgressEstimate;
  value?: number | null;
}

export interface ConsoleState {
  sessionId: string | null;
  lastOrdinal: number;
  pending: Map<number, Frame>;
  chat: ChatItem[];
  stages: Record<StageName, StageView>;
  trials: Map<number, TrialView>;
  currentStage: StageName;
  selectedStage: StageName | null; // null shows every stage's artifacts
  awaiting: boolean;
  finalStatus: string | null;
  frameCount: number;
}

export function selectStage(
  state: ConsoleState,
  stage: StageName | null,
): ConsoleState {
  return { ...state, selectedStage: stage };
}

export function inspectedStages(state: ConsoleState): StageName[] {
  return state.selectedStage ? [state.selectedStage] : [...STAGES];
}

export function initialState(sessionId: string | null = null): ConsoleState {
  const stages = Object.fromEntries(
    STAGES.map((name) => [
      name,
      { name, status: "pending", artifacts: {}, directives: [] } as StageView,
    ]),
  ) as Record<StageName, StageView>;
  stages.Intake.status = "current";
  return {
    sessionId,
    lastOrdinal: 0,
    pending: new Map(),
    chat: [],
    stages,
    trials: new Map(),
    currentStage: "Intake",
    selectedStage: null,
    awaiting: false,
    finalStatus: null,
    frameCount: 0,
  };
}

// Frames must apply contiguously; out-of-order arrivals wait in `pending`
// and duplicates are dropped, so a resume never loses or repeats anything.
export function applyFrame(state: ConsoleState, frame: Frame): ConsoleState {
  if (frame.ordinal <= state.lastOrdinal) return state;
  if (frame.ordinal > state.lastOrdinal + 1) {
    const pending = new Map(state.pending);
    pending.set(frame.ordinal, frame);
    return { ...state, pending };
  }
  let next = reduce(state, frame);
  while (next.pending.has(next.lastOrdinal + 1)) {
    const pending = new Map(next.pending);
    const queued = pending.get(next.lastOrdinal + 1)!;
    pending.delete(queued.ordinal);
    next = reduce({ ...next, pending }, queued);
  }
  return next;
}

export function applyEnd(state: ConsoleState, status: string): ConsoleState {
  const stages = { ...state.stages };
  if (status === "Completed") {
    for (const name of STAGES) {
      stages[name] = { ...stages[name], status: "done" };
    }
  }
  return { ...state, stages, finalStatus: status, awaiting: false };
}

function reduce(state: ConsoleState, frame: Frame): ConsoleState {
  const next: ConsoleState = {
    ...state,
    lastOrdinal: frame.ordinal,
    frameCount: state.frameCount + 1,
    chat: state.chat,
    stages: state.stages,
    trials: state.trials,
  };
  switch (frame.kind) {
    case "UserMessage":
      return withChat(next, {
        ordinal: frame.ordinal,
        kind: "user",
        stage: frame.stage,
        text: frame.payload.text ?? "",
        role: frame.payload.role,
      });
    case "SystemExplanation": {
      const refused = Boolean(frame.payload.refused);
      const withItem = withChat(next, {
        ordinal: frame.ordinal,
        kind: refused ? "refusal" : "explanation",
        stage: frame.stage,
        text: frame.payload.text ?? "",
      });
      return attachErrorExplanation(withItem, frame);
    }
    case "StageBriefing":
      return withStage(
        withChat(next, {
          ordinal: frame.ordinal,
          kind: "briefing",
          stage: frame.stage,
          text: frame.payload.text ?? "",
        }),
        frame.stage,
        (stage) => ({ ...stage, status: "done" }),
        { awaiting: true },
      );
    case "StageResult":
      return stageCompleted(next, frame);
    case "Error":
      return stageFailed(next, frame);
    case "Progress":
      return progressed(next, frame);
    case "Retrace":
      return retraced(next, frame);
    default:
      return next; // LlmExchange / GuardlineAction audit records
  }
}

function withChat(state: ConsoleState, item: ChatItem): ConsoleState {
  return { ...state, chat: [...state.chat, item] };
}

function withStage(
  state: ConsoleState,
  name: StageName,
  update: (stage: StageView) => StageView,
  extra: Partial<ConsoleState> = {},
): ConsoleState {
  const stages = { ...state.stages, [name]: update(state.stages[name]) };
  return { ...state, stages, ...extra };
}

function stageCompleted(state: ConsoleState, frame: Frame): ConsoleState {
  const artifacts = frame.payload.artifacts ?? {};
  const completed = frame.stage;
  const upcoming = STAGES[stageOrdinal(completed) + 1];
  let next = withStage(state, completed, (stage) => ({
    ...stage,
    status: "done",
    artifacts: { ...stage.artifacts, ...artifacts },
    error: undefined,
  }));
  if (upcoming) {
    next = withStage(next, upcoming, (stage) =>
      stage.status === "pending" ? { ...stage, status: "current" } : stage,
    );
    next.currentStage = upcoming;
  }
  next.awaiting = false;
  return next;
}

function stageFailed(state: ConsoleState, frame: Frame): ConsoleState {
  const card: ErrorCard = {
    code: frame.payload.code ?? "ERROR",
    message: frame.payload.message ?? "",
  };
  const withCard = withStage(state, frame.stage, (stage) => ({
    ...stage,
    status: "failed",
    error: card,
  }));
  return withChat(withCard, {
    ordinal: frame.ordinal,
    kind: "error",
    stage: frame.stage,
    text: card.message,
  });
}

function attachErrorExplanation(state: ConsoleState, frame: Frame): ConsoleState {
  const stage = state.stages[frame.stage];
  if (stage.status !== "failed" || !stage.error || stage.error.explanation) {
    return state;
  }
  return withStage(state, frame.stage, (s) => ({
    ...s,
    error: { ...s.error!, explanation: frame.payload.text ?? "" },
  }));
}

function progressed(state: ConsoleState, frame: Frame): ConsoleState {
  const payload = frame.payload;
  const trialId: number = payload.trial_id;
  const trials = new Map(state.trials);
  const existing: TrialView = trials.get(trialId) ?? {
    trialId,
    status: "running",
    assignment: {},
    points: [],
  };
  let updated: TrialView = existing;
  if (payload.event === "trial_started") {
    updated = { ...existing, status: "running", assignment: payload.assignment ?? {} };
  } else if (payload.event === "trial_finished") {
    updated = {
      ...existing,
      status: String(payload.status ?? "finished").toLowerCase() as TrialView["status"],
      value: payload.value,
    };
  } else if (payload.point) {
    updated = {
      ...existing,
      points: [...existing.points, payload.point as MetricPoint],
      estimate: payload.estimate as ProgressEstimate,
    };
  }
  trials.set(trialId, updated);
  return { ...state, trials };
}

function retraced(state: ConsoleState, frame: Frame): ConsoleState {
  const target = frame.payload.target as StageName;
  const targetOrd = stageOrdinal(target);
  let next = state;
  for (const name of STAGES) {
    const ord = stageOrdinal(name);
    if (ord > targetOrd) {
      next = withStage(next, name, (stage) => ({
        ...stage,
        status: "pending",
        artifacts: {},
        error: undefined,
      }));
    } else if (ord === targetOrd) {
      next = withStage(next, name, (stage) => ({ ...stage, status: "current" }));
    }
  }
  next.currentStage = target;
  next.awaiting = false;
  if (targetOrd <= stageOrdinal("Training")) {
    next = { ...next, trials: new Map() };
  }
  return next;
}

// -- selectors ---------------------------------------------------------------

export function stageRail(state: ConsoleState): { name: StageName; status: StageStatus }[] {
  return STAGES.map((name) => ({ name, status: state.stages[name].status }));
}

export function shortlistRows(state: ConsoleState): [string, number][] {
  const ranked = state.stages.ModelSelection.artifacts?.shortlist?.ranked ?? [];
  return ranked as [string, number][];
}

export function modalityRows(state: ConsoleState): [string, string][] {
  const columns = state.stages.TaskAnalysis.artifacts?.modality_map?.columns ?? {};
  return Object.entries(columns) as [string, string][];
}

export function searchSpaceRows(state: ConsoleState): [string, unknown[]][] {
  const params = state.stages.Configuration.artifacts?.search_space?.params ?? {};
  return Object.entries(params) as [string, unknown[]][];
}

export function trialRows(state: ConsoleState): TrialView[] {
  return [...state.trials.values()].sort((a, b) => a.trialId - b.trialId);
}

export function stageSections(state: ConsoleState): StageName[] {
  // a stage has a visible section once any frame touched it
  return STAGES.filter(
    (name) =>
      state.stages[name].status !== "pending" ||
      Object.keys(state.stages[name].artifacts).length > 0 ||
      state.chat.some((c) => c.stage === name),
  );
}
