// Wire types mirroring the service's event-frame schema (docs/api.md).

export type FrameKind =
  | "UserMessage"
  | "SystemExplanation"
  | "StageResult"
  | "GuardlineAction"
  | "Error"
  | "Progress"
  | "StageBriefing"
  | "LlmExchange"
  | "Retrace";

export interface Frame {
  ordinal: number;
  kind: FrameKind;
  stage: StageName;
  payload: Record<string, any>;
  at_ms: number;
}

export const STAGES = [
  "Intake",
  "TaskAnalysis",
  "ModelSelection",
  "Preprocessing",
  "Configuration",
  "Training",
  "Report",
] as const;

export type StageName = (typeof STAGES)[number];

export function stageOrdinal(stage: StageName): number {
  return STAGES.indexOf(stage);
}

export interface SessionSummary {
  session_id: string;
  status: string;
  current_stage: StageName;
  created_at: number;
  last_event_ordinal: number;
}

export interface MetricPoint {
  step: number;
  value: number;
  wall_ms: number;
}

export interface ProgressEstimate {
  fraction_done: number;
  eta_ms: number;
  basis: "StepRate" | "Unknown";
}
