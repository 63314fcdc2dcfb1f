import { MetricPoint, ProgressEstimate } from "../src/frames.js";

// Mirrors the engine's progress estimator: EWMA (alpha 0.3) seeded with the
// first observed step duration.
export function estimateLike(points: MetricPoint[], totalSteps: number): ProgressEstimate {
  if (points.length < 2) {
    return {
      fraction_done: points.length ? points[0].step / totalSteps : 0,
      eta_ms: 0,
      basis: "Unknown",
    };
  }
  const durations = points.slice(1).map((p, i) => p.wall_ms - points[i].wall_ms);
  let ewma = durations[0];
  for (const d of durations.slice(1)) ewma = 0.3 * d + 0.7 * ewma;
  const last = points[points.length - 1].step;
  return {
    fraction_done: Math.min(1, last / totalSteps),
    eta_ms: Math.round((totalSteps - last) * ewma),
    basis: "StepRate",
  };
}
