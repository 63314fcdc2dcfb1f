// HTML renderers over the view model. Pure string builders: the tests assert
// on their output and the browser shell assigns it to innerHTML.

import {
  ConsoleState,
  TrialView,
  inspectedStages,
  modalityRows,
  searchSpaceRows,
  shortlistRows,
  stageRail,
  stageSections,
  trialRows,
} from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderConversation(state: ConsoleState): string {
  const sections = stageSections(state);
  const blocks = sections.map((stage) => {
    const items = state.chat.filter((item) => item.stage === stage);
    const body = items
      .map((item) => {
        const cls = `chat-item chat-${item.kind}`;
        if (item.kind === "refusal") {
          return `<div class="${cls} refusal-notice">⛔ ${escapeHtml(item.text)}</div>`;
        }
        const label = item.kind === "user" ? (item.role ?? "user") : item.kind;
        return `<div class="${cls}"><span class="who">${label}</span>` +
          `<span class="text">${escapeHtml(item.text)}</span></div>`;
      })
      .join("\n");
    return `<section class="stage-section" data-stage="${stage}">` +
      `<h3>${stage}</h3>\n${body}\n</section>`;
  });
  const composer = state.awaiting
    ? `<div class="composer awaiting"><input id="directive" ` +
      `placeholder="directive for the next stage"/><button id="send">Send</button></div>`
    : `<div class="composer"><input id="directive" ` +
      `placeholder="intervene while running"/><button id="send">Send</button></div>`;
  return `<div class="conversation">\n${blocks.join("\n")}\n${composer}\n</div>`;
}

export function renderTimeline(state: ConsoleState): string {
  const rail = stageRail(state)
    .map(
      ({ name, status }) =>
        `<li class="stage stage-${status}" data-stage="${name}">` +
        `<span class="dot"></span>${name}<em>${status}</em></li>`,
    )
    .join("\n");
  const inspect = renderInspection(state);
  return `<div class="timeline"><ol class="stage-rail">\n${rail}\n</ol>\n${inspect}</div>`;
}

function renderInspection(state: ConsoleState): string {
  const parts: string[] = [];
  const visible = new Set(inspectedStages(state));
  const modality = visible.has("TaskAnalysis") ? modalityRows(state) : [];
  if (modality.length) {
    const rows = modality
      .map(([col, mod]) => `<tr><td>${escapeHtml(col)}</td><td>${mod}</td></tr>`)
      .join("");
    parts.push(
      `<table class="modality-table"><thead><tr><th>column</th><th>modality</th>` +
        `</tr></thead><tbody>${rows}</tbody></table>`,
    );
  }
  const shortlist = visible.has("ModelSelection") ? shortlistRows(state) : [];
  if (shortlist.length) {
    const rows = shortlist
      .map(
        ([model, score]) =>
          `<tr class="shortlist-row"><td>${escapeHtml(model)}</td>` +
          `<td>${score.toFixed(4)}</td></tr>`,
      )
      .join("");
    parts.push(
      `<table class="shortlist-table"><thead><tr><th>model</th><th>score</th>` +
        `</tr></thead><tbody>${rows}</tbody></table>`,
    );
  }
  const space = visible.has("Configuration") ? searchSpaceRows(state) : [];
  if (space.length) {
    const rows = space
      .map(
        ([name, candidates]) =>
          `<tr><td>${escapeHtml(name)}</td>` +
          `<td><input class="space-edit" data-param="${escapeHtml(name)}" ` +
          `value="${escapeHtml(JSON.stringify(candidates))}"/></td></tr>`,
      )
      .join("");
    parts.push(
      `<table class="search-space"><thead><tr><th>parameter</th>` +
        `<th>candidates</th></tr></thead><tbody>${rows}</tbody></table>`,
    );
  }
  for (const { name, status } of stageRail(state)) {
    const error = state.stages[name].error;
    if (status === "failed" && error && visible.has(name)) {
      const sections = escapeHtml(error.explanation ?? error.message);
      parts.push(
        `<div class="error-card" data-stage="${name}"><h4>${error.code}</h4>` +
          `<pre>${sections}</pre></div>`,
      );
    }
  }
  return `<div class="inspection">${parts.join("\n")}</div>`;
}

export function renderProgress(state: ConsoleState): string {
  const rows = trialRows(state).map((trial) => renderTrialRow(trial)).join("\n");
  return `<div class="progress-panel"><table class="trials">` +
    `<thead><tr><th>trial</th><th>status</th><th>progress</th><th>eta</th>` +
    `<th>metric</th></tr></thead><tbody>\n${rows}\n</tbody></table></div>`;
}

function renderTrialRow(trial: TrialView): string {
  const fraction = trial.estimate?.fraction_done ?? 0;
  const percent = Math.round(fraction * 100);
  const eta =
    trial.status === "running" && trial.estimate?.basis === "StepRate"
      ? `${(trial.estimate.eta_ms / 1000).toFixed(1)}s`
      : "";
  const badge =
    trial.status === "aborted"
      ? `<span class="badge badge-aborted">Aborted</span>`
      : trial.status === "errored"
        ? `<span class="badge badge-errored">Errored</span>`
        : trial.status === "finished"
          ? `<span class="badge badge-finished">Finished</span>`
          : `<button class="abort" data-trial="${trial.trialId}">Abort</button>`;
  const sparkline = renderSparkline(trial.points.map((p) => p.value));
  const value = trial.value == null ? "" : trial.value.toFixed(4);
  return `<tr class="trial-row trial-${trial.status}" data-trial="${trial.trialId}">` +
    `<td>${trial.trialId}</td><td>${badge}</td>` +
    `<td><div class="bar"><div class="fill" style="width:${percent}%"></div>` +
    `</div>${percent}%</td><td>${eta}</td>` +
    `<td>${sparkline}<span class="value">${value}</span></td></tr>`;
}

const SPARK_GLYPHS = "▁▂▃▄▅▆▇█";

export function renderSparkline(values: number[]): string {
  if (!values.length) return `<span class="sparkline"></span>`;
  const min = Math.min(...values);
  const max = Math.max(...values);
  const span = max - min || 1;
  const glyphs = values
    .map((v) => SPARK_GLYPHS[Math.min(7, Math.floor(((v - min) / span) * 8))])
    .join("");
  return `<span class="sparkline" data-points="${values.length}">${glyphs}</span>`;
}

export function renderApp(state: ConsoleState): string {
  return `<div class="console">\n${renderTimeline(state)}\n` +
    `${renderConversation(state)}\n${renderProgress(state)}\n</div>`;
}
