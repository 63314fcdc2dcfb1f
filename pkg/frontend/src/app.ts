// Browser shell: subscribes to the event stream, re-renders on every frame,
// and wires the composer plus abort buttons to the service endpoints.

import { ConsoleActions } from "./actions.js";
import { applyEnd, applyFrame, initialState } from "./state.js";
import { renderApp } from "./render.js";
import { EventStreamClient } from "./stream.js";

export function mountConsole(root: HTMLElement, baseUrl: string, sessionId: string) {
  let state = initialState(sessionId);
  const actions = new ConsoleActions(baseUrl, sessionId);

  const redraw = () => {
    root.innerHTML = renderApp(state);
    const send = root.querySelector<HTMLButtonElement>("#send");
    const input = root.querySelector<HTMLInputElement>("#directive");
    send?.addEventListener("click", async () => {
      const text = input?.value.trim();
      if (!text) return;
      const result = await actions.sendMessage(text);
      if (!result.ok) {
        flash(root, `message rejected (${result.status}): ${result.detail}`);
      } else if (input) {
        input.value = "";
      }
    });
    const abortButtons = Array.from(
      root.querySelectorAll<HTMLButtonElement>("button.abort"),
    );
    for (const button of abortButtons) {
      button.addEventListener("click", async () => {
        const trialId = Number(button.dataset.trial);
        const result = await actions.abortTrial(trialId);
        if (!result.ok) {
          flash(root, `abort rejected (${result.status}): ${result.detail}`);
        }
      });
    }
  };

  const client = new EventStreamClient(baseUrl, sessionId, {
    onFrame: (frame) => {
      state = applyFrame(state, frame);
      redraw();
    },
    onEnd: (status) => {
      state = applyEnd(state, status);
      redraw();
    },
  });
  redraw();
  client.run().catch((err) => flash(root, `stream failed: ${err}`));
  return { client, getState: () => state };
}

function flash(root: HTMLElement, message: string) {
  const note = document.createElement("div");
  note.className = "flash";
  note.textContent = message;
  root.prepend(note);
  setTimeout(() => note.remove(), 4000);
}
