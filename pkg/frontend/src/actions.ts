// Steering calls against the documented service endpoints. A 409 is not an
// exception: it is surfaced inline so the view can show it next to the control.

export interface SteerResult {
  ok: boolean;
  status: number;
  detail: string;
  routed?: "directive" | "intervention";
}

export class ConsoleActions {
  constructor(
    private baseUrl: string,
    private sessionId: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  async sendMessage(text: string): Promise<SteerResult> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${this.sessionId}/messages`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text }),
      },
    );
    const body = await safeJson(response);
    return {
      ok: response.ok,
      status: response.status,
      detail: body.detail ?? "",
      routed: body.routed,
    };
  }

  async abortTrial(trialId: number): Promise<SteerResult> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${this.sessionId}/trials/${trialId}/abort`,
      { method: "POST" },
    );
    const body = await safeJson(response);
    return { ok: response.ok, status: response.status, detail: body.detail ?? "" };
  }
}

async function safeJson(response: Response): Promise<Record<string, any>> {
  try {
    return await response.json();
  } catch {
    return {};
  }
}
