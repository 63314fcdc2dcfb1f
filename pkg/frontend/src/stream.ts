// Resumable event-stream client: reads SSE frames, tracks the last applied
// ordinal, and reconnects with ?since=<cursor> so nothing is lost or repeated.

import { Frame } from "./frames.js";

export interface StreamHandlers {
  onFrame: (frame: Frame) => void;
  onEnd?: (status: string) => void;
  onReconnect?: (attempt: number) => void;
}

export interface StreamOptions {
  fetchImpl?: typeof fetch;
  maxReconnects?: number;
  retryDelayMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

interface SseEvent {
  event: string;
  data: string;
}

export function parseSseChunks(): (chunk: string) => SseEvent[] {
  // stateful line-splitter: SSE events are blank-line separated blocks
  let buffer = "";
  return (chunk: string) => {
    buffer += chunk;
    const events: SseEvent[] = [];
    let index;
    while ((index = buffer.indexOf("\n\n")) >= 0) {
      const block = buffer.slice(0, index);
      buffer = buffer.slice(index + 2);
      let event = "message";
      const dataLines: string[] = [];
      for (const line of block.split("\n")) {
        if (line.startsWith("event: ")) event = line.slice(7).trim();
        else if (line.startsWith("data: ")) dataLines.push(line.slice(6));
      }
      if (dataLines.length) events.push({ event, data: dataLines.join("\n") });
    }
    return events;
  };
}

export class EventStreamClient {
  cursor = 0;
  closed = false;

  constructor(
    private baseUrl: string,
    private sessionId: string,
    private handlers: StreamHandlers,
    private options: StreamOptions = {},
  ) {}

  close() {
    this.closed = true;
  }

  async run(): Promise<void> {
    const fetchImpl = this.options.fetchImpl ?? fetch;
    const maxReconnects = this.options.maxReconnects ?? 20;
    const sleep =
      this.options.sleep ?? ((ms: number) => new Promise((r) => setTimeout(r, ms)));
    let attempt = 0;
    while (!this.closed && attempt <= maxReconnects) {
      try {
        const url =
          `${this.baseUrl}/sessions/${this.sessionId}/events?since=${this.cursor}`;
        const response = await fetchImpl(url);
        if (!response.ok || !response.body) {
          throw new Error(`event stream HTTP ${response.status}`);
        }
        const ended = await this.consume(response.body);
        if (ended || this.closed) return;
        throw new Error("stream closed before the end event");
      } catch (err) {
        if (this.closed) return;
        attempt += 1;
        this.handlers.onReconnect?.(attempt);
        if (attempt > maxReconnects) throw err;
        await sleep(this.options.retryDelayMs ?? 250);
      }
    }
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<boolean> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    const parse = parseSseChunks();
    while (true) {
      const { done, value } = await reader.read();
      if (done) return false;
      for (const event of parse(decoder.decode(value, { stream: true }))) {
        if (event.event === "end") {
          const status = safeStatus(event.data);
          this.handlers.onEnd?.(status);
          return true;
        }
        const frame = JSON.parse(event.data) as Frame;
        if (frame.ordinal > this.cursor) {
          this.cursor = frame.ordinal;
          this.handlers.onFrame(frame);
        }
      }
    }
  }
}

function safeStatus(data: string): string {
  try {
    return JSON.parse(data).status ?? "unknown";
  } catch {
    return "unknown";
  }
}
