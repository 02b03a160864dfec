// Minimal server-sent-events client over fetch streaming. Works in browsers
// and node 20+, and resubscribes from the last seen event id when the stream
// drops, so no event is ever skipped or replayed twice.

export interface SseMessage {
  id: string | null;
  event: string | null;
  data: string;
}

// Incremental parser: feed() returns completed messages, keeping any partial
// frame buffered. Comment lines (": keepalive") are dropped per the SSE spec.
export class SseParser {
  private buffer = "";

  feed(chunk: string): SseMessage[] {
    this.buffer += chunk.replace(/\r\n/g, "\n");
    const messages: SseMessage[] = [];
    let boundary: number;
    while ((boundary = this.buffer.indexOf("\n\n")) !== -1) {
      const frame = this.buffer.slice(0, boundary);
      this.buffer = this.buffer.slice(boundary + 2);
      const message = parseFrame(frame);
      if (message) messages.push(message);
    }
    return messages;
  }
}

function parseFrame(frame: string): SseMessage | null {
  let id: string | null = null;
  let event: string | null = null;
  const data: string[] = [];
  for (const line of frame.split("\n")) {
    if (!line || line.startsWith(":")) continue;
    const colon = line.indexOf(":");
    const field = colon === -1 ? line : line.slice(0, colon);
    let value = colon === -1 ? "" : line.slice(colon + 1);
    if (value.startsWith(" ")) value = value.slice(1);
    if (field === "id") id = value;
    else if (field === "event") event = value;
    else if (field === "data") data.push(value);
  }
  if (id === null && event === null && data.length === 0) return null;
  return { id, event, data: data.join("\n") };
}

export interface SseClientOptions {
  // builds the stream URL for a given resume position
  url: (sinceSeq: number) => string;
  onMessage: (message: SseMessage) => void;
  onStatus?: (connected: boolean) => void;
  retryDelayMs?: number;
  fetchImpl?: typeof fetch;
}

export class SseClient {
  private stopped = false;
  private lastSeq = 0;
  private retryDelayMs: number;
  private fetchImpl: typeof fetch;

  constructor(private readonly options: SseClientOptions, startSeq = 0) {
    this.lastSeq = startSeq;
    this.retryDelayMs = options.retryDelayMs ?? 1000;
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  get lastSeenSeq(): number {
    return this.lastSeq;
  }

  start(): void {
    this.stopped = false;
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      try {
        const response = await this.fetchImpl(this.options.url(this.lastSeq), {
          headers: { accept: "text/event-stream" },
        });
        if (!response.ok || !response.body) {
          throw new Error(`stream returned ${response.status}`);
        }
        this.options.onStatus?.(true);
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        while (!this.stopped) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const message of parser.feed(decoder.decode(value, { stream: true }))) {
            const seq = message.id ? parseInt(message.id, 10) : NaN;
            if (!Number.isNaN(seq)) {
              if (seq <= this.lastSeq) continue; // already seen before a drop
              this.lastSeq = seq;
            }
            this.options.onMessage(message);
          }
        }
        void reader.cancel().catch(() => {});
      } catch {
        // fall through to reconnect
      }
      this.options.onStatus?.(false);
      if (this.stopped) return;
      await sleep(this.retryDelayMs);
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
