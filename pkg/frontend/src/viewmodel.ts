import { SessionApi, isApiError } from "./api.js";
import { SseClient } from "./sse.js";
import type { EventRecord } from "./types.js";

export interface FeedEntry {
  kind: "chat" | "command" | "mechanical" | "info" | "error";
  text: string;
}

// View state for one live combat session. Actor rows are displayed exactly as
// the service rendered them; nothing about health is re-derived client-side.
// All updates funnel through one promise chain so the view applies events in
// arrival order, and a suggested command only ever lands in the input box --
// the player must submit it themselves.
export class ConsoleViewModel {
  actorRows: string[] = [];
  turnBanner: string | null = null;
  feed: FeedEntry[] = [];
  pendingCommand = "";
  commandHistory: string[] = [];
  connected = false;
  connectionBanner: string | null = null;
  ended = false;
  author: string;

  private sse: SseClient | null = null;
  private queue: Promise<void> = Promise.resolve();
  private changed: () => void;
  private retryDelayMs: number | undefined;

  constructor(
    readonly api: SessionApi,
    readonly sessionId: string,
    options: { author?: string; onChange?: () => void; retryDelayMs?: number } = {},
  ) {
    this.author = options.author ?? "player";
    this.changed = options.onChange ?? (() => {});
    this.retryDelayMs = options.retryDelayMs;
  }

  async connect(): Promise<void> {
    await this.refreshRoster();
    const startSeq = 0; // replay the whole log into the feed on first connect
    this.sse = new SseClient(
      {
        url: (since) => this.api.eventsUrl(this.sessionId, since),
        onMessage: (message) => {
          if (!message.data) return;
          const record = JSON.parse(message.data) as EventRecord;
          this.enqueue(() => this.applyEvent(record));
        },
        onStatus: (connected) => {
          this.enqueue(async () => {
            this.connected = connected;
            this.connectionBanner = connected ? null : "stream lost; retrying";
            if (connected) await this.refreshRoster();
          });
        },
        retryDelayMs: this.retryDelayMs,
      },
      startSeq,
    );
    this.sse.start();
  }

  disconnect(): void {
    this.sse?.stop();
  }

  /** highest event seq received over the stream so far */
  get lastEventSeq(): number {
    return this.sse?.lastSeenSeq ?? 0;
  }

  /** resolves when every event received so far has been applied */
  settled(): Promise<void> {
    return this.queue;
  }

  private enqueue(step: () => void | Promise<void>): void {
    this.queue = this.queue
      .then(step)
      .catch((err) => {
        this.feed.push({ kind: "error", text: `update failed: ${describe(err)}` });
      })
      .then(() => this.changed());
  }

  private async refreshRoster(): Promise<void> {
    const snapshot = await this.api.getSession(this.sessionId);
    this.actorRows = snapshot.actor_lines;
    this.turnBanner = snapshot.turn_banner;
    this.ended = snapshot.ended;
  }

  private async applyEvent(record: EventRecord): Promise<void> {
    switch (record.event_type) {
      case "combat_start":
        this.feed.push({ kind: "info", text: "combat started" });
        break;
      case "message": {
        const author = record.payload.author_id as string;
        const content = record.payload.content as string;
        this.feed.push({ kind: "chat", text: `${author}: ${content}` });
        break;
      }
      case "command":
        this.feed.push({ kind: "command", text: String(record.payload.text ?? "") });
        break;
      case "automation_run": {
        const report = record.payload.report as { mechanical_lines?: string[] } | undefined;
        for (const line of report?.mechanical_lines ?? []) {
          this.feed.push({ kind: "mechanical", text: line });
        }
        break;
      }
      case "combat_state_update":
        // the service renders rows; the console only ever mirrors them
        await this.refreshRoster();
        break;
      case "combat_end":
        this.ended = true;
        this.feed.push({ kind: "info", text: "combat ended" });
        break;
      default:
        break;
    }
  }

  /** player pressed enter on a command; errors render inline and leave state alone */
  async submitCommand(text: string): Promise<boolean> {
    const trimmed = text.trim();
    if (!trimmed) return false;
    this.commandHistory.push(trimmed);
    this.pendingCommand = "";
    this.changed();
    try {
      await this.api.postCommand(this.sessionId, trimmed);
      return true;
    } catch (err) {
      this.enqueue(() => {
        this.feed.push({ kind: "error", text: describe(err) });
      });
      return false;
    }
  }

  /** player typed roleplay; log it as chat and ask for a command suggestion.
   * The suggestion fills the input box and is never executed here. */
  async suggest(roleplayText: string): Promise<string | null> {
    const trimmed = roleplayText.trim();
    if (!trimmed) return null;
    try {
      await this.api.postMessage(this.sessionId, this.author, trimmed);
      const response = await this.api.suggest(this.sessionId, trimmed);
      this.enqueue(() => {
        this.pendingCommand = response.command;
      });
      await this.settled();
      return response.command;
    } catch (err) {
      this.enqueue(() => {
        this.feed.push({
          kind: "error",
          text: isApiError(err) && err.status === 503
            ? `no suggestion available: ${err.message}`
            : describe(err),
        });
      });
      return null;
    }
  }
}

function describe(err: unknown): string {
  if (isApiError(err)) return `${err.type}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}
