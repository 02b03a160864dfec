import type { ApiError, CommandResponse, SessionSnapshot, SuggestResponse } from "./types.js";

async function asApiError(response: Response): Promise<ApiError> {
  let type = "HTTPError";
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = await response.json();
    const detail = body?.detail;
    if (typeof detail === "string") {
      message = detail;
    } else if (detail && typeof detail === "object") {
      type = detail.type ?? type;
      message = detail.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return { status: response.status, type, message };
}

export class SessionApi {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: body !== undefined ? { "content-type": "application/json" } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!response.ok) {
      throw await asApiError(response);
    }
    return (await response.json()) as T;
  }

  createSession(body: {
    party_ref?: string;
    party?: unknown;
    seed?: number;
    forced_faces?: number[];
  }): Promise<{ session_id: string }> {
    return this.request("POST", "/v1/sessions", body);
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request("GET", `/v1/sessions/${sessionId}`);
  }

  postCommand(sessionId: string, text: string, asId?: string): Promise<CommandResponse> {
    const body: Record<string, unknown> = { text };
    if (asId) body.as = asId;
    return this.request("POST", `/v1/sessions/${sessionId}/commands`, body);
  }

  postMessage(sessionId: string, author: string, content: string): Promise<{ seq: number }> {
    return this.request("POST", `/v1/sessions/${sessionId}/messages`, { author, content });
  }

  suggest(sessionId: string, roleplayText: string, caster?: string): Promise<SuggestResponse> {
    const body: Record<string, unknown> = { session_id: sessionId, roleplay_text: roleplayText };
    if (caster) body.caster = caster;
    return this.request("POST", "/v1/suggest", body);
  }

  eventsUrl(sessionId: string, sinceSeq: number): string {
    return `${this.baseUrl}/v1/sessions/${sessionId}/events?since=${sinceSeq}`;
  }
}

export function isApiError(err: unknown): err is ApiError {
  return typeof err === "object" && err !== null && "status" in err && "message" in err;
}
