// Wire types for the session service. SSE payloads are the event-log records
// verbatim; actor rows arrive pre-rendered and are displayed as-is.

export interface EventRecord {
  combat_id: string;
  seq: number;
  timestamp: string;
  event_type:
    | "message"
    | "command"
    | "combat_state_update"
    | "automation_run"
    | "alias_resolution"
    | "snippet_resolution"
    | "combat_start"
    | "combat_end"
    | "button_press";
  payload: Record<string, unknown>;
}

export interface SessionSnapshot {
  session_id: string;
  actor_lines: string[];
  turn_banner: string | null;
  round: number;
  turn_index: number;
  ended: boolean;
  last_seq: number;
}

export interface CommandResponse {
  report: { mechanical_lines: string[]; state_delta: unknown[] };
  mechanical_lines: string[];
  actor_lines: string[];
  turn_banner: string | null;
  ended: boolean;
  last_seq: number;
}

export interface SuggestResponse {
  command: string;
  caster: string;
}

export interface ApiError {
  status: number;
  type: string;
  message: string;
}
