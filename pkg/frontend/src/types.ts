/** Wire formats of the session server (see the repo README for the API). */

export type Selection = "single" | "multiple";

export interface CategoryGroup {
  name: string;
  labels: string[];
  selection: Selection;
}

export interface Subject {
  id: string;
  display_name: string;
  group_tag?: string;
}

export interface SessionConfig {
  session_id: string;
  title: string;
  scheme: { groups: CategoryGroup[] };
  roster: { subjects: Subject[] };
  timer: { interval_ms: number };
  scheduling_mode: "single_subject" | "round_robin" | "free_select";
  observer_ids: string[];
  created_at: string;
}

export interface SessionInfo {
  session_id: string;
  phase: "created" | "running" | "ended";
  prompts_issued: number;
  observations: number;
  config: SessionConfig;
}

export interface PromptWire {
  prompt_index: number;
  due_at: string;
  deadline: string;
  subject_id?: string;
}

export type StreamEvent =
  | { type: "hello"; phase: string; next_prompt_index: number }
  | { type: "prompt_opened"; prompt: PromptWire }
  | { type: "prompt_expired"; prompt: PromptWire }
  | { type: "session_ended"; ts: string }
  | { type: "heartbeat"; ts: string };

export interface SubmissionBody {
  prompt_index: number;
  subject_id: string;
  selections: Record<string, string[]>;
  status: "logged" | "skipped";
}

export interface Acknowledgment {
  accepted: boolean;
  reason?: string;
  seq?: number;
  prompt_index?: number;
  subject_id?: string;
  observer_id?: string;
  logged_at?: string;
}

export function parseServerTime(iso: string): number {
  return Date.parse(iso);
}
