import { Acknowledgment, SessionConfig, SubmissionBody } from "../src/types";
import { Transport } from "../src/state";

export function makeConfig(overrides: Partial<SessionConfig> = {}): SessionConfig {
  return {
    session_id: "fixture",
    title: "Fixture session",
    scheme: {
      groups: [
        {
          name: "affect",
          labels: ["engaged", "boredom", "confusion", "frustration", "neutral"],
          selection: "single",
        },
        { name: "context", labels: ["alone", "peer"], selection: "multiple" },
      ],
    },
    roster: {
      subjects: [
        { id: "s01", display_name: "Subject 1" },
        { id: "s02", display_name: "Subject 2" },
      ],
    },
    timer: { interval_ms: 5000 },
    scheduling_mode: "round_robin",
    observer_ids: ["o1"],
    created_at: "2026-02-14T08:00:00.000Z",
    ...overrides,
  };
}

export function openedEvent(index: number, subject: string | null = "s01") {
  const due = 1_760_000_000_000 + index * 5000;
  return {
    type: "prompt_opened" as const,
    prompt: {
      prompt_index: index,
      due_at: new Date(due).toISOString().replace("+00:00", "Z"),
      deadline: new Date(due + 5000).toISOString().replace("+00:00", "Z"),
      ...(subject ? { subject_id: subject } : {}),
    },
  };
}

export function expiredEvent(index: number, subject: string | null = "s01") {
  const opened = openedEvent(index, subject);
  return { type: "prompt_expired" as const, prompt: opened.prompt };
}

export class FakeTransport implements Transport {
  calls: SubmissionBody[] = [];
  failuresBeforeSuccess = 0;
  respond: (body: SubmissionBody) => Acknowledgment = (body) => ({
    accepted: true,
    seq: this.calls.length,
    prompt_index: body.prompt_index,
    subject_id: body.subject_id,
    observer_id: "o1",
  });

  async submit(body: SubmissionBody): Promise<Acknowledgment> {
    this.calls.push(structuredClone(body));
    if (this.failuresBeforeSuccess > 0) {
      this.failuresBeforeSuccess -= 1;
      throw new Error("connection reset");
    }
    return this.respond(body);
  }
}

export const instantSleep = async (_ms: number): Promise<void> => {};
