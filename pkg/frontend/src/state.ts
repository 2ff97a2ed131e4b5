/**
 * Prompt lifecycle state machine, kept free of DOM concerns so the same
 * logic drives the rendered UI and headless end-to-end scripts.
 *
 * Invariants enforced here:
 *  - the log button is enabled only when every single-selection group has
 *    exactly one choice (and, in free-select mode, a subject is chosen);
 *  - widget state resets when a *new* prompt opens; a replayed event for
 *    the prompt already on screen (reconnect) never wipes selections;
 *  - one submission per prompt: retries reuse the same idempotency key and
 *    a double-tap cannot fire a second request;
 *  - timestamps and prompt indices come only from server events.
 */

import { ServerClock } from "./clock";
import {
  Acknowledgment,
  CategoryGroup,
  PromptWire,
  SessionConfig,
  StreamEvent,
  SubmissionBody,
} from "./types";

export type SubmitState =
  | "idle"
  | "submitting"
  | "acknowledged"
  | "rejected_late"
  | "rejected"
  | "missed";

export interface PromptView {
  promptIndex: number;
  subjectId: string | null;
  subjectName: string | null;
  dueAt: string;
  deadline: string;
  selections: Map<string, Set<string>>;
  submitState: SubmitState;
  locked: boolean;
}

export interface Transport {
  submit(body: SubmissionBody): Promise<Acknowledgment>;
}

export interface ControllerHooks {
  onChange?: () => void;
  onNewPrompt?: () => void; // attention cue hook
  onSessionEnded?: () => void;
}

const MAX_RETRIES = 4;
const RETRY_BASE_MS = 250;

export class PromptController {
  view: PromptView | null = null;
  ended = false;
  readonly clock: ServerClock;
  private readonly sleeper: (ms: number) => Promise<void>;

  constructor(
    readonly config: SessionConfig,
    private readonly transport: Transport,
    private readonly hooks: ControllerHooks = {},
    clock?: ServerClock,
    sleeper?: (ms: number) => Promise<void>,
  ) {
    this.clock = clock ?? new ServerClock();
    this.sleeper = sleeper ?? ((ms) => new Promise((r) => setTimeout(r, ms)));
  }

  // -- event stream ---------------------------------------------------------

  handleEvent(event: StreamEvent): void {
    switch (event.type) {
      case "prompt_opened":
        this.clock.observe(event.prompt.due_at);
        this.openPrompt(event.prompt);
        break;
      case "prompt_expired":
        this.clock.observe(event.prompt.deadline);
        if (this.view && this.view.promptIndex === event.prompt.prompt_index) {
          if (this.view.submitState !== "acknowledged") {
            this.view.submitState = "missed";
          }
          this.view.locked = true;
          this.changed();
        }
        break;
      case "heartbeat":
        this.clock.observe(event.ts);
        break;
      case "session_ended":
        this.clock.observe(event.ts);
        this.ended = true;
        if (this.view) this.view.locked = true;
        this.hooks.onSessionEnded?.();
        this.changed();
        break;
      case "hello":
        break;
    }
  }

  private openPrompt(prompt: PromptWire): void {
    if (this.view && this.view.promptIndex === prompt.prompt_index) {
      // reconnect replay of the prompt already on screen: keep selections
      return;
    }
    const subject = prompt.subject_id
      ? this.config.roster.subjects.find((s) => s.id === prompt.subject_id)
      : null;
    this.view = {
      promptIndex: prompt.prompt_index,
      subjectId: prompt.subject_id ?? null,
      subjectName: subject ? subject.display_name || subject.id : null,
      dueAt: prompt.due_at,
      deadline: prompt.deadline,
      selections: new Map(),
      submitState: "idle",
      locked: false,
    };
    this.hooks.onNewPrompt?.();
    this.changed();
  }

  // -- widget state -----------------------------------------------------------

  group(name: string): CategoryGroup {
    const group = this.config.scheme.groups.find((g) => g.name === name);
    if (!group) throw new Error(`unknown group ${name}`);
    return group;
  }

  select(groupName: string, label: string): void {
    if (!this.view || this.view.locked) return;
    const group = this.group(groupName);
    if (!group.labels.includes(label)) throw new Error(`unknown label ${label}`);
    const chosen = this.view.selections.get(groupName) ?? new Set<string>();
    if (group.selection === "single") {
      // mutually exclusive: choosing one label replaces any other
      this.view.selections.set(groupName, new Set([label]));
    } else {
      if (chosen.has(label)) chosen.delete(label);
      else chosen.add(label);
      this.view.selections.set(groupName, chosen);
    }
    this.changed();
  }

  chooseSubject(subjectId: string): void {
    if (!this.view || this.view.locked) return;
    if (this.view.subjectId && this.config.scheduling_mode !== "free_select") {
      return; // targeted prompts fix the subject
    }
    if (!this.config.roster.subjects.some((s) => s.id === subjectId)) {
      throw new Error(`unknown subject ${subjectId}`);
    }
    const subject = this.config.roster.subjects.find((s) => s.id === subjectId)!;
    this.view.subjectId = subjectId;
    this.view.subjectName = subject.display_name || subject.id;
    this.changed();
  }

  canSubmit(): boolean {
    const view = this.view;
    if (!view || view.locked || view.submitState !== "idle" || this.ended) {
      return false;
    }
    if (!view.subjectId) return false;
    return this.config.scheme.groups.every((group) =>
      group.selection === "single"
        ? (view.selections.get(group.name)?.size ?? 0) === 1
        : true,
    );
  }

  remainingMs(): number {
    return this.view ? this.clock.remainingUntil(this.view.deadline) : 0;
  }

  // -- submission ---------------------------------------------------------------

  private buildBody(status: "logged" | "skipped"): SubmissionBody {
    const view = this.view!;
    const selections: Record<string, string[]> = {};
    if (status === "logged") {
      for (const group of this.config.scheme.groups) {
        const chosen = view.selections.get(group.name);
        if (chosen && chosen.size > 0) {
          selections[group.name] = group.labels.filter((l) => chosen.has(l));
        }
      }
    }
    return {
      prompt_index: view.promptIndex,
      subject_id: view.subjectId!,
      selections,
      status,
    };
  }

  async submit(): Promise<Acknowledgment | null> {
    if (!this.canSubmit()) return null; // double-tap lands here
    return this.send(this.buildBody("logged"));
  }

  async skip(): Promise<Acknowledgment | null> {
    const view = this.view;
    if (!view || view.locked || view.submitState !== "idle" || !view.subjectId) {
      return null;
    }
    return this.send(this.buildBody("skipped"));
  }

  private async send(body: SubmissionBody): Promise<Acknowledgment> {
    const view = this.view!;
    view.submitState = "submitting";
    this.changed();
    let attempt = 0;
    for (;;) {
      try {
        // the same body (hence the same idempotency key) on every retry
        const ack = await this.transport.submit(body);
        this.settle(view, ack);
        return ack;
      } catch (err) {
        attempt += 1;
        if (attempt > MAX_RETRIES) {
          view.submitState = "rejected";
          this.changed();
          throw err;
        }
        await this.sleeper(RETRY_BASE_MS * 2 ** (attempt - 1));
      }
    }
  }

  private settle(view: PromptView, ack: Acknowledgment): void {
    if (view !== this.view && this.view?.promptIndex !== view.promptIndex) {
      return; // a newer prompt replaced the view while in flight
    }
    if (ack.accepted) {
      view.submitState = "acknowledged";
      view.locked = true;
    } else if (ack.reason === "late") {
      view.submitState = "rejected_late";
      view.locked = true;
    } else {
      view.submitState = "rejected";
    }
    this.changed();
  }

  private changed(): void {
    this.hooks.onChange?.();
  }
}
