/**
 * Event stream with automatic reconnect.
 *
 * The server replays the currently open prompt on every connect, so a
 * reconnecting observer never misses state; the controller treats the
 * replayed prompt idempotently. Structural socket types keep this module
 * usable with the browser WebSocket and with ws in node scripts.
 */

import { StreamEvent } from "./types";

export interface SocketLike {
  addEventListener(type: "open", cb: () => void): void;
  addEventListener(type: "message", cb: (ev: { data: unknown }) => void): void;
  addEventListener(type: "close", cb: (ev: { code?: number }) => void): void;
  close(): void;
}

type SocketFactory = (url: string) => SocketLike;

const BACKOFF_START_MS = 300;
const BACKOFF_MAX_MS = 10_000;

export class EventStream {
  private socket: SocketLike | null = null;
  private backoff = BACKOFF_START_MS;
  private stopped = false;

  constructor(
    private readonly url: string,
    private readonly onEvent: (ev: StreamEvent) => void,
    private readonly makeSocket: SocketFactory =
      (u) => new WebSocket(u) as unknown as SocketLike,
    private readonly schedule: (fn: () => void, ms: number) => void =
      (fn, ms) => { setTimeout(fn, ms); },
  ) {}

  connect(): void {
    if (this.stopped) return;
    const socket = this.makeSocket(this.url);
    this.socket = socket;
    socket.addEventListener("open", () => {
      this.backoff = BACKOFF_START_MS;
    });
    socket.addEventListener("message", (msg) => {
      let event: StreamEvent;
      try {
        event = JSON.parse(String(msg.data)) as StreamEvent;
      } catch {
        return;
      }
      if (event.type === "session_ended") this.stopped = true;
      this.onEvent(event);
    });
    socket.addEventListener("close", (ev) => {
      if (this.socket !== socket) return;
      this.socket = null;
      if (this.stopped || ev.code === 4401 || ev.code === 4404) return;
      this.schedule(() => this.connect(), this.backoff);
      this.backoff = Math.min(this.backoff * 2, BACKOFF_MAX_MS);
    });
  }

  /** Drop the connection (the close handler schedules a reconnect). */
  dropForTesting(): void {
    this.socket?.close();
  }

  stop(): void {
    this.stopped = true;
    this.socket?.close();
    this.socket = null;
  }
}
