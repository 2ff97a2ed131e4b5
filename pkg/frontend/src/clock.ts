/**
 * Server-synchronized clock estimate.
 *
 * Every server event carries a server-side timestamp; on arrival that stamp
 * is a lower bound on "server now". The largest observed offset keeps the
 * countdown honest without a handshake protocol. The countdown is advisory
 * only: the server deadline decides acceptance, never this estimate.
 */
export class ServerClock {
  private offsetMs = 0;
  private synced = false;

  constructor(private readonly localNow: () => number = () => Date.now()) {}

  observe(serverIso: string): void {
    const serverMs = Date.parse(serverIso);
    if (Number.isNaN(serverMs)) return;
    const offset = serverMs - this.localNow();
    if (!this.synced || offset > this.offsetMs) {
      this.offsetMs = offset;
      this.synced = true;
    }
  }

  now(): number {
    return this.localNow() + this.offsetMs;
  }

  /** Milliseconds until the given server timestamp; never negative. */
  remainingUntil(deadlineIso: string): number {
    return Math.max(0, Date.parse(deadlineIso) - this.now());
  }
}
