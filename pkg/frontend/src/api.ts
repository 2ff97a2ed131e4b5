/** Thin REST client for the session server. */

import { Acknowledgment, SessionInfo, SubmissionBody } from "./types";

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    const resp = await this.fetchFn(this.url(`/sessions/${sessionId}`));
    if (!resp.ok) throw new Error(`session lookup failed: ${resp.status}`);
    return (await resp.json()) as SessionInfo;
  }

  async join(sessionId: string, observerId: string): Promise<string> {
    const resp = await this.fetchFn(this.url(`/sessions/${sessionId}/observers`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ observer_id: observerId }),
    });
    if (!resp.ok) {
      const detail = await resp.json().catch(() => ({}));
      throw new Error(detail.error ?? `join failed: ${resp.status}`);
    }
    return (await resp.json()).token as string;
  }

  submitter(sessionId: string, token: string) {
    return {
      submit: async (body: SubmissionBody): Promise<Acknowledgment> => {
        const resp = await this.fetchFn(
          this.url(`/sessions/${sessionId}/observations`),
          {
            method: "POST",
            headers: {
              "Content-Type": "application/json",
              Authorization: `Bearer ${token}`,
            },
            body: JSON.stringify(body),
          },
        );
        // 4xx submission verdicts carry a JSON acknowledgment body; only
        // transport-level failures should reject (and trigger a retry).
        const json = (await resp.json()) as Acknowledgment;
        if (resp.status >= 500) throw new Error(`server error ${resp.status}`);
        return json;
      },
    };
  }

  streamUrl(sessionId: string, token: string): string {
    const ws = this.baseUrl.replace(/^http/, "ws").replace(/\/$/, "");
    return `${ws}/sessions/${sessionId}/stream?token=${encodeURIComponent(token)}`;
  }
}
