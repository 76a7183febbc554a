/** In-memory stand-in for the prediction service, replaying payloads
 * captured from the real server (tests/fixtures/session.json).
 *
 * Route logic mirrors the server contract: predict clones a captured
 * session, intervene validates the mask and applies the captured
 * tau/p for that exact mask, label validates against the allowed set,
 * and every mutation appends a sequenced event. Tests can inject
 * failures and gate responses manually to exercise retry and the
 * one-in-flight guarantee.
 */

import fixtureJson from "./fixtures/session.json";
import type { FetchLike } from "../src/api.js";
import type { SessionPayload } from "../src/types.js";

interface Fixture {
  class_names: string[];
  healthz: Record<string, unknown>;
  cases_test: { split: string; case_ids: string[] };
  cases_ood: { split: string; case_ids: string[] };
  accept: SessionPayload;
  reject: SessionPayload;
  interventions: Record<string, { tau: number[]; p: number[] }>;
  prototypes: Record<string, unknown>;
}

export const fixture = fixtureJson as unknown as Fixture;

function clone<T>(value: T): T {
  return JSON.parse(JSON.stringify(value)) as T;
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function detail(status: number, message: string): Response {
  return json({ detail: message }, status);
}

export class FakeService {
  sessions = new Map<string, SessionPayload>();
  requests: { method: string; path: string; body: unknown }[] = [];
  /** respond 500 to this many upcoming requests */
  failNext = 0;
  /** reject (network-style) this many upcoming requests */
  dropNext = 0;
  /** when true, responses wait until release() is called */
  manual = false;
  private gated: (() => void)[] = [];
  private nextSession = 1;
  private nextSeq = 100;
  activeInterventions = 0;
  maxConcurrentInterventions = 0;

  get fetch(): FetchLike {
    return (input, init) => this.handle(input, init);
  }

  release(count = 1): void {
    for (let i = 0; i < count; i += 1) {
      const go = this.gated.shift();
      if (!go) throw new Error("no gated request to release");
      go();
    }
  }

  get gatedCount(): number {
    return this.gated.length;
  }

  private async handle(input: string, init?: RequestInit): Promise<Response> {
    const method = init?.method ?? "GET";
    const url = new URL(input, "http://service.test");
    const path = url.pathname;
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    this.requests.push({ method, path, body });

    if (this.dropNext > 0) {
      this.dropNext -= 1;
      throw new TypeError("fetch failed");
    }

    const isIntervene = path.endsWith("/intervene");
    if (isIntervene) {
      this.activeInterventions += 1;
      this.maxConcurrentInterventions = Math.max(
        this.maxConcurrentInterventions,
        this.activeInterventions,
      );
    }
    try {
      if (this.manual) {
        await new Promise<void>((resolve) => this.gated.push(resolve));
      }
      if (this.failNext > 0) {
        this.failNext -= 1;
        return detail(500, "injected failure");
      }
      return this.route(method, path, url, body);
    } finally {
      if (isIntervene) this.activeInterventions -= 1;
    }
  }

  private route(
    method: string,
    path: string,
    url: URL,
    body: unknown,
  ): Response {
    if (method === "GET" && path === "/healthz") return json(fixture.healthz);

    if (method === "GET" && path === "/cases") {
      const split = url.searchParams.get("split") ?? "test";
      const limit = Number(url.searchParams.get("limit") ?? "20");
      const listing =
        split === "test"
          ? fixture.cases_test
          : split === "ood"
            ? fixture.cases_ood
            : null;
      if (!listing) return detail(404, `unknown or empty split '${split}'`);
      return json({ split, case_ids: listing.case_ids.slice(0, limit) });
    }

    if (method === "GET" && path === "/prototypes") {
      return json(fixture.prototypes);
    }

    if (method === "POST" && path === "/predict") {
      const corpusId = (body as { corpus_id?: string }).corpus_id;
      const template =
        corpusId === fixture.accept.case_id
          ? fixture.accept
          : corpusId === fixture.reject.case_id
            ? fixture.reject
            : null;
      if (!template) return detail(404, `unknown corpus id '${corpusId}'`);
      const session = clone(template);
      session.session_id = `FAKE${this.nextSession}`;
      this.nextSession += 1;
      this.sessions.set(session.session_id, session);
      return json(clone(session));
    }

    const sessionMatch = path.match(
      /^\/session\/([^/]+)(\/intervene|\/label)?$/,
    );
    if (sessionMatch) {
      const [, sid, action] = sessionMatch;
      const session = sid === undefined ? undefined : this.sessions.get(sid);
      if (!session) return detail(404, "unknown session");

      if (method === "GET" && !action) return json(clone(session));

      if (method === "POST" && action === "/intervene") {
        const req = body as { mask?: number[]; bank_version?: string };
        const mask = req.mask ?? [];
        if (mask.length !== session.mask.length) {
          return detail(422, `mask must have ${session.mask.length} entries`);
        }
        if (mask.some((v) => v !== 0 && v !== 1)) {
          return detail(422, "mask entries must be 0 or 1");
        }
        if (
          req.bank_version !== undefined &&
          req.bank_version !== session.bank_version
        ) {
          return detail(409, "request bank version is stale");
        }
        const recorded = fixture.interventions[mask.join("")];
        if (!recorded) return detail(500, "mask missing from fixture");
        session.mask = [...mask];
        session.tau_current = [...recorded.tau];
        session.p_current = [...recorded.p];
        session.events.push({
          seq: this.nextSeq,
          ts: Date.now() / 1000,
          type: "intervention",
        });
        this.nextSeq += 1;
        return json(clone(session));
      }

      if (method === "POST" && action === "/label") {
        const label = (body as { label?: string }).label;
        const allowed = [...fixture.class_names, "reject", "unsure"];
        if (label === undefined || !allowed.includes(label)) {
          return detail(422, `label must be one of ${allowed.join(", ")}`);
        }
        session.human_label = label;
        session.events.push({
          seq: this.nextSeq,
          ts: Date.now() / 1000,
          type: "label",
        });
        this.nextSeq += 1;
        return json(clone(session));
      }
    }

    return detail(404, `no route for ${method} ${path}`);
  }
}
