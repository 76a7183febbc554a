/** Thin typed client for the prediction service HTTP API. */

import type {
  CaseListing,
  HealthInfo,
  PrototypeListing,
  SessionPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export interface ApiOptions {
  base?: string;
  fetchFn?: FetchLike;
}

async function parse<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = (await res.json()) as { detail?: unknown };
      if (body && body.detail !== undefined) detail = String(body.detail);
    } catch {
      /* non-JSON error body; keep the status text */
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(options: ApiOptions = {}) {
    this.base = options.base ?? "";
    this.fetchFn =
      options.fetchFn ?? ((input, init) => globalThis.fetch(input, init));
  }

  private get<T>(path: string): Promise<T> {
    return this.fetchFn(this.base + path).then((r) => parse<T>(r));
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => parse<T>(r));
  }

  healthz(): Promise<HealthInfo> {
    return this.get("/healthz");
  }

  cases(split: string, limit = 20): Promise<CaseListing> {
    const q = new URLSearchParams({ split, limit: String(limit) });
    return this.get(`/cases?${q}`);
  }

  predictCase(corpusId: string): Promise<SessionPayload> {
    return this.post("/predict", { corpus_id: corpusId });
  }

  getSession(sessionId: string): Promise<SessionPayload> {
    return this.get(`/session/${sessionId}`);
  }

  intervene(
    sessionId: string,
    mask: number[],
    bankVersion?: string,
  ): Promise<SessionPayload> {
    const body: { mask: number[]; bank_version?: string } = { mask };
    if (bankVersion !== undefined) body.bank_version = bankVersion;
    return this.post(`/session/${sessionId}/intervene`, body);
  }

  label(sessionId: string, label: string): Promise<SessionPayload> {
    return this.post(`/session/${sessionId}/label`, { label });
  }

  prototypes(): Promise<PrototypeListing> {
    return this.get("/prototypes");
  }

  artifactUrl(name: string): string {
    return `${this.base}/artifacts/${name}`;
  }
}
