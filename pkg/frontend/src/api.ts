/** Thin typed client for the vetting service; the console's only data path. */

import type {
  ApiErrorBody,
  BatchPayload,
  Binary,
  CreateSessionResponse,
  EstimateSnapshot,
  HistoryPayload,
  SessionConfig,
  VetResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: ApiErrorBody,
  ) {
    super(body.message);
  }

  get code(): string {
    return this.body.code;
  }

  get field(): string | undefined {
    return this.body.field;
  }
}

async function parseError(response: Response): Promise<never> {
  let body: ApiErrorBody;
  try {
    body = (await response.json()) as ApiErrorBody;
  } catch {
    body = { code: "http_error", message: `HTTP ${response.status}` };
  }
  throw new ApiError(response.status, body);
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      await parseError(response);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string; datasets: string[] }> {
    return this.request("/health");
  }

  createSession(dataset: string, config: SessionConfig): Promise<CreateSessionResponse> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ dataset, config }),
    });
  }

  batch(sessionId: string): Promise<BatchPayload> {
    return this.request(`/sessions/${sessionId}/batch`);
  }

  submitVet(sessionId: string, itemId: string, truth: Binary): Promise<VetResponse> {
    return this.request(`/sessions/${sessionId}/vets`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ item_id: itemId, truth }),
    });
  }

  estimate(sessionId: string): Promise<EstimateSnapshot> {
    return this.request(`/sessions/${sessionId}/estimate`);
  }

  history(sessionId: string): Promise<HistoryPayload> {
    return this.request(`/sessions/${sessionId}/history`);
  }
}
