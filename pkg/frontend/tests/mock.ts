/** In-memory stand-in for the vetting service, mimicking its semantics:
 * pending batch, per-batch refit, idempotent replay, contradiction 409. */

import type { FetchLike } from "../src/api.js";
import type { BatchItem, Binary, EstimateSnapshot } from "../src/types.js";

export interface MockOptions {
  items: BatchItem[];
  batchSize: number;
  failuresBeforeUp?: number;
}

export class MockService {
  calls: { method: string; path: string; body?: unknown }[] = [];
  private answered = new Map<string, Binary>();
  private pending: string[] = [];
  private step = 0;
  private estimates: EstimateSnapshot[] = [];
  private failures: number;

  constructor(private readonly options: MockOptions) {
    this.failures = options.failuresBeforeUp ?? 0;
    this.estimates.push(this.snapshot());
  }

  private snapshot(): EstimateSnapshot {
    const n = this.answered.size;
    const positives = [...this.answered.values()].filter((t) => t === 1).length;
    return {
      session_id: "mock",
      step: this.step,
      vetted_fraction: n / this.options.items.length,
      n_vetted: n,
      per_category: { c: n ? positives / n : 0.5 },
      overall: n ? positives / n : 0.5,
      exact: n === this.options.items.length,
    };
  }

  private unvetted(): BatchItem[] {
    return this.options.items.filter((i) => !this.answered.has(i.id));
  }

  fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    const path = new URL(url, "http://mock").pathname;
    const body = init?.body ? JSON.parse(init.body as string) : undefined;
    this.calls.push({ method, path, body });
    if (this.failures > 0) {
      this.failures -= 1;
      throw new TypeError("fetch failed");
    }
    const json = (status: number, payload: unknown) =>
      new Response(JSON.stringify(payload), {
        status,
        headers: { "content-type": "application/json" },
      });

    if (method === "POST" && path === "/sessions") {
      if (body.config.batch_size < 1) {
        return json(400, { code: "validation", message: "batch_size must be positive", field: "batch_size" });
      }
      return json(201, { session_id: "mock", dataset: body.dataset, estimate: this.estimates[0] });
    }
    if (path === "/sessions/mock/batch") {
      if (this.pending.length === 0) {
        const next = this.unvetted().slice(0, this.options.batchSize);
        this.pending = next.map((i) => i.id);
      }
      if (this.pending.length === 0) {
        return json(200, { status: "exhausted", items: [], estimate: this.estimates[this.estimates.length - 1] });
      }
      const items = this.pending.map((id) => this.options.items.find((i) => i.id === id)!);
      return json(200, { status: "pending", items });
    }
    if (method === "POST" && path === "/sessions/mock/vets") {
      const itemId = body.item_id as string;
      const truth = body.truth as Binary;
      if (this.answered.has(itemId)) {
        if (this.answered.get(itemId) === truth) {
          return json(200, { status: "replay", pending_left: this.pending.length, estimate: this.estimates[this.estimates.length - 1] });
        }
        return json(409, {
          code: "conflict",
          message: "already vetted",
          recorded_truth: this.answered.get(itemId),
        });
      }
      if (!this.pending.includes(itemId)) {
        return json(409, { code: "conflict", message: "not pending" });
      }
      this.answered.set(itemId, truth);
      this.pending = this.pending.filter((p) => p !== itemId);
      const refit = this.pending.length === 0;
      if (refit) {
        this.step += 1;
        this.estimates.push(this.snapshot());
      }
      return json(200, {
        status: refit ? "refit" : "recorded",
        pending_left: this.pending.length,
        estimate: this.estimates[this.estimates.length - 1],
      });
    }
    if (path === "/sessions/mock/estimate") {
      return json(200, this.estimates[this.estimates.length - 1]);
    }
    if (path === "/sessions/mock/history") {
      return json(200, {
        session_id: "mock",
        vets: [...this.answered].map(([item, truth]) => ({ type: "vet", ts: "t", item, truth })),
        estimates: this.estimates,
      });
    }
    return json(404, { code: "not_found", message: path });
  };

  /** Force an answer server-side, as if another client vetted the item. */
  forceAnswer(itemId: string, truth: Binary): void {
    this.answered.set(itemId, truth);
    this.pending = this.pending.filter((p) => p !== itemId);
  }
}

export function makeItems(n: number): BatchItem[] {
  return Array.from({ length: n }, (_, j) => ({
    id: `item-${j}`,
    category: "c",
    score: 1 - j * 0.01,
    noisy_label: (j % 2) as Binary,
    display: j % 3 === 0 ? `note ${j}` : null,
  }));
}
