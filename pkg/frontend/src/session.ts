/** Console session state machine.
 *
 * Owns the answer queue for the current pending batch and the live estimate
 * view. All label mutations go through the vets endpoint; the estimate view
 * mirrors service snapshots exactly and is never extrapolated locally.
 * Answers are exactly-once from the user's perspective: the item id is the
 * idempotency key, so a double-click cannot submit twice.
 */

import { ApiClient, ApiError } from "./api.js";
import type {
  BatchItem,
  Binary,
  EstimateSnapshot,
  SessionConfig,
} from "./types.js";

export type CardState =
  | { kind: "unanswered" }
  | { kind: "inflight"; truth: Binary }
  | { kind: "answered"; truth: Binary }
  | { kind: "locked"; serverTruth: Binary | null };

export interface QueueCard {
  item: BatchItem;
  state: CardState;
}

export type SessionStatus = "idle" | "connecting" | "active" | "exhausted";

export interface RetryBanner {
  message: string;
  attempt: number;
  nextDelayMs: number;
}

export interface SessionView {
  status: SessionStatus;
  sessionId: string | null;
  cards: QueueCard[];
  estimate: EstimateSnapshot | null;
  history: EstimateSnapshot[];
  fieldErrors: Record<string, string>;
  banner: RetryBanner | null;
}

const BACKOFF_BASE_MS = 500;
const BACKOFF_CAP_MS = 8000;

export function validateConfig(config: SessionConfig): Record<string, string> {
  const errors: Record<string, string> = {};
  if (!Number.isInteger(config.batch_size) || config.batch_size < 1) {
    errors["batch_size"] = "batch size must be a positive integer";
  }
  if (config.metric.kind === "prec_at_k") {
    if (!Number.isInteger(config.metric.k) || (config.metric.k ?? 0) < 1) {
      errors["metric.k"] = "K must be a positive integer";
    }
  }
  return errors;
}

export class SessionController {
  private status: SessionStatus = "idle";
  private sessionId: string | null = null;
  private cards: QueueCard[] = [];
  private estimate: EstimateSnapshot | null = null;
  private history: EstimateSnapshot[] = [];
  private fieldErrors: Record<string, string> = {};
  private banner: RetryBanner | null = null;
  private listeners: Array<(view: SessionView) => void> = [];

  constructor(private readonly api: ApiClient) {}

  onChange(listener: (view: SessionView) => void): void {
    this.listeners.push(listener);
  }

  view(): SessionView {
    return {
      status: this.status,
      sessionId: this.sessionId,
      cards: this.cards.map((c) => ({ item: c.item, state: c.state })),
      estimate: this.estimate,
      history: [...this.history],
      fieldErrors: { ...this.fieldErrors },
      banner: this.banner,
    };
  }

  private emit(): void {
    const view = this.view();
    for (const listener of this.listeners) {
      listener(view);
    }
  }

  /** Create a session; inline field errors never reach the network. */
  async start(dataset: string, config: SessionConfig): Promise<boolean> {
    this.fieldErrors = validateConfig(config);
    if (Object.keys(this.fieldErrors).length > 0) {
      this.emit();
      return false;
    }
    this.status = "connecting";
    this.banner = null;
    this.emit();
    let attempt = 0;
    for (;;) {
      try {
        const created = await this.api.createSession(dataset, config);
        this.sessionId = created.session_id;
        this.estimate = created.estimate;
        this.history = [created.estimate];
        this.banner = null;
        await this.refreshBatch();
        return true;
      } catch (err) {
        if (err instanceof ApiError) {
          // validation or unknown dataset: surface inline, do not retry
          this.fieldErrors = err.field
            ? { [err.field]: err.body.message }
            : { _: err.body.message };
          this.status = "idle";
          this.banner = null;
          this.emit();
          return false;
        }
        attempt += 1;
        const delay = Math.min(BACKOFF_BASE_MS * 2 ** (attempt - 1), BACKOFF_CAP_MS);
        this.banner = {
          message: "service unreachable, retrying",
          attempt,
          nextDelayMs: delay,
        };
        this.emit();
        await sleep(delay);
      }
    }
  }

  /** Rebuild the full view from the service; what a page reload runs. */
  async resume(sessionId: string): Promise<void> {
    this.sessionId = sessionId;
    this.status = "connecting";
    this.emit();
    const [estimate, historyPayload] = await Promise.all([
      this.api.estimate(sessionId),
      this.api.history(sessionId),
    ]);
    this.estimate = estimate;
    this.history = historyPayload.estimates;
    await this.refreshBatch();
  }

  private async refreshBatch(): Promise<void> {
    if (!this.sessionId) throw new Error("no session");
    const batch = await this.api.batch(this.sessionId);
    if (batch.status === "exhausted") {
      this.status = "exhausted";
      this.cards = [];
      if (batch.estimate) this.estimate = batch.estimate;
    } else {
      this.status = "active";
      this.cards = batch.items.map((item) => ({
        item,
        state: { kind: "unanswered" } as CardState,
      }));
    }
    this.emit();
  }

  /** Confirm (truth = noisy label) or correct (truth = flipped). */
  async answer(itemId: string, truth: Binary): Promise<void> {
    if (!this.sessionId) throw new Error("no session");
    const card = this.cards.find((c) => c.item.id === itemId);
    if (!card) return;
    if (card.state.kind !== "unanswered") {
      return; // idempotency: in-flight or settled answers never resubmit
    }
    card.state = { kind: "inflight", truth };
    this.emit();
    try {
      const response = await this.api.submitVet(this.sessionId, itemId, truth);
      card.state = { kind: "answered", truth };
      this.estimate = response.estimate;
      if (response.status === "refit") {
        this.history = [...this.history, response.estimate];
        this.emit();
        await this.refreshBatch();
        return;
      }
      this.emit();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        const recorded = (err.body as { recorded_truth?: Binary }).recorded_truth;
        card.state = { kind: "locked", serverTruth: recorded ?? null };
        this.emit();
        return;
      }
      card.state = { kind: "unanswered" };
      this.emit();
      throw err;
    }
  }

  confirm(itemId: string): Promise<void> {
    const card = this.cards.find((c) => c.item.id === itemId);
    if (!card) return Promise.resolve();
    return this.answer(itemId, card.item.noisy_label);
  }

  correct(itemId: string): Promise<void> {
    const card = this.cards.find((c) => c.item.id === itemId);
    if (!card) return Promise.resolve();
    return this.answer(itemId, card.item.noisy_label === 1 ? 0 : 1);
  }

  /** First card still awaiting an answer; keyboard target. */
  nextUnanswered(): QueueCard | null {
    return this.cards.find((c) => c.state.kind === "unanswered") ?? null;
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
