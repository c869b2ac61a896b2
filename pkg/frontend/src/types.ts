/** Wire types mirroring the vetting service's JSON payloads. */

export type Binary = 0 | 1;

export interface MetricSpec {
  kind: "prec_at_k" | "average_precision";
  k?: number;
}

export interface SessionConfig {
  metric: MetricSpec;
  estimator: "naive" | "learned" | "vetted_only";
  strategy: "random" | "mcm" | "meec";
  batch_size: number;
  seed?: number;
}

export interface EstimateSnapshot {
  session_id: string;
  step: number;
  vetted_fraction: number;
  n_vetted: number;
  per_category: Record<string, number | null>;
  overall: number | null;
  exact: boolean;
}

export interface BatchItem {
  id: string;
  category: string;
  score: number;
  noisy_label: Binary;
  display: unknown;
}

export interface BatchPayload {
  status: "pending" | "exhausted";
  items: BatchItem[];
  estimate?: EstimateSnapshot;
}

export interface VetResponse {
  status: "recorded" | "refit" | "replay";
  pending_left: number;
  estimate: EstimateSnapshot;
}

export interface CreateSessionResponse {
  session_id: string;
  dataset: string;
  estimate: EstimateSnapshot;
}

export interface HistoryPayload {
  session_id: string;
  vets: { type: string; ts: string; item: string; truth: Binary }[];
  estimates: EstimateSnapshot[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  field?: string;
}
