// Wire types for the phenoloop service (schema_version 1).

export type RunStatus =
  | "Initializing"
  | "AwaitingLabels"
  | "AwaitingVerdicts"
  | "Converged"
  | "MaxIterations";

export interface RunDescriptor {
  schema_version: number;
  run_id: string;
  disease: string;
  corpus: string;
  status: RunStatus;
  job: "idle" | "initializing" | "training" | "failed";
  job_error: string | null;
  iteration: number;
  queue_size: number;
  pending_review: string[];
  verdicts_received: boolean;
  has_oracle: boolean;
}

export interface Mention {
  hpo_id: string;
  start: number;
  end: number;
  text: string;
  negated: boolean;
}

export interface QueueItem {
  admission_id: string;
  note_text: string;
  mentions: Mention[];
  structured: Record<string, number>;
  labels: Record<string, boolean>;
}

export interface QueueResponse {
  item: QueueItem | null;
  progress: { labeled: number; total: number };
}

export type Verdict = "Relevant" | "Irrelevant";

export interface TopFeature {
  feature: string;
  mean_abs_phi: number;
  direction: "positive" | "negative" | "mixed" | "neutral";
}

// [admission_id, phi, raw value or null]
export type BeeswarmDot = [string, number, number | null];

export interface TopFeaturesResponse {
  iteration: number;
  features: TopFeature[];
  beeswarm: Record<string, BeeswarmDot[]>;
  pending_review: string[];
  verdicts_received: boolean;
}

export interface MetricsRow {
  precision: number;
  recall: number;
  f1: number;
  specificity: number;
  auc_pr: number | null;
  auc_roc: number | null;
  tp: number;
  fp: number;
  fn: number;
  tn: number;
  notes: string[];
}

export interface MetricsResponse {
  status: RunStatus;
  iterations: { iteration: number; score: number; config: Record<string, unknown> }[];
  report: { disease: string; rows: Record<string, MetricsRow> } | null;
  estimate: { n_pred: number; p_est: number; estimate: number } | null;
}

export interface WaterfallRow {
  feature: string;
  phi: number;
  cumulative: number;
}

export interface ExplanationResponse {
  admission_id: string;
  base_value: number;
  model_output: number;
  waterfall: WaterfallRow[];
}
