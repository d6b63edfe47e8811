// Mirrors of the /api/v1 JSON payloads. Field names match the wire format
// exactly; the console never derives numbers of its own.

export interface Explanation {
  instance_id: number;
  atoms: string[];
  atom_ids: number[];
  predicted_class: number;
  predicted_label: string;
  confidence: number;
  distribution: number[];
  coverage_n: number;
  coverage_pct: number;
  null_count: number;
}

export interface ExplainResponse {
  explanation: Explanation;
  session_id: string | null;
  exclusions_version: number;
}

export interface ClusterInfo {
  cluster_id: number;
  size: number;
  pct: number;
  accuracy: number;
  majority_label: string;
  majority_ratio: number;
  mean_len: number;
  top_atoms: [string, number][];
}

export interface ClusterReport {
  k: number;
  total: number;
  clusters: ClusterInfo[];
}

export interface AtomInfo {
  id: number;
  display: string;
  kind: string;
  feature: string;
  coverage: number;
}

export interface SteerReportJson {
  excluded: number[];
  affected: Record<string, number[]>;
  affected_counts: Record<string, number>;
  replacement_histogram: [string, number][];
  accuracy_before: Record<string, number | null>;
  accuracy_after: Record<string, number | null>;
  confidence_deltas: Record<string, Record<string, number>>;
}

export interface ExcludeResponse {
  session_id: string;
  exclusions_version: number;
  report: SteerReportJson;
}

export interface ResetResponse {
  session_id: string;
  exclusions_version: number;
  excluded: number[];
}

export interface MetricsReport {
  model: string;
  pr_auc: number | null;
  f1: number;
  accuracy: number;
  epoch_losses: number[];
  epoch_val_scores: number[];
  wall_clock: Record<string, number>;
}

export interface HealthResponse {
  status: string;
  model_loaded: boolean;
}

export interface ErrorEnvelope {
  error: { code: string; message: string };
}
