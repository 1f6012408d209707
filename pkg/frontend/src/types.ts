export interface TaskSummary {
  task: string;
  name: string;
  labels: string[];
  n_instances: number;
  inspected_count: number;
  state_version: number;
}

export interface InstanceCard {
  id: string;
  text: string;
  specified_label: string;
  current_label: string;
  oos_state: "unknown" | "in_scope" | "out_of_scope";
  source: string;
  iteration: number;
  label_provenance: "specified" | "oracle" | "proxy" | "human";
  /** per-label blended proxy scores; empty until proxies are trained */
  scores: Record<string, number>;
}

export interface MetricsReport {
  n_instances: number;
  diversity: number | null;
  per_label_counts: Record<string, number>;
  label_accuracy: number | null;
  inspected_count: number;
  oos_flagged: number;
  n_events: number;
  state_version: number;
}

export interface ProxyStatus {
  state: "idle" | "running" | "done" | "failed";
  summary?: {
    n_labeled: number;
    positives_per_label: Record<string, number>;
    training_accuracy: number;
    stub_labels: string[];
  };
  message?: string;
}

export type AnnotationAction =
  | { action: "relabel"; label: string }
  | { action: "mark_oos"; flag?: boolean }
  | { action: "confirm" };

export interface AnnotationAck {
  event_id: number;
  state_version: number;
}
