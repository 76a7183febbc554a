/** Wire types for the prediction service JSON payloads.
 *
 * Every field mirrors the server schema one to one; the UI never
 * derives probabilities or scores client-side, it only renders these.
 */

export interface EventView {
  seq: number;
  ts: number;
  type: string;
}

export interface DecisionInfo {
  status: "accept" | "reject";
  class_index: number | null;
  class_name: string | null;
  entropy: number;
  threshold: number;
}

export interface TopEntry {
  prototype: string;
  class_index: number;
  class_name: string;
  within_class: number;
  similarity: number;
  weight: number;
  contribution: number;
  argmax_cell: number[];
  heatmap_png?: string;
  heatmap_raw?: string;
  contour_box?: number[];
}

export interface ExplanationPayload {
  case_id: string;
  bank_version: string;
  class_names: string[];
  image_size: number;
  tau: number[];
  p_softmax: number[];
  alpha: number[];
  expected_p: number[];
  uncertainty: number;
  entropy: number;
  predicted_class: number;
  top: TopEntry[];
  contributions: number[][];
  similarities: number[][];
}

export interface RepresentativeInfo {
  image_id: string;
  label: number;
  similarity: number;
  argmax_cell: number[];
  crop: number[];
  patch_png?: string;
}

export interface SessionPayload {
  session_id: string;
  case_id: string;
  bank_version: string;
  explanation: ExplanationPayload;
  image_artifact: string;
  mask: number[];
  tau_current: number[];
  p_current: number[];
  decision: DecisionInfo;
  human_label: string | null;
  events: EventView[];
  representatives?: Record<string, RepresentativeInfo[]>;
}

export interface HealthInfo {
  status: string;
  model_loaded: boolean;
  checkpoint_sha256: string | null;
  bank_version: string | null;
  sessions: number;
}

export interface CaseListing {
  split: string;
  case_ids: string[];
}

export interface PrototypeRow {
  prototype: string;
  class_index: number;
  class_name: string;
  within_class: number;
  weight: number;
  dor?: unknown;
}

export interface PrototypeListing {
  bank_version: string;
  class_names: string[];
  prototypes: PrototypeRow[];
}
