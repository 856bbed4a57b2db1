/** Payload shapes as the service returns them. Field names mirror the API. */

export interface EntrySummary {
  entry_id: number;
  status: string;
  revision: number;
  bullet_count: number;
  created_iteration: number;
  scenario_id: string;
  last_customer_text: string;
  distance?: number; // present on similarity-search hits
}

export interface EntryListResponse {
  entries: EntrySummary[];
  total: number;
  offset: number;
}

export interface SearchResponse {
  hits: EntrySummary[];
}

export interface Utterance {
  speaker: "agent" | "customer";
  text: string;
  turn_index: number;
}

export interface Bullet {
  bullet_id: number;
  kind: "do" | "avoid";
  text: string;
}

export interface Delta {
  kind: "no_changes" | "update";
  adds: Bullet[];
  removes: number[];
  modifies: [number, string][];
}

export interface RefinementRecord {
  round: number;
  student_response: string;
  teacher_response: string;
  critique_raw: string;
  delta: Delta;
}

export interface EditRecord {
  editor: string;
  timestamp: string;
  prior_revision: number;
}

export interface EntryDetail {
  entry_id: number;
  status: string;
  created_iteration: number;
  scenario: {
    id: string;
    source_conversation: string;
    k: number;
    utterances: Utterance[];
    embedding: number[] | null;
  };
  strategy: {
    bullets: Bullet[];
    revision: number;
    max_bullet_id: number;
  };
  history: RefinementRecord[];
  edit_log: EditRecord[];
}

export interface PreviewResponse {
  response: string;
  strategy_revision: number;
  strategy_text: string | null;
  generated_at: string;
}

export interface BulletInput {
  bullet_id?: number;
  kind: "do" | "avoid";
  text: string;
}

export interface ConflictInfo {
  base_revision: number;
  current_revision: number;
}

export type SaveResult =
  | { outcome: "saved"; revision: number }
  | { outcome: "conflict"; conflict: ConflictInfo; serverEntry: EntryDetail };

export interface HealthResponse {
  status: string;
  library_n: number;
  snapshot_version: number;
  context_tag: string;
}
