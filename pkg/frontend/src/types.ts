// Shared shapes for the annotation client. Candidate order always comes from
// the server's per-annotator shuffle; the client never reorders it.

export interface CandidateRef {
  id: string;
  path: string;
}

export interface TaskPayload {
  group_id: string;
  annotator_id: string;
  lr_path: string;
  candidates: CandidateRef[];
}

export interface GroupSummary {
  group_id: string;
  status: string;
  rejection_reason: string | null;
  agreement: number | null;
  annotations: number;
  aggregate_ranks: number[] | null;
}

// One badge (1..G) per candidate, null until the annotator picks one.
export type Selections = ReadonlyArray<number | null>;
