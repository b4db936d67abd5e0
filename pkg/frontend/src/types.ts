/** Payload shapes of the /v1 navigation API. Every number displayed in
 *  the UI comes from these fields verbatim; the client never recomputes
 *  dose math. */

export interface ObjectiveRow {
  id: string;
  structure: string;
  kind: string;
  unit: string;
  min: number;
  max: number;
  current: number;
  interpolated: number;
  locked: boolean;
  bound: number;
}

export interface DvhSeries {
  structure: string;
  dose_gy: number[];
  volume_fraction: number[];
}

export interface DoseField {
  nx: number;
  ny: number;
  voxel_size_mm: number;
  max_gy: number;
  values: number[];
}

export interface SessionState {
  session_id: string;
  case_id: string;
  n_plans: number;
  alpha: number[];
  active_plans: number[] | null;
  objectives: ObjectiveRow[];
  dvh: DvhSeries[];
  dose: DoseField;
  feasible: boolean;
  constraints: Record<string, number>;
}

export interface BlockingLock {
  objective_index: number;
  bound: number;
  achievable_min: number;
}

export interface CaseRecord {
  case_id: string;
  status: string;
  progress: number;
  gap_history: number[];
  error: string | null;
  n_voxels: number;
  n_beamlets: number;
  n_beams: number;
}

export interface SparsifyResult {
  plan_id: string;
  achieved: boolean;
  active_beam_count: number;
  removed_beams: number[];
  caps: number[];
  final_fvals: number[];
  search_space_note: string;
  note: string;
}

export interface ExportResult {
  plan_id: string;
  fvals: number[];
}
