/** Wire types of the study service, mirrored from its JSON payloads. */

export interface AcuityPlatePayload {
  plate_id: string;
  image_url: string;
}

export interface TrainingItemPayload {
  question_id: string;
  reference_url: string;
  test_url: string;
  passed: boolean;
}

export interface QuestionPayload {
  directive: "question";
  question_id: string;
  reference_url: string;
  test_url: string;
  index: number;
  total: number;
  batch_number: number;
}

export type Directive =
  | { directive: "consent" }
  | { directive: "acuity"; plates: AcuityPlatePayload[] }
  | { directive: "training"; items: TrainingItemPayload[] }
  | QuestionPayload
  | { directive: "break"; wait_remaining: number }
  | { directive: "break_over" }
  | { directive: "done" }
  | { directive: "rejected" };

export interface SessionInfo {
  session_id: string;
  phase: string;
  assigned_batches: string[];
}

export interface ResponseBody {
  question_id: string;
  score: number;
  toggle_count: number;
  elapsed_ms: number;
}

export interface TrainingFeedback {
  item: string;
  ok: boolean;
  expected: [number, number];
  phase: string;
}
