export type Verdict = 'agree' | 'disagree';

export type Difficulty = 1 | 2 | 3;

export const DIFFICULTY_LABELS: Record<Difficulty, string> = {
  1: 'Very simple',
  2: 'Simple',
  3: 'Hard',
};

/** Pixel-space rectangle, top-left origin, y growing downward. */
export interface BBox {
  x0: number;
  y0: number;
  w: number;
  h: number;
}

/**
 * One review task as served by the API. Deliberately contains nothing about
 * how the sample was produced: the review is blind.
 */
export interface TaskView {
  sampleId: string;
  beforeImageUrl: string;
  afterImageUrl: string;
  bbox: BBox;
  question: string;
  options: string[] | null;
  answer: string;
}

/** Wire shape of POST /api/annotations. */
export interface AnnotationSubmission {
  sample_id: string;
  annotator_id: string;
  verdict: Verdict;
  difficulty: Difficulty;
  alternative?: string;
}
