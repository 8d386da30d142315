import type { AnnotationSubmission, Difficulty, TaskView, Verdict } from './types.js';

export type Phase =
  | 'loading' // fetching the next task
  | 'annotating' // task on screen, collecting the verdict
  | 'submitting' // POST in flight
  | 'retry' // submission failed; pending record kept
  | 'done'; // queue exhausted

export interface SessionState {
  annotatorId: string;
  phase: Phase;
  task: TaskView | null;
  verdict: Verdict | null;
  difficulty: Difficulty;
  alternative: string;
  completed: number;
  errorMessage: string | null;
}

export function initialState(annotatorId: string): SessionState {
  return {
    annotatorId,
    phase: 'loading',
    task: null,
    verdict: null,
    difficulty: 1,
    alternative: '',
    completed: 0,
    errorMessage: null,
  };
}

/** A fetched task (or queue exhaustion) resets the annotation draft. */
export function withTask(state: SessionState, task: TaskView | null): SessionState {
  if (task === null) {
    return { ...state, phase: 'done', task: null, verdict: null, alternative: '', errorMessage: null };
  }
  return {
    ...state,
    phase: 'annotating',
    task,
    verdict: null,
    difficulty: 1,
    alternative: '',
    errorMessage: null,
  };
}

export function setVerdict(state: SessionState, verdict: Verdict): SessionState {
  if (state.phase !== 'annotating') return state;
  return { ...state, verdict };
}

export function setDifficulty(state: SessionState, difficulty: Difficulty): SessionState {
  if (state.phase !== 'annotating') return state;
  return { ...state, difficulty };
}

export function setAlternative(state: SessionState, alternative: string): SessionState {
  if (state.phase !== 'annotating') return state;
  return { ...state, alternative };
}

/** Advancing requires a verdict; difficulty always has a value (default 1). */
export function canSubmit(state: SessionState): boolean {
  return state.phase === 'annotating' && state.task !== null && state.verdict !== null;
}

export function buildSubmission(state: SessionState): AnnotationSubmission {
  if (!canSubmit(state) || state.task === null || state.verdict === null) {
    throw new Error('a verdict is required before advancing');
  }
  const submission: AnnotationSubmission = {
    sample_id: state.task.sampleId,
    annotator_id: state.annotatorId,
    verdict: state.verdict,
    difficulty: state.difficulty,
  };
  const alternative = state.alternative.trim();
  if (alternative.length > 0) submission.alternative = alternative;
  return submission;
}

export function submissionStarted(state: SessionState): SessionState {
  return { ...state, phase: 'submitting', errorMessage: null };
}

/** Acknowledged (stored or absorbed duplicate): count it and go fetch. */
export function submissionAcknowledged(state: SessionState): SessionState {
  return {
    ...state,
    phase: 'loading',
    task: null,
    verdict: null,
    alternative: '',
    completed: state.completed + 1,
    errorMessage: null,
  };
}

/** Failure keeps the draft and the cached pending record for retry. */
export function submissionFailed(state: SessionState, message: string): SessionState {
  return { ...state, phase: 'retry', errorMessage: message };
}
