import { describe, expect, it } from 'vitest';

import {
  buildSubmission,
  canSubmit,
  initialState,
  setAlternative,
  setDifficulty,
  setVerdict,
  submissionAcknowledged,
  submissionFailed,
  submissionStarted,
  withTask,
} from '../src/state.js';
import type { TaskView } from '../src/types.js';

const task: TaskView = {
  sampleId: 'p01:r000:yes_no',
  beforeImageUrl: '/img/p01/before.png',
  afterImageUrl: '/img/p01/after.png',
  bbox: { x0: 24, y0: 24, w: 12, h: 12 },
  question: 'Did a new building appear in the upper left part of the scene?',
  options: null,
  answer: 'Yes',
};

describe('session state', () => {
  it('requires a verdict before advancing', () => {
    let state = withTask(initialState('a1'), task);
    expect(canSubmit(state)).toBe(false);
    expect(() => buildSubmission(state)).toThrow(/verdict/);
    state = setVerdict(state, 'agree');
    expect(canSubmit(state)).toBe(true);
  });

  it('builds the wire payload with optional alternative', () => {
    let state = withTask(initialState('a1'), task);
    state = setVerdict(state, 'disagree');
    state = setDifficulty(state, 3);
    state = setAlternative(state, '  a swimming pool was built  ');
    expect(buildSubmission(state)).toEqual({
      sample_id: 'p01:r000:yes_no',
      annotator_id: 'a1',
      verdict: 'disagree',
      difficulty: 3,
      alternative: 'a swimming pool was built',
    });
  });

  it('omits the alternative when blank', () => {
    let state = withTask(initialState('a1'), task);
    state = setVerdict(state, 'agree');
    expect(buildSubmission(state)).not.toHaveProperty('alternative');
  });

  it('acknowledgement advances the counter and clears the draft', () => {
    let state = withTask(initialState('a1'), task);
    state = setVerdict(state, 'agree');
    state = submissionStarted(state);
    expect(state.phase).toBe('submitting');
    state = submissionAcknowledged(state);
    expect(state.completed).toBe(1);
    expect(state.verdict).toBeNull();
    expect(state.phase).toBe('loading');
  });

  it('failures keep the draft for retry', () => {
    let state = withTask(initialState('a1'), task);
    state = setVerdict(state, 'agree');
    state = submissionFailed(submissionStarted(state), 'network down');
    expect(state.phase).toBe('retry');
    expect(state.verdict).toBe('agree');
    expect(state.errorMessage).toMatch(/network down/);
  });

  it('a fresh task resets verdict, difficulty, and alternative', () => {
    let state = withTask(initialState('a1'), task);
    state = setVerdict(state, 'disagree');
    state = setDifficulty(state, 2);
    state = setAlternative(state, 'something else');
    state = withTask(state, { ...task, sampleId: 'next' });
    expect(state.verdict).toBeNull();
    expect(state.difficulty).toBe(1);
    expect(state.alternative).toBe('');
  });

  it('an empty queue finishes the session', () => {
    const state = withTask(initialState('a1'), null);
    expect(state.phase).toBe('done');
    expect(canSubmit(state)).toBe(false);
  });

  it('verdict changes are ignored outside annotation', () => {
    const state = withTask(initialState('a1'), null);
    expect(setVerdict(state, 'agree')).toBe(state);
  });
});
