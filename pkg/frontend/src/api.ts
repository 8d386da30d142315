import type { AnnotationSubmission, BBox, TaskView } from './types.js';

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status?: number,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

function asBBox(value: unknown): BBox {
  const raw = value as Record<string, unknown>;
  for (const key of ['x0', 'y0', 'w', 'h']) {
    if (typeof raw?.[key] !== 'number') {
      throw new ApiError(`task bbox is missing numeric ${key}`);
    }
  }
  return { x0: raw.x0 as number, y0: raw.y0 as number, w: raw.w as number, h: raw.h as number };
}

/**
 * Parse a task payload through an allowlist. Any extra field the server might
 * ever send (provenance, trails, labels) is dropped here, so it can never
 * reach the rendering layer.
 */
export function parseTask(payload: unknown): TaskView {
  const raw = payload as Record<string, unknown>;
  if (typeof raw?.sample_id !== 'string') throw new ApiError('task payload has no sample_id');
  if (typeof raw.question !== 'string') throw new ApiError('task payload has no question');
  if (typeof raw.answer !== 'string') throw new ApiError('task payload has no answer');
  if (typeof raw.before_image_url !== 'string' || typeof raw.after_image_url !== 'string') {
    throw new ApiError('task payload has no image urls');
  }
  const options = Array.isArray(raw.options) ? raw.options.map(String) : null;
  return {
    sampleId: raw.sample_id,
    beforeImageUrl: raw.before_image_url,
    afterImageUrl: raw.after_image_url,
    bbox: asBBox(raw.bbox),
    question: raw.question,
    options,
    answer: raw.answer,
  };
}

export type SubmitOutcome = 'stored' | 'duplicate';

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  /** Next unannotated task for the annotator, or null when the queue is done. */
  async nextTask(annotatorId: string): Promise<TaskView | null> {
    const url = `${this.baseUrl}/api/tasks/next?annotator=${encodeURIComponent(annotatorId)}`;
    const response = await this.fetchFn(url);
    if (response.status === 204) return null;
    if (!response.ok) throw new ApiError(`task fetch failed (${response.status})`, response.status);
    return parseTask(await response.json());
  }

  /**
   * Submit one annotation. A 409 means the record already exists server-side
   * (e.g. a double click or a retried submission) and is absorbed as success.
   */
  async submit(submission: AnnotationSubmission): Promise<SubmitOutcome> {
    const response = await this.fetchFn(`${this.baseUrl}/api/annotations`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(submission),
    });
    if (response.status === 201) return 'stored';
    if (response.status === 409) return 'duplicate';
    throw new ApiError(`submission failed (${response.status})`, response.status);
  }
}

/** Minimal storage surface so the pending cache is testable without a DOM. */
export interface KeyValueStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

/**
 * Crash/network-safe cache of the one in-flight submission. Saved before the
 * POST, cleared only once the server acknowledged it (201 or absorbed 409),
 * and replayed on the next session start.
 */
export class PendingStore {
  private readonly key: string;

  constructor(
    private readonly storage: KeyValueStorage,
    annotatorId: string,
  ) {
    this.key = `changeqa-pending-${annotatorId}`;
  }

  save(submission: AnnotationSubmission): void {
    this.storage.setItem(this.key, JSON.stringify(submission));
  }

  load(): AnnotationSubmission | null {
    const raw = this.storage.getItem(this.key);
    if (raw === null) return null;
    try {
      return JSON.parse(raw) as AnnotationSubmission;
    } catch {
      this.storage.removeItem(this.key);
      return null;
    }
  }

  clear(): void {
    this.storage.removeItem(this.key);
  }
}
