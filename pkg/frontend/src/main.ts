import { ApiClient, ApiError, PendingStore } from './api.js';
import { clampPan, IDENTITY, overlayRect, panBy, toCss, zoomAt, type Transform } from './overlay.js';
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
  type SessionState,
} from './state.js';
import { DIFFICULTY_LABELS, type Difficulty, type Verdict } from './types.js';

const api = new ApiClient('');

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function resolveAnnotatorId(): string {
  const fromQuery = new URLSearchParams(window.location.search).get('annotator');
  if (fromQuery) {
    window.localStorage.setItem('changeqa-annotator', fromQuery);
    return fromQuery;
  }
  const stored = window.localStorage.getItem('changeqa-annotator');
  if (stored) return stored;
  const entered = window.prompt('Annotator id:')?.trim() || `anon-${Date.now()}`;
  window.localStorage.setItem('changeqa-annotator', entered);
  return entered;
}

class ReviewApp {
  private state: SessionState;
  private readonly pending: PendingStore;
  private transform: Transform = IDENTITY;
  private dragging: { x: number; y: number } | null = null;

  private readonly panes = [el<HTMLDivElement>('pane-before'), el<HTMLDivElement>('pane-after')];
  private readonly layers = [el<HTMLDivElement>('layer-before'), el<HTMLDivElement>('layer-after')];
  private readonly images = [el<HTMLImageElement>('img-before'), el<HTMLImageElement>('img-after')];
  private readonly boxes = [el<HTMLDivElement>('bbox-before'), el<HTMLDivElement>('bbox-after')];
  private readonly question = el<HTMLParagraphElement>('question');
  private readonly optionsList = el<HTMLUListElement>('options');
  private readonly answer = el<HTMLParagraphElement>('answer');
  private readonly agreeButton = el<HTMLButtonElement>('verdict-agree');
  private readonly disagreeButton = el<HTMLButtonElement>('verdict-disagree');
  private readonly difficultyGroup = el<HTMLDivElement>('difficulty');
  private readonly alternative = el<HTMLTextAreaElement>('alternative');
  private readonly submitButton = el<HTMLButtonElement>('submit');
  private readonly retryButton = el<HTMLButtonElement>('retry');
  private readonly banner = el<HTMLDivElement>('banner');
  private readonly progress = el<HTMLSpanElement>('progress');
  private readonly card = el<HTMLDivElement>('task-card');
  private readonly doneNote = el<HTMLDivElement>('done-note');

  constructor(annotatorId: string) {
    this.state = initialState(annotatorId);
    this.pending = new PendingStore(window.localStorage, annotatorId);
    el<HTMLSpanElement>('annotator').textContent = annotatorId;
    this.buildDifficultySelector();
    this.wireEvents();
  }

  private buildDifficultySelector(): void {
    ([1, 2, 3] as Difficulty[]).forEach((level) => {
      const label = document.createElement('label');
      const input = document.createElement('input');
      input.type = 'radio';
      input.name = 'difficulty';
      input.value = String(level);
      input.checked = level === 1;
      input.addEventListener('change', () => {
        this.state = setDifficulty(this.state, level);
      });
      label.appendChild(input);
      label.appendChild(document.createTextNode(` ${level} (${DIFFICULTY_LABELS[level]})`));
      this.difficultyGroup.appendChild(label);
    });
  }

  private wireEvents(): void {
    this.agreeButton.addEventListener('click', () => this.chooseVerdict('agree'));
    this.disagreeButton.addEventListener('click', () => this.chooseVerdict('disagree'));
    this.submitButton.addEventListener('click', () => void this.submit());
    this.retryButton.addEventListener('click', () => void this.retryPending());
    this.alternative.addEventListener('input', () => {
      this.state = setAlternative(this.state, this.alternative.value);
    });

    window.addEventListener('keydown', (event) => {
      if (event.target instanceof HTMLTextAreaElement || event.target instanceof HTMLInputElement) {
        return;
      }
      const key = event.key.toLowerCase();
      if (key === 'a') this.chooseVerdict('agree');
      else if (key === 'd') this.chooseVerdict('disagree');
      else if (key === '1' || key === '2' || key === '3') {
        this.pickDifficulty(Number(key) as Difficulty);
      } else if (key === 'enter' && canSubmit(this.state)) {
        void this.submit();
      }
    });

    for (const pane of this.panes) {
      pane.addEventListener('wheel', (event) => {
        event.preventDefault();
        const rect = pane.getBoundingClientRect();
        const factor = event.deltaY < 0 ? 1.2 : 1 / 1.2;
        this.transform = clampPan(
          zoomAt(this.transform, event.clientX - rect.left, event.clientY - rect.top, factor),
          rect.width,
          rect.height,
        );
        this.applyTransform();
      });
      pane.addEventListener('pointerdown', (event) => {
        this.dragging = { x: event.clientX, y: event.clientY };
        pane.setPointerCapture(event.pointerId);
      });
      pane.addEventListener('pointermove', (event) => {
        if (!this.dragging) return;
        const rect = pane.getBoundingClientRect();
        this.transform = clampPan(
          panBy(this.transform, event.clientX - this.dragging.x, event.clientY - this.dragging.y),
          rect.width,
          rect.height,
        );
        this.dragging = { x: event.clientX, y: event.clientY };
        this.applyTransform();
      });
      pane.addEventListener('pointerup', () => {
        this.dragging = null;
      });
    }
    this.images.forEach((image) => image.addEventListener('load', () => this.positionBoxes()));
    window.addEventListener('resize', () => this.positionBoxes());
  }

  private chooseVerdict(verdict: Verdict): void {
    this.state = setVerdict(this.state, verdict);
    this.render();
  }

  private pickDifficulty(level: Difficulty): void {
    this.state = setDifficulty(this.state, level);
    const inputs = this.difficultyGroup.querySelectorAll<HTMLInputElement>('input');
    inputs.forEach((input) => {
      input.checked = Number(input.value) === level;
    });
  }

  private applyTransform(): void {
    for (const layer of this.layers) {
      layer.style.transform = toCss(this.transform);
    }
  }

  private positionBoxes(): void {
    const task = this.state.task;
    if (!task) return;
    this.images.forEach((image, index) => {
      const box = this.boxes[index];
      if (!box || !image.naturalWidth) return;
      const rect = overlayRect(
        task.bbox,
        image.naturalWidth,
        image.naturalHeight,
        image.clientWidth,
        image.clientHeight,
      );
      box.style.left = `${rect.left}px`;
      box.style.top = `${rect.top}px`;
      box.style.width = `${rect.width}px`;
      box.style.height = `${rect.height}px`;
      box.style.display = 'block';
    });
  }

  async start(): Promise<void> {
    await this.retryPending();
    await this.loadNext();
  }

  private async retryPending(): Promise<void> {
    const cached = this.pending.load();
    if (cached === null) return;
    try {
      await api.submit(cached); // duplicates are absorbed by the client
      this.pending.clear();
      if (this.state.phase === 'retry') {
        this.state = submissionAcknowledged(this.state);
        await this.loadNext();
      }
    } catch (error) {
      this.state = submissionFailed(this.state, describe(error));
      this.render();
    }
  }

  private async loadNext(): Promise<void> {
    this.state = { ...this.state, phase: 'loading' };
    this.render();
    try {
      const task = await api.nextTask(this.state.annotatorId);
      this.state = withTask(this.state, task);
      this.transform = IDENTITY;
      this.applyTransform();
      this.render();
    } catch (error) {
      this.state = submissionFailed(this.state, describe(error));
      this.render();
    }
  }

  private async submit(): Promise<void> {
    if (!canSubmit(this.state) || this.state.phase === 'submitting') return;
    const submission = buildSubmission(this.state);
    this.pending.save(submission); // survive crashes and network loss
    this.state = submissionStarted(this.state);
    this.render();
    try {
      await api.submit(submission);
      this.pending.clear();
      this.state = submissionAcknowledged(this.state);
      this.render();
      await this.loadNext();
    } catch (error) {
      this.state = submissionFailed(this.state, describe(error));
      this.render();
    }
  }

  private render(): void {
    const { state } = this;
    this.progress.textContent = `${state.completed} reviewed`;
    this.banner.hidden = state.phase !== 'retry';
    this.retryButton.hidden = state.phase !== 'retry';
    if (state.errorMessage) this.banner.textContent = `Submission failed: ${state.errorMessage}. Your verdict is saved locally.`;
    this.doneNote.hidden = state.phase !== 'done';
    this.card.hidden = state.task === null;
    this.agreeButton.classList.toggle('selected', state.verdict === 'agree');
    this.disagreeButton.classList.toggle('selected', state.verdict === 'disagree');
    this.submitButton.disabled = !canSubmit(state);

    const task = state.task;
    if (!task) return;
    this.question.textContent = task.question;
    this.answer.textContent = `Proposed answer: ${task.answer}`;
    this.optionsList.replaceChildren();
    if (task.options) {
      task.options.forEach((option, index) => {
        const item = document.createElement('li');
        item.textContent = `${'ABCD'[index] ?? '?'}. ${option}`;
        this.optionsList.appendChild(item);
      });
    }
    const beforeImage = this.images[0];
    const afterImage = this.images[1];
    if (beforeImage && beforeImage.getAttribute('src') !== task.beforeImageUrl) {
      this.boxes.forEach((box) => (box.style.display = 'none'));
      beforeImage.src = task.beforeImageUrl;
      if (afterImage) afterImage.src = task.afterImageUrl;
    }
    this.positionBoxes();
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return error.message;
  if (error instanceof Error) return error.message;
  return String(error);
}

const app = new ReviewApp(resolveAnnotatorId());
void app.start();
