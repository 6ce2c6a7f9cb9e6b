import { AnnotationApi, ApiError } from './api.js';
import { isCompleteSelection, midranksFromSelections } from './ranks.js';
import { buildSubmission, type RankingSubmission } from './schema.js';
import type { Selections, TaskPayload } from './types.js';

export type SessionPhase = 'idle' | 'loading' | 'annotating' | 'submitting' | 'done' | 'failed';

/**
 * Session state for one annotator in one browser tab.
 *
 * Holds the current task and pending badge selections, gates submission on a
 * complete and valid selection, and keeps at most one submission in flight.
 * A server-side validation rejection surfaces its message without clearing
 * the selections, so the annotator can correct and resubmit.
 */
export class AnnotationSession {
  phase: SessionPhase = 'idle';
  task: TaskPayload | null = null;
  submittedCount = 0;
  message: string | null = null;

  private selections: (number | null)[] = [];

  constructor(
    private readonly api: AnnotationApi,
    readonly annotatorId: string,
  ) {}

  get currentSelections(): Selections {
    return this.selections;
  }

  /** Selection is complete and forms a valid mid-rank vector. */
  get canSubmit(): boolean {
    if (this.phase !== 'annotating' || this.task === null) return false;
    if (!isCompleteSelection(this.selections)) return false;
    return midranksFromSelections(this.selections).ok;
  }

  /** Explanation for a blocked submit, null when submission is allowed. */
  get blockedReason(): string | null {
    if (this.task === null) return 'no task loaded';
    const result = midranksFromSelections(this.selections);
    return result.ok ? null : result.reason;
  }

  /** Assign badge `rank` to a candidate; selecting it again clears it. */
  select(candidateIndex: number, rank: number): void {
    if (this.task === null || this.phase !== 'annotating') return;
    if (candidateIndex < 0 || candidateIndex >= this.selections.length) return;
    this.selections[candidateIndex] = this.selections[candidateIndex] === rank ? null : rank;
  }

  /** Canonical payload for the current selection, null while invalid. */
  buildPayload(): RankingSubmission | null {
    if (this.task === null) return null;
    const result = midranksFromSelections(this.selections);
    if (!result.ok) return null;
    return buildSubmission(this.task.group_id, this.annotatorId, result.ranks);
  }

  async loadNext(): Promise<void> {
    this.phase = 'loading';
    this.message = null;
    try {
      const task = await this.api.nextTask(this.annotatorId);
      if (task === null) {
        this.task = null;
        this.phase = 'done';
        this.message = `all tasks annotated, ${this.submittedCount} submitted this session`;
        return;
      }
      this.task = task;
      this.selections = task.candidates.map(() => null);
      this.phase = 'annotating';
    } catch (failure) {
      this.phase = 'failed';
      this.message = failure instanceof Error ? failure.message : String(failure);
    }
  }

  async submit(): Promise<boolean> {
    if (!this.canSubmit) return false;
    const payload = this.buildPayload();
    const task = this.task;
    if (payload === null || task === null) return false;

    this.phase = 'submitting';
    const idempotencyKey = `${this.annotatorId}:${task.group_id}`;
    try {
      await this.api.submitRanking(payload, idempotencyKey);
      this.submittedCount += 1;
      await this.loadNext();
      return true;
    } catch (failure) {
      // Validation or conflict: keep the selections so nothing is lost.
      this.phase = 'annotating';
      if (failure instanceof ApiError) {
        this.message = failure.message;
      } else {
        this.message = failure instanceof Error ? failure.message : String(failure);
      }
      return false;
    }
  }
}
