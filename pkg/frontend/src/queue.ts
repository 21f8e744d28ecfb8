/** Persistent outbound label queue.
 *
 * Keystrokes enqueue labels locally and the queue flushes them to the
 * service in chunks. The buffer lives in storage keyed by batch id, so a
 * page reload loses nothing; the service's first-write-wins contract
 * turns the resulting at-least-once sends into an exactly-once effect.
 */

import { ApiClient, InvalidLabelError, Label, StaleBatchError } from "./api.js";

export const CHUNK_SIZE = 25;

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export interface FlushOutcome {
  sent: number;
  accepted: number;
  duplicates: number;
  rejected: number;
  /** sample ids the service refused with a 422 */
  invalid: number[];
  /** the batch is gone; the caller should refresh */
  stale: boolean;
}

export class LabelQueue {
  private pending: Label[];

  constructor(
    private api: ApiClient,
    private batchId: string,
    private storage: StorageLike,
  ) {
    this.pending = this.load();
  }

  private get storageKey(): string {
    return `labeler-queue-${this.batchId}`;
  }

  private load(): Label[] {
    const raw = this.storage.getItem(this.storageKey);
    if (!raw) return [];
    try {
      const parsed = JSON.parse(raw);
      return Array.isArray(parsed) ? parsed : [];
    } catch {
      return [];
    }
  }

  private persist(): void {
    if (this.pending.length === 0) {
      this.storage.removeItem(this.storageKey);
    } else {
      this.storage.setItem(this.storageKey, JSON.stringify(this.pending));
    }
  }

  get size(): number {
    return this.pending.length;
  }

  enqueue(sampleId: number, classIndex: number): void {
    this.pending.push({ sample_id: sampleId, class_index: classIndex });
    this.persist();
  }

  /** Send everything queued, at most CHUNK_SIZE labels per request.
   * Labels leave the local buffer only after the service acknowledged
   * the request that carried them. */
  async flush(): Promise<FlushOutcome> {
    const outcome: FlushOutcome = {
      sent: 0, accepted: 0, duplicates: 0, rejected: 0,
      invalid: [], stale: false,
    };
    while (this.pending.length > 0) {
      const chunk = this.pending.slice(0, CHUNK_SIZE);
      try {
        const result = await this.api.submitLabels(this.batchId, chunk);
        outcome.sent += chunk.length;
        outcome.accepted += result.accepted;
        outcome.duplicates += result.duplicates;
        outcome.rejected += result.rejected;
        this.pending = this.pending.slice(chunk.length);
        this.persist();
      } catch (err) {
        if (err instanceof StaleBatchError) {
          // The run moved on; these labels can never land.
          this.pending = [];
          this.persist();
          outcome.stale = true;
          return outcome;
        }
        if (err instanceof InvalidLabelError) {
          // Drop only the refused labels and retry the rest.
          const bad = new Set(err.sampleIds);
          outcome.invalid.push(...err.sampleIds);
          this.pending = this.pending.filter((l) => !bad.has(l.sample_id));
          this.persist();
          continue;
        }
        throw err; // network failure: buffer intact, caller retries later
      }
    }
    return outcome;
  }
}
