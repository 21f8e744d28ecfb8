/** Typed client for the labeling service's four endpoints. */

export interface BatchProgress {
  batch_id: string;
  total: number;
  remaining: number;
}

export interface Status {
  run_id: string;
  iteration: number;
  labeled_size: number;
  class_names: string[];
  batch: BatchProgress | null;
}

export interface BatchItem {
  sample_id: number;
  image_url: string;
  width: number;
  height: number;
  channels: number;
}

export interface Batch {
  batch_id: string;
  items: BatchItem[];
}

export interface LabelResult {
  accepted: number;
  duplicates: number;
  rejected: number;
}

export interface Label {
  sample_id: number;
  class_index: number;
}

/** Thrown for submissions against a batch the service no longer tracks. */
export class StaleBatchError extends Error {
  constructor() {
    super("stale or unknown batch");
  }
}

/** Thrown when some labels carry an out-of-range class index. */
export class InvalidLabelError extends Error {
  sampleIds: number[];
  constructor(sampleIds: number[]) {
    super("class index out of range");
    this.sampleIds = sampleIds;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async status(): Promise<Status> {
    const r = await this.fetchFn(`${this.baseUrl}/api/status`);
    if (!r.ok) throw new Error(`status request failed (${r.status})`);
    return r.json();
  }

  /** The pending batch page, or null when no batch is waiting (409). */
  async batch(limit = 50): Promise<Batch | null> {
    const r = await this.fetchFn(`${this.baseUrl}/api/batch?limit=${limit}`);
    if (r.status === 409) return null;
    if (!r.ok) throw new Error(`batch request failed (${r.status})`);
    return r.json();
  }

  async submitLabels(batchId: string, labels: Label[]): Promise<LabelResult> {
    const r = await this.fetchFn(`${this.baseUrl}/api/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ batch_id: batchId, labels }),
    });
    if (r.status === 410) throw new StaleBatchError();
    if (r.status === 422) {
      const body = await r.json().catch(() => ({ sample_ids: [] }));
      throw new InvalidLabelError(body.sample_ids ?? []);
    }
    if (!r.ok) throw new Error(`label submission failed (${r.status})`);
    return r.json();
  }

  imageUrl(item: BatchItem): string {
    return `${this.baseUrl}${item.image_url}`;
  }
}
