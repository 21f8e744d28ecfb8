/** Fakes shared by the test files: an in-memory storage and a scripted
 * fetch implementation over the four service endpoints. */

import { FetchLike } from "../src/api";
import { StorageLike } from "../src/queue";

export class MemoryStorage implements StorageLike {
  private map = new Map<string, string>();
  getItem(key: string): string | null {
    return this.map.has(key) ? this.map.get(key)! : null;
  }
  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }
  removeItem(key: string): void {
    this.map.delete(key);
  }
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export interface RecordedRequest {
  url: string;
  body: any;
}

/** A fake service holding one batch; implements the label semantics the
 * real server guarantees (first write wins, 410 on stale, 422 on bad
 * class index). */
export class FakeService {
  labels = new Map<number, number>();
  requests: RecordedRequest[] = [];
  failNetwork = false;

  constructor(
    public batchId: string,
    public sampleIds: number[],
    public numClasses = 10,
  ) {}

  get fetch(): FetchLike {
    return async (url, init) => {
      if (this.failNetwork) throw new TypeError("network down");
      const body = init?.body ? JSON.parse(init.body as string) : null;
      this.requests.push({ url, body });

      if (url.includes("/api/status")) {
        const remaining = this.sampleIds.filter((i) => !this.labels.has(i));
        return jsonResponse({
          run_id: "run",
          iteration: 1,
          labeled_size: 100,
          class_names: Array.from({ length: this.numClasses }, (_, i) => String(i)),
          batch: this.sampleIds.length
            ? { batch_id: this.batchId, total: this.sampleIds.length,
                remaining: remaining.length }
            : null,
        });
      }
      if (url.includes("/api/batch")) {
        if (!this.sampleIds.length) {
          return jsonResponse({ error: "no batch pending" }, 409);
        }
        return jsonResponse({
          batch_id: this.batchId,
          items: this.sampleIds
            .filter((i) => !this.labels.has(i))
            .map((i) => ({
              sample_id: i, image_url: `/api/image/${i}`,
              width: 28, height: 28, channels: 1,
            })),
        });
      }
      if (url.includes("/api/labels")) {
        if (body.batch_id !== this.batchId) {
          return jsonResponse({ error: "stale or unknown batch_id" }, 410);
        }
        const bad = body.labels
          .filter((l: any) => l.class_index < 0 || l.class_index >= this.numClasses)
          .map((l: any) => l.sample_id);
        if (bad.length) {
          return jsonResponse({ error: "class_index out of range", sample_ids: bad }, 422);
        }
        let accepted = 0, duplicates = 0, rejected = 0;
        for (const l of body.labels) {
          if (!this.sampleIds.includes(l.sample_id)) rejected++;
          else if (this.labels.has(l.sample_id)) {
            if (this.labels.get(l.sample_id) === l.class_index) duplicates++;
            else rejected++;
          } else {
            this.labels.set(l.sample_id, l.class_index);
            accepted++;
          }
        }
        return jsonResponse({ accepted, duplicates, rejected });
      }
      return new Response(null, { status: 404 });
    };
  }

  labelRequests(): RecordedRequest[] {
    return this.requests.filter((r) => r.url.includes("/api/labels"));
  }
}
