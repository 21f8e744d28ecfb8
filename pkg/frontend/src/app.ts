/** The labeling screen: one image at a time, digit keys or buttons to
 * answer, optimistic advance, periodic status polling. */

import { ApiClient, Batch, BatchItem, Status } from "./api.js";
import { LabelQueue, StorageLike } from "./queue.js";

const SCALE = 8; // render factor over the tiny native sizes
const POLL_MS = 2000;

export interface AppDeps {
  api: ApiClient;
  storage: StorageLike;
  root: HTMLElement;
}

type Screen = "idle" | "labeling" | "done" | "error";

export class LabelerApp {
  private api: ApiClient;
  private storage: StorageLike;
  private root: HTMLElement;
  private classNames: string[] = [];
  private batch: Batch | null = null;
  private queue: LabelQueue | null = null;
  private cursor = 0;
  private labeledHere = 0;
  private screen: Screen = "idle";
  private statusLine = "";
  private errorNote = "";
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(deps: AppDeps) {
    this.api = deps.api;
    this.storage = deps.storage;
    this.root = deps.root;
  }

  start(): void {
    document.addEventListener("keydown", (e) => this.onKey(e.key));
    void this.refresh();
  }

  stop(): void {
    if (this.timer !== null) clearTimeout(this.timer);
  }

  private schedule(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => void this.refresh(), POLL_MS);
  }

  async refresh(): Promise<void> {
    let status: Status;
    try {
      status = await this.api.status();
    } catch {
      this.screen = "error";
      this.errorNote = "service unreachable, retrying";
      this.render();
      this.schedule();
      return;
    }
    this.classNames = status.class_names;
    this.statusLine =
      `run ${status.run_id} / iteration ${status.iteration} / ` +
      `${status.labeled_size} labeled`;

    if (status.batch === null) {
      this.batch = null;
      this.queue = null;
      this.screen = "idle";
    } else if (this.batch === null || this.batch.batch_id !== status.batch.batch_id) {
      const batch = await this.api.batch(1000).catch(() => null);
      if (batch !== null) {
        this.batch = batch;
        this.queue = new LabelQueue(this.api, batch.batch_id, this.storage);
        this.cursor = 0;
        this.labeledHere = 0;
        this.screen = batch.items.length > 0 ? "labeling" : "done";
        // anything buffered from before a reload goes out first
        await this.flush();
      }
    }
    this.render();
    this.schedule();
  }

  private current(): BatchItem | null {
    if (this.batch === null || this.cursor >= this.batch.items.length) return null;
    return this.batch.items[this.cursor];
  }

  onKey(key: string): void {
    if (this.screen !== "labeling") return;
    const idx = this.classNames.findIndex((_, i) => String(i) === key);
    if (idx >= 0) this.label(idx);
  }

  label(classIndex: number): void {
    const item = this.current();
    if (item === null || this.queue === null) return;
    this.queue.enqueue(item.sample_id, classIndex);
    this.cursor += 1;
    this.labeledHere += 1;
    if (this.cursor >= this.batch!.items.length) this.screen = "done";
    this.render();
    void this.flush();
  }

  private async flush(): Promise<void> {
    if (this.queue === null) return;
    try {
      const outcome = await this.queue.flush();
      if (outcome.stale) {
        this.batch = null;
        this.queue = null;
        await this.refresh();
        return;
      }
      if (outcome.invalid.length > 0) {
        this.errorNote = `rejected labels for samples ${outcome.invalid.join(", ")}`;
        this.render();
      }
    } catch {
      // network hiccup; the queue keeps the labels and the next
      // keystroke or poll retries
    }
  }

  pendingCount(): number {
    return this.queue ? this.queue.size : 0;
  }

  render(): void {
    const r = this.root;
    r.textContent = "";
    const header = document.createElement("div");
    header.className = "status";
    header.textContent = this.statusLine;
    r.appendChild(header);

    if (this.screen === "error") {
      r.appendChild(this.note(this.errorNote, "error"));
      return;
    }
    if (this.screen === "idle") {
      r.appendChild(this.note("no batch pending; waiting for the run", "idle"));
      return;
    }
    if (this.screen === "done") {
      r.appendChild(this.note(
        `batch done (${this.labeledHere} labeled here); waiting for the next one`,
        "done"));
      return;
    }

    const item = this.current()!;
    const progress = document.createElement("div");
    progress.className = "progress";
    progress.textContent = `${this.cursor} / ${this.batch!.items.length}`;
    r.appendChild(progress);

    const img = document.createElement("img");
    img.src = this.api.imageUrl(item);
    img.width = item.width * SCALE;
    img.height = item.height * SCALE;
    img.style.imageRendering = "pixelated";
    img.alt = `sample ${item.sample_id}`;
    r.appendChild(img);

    const buttons = document.createElement("div");
    buttons.className = "classes";
    this.classNames.forEach((name, i) => {
      const b = document.createElement("button");
      b.textContent = `${i}: ${name}`;
      b.addEventListener("click", () => this.label(i));
      buttons.appendChild(b);
    });
    r.appendChild(buttons);

    if (this.errorNote) r.appendChild(this.note(this.errorNote, "error"));
  }

  private note(text: string, cls: string): HTMLElement {
    const el = document.createElement("div");
    el.className = cls;
    el.textContent = text;
    return el;
  }
}

export function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  new LabelerApp({
    api: new ApiClient(),
    storage: window.localStorage,
    root,
  }).start();
}
