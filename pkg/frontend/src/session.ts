// UiSession: the annotator's working state for one run. The UI holds no
// authoritative state — everything here is rebuilt from service endpoints —
// but the session enforces one in-flight mutation at a time, tracks skipped
// items so they come back at the queue tail, and applies optimistic progress
// that reconciles (or rolls back) against the service response.

import { ApiClient } from "./api.js";
import type { QueueItem, QueueResponse, Verdict } from "./types.js";

export class MutationInFlight extends Error {
  constructor() {
    super("another mutation is already in flight for this session");
  }
}

export interface SessionSnapshot {
  item: QueueItem | null;
  labeled: number;
  total: number;
  optimistic: boolean;
  pendingVerdicts: Record<string, Verdict>;
  busy: boolean;
}

export class UiSession {
  item: QueueItem | null = null;
  labeled = 0;
  total = 0;
  optimistic = false;
  skipped: string[] = [];
  pendingVerdicts = new Map<string, Verdict>();
  private inFlight: Promise<unknown> | null = null;

  constructor(
    public api: ApiClient,
    public runId: string,
    public annotator: string,
  ) {}

  get busy(): boolean {
    return this.inFlight !== null;
  }

  snapshot(): SessionSnapshot {
    return {
      item: this.item,
      labeled: this.labeled,
      total: this.total,
      optimistic: this.optimistic,
      pendingVerdicts: Object.fromEntries(this.pendingVerdicts),
      busy: this.busy,
    };
  }

  /** Serialize mutations: a second call while one is pending is a bug in the
   * caller (buttons must be disabled), so it throws instead of queueing. */
  private async mutate<T>(fn: () => Promise<T>): Promise<T> {
    if (this.inFlight) throw new MutationInFlight();
    const promise = fn();
    this.inFlight = promise.catch(() => undefined);
    try {
      return await promise;
    } finally {
      this.inFlight = null;
    }
  }

  private applyQueue(response: QueueResponse): void {
    this.item = response.item;
    this.labeled = response.progress.labeled;
    this.total = response.progress.total;
    this.optimistic = false;
  }

  async loadNext(): Promise<void> {
    this.applyQueue(await this.api.nextQueueItem(this.runId, this.annotator, this.skipped));
  }

  /** Label the current item. Progress advances optimistically and reconciles
   * with the next queue fetch; on failure the optimistic step rolls back and
   * the item stays put (no lost input). */
  async submitLabel(label: boolean): Promise<void> {
    const current = this.item;
    if (!current) throw new Error("no item to label");
    const snapshotLabeled = this.labeled;
    this.labeled += 1;
    this.optimistic = true;
    try {
      await this.mutate(() =>
        this.api.postLabel(this.runId, current.admission_id, this.annotator, label),
      );
    } catch (err) {
      this.labeled = snapshotLabeled;
      this.optimistic = false;
      throw err;
    }
    const skipIndex = this.skipped.indexOf(current.admission_id);
    if (skipIndex >= 0) this.skipped.splice(skipIndex, 1);
    await this.loadNext(); // reconcile optimistic progress with the service
  }

  /** Defer the current item to the queue tail without labeling it. */
  async skip(): Promise<void> {
    const current = this.item;
    if (!current) return;
    if (!this.skipped.includes(current.admission_id)) {
      this.skipped.push(current.admission_id);
    }
    await this.loadNext();
  }

  toggleVerdict(feature: string): Verdict {
    const next: Verdict =
      this.pendingVerdicts.get(feature) === "Irrelevant" ? "Relevant" : "Irrelevant";
    this.pendingVerdicts.set(feature, next);
    return next;
  }

  setVerdict(feature: string, verdict: Verdict): void {
    this.pendingVerdicts.set(feature, verdict);
  }

  prepareReview(features: string[]): void {
    this.pendingVerdicts = new Map(features.map((f) => [f, "Relevant"]));
  }

  /** The whole batch goes in a single POST. */
  async submitVerdicts(): Promise<void> {
    const verdicts = Object.fromEntries(this.pendingVerdicts);
    await this.mutate(() => this.api.postVerdicts(this.runId, verdicts, this.annotator));
    this.pendingVerdicts = new Map();
  }

  async runIteration(): Promise<void> {
    await this.mutate(() => this.api.triggerIterate(this.runId));
  }
}
