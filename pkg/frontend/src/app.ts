// Application shell: run selection, screen navigation, training-status
// polling, and the conflict/retry banners. All state shown here is fetched
// from the service; reloading the page reconstructs the identical view.

import { ApiClient, ApiError } from "./api.js";
import { clear, el } from "./dom.js";
import { MutationInFlight, UiSession } from "./session.js";
import type { RunDescriptor, TopFeaturesResponse, Verdict } from "./types.js";
import { renderDashboard } from "./views/dashboard.js";
import { renderLabeling } from "./views/labeling.js";
import { renderReview } from "./views/review.js";

export type Screen = "label" | "review" | "dashboard";

export class App {
  session: UiSession | null = null;
  descriptor: RunDescriptor | null = null;
  screen: Screen = "label";
  banner: { kind: "conflict" | "retry" | "error"; message: string } | null = null;
  topFeatures: TopFeaturesResponse | null = null;
  verdictsSubmitted = false;
  private pollTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    public root: Element,
    public api: ApiClient,
    public annotator: string = "clinician-1",
    private pollIntervalMs: number = 1000,
  ) {}

  // -- lifecycle -----------------------------------------------------------

  async openRun(runId: string): Promise<void> {
    this.session = new UiSession(this.api, runId, this.annotator);
    await this.refresh();
  }

  async createRun(disease: string, corpus: string, config: Record<string, unknown>) {
    const descriptor = await this.api.createRun(disease, corpus, config);
    await this.openRun(descriptor.run_id);
    return descriptor;
  }

  async refresh(): Promise<void> {
    if (!this.session) return;
    this.descriptor = await this.api.getRun(this.session.runId);
    const status = this.descriptor.status;
    if (this.descriptor.job === "training" || this.descriptor.job === "initializing") {
      this.schedulePoll();
    }
    if (status === "AwaitingLabels" && this.screen === "label") {
      await this.session.loadNext().catch(() => undefined);
    }
    if (status === "AwaitingVerdicts") {
      this.screen = this.screen === "dashboard" ? "dashboard" : "review";
      this.topFeatures = await this.api.getTopFeatures(this.session.runId, 20);
      this.verdictsSubmitted = this.topFeatures.verdicts_received;
      if (!this.verdictsSubmitted && this.session.pendingVerdicts.size === 0) {
        this.session.prepareReview(this.topFeatures.features.map((f) => f.feature));
      }
    }
    if (status === "Converged" || status === "MaxIterations") {
      this.screen = "dashboard";
    }
    await this.render();
  }

  private schedulePoll(): void {
    if (this.pollTimer) return;
    this.pollTimer = setTimeout(async () => {
      this.pollTimer = null;
      await this.refresh().catch(() => this.schedulePoll());
    }, this.pollIntervalMs);
  }

  stopPolling(): void {
    if (this.pollTimer) clearTimeout(this.pollTimer);
    this.pollTimer = null;
  }

  // -- mutations with banner handling ---------------------------------------

  private async guarded(action: () => Promise<void>): Promise<void> {
    this.banner = null;
    try {
      await action();
    } catch (err) {
      if (err instanceof MutationInFlight) return; // buttons were disabled anyway
      if (err instanceof ApiError) {
        if (err.status === 409) {
          this.banner = {
            kind: "conflict",
            message: `${err.message} — refresh to continue (requires ${err.requiredState ?? "a different state"})`,
          };
        } else if (err.status === 0) {
          this.banner = {
            kind: "retry",
            message: "Service unreachable. Your input is kept; retry in a moment.",
          };
        } else {
          this.banner = { kind: "error", message: err.message };
        }
      } else {
        this.banner = { kind: "retry", message: String(err) };
      }
    }
    await this.render();
  }

  async label(value: boolean): Promise<void> {
    await this.guarded(async () => {
      await this.session!.submitLabel(value);
      this.descriptor = await this.api.getRun(this.session!.runId);
    });
  }

  async skip(): Promise<void> {
    await this.guarded(() => this.session!.skip());
  }

  toggleVerdict(feature: string): void {
    this.session!.toggleVerdict(feature);
    void this.render();
  }

  async submitVerdicts(): Promise<void> {
    await this.guarded(async () => {
      await this.session!.submitVerdicts();
      this.verdictsSubmitted = true;
    });
  }

  async runIteration(): Promise<void> {
    await this.guarded(async () => {
      await this.session!.runIteration();
      this.verdictsSubmitted = false;
      this.topFeatures = null;
      await this.refresh();
    });
  }

  async show(screen: Screen): Promise<void> {
    this.screen = screen;
    await this.refresh();
  }

  // -- rendering --------------------------------------------------------------

  async render(): Promise<void> {
    const root = this.root;
    clear(root);
    if (!this.session || !this.descriptor) {
      root.appendChild(el("p", { className: "empty" }, "No run open."));
      return;
    }
    const d = this.descriptor;
    const nav = el(
      "nav",
      {},
      el("span", { className: "run-id" }, `${d.run_id} · ${d.disease} · ${d.status}`),
      ...(["label", "review", "dashboard"] as Screen[]).map((screen) =>
        el(
          "button",
          {
            className: this.screen === screen ? "tab active" : "tab",
            "data-testid": `nav-${screen}`,
            onClick: () => void this.show(screen),
          },
          screen,
        ),
      ),
    );
    root.appendChild(nav);

    if (this.banner) {
      root.appendChild(
        el(
          "div",
          { className: `banner ${this.banner.kind}`, "data-testid": "banner" },
          this.banner.message,
          el("button", { onClick: () => void this.refresh() }, "Refresh"),
        ),
      );
    }
    if (d.job === "training" || d.job === "initializing") {
      root.appendChild(
        el("div", { className: "banner info", "data-testid": "training" }, `Background job: ${d.job}…`),
      );
    }
    if (d.job === "failed" && d.job_error) {
      root.appendChild(el("div", { className: "banner error" }, `Job failed: ${d.job_error}`));
    }

    const body = el("main", {});
    root.appendChild(body);
    if (this.screen === "label") {
      renderLabeling(body, this.session.snapshot(), {
        onLabel: (value) => void this.label(value),
        onSkip: () => void this.skip(),
      });
    } else if (this.screen === "review") {
      if (!this.topFeatures) {
        body.appendChild(
          el("p", { className: "empty" }, "No feature review pending. Run an iteration first."),
        );
      } else {
        const verdicts = Object.fromEntries(this.session.pendingVerdicts) as Record<string, Verdict>;
        renderReview(body, this.topFeatures, verdicts, this.session.busy, this.verdictsSubmitted, {
          onToggle: (feature) => this.toggleVerdict(feature),
          onSubmit: () => void this.submitVerdicts(),
          onIterate: () => void this.runIteration(),
        });
      }
    } else {
      const metrics = await this.api.getMetrics(this.session.runId);
      renderDashboard(body, metrics);
    }
  }
}

// Browser bootstrap (skipped under tests, where App is driven directly).
export function mount(): void {
  const root = document.getElementById("app");
  if (!root) return;
  const api = new ApiClient("");
  const app = new App(root, api);
  const params = new URLSearchParams(window.location.search);
  const runId = params.get("run");
  if (runId) {
    void app.openRun(runId);
    return;
  }
  clear(root);
  const disease = el("input", { value: "Cancer Cachexia", id: "disease" }) as HTMLInputElement;
  const corpus = el("input", {
    placeholder: "/path/to/corpus.jsonl",
    id: "corpus",
  }) as HTMLInputElement;
  root.appendChild(
    el(
      "div",
      { className: "card" },
      el("h3", {}, "Open a run"),
      el("label", {}, "Disease ", disease),
      el("label", {}, "Corpus file ", corpus),
      el(
        "button",
        {
          className: "primary",
          onClick: () =>
            void app
              .createRun(disease.value, corpus.value, {})
              .then((d) => window.history.replaceState(null, "", `?run=${d.run_id}`)),
        },
        "Create run",
      ),
    ),
  );
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mount();
}
