// Feature-review screen: top features as signed-importance bars with
// per-patient beeswarm dots; Relevant/Irrelevant toggles batch into one POST.

import { clear, el } from "../dom.js";
import type { TopFeaturesResponse, Verdict } from "../types.js";

export interface ReviewHandlers {
  onToggle: (feature: string) => void;
  onSubmit: () => void;
  onIterate: () => void;
}

function beeswarmStrip(dots: [string, number, number | null][]): HTMLElement {
  const strip = el("div", { className: "beeswarm" });
  const magnitudes = dots.map(([, phi]) => Math.abs(phi));
  const scale = Math.max(...magnitudes, 1e-9);
  for (const [admission, phi, raw] of dots) {
    const offset = 50 + (phi / scale) * 48; // percent across the strip
    strip.appendChild(
      el("span", {
        className: raw != null && raw > 0 ? "dot present" : "dot absent",
        style: `left:${offset.toFixed(1)}%`,
        title: `${admission}: phi=${phi.toFixed(4)}${raw != null ? `, value=${raw}` : ""}`,
      }),
    );
  }
  strip.appendChild(el("span", { className: "axis" }));
  return strip;
}

export function renderReview(
  root: Element,
  top: TopFeaturesResponse,
  verdicts: Record<string, Verdict>,
  busy: boolean,
  submitted: boolean,
  handlers: ReviewHandlers,
): void {
  clear(root);
  root.appendChild(
    el("h3", {}, `Iteration ${top.iteration}: review the top ${top.features.length} features`),
  );
  const maxPhi = Math.max(...top.features.map((f) => f.mean_abs_phi), 1e-9);
  const list = el("div", { className: "feature-list" });
  for (const feature of top.features) {
    const verdict = verdicts[feature.feature] ?? "Relevant";
    const width = (feature.mean_abs_phi / maxPhi) * 100;
    list.appendChild(
      el(
        "div",
        { className: "feature-row", "data-feature": feature.feature },
        el("span", { className: "feature-name" }, feature.feature),
        el(
          "div",
          { className: "bar-track" },
          el("div", {
            className: `bar ${feature.direction}`,
            style: `width:${width.toFixed(1)}%`,
            title: `mean |phi| = ${feature.mean_abs_phi.toFixed(4)} (${feature.direction})`,
          }),
        ),
        beeswarmStrip(top.beeswarm[feature.feature] ?? []),
        el(
          "button",
          {
            className: `verdict ${verdict.toLowerCase()}`,
            "data-testid": `verdict-${feature.feature}`,
            disabled: busy || submitted,
            onClick: () => handlers.onToggle(feature.feature),
          },
          verdict,
        ),
      ),
    );
  }
  root.appendChild(list);

  const submit = el(
    "button",
    {
      className: "primary",
      "data-testid": "submit-verdicts",
      disabled: busy || submitted,
      onClick: () => handlers.onSubmit(),
    },
    "Submit verdicts",
  );
  // submitting the batch is what unlocks the next training round
  const iterate = el(
    "button",
    {
      className: "primary",
      "data-testid": "run-iteration",
      disabled: busy || !submitted,
      onClick: () => handlers.onIterate(),
    },
    "Run next iteration",
  );
  root.appendChild(el("div", { className: "actions" }, submit, iterate));
}
