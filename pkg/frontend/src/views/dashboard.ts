// Dashboard: per-iteration score chart, the metrics table in the familiar
// method-by-metrics layout, and the entire-testing-set estimate card.

import { clear, el, fmt, roundHalfUp } from "../dom.js";
import type { MetricsResponse } from "../types.js";

const METRIC_COLUMNS = [
  ["precision", "Precision"],
  ["recall", "Recall"],
  ["f1", "F1"],
  ["specificity", "Specificity"],
  ["auc_pr", "AUC-PR"],
  ["auc_roc", "AUC-ROC"],
] as const;

export function scoreChart(scores: number[]): HTMLElement {
  const width = 320;
  const height = 120;
  const pad = 18;
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "score-chart");
  const x = (i: number) =>
    scores.length === 1 ? width / 2 : pad + (i * (width - 2 * pad)) / (scores.length - 1);
  const y = (s: number) => height - pad - s * (height - 2 * pad);
  if (scores.length > 1) {
    const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
    line.setAttribute("points", scores.map((s, i) => `${x(i)},${y(s)}`).join(" "));
    line.setAttribute("class", "score-line");
    svg.appendChild(line);
  }
  scores.forEach((score, i) => {
    const dot = document.createElementNS("http://www.w3.org/2000/svg", "circle");
    dot.setAttribute("cx", String(x(i)));
    dot.setAttribute("cy", String(y(score)));
    dot.setAttribute("r", "4");
    dot.setAttribute("class", "score-point");
    dot.setAttribute("data-testid", `score-point-${i + 1}`);
    svg.appendChild(dot);
  });
  return svg as unknown as HTMLElement;
}

export function renderDashboard(root: Element, metrics: MetricsResponse): void {
  clear(root);
  root.appendChild(el("h3", {}, `Run status: ${metrics.status}`));

  if (metrics.iterations.length === 0) {
    root.appendChild(
      el(
        "p",
        { className: "empty", "data-testid": "dashboard-empty" },
        "No completed iteration yet. Label the queue, then run the first iteration.",
      ),
    );
    return;
  }

  const chartCard = el("div", { className: "card" }, el("h4", {}, "Cross-validated score by iteration"));
  chartCard.appendChild(scoreChart(metrics.iterations.map((it) => it.score)));
  chartCard.appendChild(
    el(
      "p",
      { className: "muted" },
      metrics.iterations
        .map((it) => `iter ${it.iteration}: ${it.score.toFixed(3)}`)
        .join("   "),
    ),
  );
  root.appendChild(chartCard);

  if (metrics.report) {
    const table = el("table", { className: "metrics", "data-testid": "metrics-table" });
    table.appendChild(
      el(
        "tr",
        {},
        el("th", {}, "Method"),
        ...METRIC_COLUMNS.map(([, label]) => el("th", {}, label)),
      ),
    );
    for (const [method, row] of Object.entries(metrics.report.rows)) {
      table.appendChild(
        el(
          "tr",
          {},
          el("td", {}, method),
          ...METRIC_COLUMNS.map(([key]) => el("td", {}, fmt(row[key]))),
        ),
      );
    }
    root.appendChild(
      el("div", { className: "card" }, el("h4", {}, `Gold testing subset: ${metrics.report.disease}`), table),
    );
  }

  if (metrics.estimate) {
    const { n_pred, p_est, estimate } = metrics.estimate;
    root.appendChild(
      el(
        "div",
        { className: "card estimate", "data-testid": "estimate-card" },
        el("h4", {}, "Entire testing set"),
        el(
          "p",
          { className: "estimate-formula" },
          `${n_pred} predicted positive x ${p_est.toFixed(3)} estimated precision`,
        ),
        el(
          "p",
          { className: "estimate-value", "data-testid": "estimate-value" },
          String(roundHalfUp(n_pred * p_est)),
        ),
        el("p", { className: "muted" }, `service estimate: ${estimate}`),
      ),
    );
  } else {
    root.appendChild(
      el(
        "p",
        { className: "muted", "data-testid": "estimate-missing" },
        "Entire-set estimate unavailable (no diagnosis oracle for this corpus).",
      ),
    );
  }
}
