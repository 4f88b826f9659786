// Labeling screen: the note with phenotype mentions highlighted, the
// structured-feature table, and Positive / Negative / Skip actions.

import { clear, el } from "../dom.js";
import type { QueueItem } from "../types.js";
import type { SessionSnapshot } from "../session.js";

export interface LabelingHandlers {
  onLabel: (label: boolean) => void;
  onSkip: () => void;
}

export function highlightedNote(item: QueueItem): HTMLElement {
  const container = el("div", { className: "note" });
  const mentions = [...item.mentions].sort((a, b) => a.start - b.start);
  let cursor = 0;
  for (const mention of mentions) {
    if (mention.start < cursor) continue; // overlapping span, already covered
    if (mention.start > cursor) {
      container.appendChild(
        document.createTextNode(item.note_text.slice(cursor, mention.start)),
      );
    }
    container.appendChild(
      el(
        "mark",
        {
          className: mention.negated ? "mention negated" : "mention",
          title: `${mention.hpo_id}${mention.negated ? " (negated)" : ""}`,
        },
        item.note_text.slice(mention.start, mention.end),
      ),
    );
    cursor = mention.end;
  }
  container.appendChild(document.createTextNode(item.note_text.slice(cursor)));
  return container;
}

export function renderLabeling(
  root: Element,
  snapshot: SessionSnapshot,
  handlers: LabelingHandlers,
): void {
  clear(root);
  const { item, labeled, total, busy } = snapshot;
  root.appendChild(
    el(
      "div",
      { className: "progress", "data-testid": "progress" },
      `${labeled}/${total} labeled${snapshot.optimistic ? " (saving)" : ""}`,
    ),
  );
  if (!item) {
    root.appendChild(
      el("p", { className: "empty", "data-testid": "queue-empty" }, "Queue complete. Every assigned admission is labeled."),
    );
    return;
  }
  root.appendChild(el("h3", {}, `Admission ${item.admission_id}`));
  root.appendChild(highlightedNote(item));

  const table = el("table", { className: "structured" });
  table.appendChild(
    el("tr", {}, el("th", {}, "structured feature"), el("th", {}, "admission mean")),
  );
  for (const [feature, value] of Object.entries(item.structured)) {
    table.appendChild(
      el("tr", {}, el("td", {}, feature), el("td", {}, value.toFixed(2))),
    );
  }
  root.appendChild(table);

  root.appendChild(
    el(
      "div",
      { className: "actions" },
      el(
        "button",
        {
          className: "positive",
          "data-testid": "label-positive",
          disabled: busy,
          onClick: () => handlers.onLabel(true),
        },
        "Positive",
      ),
      el(
        "button",
        {
          className: "negative",
          "data-testid": "label-negative",
          disabled: busy,
          onClick: () => handlers.onLabel(false),
        },
        "Negative",
      ),
      el(
        "button",
        { "data-testid": "label-skip", disabled: busy, onClick: () => handlers.onSkip() },
        "Skip",
      ),
    ),
  );
}
