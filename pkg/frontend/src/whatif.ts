// What-if diffing: pin a baseline response, perturb one value, and show the
// old and new score side by side with the changed clause chips highlighted.

import { groupClauses } from "./score";
import type { PredictOutcome, PredictResponse } from "./types";

export interface WhatIfDiff {
  baselineClass: number;
  newClass: number | null; // null when the perturbed record is indeterminate
  classChanged: boolean;
  noChange: boolean;
  changedChips: string[]; // chips present in exactly one of the two phenotypes
  substitutionAppeared: string[];
  substitutionDisappeared: string[];
}

function chipTexts(response: PredictResponse): string[] {
  return groupClauses(response.phenotype_clauses).map((c) => c.text);
}

function substitutionTexts(response: PredictResponse): string[] {
  return response.substitutions.map((s) => `${s.used} used in place of ${s.missing}`);
}

export function diffOutcomes(baseline: PredictResponse, next: PredictOutcome): WhatIfDiff {
  if (next.kind !== "scored") {
    return {
      baselineClass: baseline.risk_class,
      newClass: null,
      classChanged: true,
      noChange: false,
      changedChips: [],
      substitutionAppeared: [],
      substitutionDisappeared: substitutionTexts(baseline),
    };
  }
  const before = chipTexts(baseline);
  const after = chipTexts(next.body);
  const beforeSet = new Set(before);
  const afterSet = new Set(after);
  const changed = [
    ...after.filter((c) => !beforeSet.has(c)),
    ...before.filter((c) => !afterSet.has(c)),
  ];
  const subsBefore = new Set(substitutionTexts(baseline));
  const subsAfter = new Set(substitutionTexts(next.body));
  const appeared = [...subsAfter].filter((s) => !subsBefore.has(s));
  const disappeared = [...subsBefore].filter((s) => !subsAfter.has(s));
  const classChanged = next.body.risk_class !== baseline.risk_class;
  return {
    baselineClass: baseline.risk_class,
    newClass: next.body.risk_class,
    classChanged,
    noChange:
      !classChanged && changed.length === 0 && appeared.length === 0 && disappeared.length === 0,
    changedChips: changed,
    substitutionAppeared: appeared,
    substitutionDisappeared: disappeared,
  };
}

export function renderDiff(diff: WhatIfDiff, next: PredictOutcome): HTMLElement {
  const panel = document.createElement("section");
  panel.className = "whatif-panel";

  const headline = document.createElement("h3");
  headline.className = "whatif-headline";
  const newLabel = diff.newClass === null ? "indeterminate" : `Score ${diff.newClass}`;
  headline.textContent = `Score ${diff.baselineClass} → ${newLabel}`;
  panel.appendChild(headline);

  if (diff.noChange) {
    const note = document.createElement("p");
    note.className = "no-change";
    note.textContent = "no change";
    panel.appendChild(note);
    return panel;
  }

  if (next.kind === "scored") {
    const changedSet = new Set(diff.changedChips);
    const chips = document.createElement("div");
    chips.className = "clause-chips";
    for (const chip of groupClauses(next.body.phenotype_clauses)) {
      const el = document.createElement("span");
      el.className = chip.group ? "clause-chip or-group" : "clause-chip";
      if (changedSet.has(chip.text)) el.classList.add("flipped");
      el.textContent = chip.text;
      chips.appendChild(el);
    }
    panel.appendChild(chips);
  }

  for (const text of diff.substitutionAppeared) {
    const el = document.createElement("p");
    el.className = "substitution-notice appeared";
    el.textContent = text;
    panel.appendChild(el);
  }
  return panel;
}
