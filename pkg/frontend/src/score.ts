// Score panel: risk class, probability band, clause chips (one chip per
// standalone condition, one per parenthesized OR group), substitution
// notices, and actionable prompts for indeterminate responses.

import type { IndeterminateResponse, PhenotypeClause, PredictResponse } from "./types";

const SYMBOLS: Record<string, string> = { le: "≤", gt: ">" };

export function clauseText(clause: PhenotypeClause): string {
  if (clause.comparator === "le" || clause.comparator === "gt") {
    return `${clause.feature} ${SYMBOLS[clause.comparator]} ${formatNumber(clause.threshold!)}`;
  }
  const labels = clause.labels ?? (clause.codes ?? []).map(String);
  if (clause.comparator === "eq") return `${clause.feature} = ${labels[0]}`;
  return `${clause.feature} ∈ {${labels.join(", ")}}`;
}

function formatNumber(x: number): string {
  return Number.isInteger(x) ? String(x) : String(x);
}

/** Group clauses into chips: a run of or-connected clauses plus the clause
 * that closes the run renders as one parenthesized chip. */
export function groupClauses(clauses: PhenotypeClause[]): { text: string; group: boolean }[] {
  const chips: { text: string; group: boolean }[] = [];
  let run: string[] = [];
  for (const clause of clauses) {
    run.push(clauseText(clause));
    if (clause.connective === "or") continue;
    if (run.length > 1) {
      chips.push({ text: `(${run.join(" ∨ ")})`, group: true });
    } else {
      chips.push({ text: run[0], group: false });
    }
    run = [];
  }
  if (run.length > 0) {
    chips.push({ text: run.length > 1 ? `(${run.join(" ∨ ")})` : run[0], group: run.length > 1 });
  }
  return chips;
}

export function renderScorePanel(response: PredictResponse): HTMLElement {
  const panel = document.createElement("section");
  panel.className = "score-panel";

  const headline = document.createElement("h2");
  headline.className = "score-headline";
  headline.textContent = `Score ${response.risk_class}`;
  panel.appendChild(headline);

  const band = document.createElement("p");
  band.className = "score-band";
  band.textContent = `Outcome probability ${response.probability_label}`;
  panel.appendChild(band);

  const chips = document.createElement("div");
  chips.className = "clause-chips";
  for (const chip of groupClauses(response.phenotype_clauses)) {
    const el = document.createElement("span");
    el.className = chip.group ? "clause-chip or-group" : "clause-chip";
    el.textContent = chip.text;
    chips.appendChild(el);
  }
  panel.appendChild(chips);

  // shown verbatim from the service; must match phenotype_text byte-for-byte
  const phenotype = document.createElement("p");
  phenotype.className = "phenotype-text";
  phenotype.textContent = response.phenotype_text;
  panel.appendChild(phenotype);

  for (const sub of response.substitutions) {
    const notice = document.createElement("p");
    notice.className = "substitution-notice";
    notice.textContent = `${sub.used} used in place of ${sub.missing}`;
    panel.appendChild(notice);
  }

  for (const warning of response.warnings) {
    const el = document.createElement("p");
    el.className = "service-warning";
    el.textContent = warning;
    panel.appendChild(el);
  }
  return panel;
}

export function renderIndeterminate(body: IndeterminateResponse): HTMLElement {
  const panel = document.createElement("section");
  panel.className = "score-panel indeterminate";

  const headline = document.createElement("h2");
  headline.textContent = "Cannot score yet";
  panel.appendChild(headline);

  const prompt = document.createElement("p");
  prompt.className = "missing-prompt";
  prompt.textContent = "Scoring needs a value for one of:";
  panel.appendChild(prompt);

  const list = document.createElement("ul");
  list.className = "missing-features";
  for (const feature of body.missing_features) {
    const item = document.createElement("li");
    item.className = "missing-feature";
    item.textContent = feature;
    list.appendChild(item);
  }
  panel.appendChild(list);
  return panel;
}
