// Manifest-driven form: one input per feature, generated entirely from
// GET /features. Blank fields are omitted from requests, never sent as zero.

import type { FeatureEntry, FeatureManifest } from "./types";

export interface FormController {
  element: HTMLFormElement;
  /** Filled fields only; blanks are absent keys. */
  values(): Record<string, number>;
  setValue(name: string, value: number | null): void;
  getValue(name: string): number | null;
  featureNames(): string[];
}

function rangeHint(feature: FeatureEntry): string {
  const unit = feature.unit ? ` ${feature.unit}` : "";
  if (feature.valid_range) {
    const [lo, hi] = feature.valid_range;
    return `${lo}–${hi}${unit}`;
  }
  return unit.trim();
}

function continuousInput(feature: FeatureEntry): HTMLInputElement {
  const input = document.createElement("input");
  input.type = "number";
  input.step = "any";
  input.name = feature.name;
  input.placeholder = "leave blank if unknown";
  return input;
}

function categoricalInput(feature: FeatureEntry): HTMLSelectElement {
  const select = document.createElement("select");
  select.name = feature.name;
  const blank = document.createElement("option");
  blank.value = "";
  blank.textContent = "(unknown)";
  select.appendChild(blank);
  for (const cat of feature.categories ?? []) {
    const option = document.createElement("option");
    option.value = String(cat.code);
    option.textContent = cat.label;
    select.appendChild(option);
  }
  return select;
}

function outOfRange(feature: FeatureEntry, value: number): boolean {
  if (feature.kind === "categorical") {
    return !(feature.categories ?? []).some((c) => c.code === value);
  }
  if (!feature.valid_range) return false;
  const [lo, hi] = feature.valid_range;
  return value < lo || value > hi;
}

export function renderForm(
  manifest: FeatureManifest,
  onChange?: (name: string) => void,
): FormController {
  const form = document.createElement("form");
  form.className = "feature-form";
  form.dataset.featureSet = manifest.feature_set;
  const fields = new Map<string, HTMLInputElement | HTMLSelectElement>();

  for (const feature of manifest.features) {
    const row = document.createElement("label");
    row.className = "feature-row";
    row.dataset.feature = feature.name;

    const caption = document.createElement("span");
    caption.className = "feature-name";
    caption.textContent = feature.name;
    row.appendChild(caption);

    const control =
      feature.kind === "categorical" ? categoricalInput(feature) : continuousInput(feature);
    control.classList.add("feature-input");
    row.appendChild(control);

    const hint = document.createElement("span");
    hint.className = "feature-hint";
    hint.textContent = rangeHint(feature);
    row.appendChild(hint);

    const warning = document.createElement("span");
    warning.className = "feature-warning";
    warning.hidden = true;
    row.appendChild(warning);

    control.addEventListener("input", () => {
      const raw = control.value.trim();
      const numeric = raw === "" ? null : Number(raw);
      // warn inline on out-of-range values; submission stays allowed
      if (numeric !== null && Number.isFinite(numeric) && outOfRange(feature, numeric)) {
        warning.textContent = `outside ${rangeHint(feature)}`;
        warning.hidden = false;
      } else {
        warning.hidden = true;
      }
      onChange?.(feature.name);
    });

    fields.set(feature.name, control);
    form.appendChild(row);
  }

  return {
    element: form,
    values() {
      const out: Record<string, number> = {};
      for (const [name, control] of fields) {
        const raw = control.value.trim();
        if (raw === "") continue; // blank means absent, never zero
        const numeric = Number(raw);
        if (Number.isFinite(numeric)) out[name] = numeric;
      }
      return out;
    },
    setValue(name, value) {
      const control = fields.get(name);
      if (!control) return;
      control.value = value === null ? "" : String(value);
      control.dispatchEvent(new Event("input"));
    },
    getValue(name) {
      const control = fields.get(name);
      if (!control) return null;
      const raw = control.value.trim();
      if (raw === "") return null;
      const numeric = Number(raw);
      return Number.isFinite(numeric) ? numeric : null;
    },
    featureNames() {
      return [...fields.keys()];
    },
  };
}
