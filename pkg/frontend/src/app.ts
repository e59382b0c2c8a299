// Wiring: model switcher -> manifest-driven form -> score panel -> what-if.
// The baseline for what-if diffs stays pinned until explicitly reset.

import { getFeatures, getModels, postPredict } from "./api";
import { renderForm, type FormController } from "./form";
import { renderIndeterminate, renderScorePanel } from "./score";
import { diffOutcomes, renderDiff } from "./whatif";
import type { ModelEntry, PredictOutcome, PredictResponse } from "./types";

export interface AppController {
  submit(): Promise<void>;
  pinBaseline(): void;
  resetBaseline(): void;
  form(): FormController;
  selectModel(index: number): Promise<void>;
}

export async function mountApp(root: HTMLElement, base = ""): Promise<AppController> {
  root.innerHTML = "";
  const banner = document.createElement("div");
  banner.className = "banner";
  banner.hidden = true;
  root.appendChild(banner);

  const header = document.createElement("header");
  const title = document.createElement("h1");
  title.textContent = "Risk score what-if";
  header.appendChild(title);
  const switcher = document.createElement("select");
  switcher.className = "model-switcher";
  header.appendChild(switcher);
  root.appendChild(header);

  const formHost = document.createElement("div");
  formHost.className = "form-host";
  root.appendChild(formHost);

  const controls = document.createElement("div");
  controls.className = "controls";
  const submitButton = document.createElement("button");
  submitButton.type = "button";
  submitButton.className = "submit";
  submitButton.textContent = "Score";
  controls.appendChild(submitButton);
  const pinButton = document.createElement("button");
  pinButton.type = "button";
  pinButton.className = "pin-baseline";
  pinButton.textContent = "Pin baseline for what-if";
  pinButton.disabled = true;
  controls.appendChild(pinButton);
  const resetButton = document.createElement("button");
  resetButton.type = "button";
  resetButton.className = "reset-baseline";
  resetButton.textContent = "Reset baseline";
  resetButton.hidden = true;
  controls.appendChild(resetButton);
  const validation = document.createElement("span");
  validation.className = "validation-message";
  validation.hidden = true;
  controls.appendChild(validation);
  root.appendChild(controls);

  const resultHost = document.createElement("div");
  resultHost.className = "result-host";
  root.appendChild(resultHost);

  let models: ModelEntry[] = [];
  let active: ModelEntry | null = null;
  let form: FormController | null = null;
  let lastScored: PredictResponse | null = null;
  let baseline: PredictResponse | null = null;

  function fail(message: string) {
    banner.textContent = message;
    banner.hidden = false;
  }

  async function loadModel(index: number) {
    active = models[index];
    if (!active) return;
    try {
      const manifest = await getFeatures(active.feature_set, base);
      const previous = form;
      const next = renderForm(manifest);
      // carry over values for features the new manifest still declares;
      // stale inputs vanish with the old form
      if (previous) {
        for (const name of next.featureNames()) {
          const value = previous.getValue(name);
          if (value !== null) next.setValue(name, value);
        }
      }
      form = next;
      formHost.innerHTML = "";
      formHost.appendChild(form.element);
      banner.hidden = true;
    } catch (err) {
      fail(`Cannot reach the prediction service: ${String(err)}`);
    }
  }

  function showOutcome(outcome: PredictOutcome) {
    resultHost.innerHTML = "";
    if (baseline !== null) {
      if (outcome.kind === "scored" || outcome.kind === "indeterminate") {
        const diff = diffOutcomes(baseline, outcome);
        resultHost.appendChild(renderDiff(diff, outcome));
      }
    }
    if (outcome.kind === "scored") {
      lastScored = outcome.body;
      pinButton.disabled = false;
      resultHost.appendChild(renderScorePanel(outcome.body));
    } else if (outcome.kind === "indeterminate") {
      resultHost.appendChild(renderIndeterminate(outcome.body));
    } else {
      const el = document.createElement("p");
      el.className = "service-error";
      el.textContent = `service error ${outcome.status}: ${outcome.body.error}`;
      resultHost.appendChild(el);
    }
  }

  async function submit() {
    if (!active || !form) return;
    const values = form.values();
    if (Object.keys(values).length === 0) {
      validation.textContent = "enter at least one measurement";
      validation.hidden = false;
      return; // no request for a blank form
    }
    validation.hidden = true;
    try {
      const outcome = await postPredict(active.feature_set, active.outcome, values, base);
      showOutcome(outcome);
    } catch (err) {
      fail(`Cannot reach the prediction service: ${String(err)}`);
    }
  }

  submitButton.addEventListener("click", () => void submit());
  pinButton.addEventListener("click", () => {
    if (lastScored) {
      baseline = lastScored;
      resetButton.hidden = false;
    }
  });
  resetButton.addEventListener("click", () => {
    baseline = null;
    resetButton.hidden = true;
  });
  switcher.addEventListener("change", () => void loadModel(switcher.selectedIndex));

  try {
    const catalog = await getModels(base);
    models = catalog.models;
    for (const model of models) {
      const option = document.createElement("option");
      option.value = `${model.feature_set}/${model.outcome}`;
      option.textContent = `${model.feature_set} · ${model.outcome} (k=${model.k})`;
      switcher.appendChild(option);
    }
    if (models.length > 0) await loadModel(0);
    else fail("No models are loaded on the service.");
  } catch (err) {
    fail(`Cannot reach the prediction service: ${String(err)}`);
  }

  return {
    submit,
    pinBaseline: () => {
      if (lastScored) {
        baseline = lastScored;
        resetButton.hidden = false;
      }
    },
    resetBaseline: () => {
      baseline = null;
      resetButton.hidden = true;
    },
    form: () => {
      if (!form) throw new Error("form not ready");
      return form;
    },
    selectModel: loadModel,
  };
}
