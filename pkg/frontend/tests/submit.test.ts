import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { mountApp, type AppController } from "../src/app";
import {
  installMockService,
  PATH_PHENOTYPE,
  PATH_VALUES,
  type MockService,
} from "./helpers";

describe("submit and display", () => {
  let service: MockService;
  let root: HTMLElement;
  let app: AppController;

  beforeEach(async () => {
    service = installMockService();
    root = document.createElement("div");
    document.body.appendChild(root);
    app = await mountApp(root);
  });

  afterEach(() => {
    service.restore();
    root.remove();
  });

  async function fillAndSubmit(values: Record<string, number>) {
    for (const [name, value] of Object.entries(values)) {
      app.form().setValue(name, value);
    }
    await app.submit();
  }

  it("renders Score 5 with four clause chips and a parenthesized OR group", async () => {
    await fillAndSubmit(PATH_VALUES);
    expect(root.querySelector(".score-headline")!.textContent).toBe("Score 5");
    expect(root.querySelector(".score-band")!.textContent).toContain(">40%");
    const chips = [...root.querySelectorAll(".clause-chip")];
    expect(chips).toHaveLength(4);
    const group = root.querySelector(".clause-chip.or-group")!;
    expect(group.textContent).toBe("(PAS > 74.5 ∨ PCWP ≤ 33)");
    expect(group.textContent!.startsWith("(")).toBe(true);
  });

  it("shows the service phenotype text byte-for-byte", async () => {
    await fillAndSubmit(PATH_VALUES);
    expect(root.querySelector(".phenotype-text")!.textContent).toBe(
      PATH_PHENOTYPE + " = Score 5",
    );
  });

  it("request bodies contain exactly the filled fields", async () => {
    await fillAndSubmit(PATH_VALUES);
    expect(service.predictBodies.at(-1)).toEqual({
      feature_set: "invasive-hemodynamics",
      outcome: "DeLvTx",
      values: PATH_VALUES,
    });
  });

  it("renders the substitution notice when the service substituted", async () => {
    await fillAndSubmit({ Sex: 1, BPSYS: 110, CPI: 0.7, PCWP: 30 });
    expect(root.querySelector(".score-headline")!.textContent).toBe("Score 5");
    expect(root.querySelector(".substitution-notice")!.textContent).toBe(
      "PCWP used in place of PAS",
    );
  });

  it("renders 409 missing features as actionable prompts", async () => {
    await fillAndSubmit({ Sex: 1, BPSYS: 110, CPI: 0.7 });
    const items = [...root.querySelectorAll(".missing-feature")].map((el) => el.textContent);
    expect(items).toEqual(["PAS", "PCWP"]);
    expect(root.querySelector(".missing-prompt")!.textContent).toContain("needs a value");
  });
});
