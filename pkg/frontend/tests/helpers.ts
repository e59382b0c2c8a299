// Mock prediction service for UI tests. It mirrors the wire format of the
// real service and evaluates the same hand-built demo diagram
// (Sex -> BPSYS -> CPI -> PAS with PCWP as the OR substitute), so responses
// react to the submitted values the way the backend would.

import { vi } from "vitest";
import type { FeatureManifest, PhenotypeClause } from "../src/types";

const CONTINUOUS_FEATURES: [string, string, number, number][] = [
  ["Age", "years", 18, 100],
  ["BMI", "kg/m2", 10, 70],
  ["BSA", "m2", 1, 3],
  ["BPSYS", "mmHg", 50, 250],
  ["BPDIAS", "mmHg", 20, 150],
  ["HR", "bpm", 20, 250],
  ["MAP", "mmHg", 30, 180],
  ["PP", "mmHg", 5, 150],
  ["PPP", "ratio", 0.05, 1],
  ["CPI", "W/m2", 0.1, 1.5],
  ["CPO", "W", 0.2, 2.5],
  ["RAP", "mmHg", 0, 40],
  ["PAS", "mmHg", 10, 120],
  ["PAD", "mmHg", 0, 60],
  ["PAMN", "mmHg", 5, 80],
  ["PCWP", "mmHg", 2, 50],
  ["CO", "L/min", 1, 12],
  ["CI", "L/min/m2", 0.5, 6],
  ["SVR", "dyn.s/cm5", 200, 4000],
  ["PVR", "dyn.s/cm5", 20, 1200],
  ["SVO2", "%", 20, 90],
  ["PAPI", "ratio", 0.1, 20],
  ["TPG", "mmHg", 0, 50],
  ["RAPPCWP", "ratio", 0, 3],
  ["SVI", "mL/m2", 10, 80],
  ["RVSWI", "g.m/m2", 1, 30],
];

export function hemoManifest(): FeatureManifest {
  const features: FeatureManifest["features"] = [
    {
      name: "Sex",
      kind: "categorical",
      unit: "",
      valid_range: null,
      categories: [
        { code: 0, label: "Female" },
        { code: 1, label: "Male" },
      ],
    },
    {
      name: "NYHA",
      kind: "categorical",
      unit: "",
      valid_range: null,
      categories: [
        { code: 3, label: "Class III" },
        { code: 4, label: "Class IV" },
      ],
    },
    ...CONTINUOUS_FEATURES.map(([name, unit, lo, hi]) => ({
      name,
      kind: "continuous" as const,
      unit,
      valid_range: [lo, hi] as [number, number],
      categories: null,
    })),
  ];
  return { schema_version: 1, feature_set: "invasive-hemodynamics", features };
}

export function miniManifest(): FeatureManifest {
  return {
    schema_version: 1,
    feature_set: "mini",
    features: [
      { name: "BPSYS", kind: "continuous", unit: "mmHg", valid_range: [50, 250], categories: null },
      { name: "HR", kind: "continuous", unit: "bpm", valid_range: [20, 250], categories: null },
    ],
  };
}

type DemoResult =
  | {
      status: 200;
      risk_class: number;
      clauses: PhenotypeClause[];
      substitutions: { missing: string; used: string }[];
    }
  | { status: 409; missing: string[] };

function clause(
  feature: string,
  comparator: PhenotypeClause["comparator"],
  connective: PhenotypeClause["connective"],
  threshold?: number,
  labels?: string[],
): PhenotypeClause {
  const out: PhenotypeClause = { feature, comparator, connective };
  if (threshold !== undefined) out.threshold = threshold;
  if (labels) {
    out.labels = labels;
    out.codes = labels.map((l) => (l === "Male" ? 1 : 0));
  }
  return out;
}

function evaluateDemo(values: Record<string, number>): DemoResult {
  const sex = values["Sex"];
  if (sex === undefined) return { status: 409, missing: ["Sex"] };
  if (sex === 0) {
    return {
      status: 200,
      risk_class: 2,
      clauses: [clause("Sex", "eq", null, undefined, ["Female"])],
      substitutions: [],
    };
  }
  const path: PhenotypeClause[] = [clause("Sex", "eq", "and", undefined, ["Male"])];
  const bpsys = values["BPSYS"];
  if (bpsys === undefined) return { status: 409, missing: ["BPSYS"] };
  if (bpsys <= 103.5) {
    return {
      status: 200,
      risk_class: 1,
      clauses: [...path.slice(0, 1), clause("BPSYS", "le", null, 103.5)],
      substitutions: [],
    };
  }
  path.push(clause("BPSYS", "gt", "and", 103.5));
  const cpi = values["CPI"];
  if (cpi === undefined) return { status: 409, missing: ["CPI"] };
  if (cpi <= 0.621) {
    return {
      status: 200,
      risk_class: 3,
      clauses: [...path, clause("CPI", "le", null, 0.621)],
      substitutions: [],
    };
  }
  path.push(clause("CPI", "gt", "and", 0.621));
  const pas = values["PAS"];
  const pcwp = values["PCWP"];
  const high =
    pas !== undefined ? pas > 74.5 : pcwp !== undefined ? pcwp <= 33 : null;
  if (high === null) return { status: 409, missing: ["PAS", "PCWP"] };
  const substitutions = pas === undefined ? [{ missing: "PAS", used: "PCWP" }] : [];
  if (high) {
    return {
      status: 200,
      risk_class: 5,
      clauses: [...path, clause("PAS", "gt", "or", 74.5), clause("PCWP", "le", null, 33)],
      substitutions,
    };
  }
  return {
    status: 200,
    risk_class: 4,
    clauses: [...path, clause("PAS", "le", "or", 74.5), clause("PCWP", "gt", null, 33)],
    substitutions,
  };
}

const SYMBOLS: Record<string, string> = { le: "≤", gt: ">" };

function renderText(clauses: PhenotypeClause[], riskClass: number): string {
  const parts: string[] = [];
  let run: string[] = [];
  for (const c of clauses) {
    if (c.comparator === "eq") run.push(`${c.feature} = ${c.labels![0]}`);
    else run.push(`${c.feature} ${SYMBOLS[c.comparator]} ${c.threshold}`);
    if (c.connective === "or") continue;
    parts.push(run.length > 1 ? `(${run.join(" ∨ ")})` : run[0]);
    run = [];
  }
  const conditions = parts.join(" ∧ ");
  return conditions ? `${conditions} = Score ${riskClass}` : `Score ${riskClass}`;
}

const BANDS: Record<number, [number, number, string]> = {
  1: [0.0, 0.1, "<10%"],
  2: [0.1, 0.2, "10 - 20%"],
  3: [0.2, 0.3, "20 - 30%"],
  4: [0.3, 0.4, "30 - 40%"],
  5: [0.4, 1.0, ">40%"],
};

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export interface MockService {
  predictBodies: { feature_set: string; outcome: string; values: Record<string, number> }[];
  restore(): void;
}

export function installMockService(options?: { extraModels?: boolean }): MockService {
  const manifests: Record<string, FeatureManifest> = {
    "invasive-hemodynamics": hemoManifest(),
    mini: miniManifest(),
  };
  const models = [
    { feature_set: "invasive-hemodynamics", outcome: "DeLvTx", k: 5, metadata: {} },
  ];
  if (options?.extraModels) {
    models.push({ feature_set: "mini", outcome: "DeLvTx", k: 5, metadata: {} });
  }
  const predictBodies: MockService["predictBodies"] = [];

  const mock = vi.fn(async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    if (url.endsWith("/models")) {
      return jsonResponse(200, { schema_version: 1, models });
    }
    const featureMatch = url.match(/\/features\/([^/]+)$/);
    if (featureMatch) {
      const manifest = manifests[decodeURIComponent(featureMatch[1])];
      if (!manifest) {
        return jsonResponse(404, { schema_version: 1, error: "unknown_feature_set" });
      }
      return jsonResponse(200, manifest);
    }
    if (url.endsWith("/predict")) {
      const body = JSON.parse(String(init?.body));
      predictBodies.push(body);
      const result = evaluateDemo(body.values);
      if (result.status === 409) {
        return jsonResponse(409, {
          schema_version: 1,
          error: "indeterminate_prediction",
          missing_features: result.missing,
        });
      }
      const [lo, hi, label] = BANDS[result.risk_class];
      return jsonResponse(200, {
        schema_version: 1,
        feature_set: body.feature_set,
        outcome: body.outcome,
        risk_class: result.risk_class,
        k: 5,
        probability_range: [lo, hi],
        probability_label: label,
        phenotype_text: renderText(result.clauses, result.risk_class),
        phenotype_clauses: result.clauses,
        substitutions: result.substitutions,
        warnings: [],
      });
    }
    return jsonResponse(404, { schema_version: 1, error: "unknown_endpoint" });
  });

  vi.stubGlobal("fetch", mock);
  return {
    predictBodies,
    restore: () => vi.unstubAllGlobals(),
  };
}

export const PATH_VALUES = { Sex: 1, BPSYS: 110, CPI: 0.7, PAS: 80 };
export const PATH_PHENOTYPE =
  "Sex = Male ∧ BPSYS > 103.5 ∧ CPI > 0.621 ∧ (PAS > 74.5 ∨ PCWP ≤ 33)";
