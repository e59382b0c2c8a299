// Wire types for the prediction service. Every response carries
// schema_version; bodies are documented in the service README.

export interface ModelEntry {
  feature_set: string;
  outcome: string;
  k: number;
  metadata: Record<string, unknown>;
}

export interface ModelCatalog {
  schema_version: number;
  models: ModelEntry[];
}

export interface CategoryValue {
  code: number;
  label: string;
}

export interface FeatureEntry {
  name: string;
  kind: "continuous" | "categorical";
  unit: string;
  valid_range: [number, number] | null;
  categories: CategoryValue[] | null;
}

export interface FeatureManifest {
  schema_version: number;
  feature_set: string;
  features: FeatureEntry[];
}

export interface PhenotypeClause {
  feature: string;
  comparator: "le" | "gt" | "eq" | "in";
  connective: "and" | "or" | null;
  threshold?: number;
  codes?: number[];
  labels?: string[];
}

export interface Substitution {
  missing: string;
  used: string;
}

export interface PredictResponse {
  schema_version: number;
  feature_set: string;
  outcome: string;
  risk_class: number;
  k: number;
  probability_range: [number, number];
  probability_label: string;
  phenotype_text: string;
  phenotype_clauses: PhenotypeClause[];
  substitutions: Substitution[];
  warnings: string[];
}

export interface IndeterminateResponse {
  schema_version: number;
  error: "indeterminate_prediction";
  missing_features: string[];
}

export interface ServiceError {
  schema_version: number;
  error: string;
  [key: string]: unknown;
}

export type PredictOutcome =
  | { kind: "scored"; body: PredictResponse }
  | { kind: "indeterminate"; body: IndeterminateResponse }
  | { kind: "error"; status: number; body: ServiceError };
