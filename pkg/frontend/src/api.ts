// Service client. The UI never evaluates models itself; the service is the
// single source of truth, so these calls are the only model access.

import type {
  FeatureManifest,
  IndeterminateResponse,
  ModelCatalog,
  PredictOutcome,
  PredictResponse,
  ServiceError,
} from "./types";

let inflight: AbortController | null = null;

export async function getModels(base = ""): Promise<ModelCatalog> {
  const res = await fetch(`${base}/models`);
  if (!res.ok) throw new Error(`GET /models failed: ${res.status}`);
  return res.json();
}

export async function getFeatures(featureSet: string, base = ""): Promise<FeatureManifest> {
  const res = await fetch(`${base}/features/${encodeURIComponent(featureSet)}`);
  if (!res.ok) throw new Error(`GET /features/${featureSet} failed: ${res.status}`);
  return res.json();
}

// At most one predict request is in flight; a newer submission cancels the
// older one so a slow response can never overwrite a newer score.
export async function postPredict(
  featureSet: string,
  outcome: string,
  values: Record<string, number>,
  base = "",
): Promise<PredictOutcome> {
  inflight?.abort();
  const controller = new AbortController();
  inflight = controller;
  const res = await fetch(`${base}/predict`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ feature_set: featureSet, outcome, values }),
    signal: controller.signal,
  });
  if (inflight === controller) inflight = null;
  if (res.status === 200) {
    return { kind: "scored", body: (await res.json()) as PredictResponse };
  }
  if (res.status === 409) {
    return { kind: "indeterminate", body: (await res.json()) as IndeterminateResponse };
  }
  return { kind: "error", status: res.status, body: (await res.json()) as ServiceError };
}
