"""Seeded synthetic cohort generator.

Produces heart-failure-shaped data with latent risk strata (Gaussian blobs
per stratum), controllable cell-level missingness, and exactly-correlated
feature pairs whose members are never both masked in one record, so the
substitution machinery downstream always has something to fall back on.
The real trial datasets are not redistributable; this is the desk-scale
stand-in used for fixtures and acceptance runs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import OUTCOME_NAMES, Cohort, PatientRecord
from .features import CATEGORICAL, FeatureSet
from .seeding import substream


class InvalidSpec(ValueError):
    pass


@dataclass
class SynthSpec:
    n_records: int
    feature_set: FeatureSet
    outcome_rates: tuple[float, ...] = (0.05, 0.15, 0.25, 0.35, 0.6)
    missing_rate: float = 0.1
    correlated_pairs: tuple[tuple[str, str, float], ...] = ()
    seed: int = 0
    # Distance between adjacent stratum means, in units of the blob noise sd.
    separation: float = 6.0
    # Optional per-feature stratum means; features not listed follow the
    # default evenly-spaced layout across their valid range.
    feature_profiles: dict[str, tuple[float, ...]] = field(default_factory=dict)
    # Features generated as pure noise (no stratum signal).
    uninformative: tuple[str, ...] = ()
    cohort_id: str = "synthetic"

    @property
    def n_strata(self) -> int:
        return len(self.outcome_rates)

    def validate(self) -> None:
        if self.n_records < 1:
            raise InvalidSpec("n_records must be >= 1")
        if not 0 <= self.missing_rate < 1:
            raise InvalidSpec("missing_rate must lie in [0, 1)")
        if len(self.outcome_rates) < 2:
            raise InvalidSpec("need at least 2 strata")
        if any(b <= a for a, b in zip(self.outcome_rates, self.outcome_rates[1:])):
            raise InvalidSpec("outcome_rates must be strictly increasing")
        if any(not 0 <= r <= 1 for r in self.outcome_rates):
            raise InvalidSpec("outcome_rates must lie in [0, 1]")
        for a, b, _ in self.correlated_pairs:
            for name in (a, b):
                if name not in self.feature_set:
                    raise InvalidSpec(f"correlated pair member {name!r} not in feature set")
                if self.feature_set.spec(name).kind == CATEGORICAL:
                    raise InvalidSpec(f"correlated pair member {name!r} must be continuous")
        for name, means in self.feature_profiles.items():
            if name not in self.feature_set:
                raise InvalidSpec(f"profiled feature {name!r} not in feature set")
            if len(means) != self.n_strata:
                raise InvalidSpec(f"profile for {name!r} needs {self.n_strata} means")


@dataclass
class SynthResult:
    cohort: Cohort
    strata: dict[str, int]

    def strata_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["record_id", "stratum"])
        for rec in self.cohort.records:
            writer.writerow([rec.record_id, self.strata[rec.record_id]])
        return buf.getvalue()


def _default_layout(spec, n_strata: int) -> tuple[np.ndarray, float]:
    """Evenly spaced stratum means inside the valid range, plus the noise sd."""
    lo, hi = spec.valid_range if spec.valid_range else (0.0, 100.0)
    positions = (np.arange(n_strata) + 1.0) / (n_strata + 1.0)
    means = lo + positions * (hi - lo)
    spacing = (hi - lo) / (n_strata + 1.0)
    return means, spacing


def generate(spec: SynthSpec) -> SynthResult:
    spec.validate()
    rng = substream(spec.seed, "synth")
    n = spec.n_records
    strata = rng.integers(0, spec.n_strata, size=n)
    names = spec.feature_set.names()
    columns: dict[str, np.ndarray] = {}
    pair_b_to_a = {b: (a, offset) for a, b, offset in spec.correlated_pairs}

    informative_idx = 0
    for name in names:
        fspec = spec.feature_set.spec(name)
        if name in pair_b_to_a:
            continue  # derived from partner below
        if fspec.kind == CATEGORICAL:
            codes = np.array(fspec.codes)
            columns[name] = codes[rng.integers(0, len(codes), size=n)].astype(float)
            continue
        means, spacing = _default_layout(fspec, spec.n_strata)
        if name in spec.feature_profiles:
            means = np.array(spec.feature_profiles[name], dtype=float)
            sd = spacing / max(spec.separation, 1e-9)
        elif name in spec.uninformative:
            means = np.full(spec.n_strata, float(means.mean()))
            sd = spacing
        else:
            # Cycle which stratum takes which position so stratum mean vectors
            # are not collinear across features; the strata then land as a
            # constellation of blobs in the projected plane rather than on a
            # line, which is what gives the sum-of-squares curve its elbow.
            shift = informative_idx % spec.n_strata
            means = means[(np.arange(spec.n_strata) + shift) % spec.n_strata]
            sd = spacing / max(spec.separation, 1e-9)
            informative_idx += 1
        values = means[strata] + rng.normal(0.0, sd, size=n)
        if fspec.valid_range is not None:
            lo, hi = fspec.valid_range
            for a, b, offset in spec.correlated_pairs:
                if a != name:
                    continue
                # Keep partner = value + offset inside the partner's range too.
                b_spec = spec.feature_set.spec(b)
                if b_spec.valid_range is not None:
                    blo, bhi = b_spec.valid_range
                    lo = max(lo, blo - offset)
                    hi = min(hi, bhi - offset)
            values = np.clip(values, lo, hi)
        columns[name] = values

    for a, b, offset in spec.correlated_pairs:
        columns[b] = columns[a] + offset

    mask = rng.random((n, len(names))) < spec.missing_rate
    col_index = {name: j for j, name in enumerate(names)}
    for a, b, _ in spec.correlated_pairs:
        ja, jb = col_index[a], col_index[b]
        both = mask[:, ja] & mask[:, jb]
        mask[both, jb] = False  # never blind both members of a pair

    outcome_draws = {
        outcome: rng.random(n) < np.array(spec.outcome_rates)[strata] for outcome in OUTCOME_NAMES
    }

    records = []
    strata_by_id: dict[str, int] = {}
    for i in range(n):
        rec_id = f"r{i:05d}"
        values = {
            name: float(columns[name][i]) for name in names if not mask[i, col_index[name]]
        }
        outcomes = {outcome: bool(outcome_draws[outcome][i]) for outcome in OUTCOME_NAMES}
        records.append(
            PatientRecord(
                record_id=rec_id,
                cohort_id=spec.cohort_id,
                timepoint="baseline",
                values=values,
                outcomes=outcomes,
            )
        )
        strata_by_id[rec_id] = int(strata[i])
    cohort = Cohort(cohort_id=spec.cohort_id, records=records, feature_set=spec.feature_set)
    return SynthResult(cohort=cohort, strata=strata_by_id)


def write_fixture(result: SynthResult, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cohort_path = out_dir / f"{result.cohort.cohort_id}.csv"
    strata_path = out_dir / f"{result.cohort.cohort_id}.strata.csv"
    cohort_path.write_text(result.cohort.to_csv(), encoding="utf-8")
    strata_path.write_text(result.strata_csv(), encoding="utf-8")
    return cohort_path, strata_path
