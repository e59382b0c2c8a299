"""Feature declarations and feature-set manifests.

A feature set is an ordered list of named features, each either continuous
(with a unit and an inclusive valid range) or categorical (with a fixed list
of integer codes and display labels).  Two manifests ship with the package:
``invasive-hemodynamics`` (28 features) and ``all-features`` (66 features).
Manifests are configuration, not hard-coded truth; custom sets load from the
same CSV format.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

BUILTIN_FEATURE_SETS = ("invasive-hemodynamics", "all-features")

MANIFEST_COLUMNS = ("name", "kind", "unit", "min", "max", "values")


class FeatureSetError(ValueError):
    """Invalid feature declaration or manifest."""


@dataclass(frozen=True)
class CategoryValue:
    """One admissible code of a categorical feature."""

    code: int
    label: str


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    unit: str = ""
    valid_range: tuple[float, float] | None = None
    category_values: tuple[CategoryValue, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise FeatureSetError(f"{self.name}: unknown kind {self.kind!r}")
        if self.valid_range is not None and not self.valid_range[0] < self.valid_range[1]:
            raise FeatureSetError(f"{self.name}: valid_range min must be < max")
        if self.kind == CATEGORICAL:
            if len(self.category_values) < 2:
                raise FeatureSetError(f"{self.name}: categorical features need >=2 codes")
            codes = [c.code for c in self.category_values]
            if len(set(codes)) != len(codes):
                raise FeatureSetError(f"{self.name}: duplicate category codes")
        elif self.category_values:
            raise FeatureSetError(f"{self.name}: continuous features take no codes")

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(c.code for c in self.category_values)

    def label_for(self, code: int) -> str:
        for c in self.category_values:
            if c.code == code:
                return c.label
        return str(code)

    def in_range(self, value: float) -> bool:
        """True when a value is admissible for this feature."""
        if self.kind == CATEGORICAL:
            return value == int(value) and int(value) in self.codes
        if self.valid_range is None:
            return True
        lo, hi = self.valid_range
        return lo <= value <= hi


@dataclass(frozen=True)
class FeatureSet:
    name: str
    features: tuple[FeatureSpec, ...]
    _by_name: dict = field(init=False, repr=False, compare=False, hash=False, default=None)

    def __post_init__(self) -> None:
        by_name = {}
        for spec in self.features:
            if spec.name in by_name:
                raise FeatureSetError(f"{self.name}: duplicate feature {spec.name}")
            by_name[spec.name] = spec
        object.__setattr__(self, "_by_name", by_name)

    def __len__(self) -> int:
        return len(self.features)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.features)

    def spec(self, name: str) -> FeatureSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"feature {name!r} not in set {self.name!r}") from None

    def get(self, name: str) -> FeatureSpec | None:
        return self._by_name.get(name)


def _parse_values(text: str) -> tuple[CategoryValue, ...]:
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        code, _, label = part.partition("=")
        out.append(CategoryValue(code=int(code), label=label or code))
    return tuple(out)


def _format_values(values: tuple[CategoryValue, ...]) -> str:
    return ";".join(f"{v.code}={v.label}" for v in values)


def parse_manifest(text: str, name: str) -> FeatureSet:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise FeatureSetError(f"manifest missing columns: {sorted(missing)}")
    specs = []
    for row in reader:
        kind = row["kind"].strip()
        rng = None
        if row["min"].strip() != "" and row["max"].strip() != "":
            rng = (float(row["min"]), float(row["max"]))
        specs.append(
            FeatureSpec(
                name=row["name"].strip(),
                kind=kind,
                unit=row["unit"].strip(),
                valid_range=rng,
                category_values=_parse_values(row["values"]) if kind == CATEGORICAL else (),
            )
        )
    return FeatureSet(name=name, features=tuple(specs))


def load_manifest(path: str | Path) -> FeatureSet:
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), name=path.stem)


def save_manifest(feature_set: FeatureSet, path: str | Path) -> None:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for spec in feature_set.features:
        lo = repr(spec.valid_range[0]) if spec.valid_range else ""
        hi = repr(spec.valid_range[1]) if spec.valid_range else ""
        writer.writerow(
            [spec.name, spec.kind, spec.unit, lo, hi, _format_values(spec.category_values)]
        )
    path.write_text(buf.getvalue(), encoding="utf-8")


def builtin_feature_set(name: str) -> FeatureSet:
    """Load one of the packaged manifests by name."""
    if name not in BUILTIN_FEATURE_SETS:
        raise FeatureSetError(f"no builtin feature set {name!r}; options: {BUILTIN_FEATURE_SETS}")
    text = resources.files("riskmvdd.manifests").joinpath(f"{name}.csv").read_text("utf-8")
    return parse_manifest(text, name=name)


def resolve_feature_set(name_or_path: str) -> FeatureSet:
    """Accept a builtin set name or a path to a manifest CSV."""
    if name_or_path in BUILTIN_FEATURE_SETS:
        return builtin_feature_set(name_or_path)
    path = Path(name_or_path)
    if path.exists():
        return load_manifest(path)
    raise FeatureSetError(f"unknown feature set {name_or_path!r} (not builtin, not a file)")
