"""Multi-valued decision diagram: a rooted DAG whose internal nodes test one
feature, whose edges carry AND/OR logical operators, and whose terminals hold
a risk class.

OR edges make tests substitutable.  When every arm of a node carries an OR
edge, all arms point at one shared *substitute* node whose arms pair with the
original node's arms by position: arm ``i`` of the substitute continues
exactly where arm ``i`` of the original would.  Evaluation with the feature
present takes the matching arm and, on an OR edge, passes straight through
the substitute (emitting its paired condition into the phenotype without
testing it).  Evaluation with the feature absent walks the OR chain to the
first node whose feature is present and lets that node's test pick the arm
index for the whole group; an AND edge terminates the chain.  A record whose
chain has no present feature cannot be scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

AND = "and"
OR = "or"

LE = "le"
GT = "gt"

SCHEMA_VERSION = 1

_COMPARATOR_SYMBOLS = {LE: "≤", GT: ">"}
_COMPARATOR_ASCII = {LE: "<=", GT: ">"}


class MvddError(Exception):
    pass


class SchemaVersionMismatch(MvddError):
    pass


class CorruptDocument(MvddError):
    pass


class InvalidMvdd(MvddError):
    """Raised when an operation requires a cleanly validating diagram."""


class IndeterminatePrediction(MvddError):
    """The record cannot be scored: a tested feature is absent and no OR
    substitute along the chain is present."""

    def __init__(self, missing_features: list[str]):
        self.missing_features = list(missing_features)
        super().__init__(
            "prediction is indeterminate; missing feature(s): " + ", ".join(self.missing_features)
        )


@dataclass(frozen=True)
class Edge:
    operator: str  # AND | OR
    target: str


@dataclass(frozen=True)
class Arm:
    """One branch of an internal node.

    Continuous nodes use ``comparator`` (le/gt against the node threshold);
    categorical nodes use a ``codes`` group with aligned display ``labels``.
    """

    edge: Edge
    comparator: str | None = None
    codes: tuple[int, ...] | None = None
    labels: tuple[str, ...] | None = None


@dataclass(frozen=True)
class InternalNode:
    node_id: str
    feature: str
    kind: str  # "continuous" | "categorical"
    arms: tuple[Arm, ...]
    threshold: float | None = None

    def match_arm(self, value: float) -> int | None:
        if self.kind == "continuous":
            for idx, arm in enumerate(self.arms):
                if arm.comparator == LE and value <= self.threshold:
                    return idx
                if arm.comparator == GT and value > self.threshold:
                    return idx
            return None
        code = int(value)
        for idx, arm in enumerate(self.arms):
            if arm.codes and code in arm.codes:
                return idx
        return None

    @property
    def all_or(self) -> bool:
        return all(arm.edge.operator == OR for arm in self.arms)


@dataclass(frozen=True)
class Terminal:
    node_id: str
    risk_class: int


Node = InternalNode | Terminal


@dataclass(frozen=True)
class Clause:
    feature: str
    comparator: str  # le | gt | eq | in
    threshold: float | None = None
    codes: tuple[int, ...] | None = None
    labels: tuple[str, ...] | None = None
    connective: str | None = None  # trailing AND/OR; None on the last clause

    def holds(self, values: dict[str, float]) -> bool | None:
        """Truth of this single condition against a value map (None if untestable)."""
        v = values.get(self.feature)
        if v is None:
            return None
        if self.comparator == LE:
            return v <= self.threshold
        if self.comparator == GT:
            return v > self.threshold
        return int(v) in (self.codes or ())


@dataclass
class Phenotype:
    clauses: list[Clause]
    risk_class: int
    used_substitution: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class Mvdd:
    nodes: dict[str, Node]
    root: str
    k: int
    feature_set: str = ""
    outcome: str = ""
    metadata: dict = field(default_factory=dict)

    def terminal_classes(self) -> set[int]:
        return {n.risk_class for n in self.nodes.values() if isinstance(n, Terminal)}

    def features_tested(self) -> set[str]:
        return {n.feature for n in self.nodes.values() if isinstance(n, InternalNode)}


@dataclass
class ValidationProblem:
    code: str
    node_id: str
    message: str


@dataclass
class ValidationReport:
    problems: list[ValidationProblem] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def add(self, code: str, node_id: str, message: str) -> None:
        self.problems.append(ValidationProblem(code, node_id, message))

    def codes(self) -> set[str]:
        return {p.code for p in self.problems}


def validate(mvdd: Mvdd, feature_set=None) -> ValidationReport:
    """Structural checks: acyclicity, reachability, terminal classes in range,
    arm completeness, and OR-edge coherence (shared substitute, same arity).

    With a feature set supplied, categorical arms must also cover every
    declared code of their feature.
    """
    report = ValidationReport()
    nodes = mvdd.nodes
    if mvdd.root not in nodes:
        report.add("MissingRoot", mvdd.root, "root node id not found")
        return report

    for node_id, node in nodes.items():
        if node.node_id != node_id:
            report.add("IdMismatch", node_id, f"node keyed {node_id} carries id {node.node_id}")
        if isinstance(node, Terminal):
            if not 1 <= node.risk_class <= mvdd.k:
                report.add(
                    "ClassOutOfRange",
                    node_id,
                    f"terminal class {node.risk_class} outside [1, {mvdd.k}]",
                )
            continue
        if not node.arms:
            report.add("NoArms", node_id, "internal node has no arms")
            continue
        for arm in node.arms:
            if arm.edge.target not in nodes:
                report.add("DanglingEdge", node_id, f"edge target {arm.edge.target!r} missing")
            if arm.edge.operator not in (AND, OR):
                report.add("BadOperator", node_id, f"operator {arm.edge.operator!r}")
        if node.kind == "continuous":
            comparators = [arm.comparator for arm in node.arms]
            if node.threshold is None:
                report.add("MissingThreshold", node_id, "continuous node without threshold")
            if sorted(filter(None, comparators)) != [GT, LE] or len(node.arms) != 2:
                report.add(
                    "IncompleteArms",
                    node_id,
                    "continuous node needs exactly one ≤ arm and one > arm",
                )
        elif node.kind == "categorical":
            seen: set[int] = set()
            for arm in node.arms:
                if not arm.codes:
                    report.add("IncompleteArms", node_id, "categorical arm without codes")
                    continue
                overlap = seen.intersection(arm.codes)
                if overlap:
                    report.add("OverlappingArms", node_id, f"codes {sorted(overlap)} repeat")
                seen.update(arm.codes)
            if feature_set is not None:
                spec = feature_set.get(node.feature)
                if spec is not None and set(spec.codes) - seen:
                    missing = sorted(set(spec.codes) - seen)
                    report.add("IncompleteArms", node_id, f"codes {missing} not covered")
        else:
            report.add("BadKind", node_id, f"unknown node kind {node.kind!r}")

        operators = {arm.edge.operator for arm in node.arms}
        if OR in operators:
            targets = {arm.edge.target for arm in node.arms}
            if operators != {OR} or len(targets) != 1:
                report.add(
                    "MixedOrArms",
                    node_id,
                    "OR arms must all carry OR edges into one shared substitute",
                )
            else:
                sub = nodes.get(next(iter(targets)))
                if isinstance(sub, Terminal):
                    report.add("OrIntoTerminal", node_id, "OR edge cannot target a terminal")
                elif sub is not None and len(sub.arms) != len(node.arms):
                    report.add(
                        "SubstituteArity",
                        node_id,
                        f"substitute {sub.node_id} has {len(sub.arms)} arms, expected {len(node.arms)}",
                    )

    # Cycle detection and reachability in one DFS from the root.
    WHITE, GREY, BLACK = 0, 1, 2
    color = {node_id: WHITE for node_id in nodes}
    stack = [(mvdd.root, iter(_targets(nodes.get(mvdd.root))))]
    color[mvdd.root] = GREY
    while stack:
        node_id, it = stack[-1]
        advanced = False
        for target in it:
            if target not in nodes:
                continue
            if color[target] == GREY:
                report.add("CycleDetected", target, f"cycle through {node_id} -> {target}")
            elif color[target] == WHITE:
                color[target] = GREY
                stack.append((target, iter(_targets(nodes[target]))))
                advanced = True
                break
        if not advanced:
            color[node_id] = BLACK
            stack.pop()
    for node_id, c in color.items():
        if c == WHITE:
            report.add("Unreachable", node_id, "node not reachable from root")
    return report


def _targets(node: Node | None) -> list[str]:
    if isinstance(node, InternalNode):
        return [arm.edge.target for arm in node.arms]
    return []


def _record_values(record) -> dict[str, float]:
    if hasattr(record, "values") and not isinstance(record, dict):
        return record.values
    return record


def evaluate(mvdd: Mvdd, record) -> tuple[int, Phenotype]:
    """Traverse from the root and return (risk class, phenotype).

    Raises :class:`IndeterminatePrediction` when a tested feature is absent
    and no OR substitute along its chain is present.
    """
    values = _record_values(record)
    clauses: list[Clause] = []
    substitutions: list[tuple[str, str]] = []
    node = mvdd.nodes[mvdd.root]
    while isinstance(node, InternalNode):
        value = values.get(node.feature)
        if value is not None:
            arm_idx = node.match_arm(value)
            if arm_idx is None:
                raise IndeterminatePrediction([node.feature])
            node = _descend(mvdd, node, arm_idx, clauses)
            continue
        # Feature absent: walk the OR chain for the first present feature.
        chain = [node]
        deciding = None
        arm_idx = None
        current = node
        while current.all_or and current.arms:
            nxt = mvdd.nodes[current.arms[0].edge.target]
            if not isinstance(nxt, InternalNode):
                break
            chain.append(nxt)
            sub_value = values.get(nxt.feature)
            if sub_value is not None:
                arm_idx = nxt.match_arm(sub_value)
                deciding = nxt
                break
            current = nxt
        if deciding is None or arm_idx is None:
            raise IndeterminatePrediction([n.feature for n in chain])
        for skipped in chain:
            if skipped is deciding:
                break
            substitutions.append((skipped.feature, deciding.feature))
        node = _descend(mvdd, chain[0], arm_idx, clauses)
    if clauses:
        last = clauses[-1]
        clauses[-1] = Clause(
            feature=last.feature,
            comparator=last.comparator,
            threshold=last.threshold,
            codes=last.codes,
            labels=last.labels,
            connective=None,
        )
    phenotype = Phenotype(
        clauses=clauses, risk_class=node.risk_class, used_substitution=substitutions
    )
    return node.risk_class, phenotype


def _descend(mvdd: Mvdd, node: InternalNode, arm_idx: int, clauses: list[Clause]) -> Node:
    """Emit the clause for ``arm_idx`` of ``node`` and every pass-through
    substitute at the same arm position, returning the continuation node."""
    while True:
        arm = node.arms[arm_idx]
        clauses.append(_clause_for(node, arm, connective=arm.edge.operator))
        target = mvdd.nodes[arm.edge.target]
        if arm.edge.operator == AND:
            return target
        node = target  # pass through the substitute without testing it


def _clause_for(node: InternalNode, arm: Arm, connective: str | None) -> Clause:
    if node.kind == "continuous":
        return Clause(
            feature=node.feature,
            comparator=arm.comparator,
            threshold=node.threshold,
            connective=connective,
        )
    comparator = "eq" if len(arm.codes or ()) == 1 else "in"
    return Clause(
        feature=node.feature,
        comparator=comparator,
        codes=arm.codes,
        labels=arm.labels,
        connective=connective,
    )


def _format_threshold(t: float) -> str:
    if float(t).is_integer():
        return str(int(t))
    return repr(float(t))


def _clause_text(clause: Clause, ascii_ops: bool) -> str:
    if clause.comparator in (LE, GT):
        sym = (_COMPARATOR_ASCII if ascii_ops else _COMPARATOR_SYMBOLS)[clause.comparator]
        return f"{clause.feature} {sym} {_format_threshold(clause.threshold)}"
    labels = clause.labels or tuple(str(c) for c in clause.codes or ())
    if clause.comparator == "eq":
        return f"{clause.feature} = {labels[0]}"
    joined = ", ".join(labels)
    if ascii_ops:
        return f"{clause.feature} in {{{joined}}}"
    return f"{clause.feature} ∈ {{{joined}}}"


def render_conditions(phenotype: Phenotype, ascii_ops: bool = False) -> str:
    """The condition part of a phenotype, with parenthesized OR groups."""
    and_sep = " AND " if ascii_ops else " ∧ "
    or_sep = " OR " if ascii_ops else " ∨ "
    parts: list[str] = []
    group: list[str] = []
    for clause in phenotype.clauses:
        group.append(_clause_text(clause, ascii_ops))
        if clause.connective == OR:
            continue
        parts.append(f"({or_sep.join(group)})" if len(group) > 1 else group[0])
        group = []
    if group:  # trailing OR connective on the last clause; render what we have
        parts.append(f"({or_sep.join(group)})" if len(group) > 1 else group[0])
    return and_sep.join(parts)


def render_phenotype(phenotype: Phenotype, ascii_ops: bool = False) -> str:
    """Full phenotype line, e.g. ``PCWP <= 33 = Score 3`` or ``Score 2``."""
    conditions = render_conditions(phenotype, ascii_ops)
    if not conditions:
        return f"Score {phenotype.risk_class}"
    return f"{conditions} = Score {phenotype.risk_class}"


def serialize(mvdd: Mvdd) -> str:
    """Schema-versioned JSON document; deterministic key and node order."""
    report = validate(mvdd)
    if not report.ok:
        raise InvalidMvdd(f"refusing to serialize an invalid diagram: {report.problems[:3]}")
    nodes_payload = []
    for node_id in sorted(mvdd.nodes):
        node = mvdd.nodes[node_id]
        if isinstance(node, Terminal):
            nodes_payload.append({"id": node_id, "type": "terminal", "class": node.risk_class})
            continue
        arms = []
        for arm in node.arms:
            entry = {"operator": arm.edge.operator, "target": arm.edge.target}
            if node.kind == "continuous":
                entry["comparator"] = arm.comparator
            else:
                entry["codes"] = list(arm.codes or ())
                entry["labels"] = list(arm.labels or ())
            arms.append(entry)
        payload = {
            "id": node_id,
            "type": "internal",
            "feature": node.feature,
            "kind": node.kind,
            "arms": arms,
        }
        if node.threshold is not None:
            payload["threshold"] = node.threshold
        nodes_payload.append(payload)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "mvdd",
        "k": mvdd.k,
        "feature_set": mvdd.feature_set,
        "outcome": mvdd.outcome,
        "root": mvdd.root,
        "nodes": nodes_payload,
        "metadata": mvdd.metadata,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def deserialize(text: str) -> Mvdd:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptDocument(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CorruptDocument("document is not an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schema version {version!r}, expected {SCHEMA_VERSION}")
    if doc.get("kind") != "mvdd":
        raise CorruptDocument(f"document kind {doc.get('kind')!r} is not an mvdd")
    try:
        nodes: dict[str, Node] = {}
        for entry in doc["nodes"]:
            node_id = entry["id"]
            if entry["type"] == "terminal":
                nodes[node_id] = Terminal(node_id=node_id, risk_class=int(entry["class"]))
                continue
            arms = []
            for arm in entry["arms"]:
                arms.append(
                    Arm(
                        edge=Edge(operator=arm["operator"], target=arm["target"]),
                        comparator=arm.get("comparator"),
                        codes=tuple(arm["codes"]) if "codes" in arm else None,
                        labels=tuple(arm["labels"]) if arm.get("labels") else None,
                    )
                )
            nodes[node_id] = InternalNode(
                node_id=node_id,
                feature=entry["feature"],
                kind=entry["kind"],
                threshold=entry.get("threshold"),
                arms=tuple(arms),
            )
        mvdd = Mvdd(
            nodes=nodes,
            root=doc["root"],
            k=int(doc["k"]),
            feature_set=doc.get("feature_set", ""),
            outcome=doc.get("outcome", ""),
            metadata=doc.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptDocument(f"malformed document: {exc}") from None
    report = validate(mvdd)
    if not report.ok:
        raise CorruptDocument(f"document fails validation: {[p.code for p in report.problems]}")
    return mvdd


def _arm_label(node: InternalNode, arm: Arm) -> str:
    if node.kind == "continuous":
        sym = _COMPARATOR_ASCII[arm.comparator]
        return f"{sym} {_format_threshold(node.threshold)}"
    labels = arm.labels or tuple(str(c) for c in arm.codes or ())
    return "= " + ", ".join(labels)


def export_dot(mvdd: Mvdd) -> str:
    """DOT digraph: OR edges dashed, AND edges solid, terminals boxed."""
    report = validate(mvdd)
    if not report.ok:
        raise InvalidMvdd(f"refusing to export an invalid diagram: {report.problems[:3]}")
    lines = ["digraph mvdd {", "  rankdir=TB;"]
    for node_id in sorted(mvdd.nodes):
        node = mvdd.nodes[node_id]
        if isinstance(node, Terminal):
            lines.append(
                f'  "{node_id}" [label="Score {node.risk_class}", shape=box, style=filled, fillcolor=lightgrey];'
            )
        else:
            lines.append(f'  "{node_id}" [label="{node.feature}", shape=ellipse];')
    for node_id in sorted(mvdd.nodes):
        node = mvdd.nodes[node_id]
        if isinstance(node, Terminal):
            continue
        for arm in node.arms:
            style = "dashed" if arm.edge.operator == OR else "solid"
            label = _arm_label(node, arm)
            lines.append(f'  "{node_id}" -> "{arm.edge.target}" [label="{label}", style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


class MvddBuilder:
    """Incremental constructor for hand-built diagrams and the trainer."""

    def __init__(self, k: int, feature_set: str = "", outcome: str = ""):
        self.k = k
        self.feature_set = feature_set
        self.outcome = outcome
        self.nodes: dict[str, Node] = {}
        self._counter = 0

    def fresh_id(self) -> str:
        node_id = f"n{self._counter}"
        self._counter += 1
        return node_id

    def terminal(self, risk_class: int, node_id: str | None = None) -> str:
        node_id = node_id or self.fresh_id()
        self.nodes[node_id] = Terminal(node_id=node_id, risk_class=risk_class)
        return node_id

    def continuous(
        self,
        feature: str,
        threshold: float,
        arms: list[tuple[str, str, str]],
        node_id: str | None = None,
    ) -> str:
        """arms: list of (comparator, operator, target_id) in pairing order."""
        node_id = node_id or self.fresh_id()
        built = tuple(
            Arm(edge=Edge(operator=op, target=target), comparator=cmp) for cmp, op, target in arms
        )
        self.nodes[node_id] = InternalNode(
            node_id=node_id, feature=feature, kind="continuous", threshold=threshold, arms=built
        )
        return node_id

    def categorical(
        self,
        feature: str,
        arms: list[tuple[tuple[int, ...], tuple[str, ...], str, str]],
        node_id: str | None = None,
    ) -> str:
        """arms: list of (codes, labels, operator, target_id) in pairing order."""
        node_id = node_id or self.fresh_id()
        built = tuple(
            Arm(edge=Edge(operator=op, target=target), codes=tuple(codes), labels=tuple(labels))
            for codes, labels, op, target in arms
        )
        self.nodes[node_id] = InternalNode(
            node_id=node_id, feature=feature, kind="categorical", arms=built
        )
        return node_id

    def build(self, root: str, metadata: dict | None = None, check: bool = True) -> Mvdd:
        mvdd = Mvdd(
            nodes=dict(self.nodes),
            root=root,
            k=self.k,
            feature_set=self.feature_set,
            outcome=self.outcome,
            metadata=metadata or {},
        )
        if check:
            report = validate(mvdd)
            if not report.ok:
                raise InvalidMvdd(f"built an invalid diagram: {report.problems}")
        return mvdd


def canonicalize(mvdd: Mvdd) -> Mvdd:
    """Merge structurally identical subgraphs (hash-consing).

    Evaluation is defined on paths, so sharing never changes predictions; it
    only shrinks the document.
    """
    canonical: dict[tuple, str] = {}
    rewritten: dict[str, str] = {}
    new_nodes: dict[str, Node] = {}

    def visit(node_id: str) -> str:
        if node_id in rewritten:
            return rewritten[node_id]
        node = mvdd.nodes[node_id]
        if isinstance(node, Terminal):
            key = ("t", node.risk_class)
        else:
            arm_keys = tuple(
                (arm.comparator, arm.codes, arm.edge.operator, visit(arm.edge.target))
                for arm in node.arms
            )
            key = ("i", node.feature, node.kind, node.threshold, arm_keys)
        if key in canonical:
            rewritten[node_id] = canonical[key]
            return canonical[key]
        if isinstance(node, Terminal):
            new_node: Node = node
        else:
            new_node = InternalNode(
                node_id=node.node_id,
                feature=node.feature,
                kind=node.kind,
                threshold=node.threshold,
                arms=tuple(
                    Arm(
                        edge=Edge(arm.edge.operator, visit(arm.edge.target)),
                        comparator=arm.comparator,
                        codes=arm.codes,
                        labels=arm.labels,
                    )
                    for arm in node.arms
                ),
            )
        canonical[key] = node_id
        rewritten[node_id] = node_id
        new_nodes[node_id] = new_node
        return node_id

    root = visit(mvdd.root)
    return Mvdd(
        nodes=new_nodes,
        root=root,
        k=mvdd.k,
        feature_set=mvdd.feature_set,
        outcome=mvdd.outcome,
        metadata=mvdd.metadata,
    )
