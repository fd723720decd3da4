"""Goal-structuring-notation assurance case for the glucose predictor.

The built-in template argues top-level device safety down to concrete
evidence: an accuracy goal (RMSE evidence), per-property verification
verdicts, a learning-process goal (loss curves / ablation), and a data
quality goal (the data-requirement audit).  Cases are plain values; every
mutating operation returns a new case.  Status is recomputed on demand,
never stored.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field, replace

import yaml

NODE_KINDS = ("Goal", "Strategy", "Context", "Assumption", "Justification", "Solution")
LINK_KINDS = ("SupportedBy", "InContextOf")
INSTANTIATION = ("Fixed", "PerPatient", "PerPopulation")
ARTIFACT_KINDS = ("rmse_eval", "verification_verdict", "audit_report", "manual")
PASS_STATES = ("positive", "negative", "inconclusive")
GOAL_STATUSES = ("Supported", "Undeveloped", "Contradicted", "PartiallySupported")

_PLACEHOLDER_RE = re.compile(r"\{([a-zA-Z_][a-zA-Z_0-9]*)\}")


class CaseStructureError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    statement: str
    instantiation: str = "Fixed"
    developed: bool = True
    accepts: tuple = ()   # admissible artifact kinds (Solutions only)

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"bad node kind {self.kind!r}")
        if self.instantiation not in INSTANTIATION:
            raise ValueError(f"bad instantiation {self.instantiation!r}")
        for k in self.accepts:
            if k not in ARTIFACT_KINDS:
                raise ValueError(f"bad artifact kind {k!r}")

    @property
    def placeholders(self) -> list:
        return _PLACEHOLDER_RE.findall(self.statement)


@dataclass(frozen=True)
class Link:
    parent: str
    child: str
    kind: str
    acp: str | None = None  # assurance claim point label

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ValueError(f"bad link kind {self.kind!r}")


@dataclass(frozen=True)
class EvidenceBinding:
    solution_id: str
    kind: str
    payload: dict
    passed: str  # positive | negative | inconclusive

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise ValueError(f"bad artifact kind {self.kind!r}")
        if self.passed not in PASS_STATES:
            raise ValueError(f"bad pass state {self.passed!r}")


@dataclass
class AssuranceCase:
    nodes: dict          # id -> Node
    links: list          # of Link
    bindings: list = field(default_factory=list)
    profile: dict = field(default_factory=dict)

    def node(self, node_id: str) -> Node:
        if node_id not in self.nodes:
            raise KeyError(f"unknown node {node_id!r}")
        return self.nodes[node_id]

    def children(self, node_id: str, kind: str | None = None) -> list:
        return [ln.child for ln in self.links
                if ln.parent == node_id and (kind is None or ln.kind == kind)]

    def bindings_for(self, solution_id: str) -> list:
        return [b for b in self.bindings if b.solution_id == solution_id]


# --- built-in template -------------------------------------------------------

def builtin_template() -> AssuranceCase:
    """The assurance argument for a learning-enabled insulin controller.

    Top level: device safety split into the control algorithm (assuming
    accurate predictions) and the ML prediction component.  The ML branch
    descends through development sufficiency to model evidence (accuracy,
    verified properties), the learning process, and data quality.
    """
    n = {}

    def add(node):
        n[node.id] = node

    # Top-level device argument.
    add(Node("G0", "Goal",
             "The learning-enabled insulin delivery controller is safe and "
             "effective while the device is used in treating the patient."))
    add(Node("C0-1", "Context",
             "Controller interface: inputs are the CGM glucose history, injected "
             "insulin history, and meal announcements over the prediction horizon; "
             "output is the insulin dose to inject; environment includes uncertain "
             "meal intake and daily activity for {scope}.",
             instantiation="PerPopulation"))
    add(Node("C0-2", "Context",
             "Controller requirement registry RQ.C.1-RQ.C.1.10: dose accuracy, "
             "periodic output, pump delivery limit, low-glucose suspend, safe "
             "interruption, BG below the 10th-percentile threshold for at most "
             "{alpha1} minutes, BG above the 90th-percentile threshold for at most "
             "{alpha2} minutes after a bolus and at most {alpha3} minutes overall, "
             "BG kept within 70-180 mg/dL, corrective dosing below target, and "
             "morning wake-up BG below {beta} mg/dL.",
             instantiation="PerPopulation"))
    add(Node("A0-1", "Assumption",
             "The glucose predictions consumed by the control algorithm are "
             "accurate."))
    add(Node("G1-1", "Goal",
             "Assuming accurate glucose predictions, the insulin dosage management "
             "component is sufficiently safe and effective for treating patients."))
    add(Node("G1-2", "Goal",
             "The ML glucose prediction component is sufficiently safe and "
             "effective."))
    add(Node("Sn-CTRL", "Solution",
             "Control-algorithm safety analysis against the requirement registry.",
             accepts=("manual",)))

    # ML development / integration split.
    add(Node("G2-1", "Goal",
             "The development of the ML model predicting BG values is "
             "sufficiently safe and effective."))
    add(Node("G2-2", "Goal",
             "The integration of the ML component into the system is "
             "sufficiently safe and effective.", developed=False))
    add(Node("C2-1", "Context",
             "ML requirement registry: predict BG with mean prediction error "
             "below {thres} mg/dL (ML-RQ1), physiology-derived input/output "
             "properties ML-RQ1.1-ML-RQ1.8, and robustness requirements "
             "ML-RQ2-ML-RQ3.",
             instantiation="PerPopulation"))
    add(Node("S2-1", "Strategy",
             "Argue over the ML model satisfying its requirements and the "
             "validity of the requirement refinement."))
    add(Node("G3-1", "Goal",
             "The ML model satisfies the ML requirements."))
    add(Node("G3-2", "Goal",
             "The ML requirements are a valid development of the prediction "
             "requirements allocated to the glucose prediction component."))
    add(Node("Sn-MAP", "Solution",
             "Review of the mapping between component requirements and ML "
             "requirements.", accepts=("manual",)))

    # Model sufficiency.
    add(Node("C3-1", "Context",
             "ML model: feed-forward network, 36 inputs (one hour of BG, insulin "
             "and meal history at 5-minute steps), hidden layers {hidden}, "
             "6 BG outputs over a 30-minute horizon, inputs scaled to [0,1].",
             instantiation="PerPopulation"))
    add(Node("C3-2", "Context",
             "ML data: simulated CGM/insulin/meal traces collected for {scope}, "
             "5-minute sampling over {days} days per patient.",
             instantiation="PerPopulation"))
    add(Node("G4-1", "Goal",
             "The ML model satisfies the performance requirements."))
    add(Node("G4-2", "Goal",
             "The ML model satisfies the robustness requirements."))
    add(Node("G-LEARN", "Goal",
             "The iterative process used to design and train the ML model is "
             "sufficient (structure selection, hyper-parameters, no overfitting)."))
    add(Node("Sn-RMSE", "Solution",
             "Held-out prediction error evaluation against the {thres} mg/dL "
             "threshold.", accepts=("rmse_eval",), instantiation="PerPopulation"))
    add(Node("Sn-VERIFY", "Solution",
             "Formal verification verdicts for the input/output properties.",
             accepts=("verification_verdict",)))
    add(Node("Sn-ROBUST", "Solution",
             "Per-patient held-out error evaluation across subject groups.",
             accepts=("rmse_eval", "manual")))
    add(Node("Sn-LEARN", "Solution",
             "Training/validation loss curves and hidden-size ablation report.",
             accepts=("manual",)))

    # Data sufficiency.
    add(Node("G4-3", "Goal",
             "The data collected meet the desiderata: relevance, completeness, "
             "accuracy, and balance."))
    add(Node("C4-1", "Context",
             "Datasets: development/test/verification splits sized for {scope} "
             "({split} train/test).", instantiation="PerPopulation"))
    add(Node("C4-2", "Context",
             "Data requirement registry DR.R1-DR.B1 for the intended population: "
             "ages {age_range}, weights {weight_range} kg.",
             instantiation="PerPopulation"))
    add(Node("G5-1", "Goal",
             "The list of ML data requirements is sufficient for the desiderata."))
    add(Node("G5-2", "Goal",
             "The data meet the ML data requirements."))
    add(Node("Sn-DR-REVIEW", "Solution",
             "Expert review of the data requirement list against the desiderata.",
             accepts=("manual",)))
    add(Node("Sn-AUDIT", "Solution",
             "Executable audit of the dataset against DR.R1-DR.B1.",
             accepts=("audit_report",)))

    links = [
        Link("G0", "C0-1", "InContextOf"),
        Link("G0", "C0-2", "InContextOf"),
        Link("G0", "G1-1", "SupportedBy"),
        Link("G0", "G1-2", "SupportedBy"),
        Link("G1-1", "A0-1", "InContextOf"),
        Link("G1-1", "Sn-CTRL", "SupportedBy"),
        Link("G1-2", "G2-1", "SupportedBy"),
        Link("G1-2", "G2-2", "SupportedBy"),
        Link("G2-1", "C2-1", "InContextOf"),
        Link("G2-1", "S2-1", "SupportedBy"),
        Link("S2-1", "G3-1", "SupportedBy"),
        Link("S2-1", "G3-2", "SupportedBy"),
        Link("G3-2", "Sn-MAP", "SupportedBy"),
        Link("G3-1", "C3-1", "InContextOf"),
        Link("G3-1", "C3-2", "InContextOf"),
        Link("G3-1", "G4-1", "SupportedBy"),
        Link("G3-1", "G4-2", "SupportedBy"),
        Link("G3-1", "G-LEARN", "SupportedBy", acp="ACP-learning"),
        Link("G3-1", "G4-3", "SupportedBy", acp="ACP-data"),
        Link("G4-1", "Sn-RMSE", "SupportedBy"),
        Link("G4-1", "Sn-VERIFY", "SupportedBy"),
        Link("G4-2", "Sn-ROBUST", "SupportedBy"),
        Link("G-LEARN", "Sn-LEARN", "SupportedBy"),
        Link("G4-3", "C4-1", "InContextOf"),
        Link("G4-3", "C4-2", "InContextOf"),
        Link("G4-3", "G5-1", "SupportedBy"),
        Link("G4-3", "G5-2", "SupportedBy"),
        Link("G5-1", "Sn-DR-REVIEW", "SupportedBy"),
        Link("G5-2", "Sn-AUDIT", "SupportedBy"),
    ]
    case = AssuranceCase(n, links)
    problems = validate(case)
    assert not problems, problems
    return case


# --- validation --------------------------------------------------------------

_SUPPORT_TARGETS = ("Goal", "Strategy", "Solution")
_CONTEXT_TARGETS = ("Context", "Assumption", "Justification")


def validate(case: AssuranceCase) -> list:
    """Structural checks; returns a list of violation strings (empty = ok)."""
    problems = []
    ids = set(case.nodes)
    for ln in case.links:
        for end in (ln.parent, ln.child):
            if end not in ids:
                problems.append(f"dangling node id {end!r}")
        if ln.parent in ids and ln.child in ids:
            child = case.nodes[ln.child]
            if ln.kind == "SupportedBy" and child.kind not in _SUPPORT_TARGETS:
                problems.append(
                    f"SupportedBy {ln.parent}->{ln.child} targets a {child.kind}")
            if ln.kind == "InContextOf" and child.kind not in _CONTEXT_TARGETS:
                problems.append(
                    f"InContextOf {ln.parent}->{ln.child} targets a {child.kind}")
            if case.nodes[ln.parent].kind == "Solution":
                problems.append(f"Solution {ln.parent} has a child link")

    # Acyclicity over SupportedBy.
    adj = {}
    for ln in case.links:
        if ln.kind == "SupportedBy":
            adj.setdefault(ln.parent, []).append(ln.child)
    state = {}

    def dfs(u):
        state[u] = 1
        for v in adj.get(u, ()):  # pragma: no branch
            if state.get(v) == 1:
                problems.append(f"cycle through {u}->{v}")
                return
            if v not in state:
                dfs(v)
        state[u] = 2

    for u in list(case.nodes):
        if u not in state:
            dfs(u)

    supported = {ln.child for ln in case.links if ln.kind == "SupportedBy"}
    roots = [nid for nid, nd in case.nodes.items()
             if nd.kind == "Goal" and nid not in supported]
    if len(roots) != 1:
        problems.append(f"expected a single root goal, found {sorted(roots)}")

    for nid, nd in case.nodes.items():
        if nd.kind == "Strategy":
            goals = [c for c in case.children(nid, "SupportedBy")
                     if c in case.nodes and case.nodes[c].kind == "Goal"]
            if not goals:
                problems.append(f"strategy {nid} has no supporting goal")
    for b in case.bindings:
        if b.solution_id not in ids:
            problems.append(f"binding references unknown solution {b.solution_id!r}")
    return problems


def root_goal(case: AssuranceCase) -> str:
    supported = {ln.child for ln in case.links if ln.kind == "SupportedBy"}
    roots = [nid for nid, nd in case.nodes.items()
             if nd.kind == "Goal" and nid not in supported]
    if len(roots) != 1:
        raise CaseStructureError(f"expected a single root goal, found {sorted(roots)}")
    return roots[0]


# --- instantiation -----------------------------------------------------------

class InstantiationError(ValueError):
    def __init__(self, unresolved):
        self.unresolved = unresolved
        detail = "; ".join(f"{nid}: {{{slot}}}" for nid, slot in unresolved)
        super().__init__(f"unresolved placeholders: {detail}")


def instantiate(case: AssuranceCase, profile: dict) -> AssuranceCase:
    """Resolve {placeholder} slots of P-marked nodes from a profile.

    profile = {"mode": "Patient"|"Population", "values": {...}}.  The mode
    fills the built-in {scope} slot and re-marks P-nodes, so patient and
    population instantiations yield different context statements.
    """
    mode = profile.get("mode")
    if mode not in ("Patient", "Population"):
        raise ValueError("profile mode must be Patient or Population")
    values = dict(profile.get("values", {}))
    values.setdefault(
        "scope",
        "an individual patient profile" if mode == "Patient"
        else "a population of patients")
    marker = "PerPatient" if mode == "Patient" else "PerPopulation"

    unresolved = []
    nodes = {}
    for nid, nd in case.nodes.items():
        if nd.instantiation == "Fixed":
            nodes[nid] = nd
            continue
        statement = nd.statement
        for slot in nd.placeholders:
            if slot in values:
                statement = statement.replace("{%s}" % slot, str(values[slot]))
            else:
                unresolved.append((nid, slot))
        nodes[nid] = replace(nd, statement=statement, instantiation=marker)
    if unresolved:
        raise InstantiationError(unresolved)
    out = AssuranceCase(nodes, list(case.links), list(case.bindings),
                        {"mode": mode, "values": values})
    return out


# --- evidence ----------------------------------------------------------------

def derive_pass(kind: str, payload: dict) -> str:
    """Tri-state support contribution of an evidence artifact."""
    if kind == "rmse_eval":
        return "positive" if payload.get("pass") else "negative"
    if kind == "verification_verdict":
        outcome = payload.get("outcome")
        return {"Proved": "positive", "Counterexample": "negative"}.get(
            outcome, "inconclusive")
    if kind == "audit_report":
        statuses = [r["status"] for r in payload.get("requirements", [])]
        if not statuses:
            return "inconclusive"
        if "Violated" in statuses:
            return "negative"
        # NotApplicable rows are non-blocking for the data-quality claim.
        if all(s in ("Met", "NotApplicable") for s in statuses):
            return "positive"
        return "inconclusive"
    if kind == "manual":
        p = payload.get("pass", "inconclusive")
        if p not in PASS_STATES:
            raise ValueError(f"manual artifact pass must be one of {PASS_STATES}")
        return p
    raise ValueError(f"unknown artifact kind {kind!r}")


def bind_evidence(case: AssuranceCase, solution_id: str, kind: str,
                  payload: dict, passed: str | None = None) -> AssuranceCase:
    node = case.node(solution_id)
    if node.kind != "Solution":
        raise ValueError(f"{solution_id} is a {node.kind}, not a Solution")
    if node.accepts and kind not in node.accepts:
        raise ValueError(
            f"{solution_id} does not accept {kind!r} artifacts (accepts {node.accepts})")
    binding = EvidenceBinding(solution_id, kind, copy.deepcopy(payload),
                              passed or derive_pass(kind, payload))
    return AssuranceCase(dict(case.nodes), list(case.links),
                         list(case.bindings) + [binding], dict(case.profile))


# --- status evaluation -------------------------------------------------------

@dataclass
class CaseStatus:
    statuses: dict  # node id -> status, for every Goal/Strategy/Solution

    def __getitem__(self, node_id: str) -> str:
        return self.statuses[node_id]

    @property
    def goals(self) -> dict:
        return dict(self.statuses)


def _combine(child_statuses) -> str:
    if any(s == "Contradicted" for s in child_statuses):
        return "Contradicted"
    if all(s == "Supported" for s in child_statuses):
        return "Supported"
    if all(s == "Undeveloped" for s in child_statuses):
        return "Undeveloped"
    return "PartiallySupported"


def evaluate_status(case: AssuranceCase) -> CaseStatus:
    """Conservative status propagation up SupportedBy links.

    A Solution is Supported when it has bindings and all are positive;
    any negative binding contradicts it.  A Goal/Strategy needs all of its
    supporting children Supported; Contradicted dominates; partial/missing
    support degrades to PartiallySupported/Undeveloped.
    """
    statuses = {}

    def solution_status(nid):
        bs = case.bindings_for(nid)
        if not bs:
            return "Undeveloped"
        if any(b.passed == "negative" for b in bs):
            return "Contradicted"
        if all(b.passed == "positive" for b in bs):
            return "Supported"
        return "PartiallySupported"

    def status_of(nid):
        if nid in statuses:
            return statuses[nid]
        nd = case.nodes[nid]
        if nd.kind == "Solution":
            s = solution_status(nid)
        else:
            children = case.children(nid, "SupportedBy")
            if not children:
                s = "Undeveloped"
            else:
                s = _combine([status_of(c) for c in children])
        statuses[nid] = s
        return s

    for nid, nd in case.nodes.items():
        if nd.kind in ("Goal", "Strategy", "Solution"):
            status_of(nid)
    return CaseStatus(statuses)


# --- persistence & rendering -------------------------------------------------

def save_case(case: AssuranceCase, path):
    doc = {
        "nodes": [
            {"id": nd.id, "kind": nd.kind, "statement": nd.statement,
             "instantiation": nd.instantiation, "developed": nd.developed,
             "accepts": list(nd.accepts)}
            for nd in case.nodes.values()
        ],
        "links": [
            {"parent": ln.parent, "child": ln.child, "kind": ln.kind,
             **({"acp": ln.acp} if ln.acp else {})}
            for ln in case.links
        ],
        "bindings": [
            {"solution": b.solution_id, "kind": b.kind,
             "payload": b.payload, "pass": b.passed}
            for b in case.bindings
        ],
        "profile": case.profile,
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False, width=88)


def load_case(path) -> AssuranceCase:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    nodes = {}
    for nd in doc.get("nodes", []):
        node = Node(nd["id"], nd["kind"], nd["statement"],
                    nd.get("instantiation", "Fixed"),
                    bool(nd.get("developed", True)),
                    tuple(nd.get("accepts", ())))
        nodes[node.id] = node
    links = [Link(ln["parent"], ln["child"], ln["kind"], ln.get("acp"))
             for ln in doc.get("links", [])]
    bindings = [EvidenceBinding(b["solution"], b["kind"], b.get("payload", {}),
                                b["pass"])
                for b in doc.get("bindings", [])]
    return AssuranceCase(nodes, links, bindings, doc.get("profile", {}) or {})


_DOT_SHAPE = {
    "Goal": "box",
    "Strategy": "parallelogram",
    "Context": "box",            # rounded via style
    "Assumption": "ellipse",
    "Justification": "ellipse",
    "Solution": "circle",
}


def export_dot(case: AssuranceCase, status: CaseStatus | None = None) -> str:
    lines = ["digraph assurance_case {", "  rankdir=TB;"]
    for nd in case.nodes.values():
        label = nd.id
        if nd.instantiation != "Fixed":
            label += " (P)"
        if not nd.developed:
            label += " [undeveloped]"
        if status is not None and nd.id in status.statuses:
            label += f"\\n{status.statuses[nd.id]}"
        text = nd.statement.replace('"', "'")
        if len(text) > 60:
            text = text[:57] + "..."
        style = ', style="rounded"' if nd.kind == "Context" else ""
        lines.append(
            f'  "{nd.id}" [shape={_DOT_SHAPE[nd.kind]}{style}, '
            f'label="{label}\\n{text}"];')
    for ln in case.links:
        attrs = "arrowhead=normal" if ln.kind == "SupportedBy" else "arrowhead=empty"
        if ln.acp:
            attrs += f', label="{ln.acp}"'
        lines.append(f'  "{ln.parent}" -> "{ln.child}" [{attrs}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
