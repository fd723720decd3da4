"""Executable data-requirement audit for the glucose-prediction dataset.

Fourteen requirements (DR.R1..DR.B1) grouped under relevance, completeness,
accuracy, and balance are checked against the trace set plus collection
context.  Each check is decidable from the data or the declared context; the
result is a report with one verdict per requirement, rendered as text or as
a JSON evidence artifact for the assurance case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

REQUIREMENT_IDS = (
    "DR.R1", "DR.R2", "DR.R3", "DR.R4", "DR.R5",
    "DR.C1", "DR.C2", "DR.C3", "DR.C4", "DR.C5",
    "DR.A1", "DR.A2", "DR.A3",
    "DR.B1",
)

STATUSES = ("Met", "PartiallyMet", "Violated", "NotApplicable", "Unknown")

HYPO_MGDL = 70.0
HYPER_MGDL = 180.0

# Age/weight coverage of the simulated cohort groups, used to decide whether
# the intended population exceeds what the traces represent.
GROUP_COVERAGE = {
    "Child": {"age": (7.0, 12.0), "weight_kg": (20.0, 60.0)},
    "Adolescent": {"age": (13.0, 19.0), "weight_kg": (35.0, 90.0)},
    "Adult": {"age": (20.0, 65.0), "weight_kg": (50.0, 118.0)},
}


@dataclass
class AuditContext:
    data_origin: str                 # Synthetic | Clinical
    diabetes_type: str
    intended_population: dict       # age_range, weight_range_kg, sexes, ethnicities?
    includes_exercise: bool = False
    includes_illness: bool | None = None
    sensor_model: str | None = None
    insulin_type: str | None = None

    def __post_init__(self):
        if self.data_origin not in ("Synthetic", "Clinical"):
            raise ValueError(f"data_origin must be Synthetic or Clinical, "
                             f"got {self.data_origin!r}")
        if self.data_origin == "Clinical" and not (self.sensor_model and self.insulin_type):
            raise ValueError("Clinical origin requires sensor_model and insulin_type")
        for key in ("age_range", "weight_range_kg"):
            if key not in self.intended_population:
                raise ValueError(f"intended_population missing {key!r}")

    @classmethod
    def from_json(cls, doc: dict) -> "AuditContext":
        return cls(
            data_origin=doc["data_origin"],
            diabetes_type=doc["diabetes_type"],
            intended_population=doc["intended_population"],
            includes_exercise=bool(doc.get("includes_exercise", False)),
            includes_illness=doc.get("includes_illness"),
            sensor_model=doc.get("sensor_model"),
            insulin_type=doc.get("insulin_type"),
        )


@dataclass
class DesignSpec:
    diabetes_type: str = "T1D"
    sample_period_min: int = 5
    insulin_daily_limit_u: float = 100.0
    imbalance_threshold: float = 20.0

    def __post_init__(self):
        if self.sample_period_min <= 0:
            raise ValueError("sample_period_min must be positive")
        if self.insulin_daily_limit_u <= 0:
            raise ValueError("insulin_daily_limit_u must be positive")
        if self.imbalance_threshold < 1.0:
            raise ValueError("imbalance_threshold must be >= 1")

    @classmethod
    def from_json(cls, doc: dict) -> "DesignSpec":
        known = {k: doc[k] for k in
                 ("diabetes_type", "sample_period_min",
                  "insulin_daily_limit_u", "imbalance_threshold") if k in doc}
        return cls(**known)


@dataclass(frozen=True)
class GlycemicFractions:
    hypo: float      # BG < 70
    in_range: float  # 70 <= BG <= 180
    hyper: float     # BG > 180

    def __post_init__(self):
        if abs(self.hypo + self.in_range + self.hyper - 1.0) > 1e-9:
            raise ValueError("fractions must sum to 1")


@dataclass
class RequirementVerdict:
    id: str
    status: str
    rationale: str
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in REQUIREMENT_IDS:
            raise ValueError(f"unknown requirement id {self.id!r}")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")


@dataclass
class AuditReport:
    verdicts: list
    fractions: GlycemicFractions
    group_counts: dict

    def verdict(self, req_id: str) -> RequirementVerdict:
        for v in self.verdicts:
            if v.id == req_id:
                return v
        raise KeyError(req_id)

    def to_json(self) -> dict:
        return {
            "kind": "audit_report",
            "fractions": {"hypo": self.fractions.hypo,
                          "in_range": self.fractions.in_range,
                          "hyper": self.fractions.hyper},
            "group_counts": dict(self.group_counts),
            "requirements": [
                {"id": v.id, "status": v.status, "rationale": v.rationale,
                 "metrics": v.metrics}
                for v in self.verdicts
            ],
        }


def glycemic_fractions(traces) -> GlycemicFractions:
    """Class fractions over every BG sample of every trace."""
    bgs = np.concatenate([np.asarray(tr.bg, dtype=float) for tr in traces])
    if bgs.size == 0:
        raise ValueError("no BG samples")
    hypo = float(np.mean(bgs < HYPO_MGDL))
    hyper = float(np.mean(bgs > HYPER_MGDL))
    return GlycemicFractions(hypo, 1.0 - hypo - hyper, hyper)


def _nonzero_ratio(counts) -> float:
    """max/min ratio over the non-empty classes (1.0 if fewer than two)."""
    present = [c for c in counts if c > 0]
    if len(present) < 2:
        return 1.0
    return max(present) / min(present)


def _range_covered(intended, covered) -> bool:
    return covered[0] <= intended[0] and intended[1] <= covered[1]


def _check_schema(traces, period: int):
    problems = []
    for tr in traces:
        t = np.asarray(tr.t)
        if t.size < 2 or np.any(np.diff(t) != period):
            problems.append(f"{tr.patient_id}: not on a {period}-minute grid")
        for name in ("bg", "insulin", "meal"):
            if len(getattr(tr, name)) != len(t):
                problems.append(f"{tr.patient_id}: column {name} length mismatch")
    return problems


def _check_recording(traces):
    problems = []
    for tr in traces:
        arrays = {"bg": tr.bg, "insulin": tr.insulin, "meal": tr.meal}
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=float)
            if not np.isfinite(arr).all():
                problems.append(f"{tr.patient_id}: non-finite {name} value")
        if np.any(np.asarray(tr.insulin) < 0) or np.any(np.asarray(tr.meal) < 0):
            problems.append(f"{tr.patient_id}: negative insulin/meal")
    return problems


def _daily_insulin_excess(traces, period: int, limit: float):
    """(patient_id, day, total) rows where a patient-day exceeds the limit."""
    per_day = 1440 // period
    offenders = []
    for tr in traces:
        ins = np.asarray(tr.insulin, dtype=float)
        n_days = len(ins) // per_day
        for d in range(max(n_days, 1)):
            total = float(ins[d * per_day:(d + 1) * per_day].sum())
            if total > limit:
                offenders.append({"patient": tr.patient_id, "day": d, "total_u": total})
    return offenders


def audit(traces, context: AuditContext, design: DesignSpec) -> AuditReport:
    """Pure function of (traces, context, design spec) -> full report."""
    traces = list(traces)
    if not traces:
        raise ValueError("empty trace set")
    synthetic = context.data_origin == "Synthetic"
    fr = glycemic_fractions(traces)
    groups = {}
    for tr in traces:
        groups[tr.group] = groups.get(tr.group, 0) + 1
    verdicts = []
    add = verdicts.append

    na = "not applicable to synthetic data (no physical sensor deployment)"
    if synthetic:
        add(RequirementVerdict("DR.R1", "NotApplicable", na))
        add(RequirementVerdict("DR.A1", "NotApplicable", na))
        add(RequirementVerdict(
            "DR.R3", "NotApplicable",
            "not applicable to synthetic data (no physical insulin product)"))
        add(RequirementVerdict(
            "DR.C2", "NotApplicable",
            "not applicable to synthetic data (no sensor positioning variation)"))
    else:
        add(RequirementVerdict("DR.R1", "Met",
                               f"sensor model declared: {context.sensor_model}",
                               {"sensor_model": context.sensor_model}))
        add(RequirementVerdict("DR.A1", "Met",
                               f"sensor model declared: {context.sensor_model}"))
        add(RequirementVerdict("DR.R3", "Met",
                               f"insulin type declared: {context.insulin_type}",
                               {"insulin_type": context.insulin_type}))
        add(RequirementVerdict("DR.C2", "Unknown",
                               "sensor positioning variation not recorded in traces"))

    schema_problems = _check_schema(traces, design.sample_period_min)
    add(RequirementVerdict(
        "DR.R2",
        "Met" if not schema_problems else "Violated",
        f"trace schema {'matches' if not schema_problems else 'deviates from'} "
        f"the CGM {design.sample_period_min}-minute sample format",
        {"problems": schema_problems}))

    type_ok = context.diabetes_type == design.diabetes_type
    add(RequirementVerdict(
        "DR.R4",
        "Met" if type_ok else "Violated",
        f"data diabetes type {context.diabetes_type!r} "
        f"{'matches' if type_ok else 'differs from'} design type {design.diabetes_type!r}",
        {"data_type": context.diabetes_type, "design_type": design.diabetes_type}))

    # Population coverage: union of the coverage of groups present in traces.
    covered = [GROUP_COVERAGE[g] for g in groups if g in GROUP_COVERAGE]
    if covered:
        age_cov = (min(c["age"][0] for c in covered), max(c["age"][1] for c in covered))
        wt_cov = (min(c["weight_kg"][0] for c in covered),
                  max(c["weight_kg"][1] for c in covered))
    else:
        age_cov = wt_cov = (np.inf, -np.inf)
    age_ok = _range_covered(context.intended_population["age_range"], age_cov)
    wt_ok = _range_covered(context.intended_population["weight_range_kg"], wt_cov)
    sexes = context.intended_population.get("sexes")
    ethnicities = context.intended_population.get("ethnicities")
    demo = {
        "age_covered": age_ok, "weight_covered": wt_ok,
        "age_coverage": list(age_cov), "weight_coverage_kg": list(wt_cov),
        "sex": "Unknown", "ethnicity": "Unknown",
        "groups_present": sorted(groups),
    }
    pop_ok = age_ok and wt_ok
    pop_rationale = (
        "trace groups cover the intended age/weight ranges"
        if pop_ok else
        "intended population exceeds the age/weight coverage of the trace groups"
    ) + "; sex and ethnicity are not recorded for simulated patients"
    _ = (sexes, ethnicities)  # demographic intent recorded but not checkable
    add(RequirementVerdict("DR.R5", "Met" if pop_ok else "Violated",
                           pop_rationale, dict(demo)))

    meal_counts = [int(np.count_nonzero(np.asarray(tr.meal) > 0)) for tr in traces]
    meals_vary = sum(meal_counts) > 0
    if meals_vary and not context.includes_exercise:
        add(RequirementVerdict(
            "DR.C1", "PartiallyMet",
            "meal amounts and times vary, but the data includes no exercise information",
            {"meal_events": sum(meal_counts)}))
    elif meals_vary:
        add(RequirementVerdict("DR.C1", "Met",
                               "meals vary and exercise information is present",
                               {"meal_events": sum(meal_counts)}))
    else:
        add(RequirementVerdict("DR.C1", "Violated", "no meal events in the traces"))

    add(RequirementVerdict("DR.C3", "Met" if pop_ok else "Violated",
                           pop_rationale, dict(demo)))

    c4_ok = fr.hypo > 0.0 and fr.hyper > 0.0
    add(RequirementVerdict(
        "DR.C4",
        "Met" if c4_ok else "Violated",
        "hypo- and hyperglycemic excursions are "
        + ("both present" if c4_ok else "not both present"),
        {"hypo": fr.hypo, "hyper": fr.hyper, "in_range": fr.in_range}))

    if context.includes_illness is None:
        add(RequirementVerdict(
            "DR.C5", "Unknown",
            "whether the generation model considers illness is not declared"))
    else:
        add(RequirementVerdict(
            "DR.C5",
            "Met" if context.includes_illness else "Violated",
            "illness periods " + ("are" if context.includes_illness else "are not")
            + " represented in the data"))

    rec_problems = _check_recording(traces)
    add(RequirementVerdict(
        "DR.A2",
        "Met" if not rec_problems else "Violated",
        "every sample is finite with non-negative insulin/meal and BG recorded "
        "each period" if not rec_problems else "recording defects found",
        {"problems": rec_problems}))

    offenders = _daily_insulin_excess(traces, design.sample_period_min,
                                      design.insulin_daily_limit_u)
    add(RequirementVerdict(
        "DR.A3",
        "Met" if not offenders else "Violated",
        f"patient-day insulin totals {'stay within' if not offenders else 'exceed'} "
        f"the {design.insulin_daily_limit_u} U daily limit",
        {"offenders": offenders, "limit_u": design.insulin_daily_limit_u}))

    # Balance over monitored classes: glycemic classes and subject groups.
    # Empty classes are excluded (absence is DR.C4's concern, not imbalance).
    gly_ratio = _nonzero_ratio([fr.hypo, fr.in_range, fr.hyper])
    grp_ratio = _nonzero_ratio(list(groups.values()))
    worst = max(gly_ratio, grp_ratio)
    add(RequirementVerdict(
        "DR.B1",
        "Violated" if worst > design.imbalance_threshold else "Met",
        f"worst class ratio {worst:.1f} "
        f"{'exceeds' if worst > design.imbalance_threshold else 'is within'} "
        f"the imbalance threshold {design.imbalance_threshold:g}",
        {"glycemic_ratio": gly_ratio, "group_ratio": grp_ratio,
         "threshold": design.imbalance_threshold}))

    order = {rid: k for k, rid in enumerate(REQUIREMENT_IDS)}
    verdicts.sort(key=lambda v: order[v.id])
    assert [v.id for v in verdicts] == list(REQUIREMENT_IDS)
    return AuditReport(verdicts, fr, groups)


def render_report(report: AuditReport, format: str = "text") -> str:
    if format == "json":
        return json.dumps(report.to_json(), indent=2) + "\n"
    if format != "text":
        raise ValueError(f"unknown format {format!r}")
    lines = [
        f"glycemic fractions: hypo={report.fractions.hypo:.4f} "
        f"in_range={report.fractions.in_range:.4f} hyper={report.fractions.hyper:.4f}",
        "groups: " + ", ".join(f"{g}={n}" for g, n in sorted(report.group_counts.items())),
    ]
    for v in report.verdicts:
        metrics = ""
        if v.metrics:
            small = {k: val for k, val in v.metrics.items()
                     if isinstance(val, (int, float, str, bool))}
            if small:
                metrics = "  [" + ", ".join(f"{k}={val}" for k, val in small.items()) + "]"
        lines.append(f"{v.id:7s} {v.status:14s} {v.rationale}{metrics}")
    return "\n".join(lines) + "\n"
