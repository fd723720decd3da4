"""Physiology-inspired input/output properties for the glucose predictor.

A property is an implication: a precondition over the 36 network inputs
implies a postcondition over the 6 predicted BG values.  Formulas are
And/Or trees of affine atoms (optionally over the absolute value of the
affine expression).  Properties compile to verification queries: the
precondition in disjunctive normal form crossed with the De Morgan
negation of the postcondition.

Input channels use the channel-blocked flat layout of dataset.Window:
BG_in[0..11] -> 0..11, In_in[0..11] -> 12..23, M_in[0..11] -> 24..35.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import INPUT_STEPS, N_INPUTS, OUTPUT_STEPS

INPUT_CHANNELS = ("BG_in", "In_in", "M_in")
CHANNEL_RANGE = {"BG_in": INPUT_STEPS, "In_in": INPUT_STEPS, "M_in": INPUT_STEPS,
                 "BG_out": OUTPUT_STEPS}
CHANNEL_OFFSET = {"BG_in": 0, "In_in": INPUT_STEPS, "M_in": 2 * INPUT_STEPS}

PROPERTY_IDS = tuple(f"ML-RQ1.{k}" for k in range(1, 9))

# Threshold names as used in formula templates.
THRESHOLD_NAMES = ("delta", "beta1", "beta2", "beta3", "beta4", "beta5",
                   "rho1", "rho2", "alpha")


class NotSupported(ValueError):
    """Property exists in the requirement registry but cannot be checked."""


class CapacityError(RuntimeError):
    """DNF expansion exceeded the configured clause limit."""


@dataclass(frozen=True)
class VarRef:
    channel: str
    index: int

    def __post_init__(self):
        if self.channel not in CHANNEL_RANGE:
            raise ValueError(f"unknown channel {self.channel!r}")
        if not (0 <= self.index < CHANNEL_RANGE[self.channel]):
            raise ValueError(f"{self.channel} index {self.index} out of range")

    @property
    def is_input(self) -> bool:
        return self.channel != "BG_out"

    @property
    def flat_index(self) -> int:
        if not self.is_input:
            return self.index
        return CHANNEL_OFFSET[self.channel] + self.index


def _flip(cmp: str) -> str:
    return {"LE": "GT", "GT": "LE", "GE": "LT", "LT": "GE"}[cmp]


@dataclass(frozen=True)
class AffineAtom:
    """(|expr| if abs else expr) cmp bound, expr = offset + sum(c * var)."""

    terms: tuple  # of (coefficient, VarRef)
    cmp: str      # LE | GE | LT | GT
    bound: float
    abs: bool = False
    offset: float = 0.0

    def __post_init__(self):
        if not self.terms:
            raise ValueError("atom needs at least one term")
        if self.cmp not in ("LE", "GE", "LT", "GT"):
            raise ValueError(f"bad comparator {self.cmp!r}")
        if not np.isfinite(self.bound) or not np.isfinite(self.offset):
            raise ValueError("non-finite atom bound/offset")
        if any(not np.isfinite(c) for c, _ in self.terms):
            raise ValueError("non-finite coefficient")

    @property
    def over_inputs(self) -> bool:
        kinds = {v.is_input for _, v in self.terms}
        if len(kinds) > 1:
            raise ValueError("atom mixes input and output variables")
        return kinds.pop()

    def expr_value(self, values) -> float:
        return self.offset + sum(c * values[v.flat_index] for c, v in self.terms)

    def holds(self, values) -> bool:
        e = self.expr_value(values)
        if self.abs:
            e = abs(e)
        return {"LE": e <= self.bound, "GE": e >= self.bound,
                "LT": e < self.bound, "GT": e > self.bound}[self.cmp]

    def negate(self) -> "AffineAtom":
        return replace(self, cmp=_flip(self.cmp))

    def coeff_vector(self) -> np.ndarray:
        n = N_INPUTS if self.over_inputs else OUTPUT_STEPS
        vec = np.zeros(n)
        for c, v in self.terms:
            vec[v.flat_index] += c
        return vec

    def widened(self, eps: float) -> "AffineAtom":
        """Over-approximate strict comparisons by eps (sound for Proved)."""
        if self.cmp == "GT":
            return replace(self, cmp="GE", bound=self.bound - eps)
        if self.cmp == "LT":
            return replace(self, cmp="LE", bound=self.bound + eps)
        return self


@dataclass(frozen=True)
class FAtom:
    atom: AffineAtom


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


TRUE = And(())


def f_and(*parts):
    return And(tuple(parts))


def f_or(*parts):
    return Or(tuple(parts))


def atoms_of(formula):
    if isinstance(formula, FAtom):
        yield formula.atom
    elif isinstance(formula, (And, Or)):
        for it in formula.items:
            yield from atoms_of(it)
    else:
        raise TypeError(f"not a formula: {formula!r}")


def eval_formula(formula, values) -> bool:
    if isinstance(formula, FAtom):
        return formula.atom.holds(values)
    if isinstance(formula, And):
        return all(eval_formula(it, values) for it in formula.items)
    if isinstance(formula, Or):
        return any(eval_formula(it, values) for it in formula.items)
    raise TypeError(f"not a formula: {formula!r}")


def negate(formula):
    if isinstance(formula, FAtom):
        return FAtom(formula.atom.negate())
    if isinstance(formula, And):
        return Or(tuple(negate(it) for it in formula.items))
    if isinstance(formula, Or):
        return And(tuple(negate(it) for it in formula.items))
    raise TypeError(f"not a formula: {formula!r}")


def _expand_abs(formula, keep_upper_abs: bool):
    """Rewrite abs atoms into plain ones.

    |e| <= b  ->  (e <= b) and (-e <= b); strictness preserved.
    |e| >= b  ->  (e >= b) or (-e >= b), unless keep_upper_abs, in which
    case the atom stays as-is (the LP layer branches on its sign).
    """
    if isinstance(formula, And):
        return And(tuple(_expand_abs(it, keep_upper_abs) for it in formula.items))
    if isinstance(formula, Or):
        return Or(tuple(_expand_abs(it, keep_upper_abs) for it in formula.items))
    atom = formula.atom
    if not atom.abs:
        return formula
    neg_terms = tuple((-c, v) for c, v in atom.terms)
    pos = replace(atom, abs=False)
    neg = replace(atom, abs=False, terms=neg_terms, offset=-atom.offset)
    if atom.cmp in ("LE", "LT"):
        return And((FAtom(pos), FAtom(neg)))
    if keep_upper_abs:
        return formula
    return Or((FAtom(pos), FAtom(neg)))


def _dnf(formula, limit: int):
    if isinstance(formula, FAtom):
        return [[formula.atom]]
    if isinstance(formula, Or):
        clauses = []
        for it in formula.items:
            clauses.extend(_dnf(it, limit))
            if len(clauses) > limit:
                raise CapacityError(f"DNF exceeds clause limit {limit}")
        return clauses
    if isinstance(formula, And):
        clauses = [[]]
        for it in formula.items:
            sub = _dnf(it, limit)
            clauses = [c + s for c in clauses for s in sub]
            if len(clauses) > limit:
                raise CapacityError(f"DNF exceeds clause limit {limit}")
        return clauses
    raise TypeError(f"not a formula: {formula!r}")


UNIT_MODES = ("network", "physical", "mixed")


@dataclass
class Property:
    id: str
    input_box: np.ndarray       # (36, 2) [lo, hi] per input
    pre: object                 # Formula over inputs (TRUE if unconstrained)
    post: object                # Formula over outputs
    thresholds: dict = field(default_factory=dict)
    unit_mode: str = "network"

    def __post_init__(self):
        self.input_box = np.asarray(self.input_box, dtype=float)
        if self.input_box.shape != (N_INPUTS, 2):
            raise ValueError(f"input_box must be ({N_INPUTS}, 2)")
        if np.any(self.input_box[:, 0] > self.input_box[:, 1]):
            raise ValueError("input_box lo > hi")
        if self.unit_mode not in UNIT_MODES:
            raise ValueError(f"unit_mode must be one of {UNIT_MODES}")
        for a in atoms_of(self.pre):
            if not a.over_inputs:
                raise ValueError("precondition atom references outputs")
        for a in atoms_of(self.post):
            if a.over_inputs:
                raise ValueError("postcondition atom references inputs")

    def in_box(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.input_box[:, 0] - tol)
                    and np.all(x <= self.input_box[:, 1] + tol))


def evaluate_concrete(prop: Property, input_vec, output_vec) -> bool:
    """Exact boolean semantics of pre(x) => post(y)."""
    x = np.asarray(input_vec, dtype=float)
    y = np.asarray(output_vec, dtype=float)
    if not eval_formula(prop.pre, x):
        return True
    return eval_formula(prop.post, y)


def pre_holds(prop: Property, input_vec) -> bool:
    return eval_formula(prop.pre, np.asarray(input_vec, dtype=float))


# --- unit resolution -------------------------------------------------------

def _map_atom_to_scaled(atom: AffineAtom, scaler) -> AffineAtom:
    """Rewrite a physical-unit input atom over scaled variables.

    x = min + range * s, so sum(c x) cmp b becomes
    sum(c*range s) + sum(c*min) cmp b, the constant folded into offset.
    """
    terms = []
    const = atom.offset
    for c, v in atom.terms:
        k = v.flat_index
        rng = scaler.maxs[k] - scaler.mins[k]
        terms.append((c * rng, v))
        const += c * scaler.mins[k]
    return replace(atom, terms=tuple(terms), offset=const)


def _atom_is_physical(atom: AffineAtom, mode: str) -> bool:
    if mode == "physical":
        return True
    return abs(atom.bound) > 1.0 or abs(atom.offset) > 1.0


def _map_formula(formula, scaler, mode, log, path="pre"):
    if isinstance(formula, And):
        return And(tuple(_map_formula(it, scaler, mode, log, path) for it in formula.items))
    if isinstance(formula, Or):
        return Or(tuple(_map_formula(it, scaler, mode, log, path) for it in formula.items))
    atom = formula.atom
    if _atom_is_physical(atom, mode):
        log.append(f"{path}: atom with bound {atom.bound} treated as physical, scaled")
        return FAtom(_map_atom_to_scaled(atom, scaler))
    log.append(f"{path}: atom with bound {atom.bound} passed through as network-native")
    return formula


def resolve_units(prop: Property, scaler=None):
    """Return (native-units Property, per-atom decision log).

    physical: every input atom and box entry is mapped through the scaler.
    mixed: per-entry heuristic, values of magnitude > 1 are physical.
    Output atoms are never mapped (the network predicts raw mg/dL).
    """
    if prop.unit_mode == "network":
        return prop, []
    if scaler is None or not scaler.fitted:
        raise ValueError(f"{prop.id}: unit mode {prop.unit_mode!r} needs a fitted scaler")
    log = []
    box = prop.input_box.copy()
    for k in range(N_INPUTS):
        lo, hi = box[k]
        physical = prop.unit_mode == "physical" or max(abs(lo), abs(hi)) > 1.0
        if physical:
            rng = scaler.maxs[k] - scaler.mins[k]
            box[k] = [(lo - scaler.mins[k]) / rng, (hi - scaler.mins[k]) / rng]
            log.append(f"box[{k}]: [{lo},{hi}] treated as physical, scaled")
    pre = _map_formula(prop.pre, scaler, prop.unit_mode, log, "pre")
    resolved = Property(prop.id, box, pre, prop.post, dict(prop.thresholds), "network")
    return resolved, log


# --- compilation -----------------------------------------------------------

@dataclass(frozen=True)
class Query:
    pre_atoms: tuple       # conjunction of input-side AffineAtoms (no abs)
    neg_post_atoms: tuple  # conjunction of output-side atoms (abs-GE allowed)


@dataclass
class CompiledProperty:
    property_id: str
    box: np.ndarray
    queries: list
    resolved: Property     # native-units property, original strict semantics
    unit_log: list

    def query_violated_at(self, qi: int, x, y) -> bool:
        """Exact (unwidened handled by caller) satisfaction of query qi."""
        q = self.queries[qi]
        return (all(a.holds(x) for a in q.pre_atoms)
                and all(a.holds(y) for a in q.neg_post_atoms))


def compile_property(prop: Property, scaler=None,
                     clause_limit: int = 4096) -> CompiledProperty:
    """Lower a property to branch-and-bound queries over the input box.

    The union of query satisfying sets equals exactly the violation set
    {x in box : pre(x) and not post(N(x))}.  Atoms keep their original
    strictness; the verifier widens strict bounds outward (sound for a
    Proved verdict) when it needs closed sets.
    """
    resolved, log = resolve_units(prop, scaler)
    pre_expanded = _expand_abs(resolved.pre, keep_upper_abs=False)
    pre_clauses = _dnf(pre_expanded, clause_limit)
    neg_post = _expand_abs(negate(resolved.post), keep_upper_abs=True)
    np_clauses = _dnf(neg_post, clause_limit)
    if len(pre_clauses) * len(np_clauses) > clause_limit:
        raise CapacityError(
            f"{prop.id}: {len(pre_clauses)}x{len(np_clauses)} queries exceed limit {clause_limit}")
    queries = [Query(tuple(pc), tuple(nc)) for pc in pre_clauses for nc in np_clauses]
    return CompiledProperty(prop.id, resolved.input_box.copy(), queries, resolved, log)


# --- template registry -----------------------------------------------------

def _v(ch, i):
    return VarRef(ch, i)


def _atom(terms, cmp, bound, abs_=False):
    return AffineAtom(tuple(terms), cmp, float(bound), abs_)


def _need(thresholds, *names):
    missing = [n for n in names if n not in thresholds]
    if missing:
        raise ValueError(f"missing thresholds: {missing}")
    return [float(thresholds[n]) for n in names]


def default_box(bg=(0.0, 1.0), ins=(0.0, 1.0), meal=(0.0, 1.0)) -> np.ndarray:
    box = np.empty((N_INPUTS, 2))
    box[0:12] = bg
    box[12:24] = ins
    box[24:36] = meal
    return box


def instantiate(prop_id: str, thresholds: dict, box, unit_mode: str = "network") -> Property:
    """Build the registry formula for one requirement id."""
    if prop_id == "ML-RQ1.3":
        raise NotSupported("ML-RQ1.3: no available data (exercise channel not collected)")
    if prop_id not in PROPERTY_IDS:
        raise ValueError(f"unknown property id {prop_id!r}")
    th = thresholds

    if prop_id == "ML-RQ1.1":
        (delta,) = _need(th, "delta")
        pre = And(tuple(
            FAtom(_atom([(1.0, _v("BG_in", i + 1)), (-1.0, _v("BG_in", i))], "LE", delta, True))
            for i in range(INPUT_STEPS - 1)))
        post = And(tuple(
            FAtom(_atom([(1.0, _v("BG_out", j + 1)), (-1.0, _v("BG_out", j))], "LE", delta, True))
            for j in range(OUTPUT_STEPS - 1)))
    elif prop_id == "ML-RQ1.2":
        beta1, rho1 = _need(th, "beta1", "rho1")
        pre = Or(tuple(FAtom(_atom([(1.0, _v("M_in", i))], "GE", beta1))
                       for i in range(INPUT_STEPS)))
        post = Or(tuple(FAtom(_atom([(1.0, _v("BG_out", j))], "GE", rho1))
                        for j in range(OUTPUT_STEPS)))
    elif prop_id == "ML-RQ1.4":
        beta2, alpha = _need(th, "beta2", "alpha")
        pre = FAtom(_atom([(1.0, _v("In_in", 0))], "GE", beta2))
        post = Or(tuple(
            FAtom(_atom([(1.0, _v("BG_out", j)), (-1.0, _v("BG_out", 0))], "GE", alpha, True))
            for j in range(1, OUTPUT_STEPS)))
    elif prop_id == "ML-RQ1.5":
        (beta3,) = _need(th, "beta3")
        pre = Or(tuple(FAtom(_atom([(1.0, _v("M_in", i))], "GE", beta3))
                       for i in range(INPUT_STEPS)))
        post = Or(tuple(
            FAtom(_atom([(1.0, _v("BG_out", j)), (-1.0, _v("BG_out", 0))], "GT", 0.0, True))
            for j in range(1, OUTPUT_STEPS)))
    elif prop_id in ("ML-RQ1.6", "ML-RQ1.7"):
        # The registry lists the identical formula for both requirements.
        (beta4,) = _need(th, "beta4")
        pre = FAtom(_atom([(1.0, _v("In_in", 0))], "GE", beta4))
        last = OUTPUT_STEPS - 1
        in_range = And((
            FAtom(_atom([(1.0, _v("BG_out", last))], "GE", 70.0)),
            FAtom(_atom([(1.0, _v("BG_out", last))], "LE", 180.0)),
        ))
        outside = And(tuple(
            Or((FAtom(_atom([(1.0, _v("BG_out", j))], "LE", 70.0)),
                FAtom(_atom([(1.0, _v("BG_out", j))], "GE", 180.0))))
            for j in range(OUTPUT_STEPS - 1)))
        post = And((in_range, outside))
    elif prop_id == "ML-RQ1.8":
        beta5, rho2 = _need(th, "beta5", "rho2")
        pre = Or(tuple(FAtom(_atom([(1.0, _v("In_in", i))], "GE", beta5))
                       for i in range(INPUT_STEPS)))
        post = Or(tuple(FAtom(_atom([(1.0, _v("BG_out", j))], "LE", rho2))
                        for j in range(OUTPUT_STEPS)))
    else:  # pragma: no cover
        raise AssertionError(prop_id)
    return Property(prop_id, np.asarray(box, dtype=float), pre, post,
                    dict(thresholds), unit_mode)


# --- pinned reproduction suite --------------------------------------------

MIN_BASAL_SCALED = 0.006525  # minimum injected insulin, network units


def suite_properties(delta: float = 20.0, alpha: float = MIN_BASAL_SCALED) -> list:
    """The eight pinned verification queries of the reproduction suite.

    Pins (e.g. In[11] = 5 U, M[11] = 20 g) become degenerate box intervals;
    values of magnitude > 1 are physical units, resolved via the model
    scaler at compile time ('mixed' mode).
    """
    props = []

    def pinned_box(bg, in_pin=None, in_rest=alpha, meal_pin=None):
        box = default_box(bg=bg, ins=(in_rest, in_rest), meal=(0.0, 0.0))
        if in_pin is not None:
            i, val = in_pin
            box[12 + i] = (val, val)
        if meal_pin is not None:
            i, val = meal_pin
            box[24 + i] = (val, val)
        return box

    props.append(("row1", instantiate(
        "ML-RQ1.1", {"delta": delta}, default_box(bg=(130.0, 180.0)), "mixed")))
    props.append(("row2", instantiate(
        "ML-RQ1.1", {"delta": delta}, default_box(bg=(109.0, 180.0)), "mixed")))

    def out_atom(cmp, bound):
        return FAtom(_atom([(1.0, _v("BG_out", 5))], cmp, bound))

    props.append(("row3", Property(
        "ML-RQ1.8", pinned_box((212.0, 230.0), in_pin=(0, 5.0)),
        TRUE, out_atom("LE", 230.0), {"pin": 5.0}, "mixed")))
    props.append(("row4", Property(
        "ML-RQ1.8", pinned_box((211.0, 220.0), in_pin=(11, 5.0)),
        TRUE, out_atom("LE", 230.0), {"pin": 5.0}, "mixed")))
    props.append(("row5", Property(
        "ML-RQ1.8", pinned_box((212.0, 222.0), in_pin=(11, 5.0)),
        TRUE, out_atom("LT", 220.0), {"pin": 5.0}, "mixed")))
    props.append(("row6", Property(
        "ML-RQ1.2", pinned_box((180.0, 180.0), meal_pin=(11, 20.0)),
        TRUE, out_atom("GT", 210.0), {"pin": 20.0}, "mixed")))
    props.append(("row7", Property(
        "ML-RQ1.2", pinned_box((180.0, 180.0), meal_pin=(11, 20.0)),
        TRUE, out_atom("GT", 200.0), {"pin": 20.0}, "mixed")))
    props.append(("row8", Property(
        "ML-RQ1.2", pinned_box((180.0, 183.0), meal_pin=(11, 20.0)),
        TRUE, out_atom("GT", 200.0), {"pin": 20.0}, "mixed")))
    return props
