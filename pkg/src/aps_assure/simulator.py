"""Virtual-patient glucose-insulin simulator.

A Bergman-style minimal model (plasma glucose G, remote insulin action X,
plasma insulin I) extended with a one-compartment gut absorption state Q for
meals, integrated with fixed-step explicit Euler.  A basic basal-bolus
controller delivers a constant basal rate plus carb-ratio boluses at
announced meals.  Traces are sampled on a 5-minute grid; negative-BG traces
are rejected rather than clamped.

State units: G mg/dL, X U (excess remote insulin), I U (plasma insulin),
Q g (carbs in the gut).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GROUPS = ("Adolescent", "Adult", "Child")

# Per-group parameter ranges.  Calibrated so that basal-only runs sit at the
# patient's basal_glucose equilibrium, large meals push BG above 180 mg/dL,
# and aggressive boluses on light patients can drive BG negative (such traces
# are rejected downstream).
GROUP_RANGES = {
    #                weight      SI (mg/dL/U)  basal U/hr   carb g/U
    "Adolescent": {"weight": (35.0, 90.0), "si": (40.0, 80.0), "basal": (0.6, 1.2), "cr": (10.0, 15.0)},
    "Adult":      {"weight": (50.0, 118.0), "si": (30.0, 60.0), "basal": (0.8, 1.4), "cr": (8.0, 12.0)},
    "Child":      {"weight": (20.0, 60.0), "si": (60.0, 100.0), "basal": (0.3, 0.7), "cr": (15.0, 25.0)},
}

COMMON_RANGES = {
    "glucose_effectiveness": (0.008, 0.018),   # 1/min, pull toward basal glucose
    "carb_bioavailability": (0.8, 1.0),
    "gut_absorption_rate": (0.02, 0.04),       # 1/min
    "insulin_action_rate": (0.015, 0.03),      # 1/min
    "insulin_clearance_rate": (0.1, 0.2),      # 1/min
    "basal_glucose": (100.0, 140.0),
}

# mg/dL rise per gram of absorbed carbs, per kg of body weight.
CARB_GAIN_MGDL_KG_PER_G = 280.0


@dataclass(frozen=True)
class PatientParams:
    patient_id: str
    group: str
    body_weight: float
    insulin_sensitivity: float
    glucose_effectiveness: float
    carb_bioavailability: float
    gut_absorption_rate: float
    insulin_action_rate: float
    insulin_clearance_rate: float
    basal_rate: float
    carb_ratio: float
    basal_glucose: float

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown group {self.group!r}")
        for name in (
            "glucose_effectiveness", "gut_absorption_rate", "insulin_action_rate",
            "insulin_clearance_rate", "basal_rate", "carb_ratio", "insulin_sensitivity",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (0 < self.carb_bioavailability <= 1):
            raise ValueError("carb_bioavailability must be in (0, 1]")
        if not (90 <= self.basal_glucose <= 140):
            raise ValueError("basal_glucose must be in [90, 140]")
        lo, hi = GROUP_RANGES[self.group]["weight"]
        if not (lo <= self.body_weight <= hi):
            raise ValueError(f"{self.group} weight must be in [{lo}, {hi}] kg")


@dataclass(frozen=True)
class MealEvent:
    time: int  # minutes since trace start, 1-minute grid
    carbs: float

    def __post_init__(self):
        if self.carbs <= 0:
            raise ValueError("carbs must be > 0")
        if self.time < 0 or int(self.time) != self.time:
            raise ValueError("meal time must be a non-negative whole minute")


@dataclass(frozen=True)
class MealWindow:
    start_min: int  # clock minutes into the day
    end_min: int
    carbs_lo: float
    carbs_hi: float
    probability: float = 0.95


DEFAULT_MEAL_WINDOWS = (
    MealWindow(7 * 60, 9 * 60, 20.0, 80.0),
    MealWindow(12 * 60, 14 * 60, 20.0, 80.0),
    MealWindow(18 * 60, 20 * 60, 20.0, 80.0),
)


@dataclass
class SimConfig:
    days: int = 40
    sample_period: int = 5
    integration_step: int = 1
    meal_windows: tuple = DEFAULT_MEAL_WINDOWS
    announce_meals: bool = True
    sensor_noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.sample_period % self.integration_step != 0:
            raise ValueError("sample_period must be a multiple of integration_step")


@dataclass
class SimTrace:
    patient_id: str
    group: str
    weight_kg: float
    seed: int
    t: np.ndarray        # minutes, sample grid
    bg: np.ndarray       # mg/dL
    insulin: np.ndarray  # U delivered over the preceding sample period
    meal: np.ndarray     # g ingested over the preceding sample period

    def __len__(self):
        return len(self.t)


def sample_cohort(n_per_group: int, seed: int) -> list:
    """Draw n_per_group virtual patients per group, uniformly within ranges."""
    rng = np.random.default_rng(seed)
    cohort = []
    for group in GROUPS:
        gr = GROUP_RANGES[group]
        for k in range(n_per_group):
            def u(lo_hi):
                return float(rng.uniform(*lo_hi))
            cohort.append(PatientParams(
                patient_id=f"{group.lower()}#{k + 1:03d}",
                group=group,
                body_weight=u(gr["weight"]),
                insulin_sensitivity=u(gr["si"]),
                glucose_effectiveness=u(COMMON_RANGES["glucose_effectiveness"]),
                carb_bioavailability=u(COMMON_RANGES["carb_bioavailability"]),
                gut_absorption_rate=u(COMMON_RANGES["gut_absorption_rate"]),
                insulin_action_rate=u(COMMON_RANGES["insulin_action_rate"]),
                insulin_clearance_rate=u(COMMON_RANGES["insulin_clearance_rate"]),
                basal_rate=u(gr["basal"]),
                carb_ratio=u(gr["cr"]),
                basal_glucose=u(COMMON_RANGES["basal_glucose"]),
            ))
    return cohort


def generate_meals(cfg: SimConfig, rng) -> list:
    """At most one meal per configured window per day, carbs uniform."""
    meals = []
    for day in range(cfg.days):
        for w in cfg.meal_windows:
            if rng.random() >= w.probability:
                continue
            t = day * 1440 + int(rng.integers(w.start_min, w.end_min + 1))
            carbs = float(rng.uniform(w.carbs_lo, w.carbs_hi))
            meals.append(MealEvent(time=t, carbs=carbs))
    return meals


def basal_bolus_controller(p: PatientParams, dt_min: float, announced_meal: float) -> float:
    """Insulin (U) to deliver over a dt_min step: basal plus any meal bolus."""
    dose = p.basal_rate * dt_min / 60.0
    if announced_meal > 0:
        dose += announced_meal / p.carb_ratio
    return max(dose, 0.0)


def simulate_patient(p: PatientParams, cfg: SimConfig, meals) -> SimTrace:
    """Fixed-step Euler integration; one trace row per sample period.

    Insulin/meal trace columns hold totals over the preceding sample period,
    so their sums conserve controller output and meal carbs exactly.
    """
    dt = float(cfg.integration_step)
    total_min = cfg.days * 1440
    n_steps = int(total_min / dt)
    steps_per_sample = int(cfg.sample_period / dt)
    n_rows = cfg.days * (1440 // cfg.sample_period) + 1

    meal_at = {}
    for m in meals:
        if m.time >= total_min:
            raise ValueError(f"meal at t={m.time} outside the {cfg.days}-day horizon")
        meal_at[m.time] = meal_at.get(m.time, 0.0) + m.carbs

    # Equilibrium: basal-only delivery holds I at i_basal, X at 0, G at Gb.
    i_basal = p.basal_rate / 60.0 / p.insulin_clearance_rate
    g = p.basal_glucose
    x = 0.0
    i_plasma = i_basal
    q_gut = 0.0

    carb_gain = CARB_GAIN_MGDL_KG_PER_G * p.carb_bioavailability / p.body_weight
    insulin_gain = p.insulin_sensitivity * p.insulin_clearance_rate

    noise_rng = np.random.default_rng(cfg.seed) if cfg.sensor_noise_sd > 0 else None

    t_out = np.arange(n_rows) * cfg.sample_period
    bg_out = np.empty(n_rows)
    ins_out = np.zeros(n_rows)
    meal_out = np.zeros(n_rows)
    bg_out[0] = g

    ins_acc = 0.0
    meal_acc = 0.0
    for step in range(n_steps):
        t = step * dt
        carbs = meal_at.get(int(t), 0.0)
        dose = basal_bolus_controller(p, dt, carbs if cfg.announce_meals else 0.0)
        ins_acc += dose
        meal_acc += carbs

        dg = (-p.glucose_effectiveness * (g - p.basal_glucose)
              - insulin_gain * x
              + carb_gain * p.gut_absorption_rate * q_gut)
        dx = -p.insulin_action_rate * (x - (i_plasma - i_basal))
        di = -p.insulin_clearance_rate * i_plasma + dose / dt
        dq = -p.gut_absorption_rate * q_gut

        g += dt * dg
        x += dt * dx
        i_plasma += dt * di
        q_gut += dt * dq + carbs

        if not all(map(np.isfinite, (g, x, i_plasma, q_gut))):
            raise FloatingPointError(f"non-finite simulator state at t={t + dt} min")

        if (step + 1) % steps_per_sample == 0:
            row = (step + 1) // steps_per_sample
            reading = g
            if noise_rng is not None:
                reading += noise_rng.normal(0.0, cfg.sensor_noise_sd)
            bg_out[row] = reading
            ins_out[row] = ins_acc
            meal_out[row] = meal_acc
            ins_acc = 0.0
            meal_acc = 0.0

    return SimTrace(p.patient_id, p.group, p.body_weight, cfg.seed,
                    t_out, bg_out, ins_out, meal_out)


def validate_trace(trace: SimTrace):
    """Returns (True, "") for acceptable traces, else (False, reason).

    Mirrors the sanitization rule: traces with negative BG anywhere, or any
    non-finite field, are excluded from the dataset.
    """
    for name, arr in (("bg", trace.bg), ("insulin", trace.insulin), ("meal", trace.meal)):
        bad = np.where(~np.isfinite(arr))[0]
        if bad.size:
            return False, f"non-finite {name} at t={int(trace.t[bad[0]])}"
    neg = np.where(trace.bg < 0)[0]
    if neg.size:
        return False, f"negative BG at t={int(trace.t[neg[0]])}"
    return True, ""


TRACE_HEADER = ["t_min", "bg_mgdl", "insulin_U", "meal_g"]


def trace_to_csv(trace: SimTrace) -> str:
    buf = io.StringIO()
    buf.write(f"# patient_id,{trace.patient_id}\n")
    buf.write(f"# group,{trace.group}\n")
    buf.write(f"# weight_kg,{trace.weight_kg!r}\n")
    buf.write(f"# seed,{trace.seed}\n")
    writer = csv.writer(buf)
    writer.writerow(TRACE_HEADER)
    for k in range(len(trace)):
        writer.writerow([int(trace.t[k]), repr(float(trace.bg[k])),
                         repr(float(trace.insulin[k])), repr(float(trace.meal[k]))])
    return buf.getvalue()


def export_traces(traces, out_dir) -> list:
    """One CSV per patient plus a cohort manifest; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    manifest = []
    for tr in traces:
        fname = tr.patient_id.replace("#", "_") + ".csv"
        path = out_dir / fname
        path.write_text(trace_to_csv(tr))
        paths.append(path)
        manifest.append({
            "patient_id": tr.patient_id, "group": tr.group,
            "weight_kg": tr.weight_kg, "seed": tr.seed,
            "file": fname, "rows": len(tr),
        })
    (out_dir / "cohort.json").write_text(json.dumps({"patients": manifest}, indent=2))
    return paths


def import_trace(path) -> SimTrace:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(",")
                meta[key.strip()] = value.strip()
            elif line.startswith("t_min"):
                continue
            else:
                rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ValueError(f"{path}: no trace rows")
    arr = np.array(rows)
    return SimTrace(
        patient_id=meta.get("patient_id", Path(path).stem),
        group=meta.get("group", "Adult"),
        weight_kg=float(meta.get("weight_kg", "70.0")),
        seed=int(meta.get("seed", "0")),
        t=arr[:, 0], bg=arr[:, 1], insulin=arr[:, 2], meal=arr[:, 3],
    )


def import_cohort(trace_dir) -> list:
    """Load every accepted trace CSV in a directory (manifest optional)."""
    trace_dir = Path(trace_dir)
    paths = sorted(p for p in trace_dir.glob("*.csv"))
    if not paths:
        raise ValueError(f"no trace CSVs in {trace_dir}")
    return [import_trace(p) for p in paths]
