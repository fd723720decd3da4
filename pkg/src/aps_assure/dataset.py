"""Sliding-window supervised dataset over simulator traces, plus metrics.

A window is one hour of history (12 samples of BG/insulin/meal at 5-minute
spacing) predicting the next 30 minutes of BG (6 samples).  The flat network
input layout is channel-blocked: indices 0..11 BG, 12..23 insulin,
24..35 meal, each oldest -> newest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

INPUT_STEPS = 12
OUTPUT_STEPS = 6
WINDOW_ROWS = INPUT_STEPS + OUTPUT_STEPS
N_INPUTS = 3 * INPUT_STEPS

BG_SLICE = slice(0, INPUT_STEPS)
INSULIN_SLICE = slice(INPUT_STEPS, 2 * INPUT_STEPS)
MEAL_SLICE = slice(2 * INPUT_STEPS, 3 * INPUT_STEPS)


@dataclass
class Dataset:
    inputs: np.ndarray      # (n, 36) physical units, channel-blocked
    targets: np.ndarray     # (n, 6) mg/dL, nearest -> farthest horizon
    provenance: list        # (patient_id, start_row) per window

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if len(self.provenance) != len(self.inputs):
            raise ValueError("provenance length must equal window count")
        if len(self.inputs) and (self.inputs.shape[1] != N_INPUTS or self.targets.shape[1] != OUTPUT_STEPS):
            raise ValueError("window shape mismatch")

    def __len__(self):
        return len(self.inputs)

    def as_arrays(self):
        return self.inputs, self.targets

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.inputs.tobytes())
        h.update(self.targets.tobytes())
        return h.hexdigest()[:16]

    @staticmethod
    def concatenate(parts) -> "Dataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            return Dataset(np.empty((0, N_INPUTS)), np.empty((0, OUTPUT_STEPS)), [])
        return Dataset(
            np.concatenate([p.inputs for p in parts]),
            np.concatenate([p.targets for p in parts]),
            [pr for p in parts for pr in p.provenance],
        )


def make_windows(trace) -> Dataset:
    """Stride-1 windows over one trace; never mixes patients."""
    n = len(trace)
    count = max(0, n - WINDOW_ROWS + 1)
    if count == 0:
        return Dataset(np.empty((0, N_INPUTS)), np.empty((0, OUTPUT_STEPS)), [])
    idx = np.arange(count)[:, None] + np.arange(INPUT_STEPS)[None, :]
    bg = trace.bg[idx]
    ins = trace.insulin[idx]
    meal = trace.meal[idx]
    inputs = np.concatenate([bg, ins, meal], axis=1)
    tidx = np.arange(count)[:, None] + INPUT_STEPS + np.arange(OUTPUT_STEPS)[None, :]
    targets = trace.bg[tidx]
    prov = [(trace.patient_id, int(k)) for k in range(count)]
    return Dataset(inputs, targets, prov)


def windows_from_traces(traces) -> Dataset:
    return Dataset.concatenate([make_windows(tr) for tr in traces])


def split(dataset: Dataset, fraction: float = 0.8, seed: int = 0,
          by_patient: bool = False):
    """Seeded shuffle split into (train, test); disjoint and exhaustive.

    by_patient holds out whole patients instead of windows (robustness runs).
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    if by_patient:
        patients = sorted({pid for pid, _ in dataset.provenance})
        order = list(rng.permutation(patients))
        n_train = int(fraction * len(order))
        train_ids = set(order[:n_train])
        mask = np.array([pid in train_ids for pid, _ in dataset.provenance])
    else:
        perm = rng.permutation(n)
        n_train = int(fraction * n)
        mask = np.zeros(n, dtype=bool)
        mask[perm[:n_train]] = True

    def subset(m):
        return Dataset(dataset.inputs[m], dataset.targets[m],
                       [p for p, keep in zip(dataset.provenance, m) if keep])

    return subset(mask), subset(~mask)


def rmse(net, dataset: Dataset) -> float:
    """Pooled RMSE over all windows and all 6 horizons, mg/dL."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    pred = net.forward(dataset.inputs)
    return float(np.sqrt(np.mean((pred - dataset.targets) ** 2)))


def per_horizon_rmse(net, dataset: Dataset) -> np.ndarray:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    pred = net.forward(dataset.inputs)
    return np.sqrt(np.mean((pred - dataset.targets) ** 2, axis=0))


def check_ml_rq1(net, test_set: Dataset, threshold: float = 12.0,
                 model_hash: str = "") -> dict:
    """Pass iff pooled test RMSE is strictly below the threshold.

    Returns the evidence artifact consumed by the assurance-case module.
    """
    value = rmse(net, test_set)
    return {
        "kind": "rmse",
        "value": value,
        "threshold": threshold,
        "pass": bool(value < threshold),
        "per_horizon": [float(v) for v in per_horizon_rmse(net, test_set)],
        "dataset_hash": test_set.content_hash(),
        "model_hash": model_hash,
    }


def save_windows(dataset: Dataset, path):
    np.savez(path, inputs=dataset.inputs, targets=dataset.targets,
             provenance=json.dumps(dataset.provenance))


def load_windows(path) -> Dataset:
    data = np.load(path, allow_pickle=False)
    prov = [(pid, int(row)) for pid, row in json.loads(str(data["provenance"]))]
    return Dataset(data["inputs"], data["targets"], prov)
