import numpy as np
import pytest

from aps_assure import dataset as ds
from aps_assure import simulator as sim
from aps_assure.nn import TrainingConfig, train


def simulate_cohort(n_per_group: int, days: int, seed: int):
    """Simulated traces (accepted only) for a small test cohort."""
    cohort = sim.sample_cohort(n_per_group, seed=seed)
    traces = []
    for i, p in enumerate(cohort):
        cfg = sim.SimConfig(days=days, seed=seed + 1000 + i)
        rng = np.random.default_rng(cfg.seed)
        tr = sim.simulate_patient(p, cfg, sim.generate_meals(cfg, rng))
        if sim.validate_trace(tr)[0]:
            traces.append(tr)
    return traces


@pytest.fixture(scope="session")
def small_traces():
    traces = simulate_cohort(n_per_group=2, days=3, seed=11)
    assert traces, "fixture cohort must yield accepted traces"
    return traces


@pytest.fixture(scope="session")
def small_model(small_traces):
    """A quickly trained model plus its splits (not accuracy-tuned)."""
    windows = ds.windows_from_traces(small_traces)
    train_set, test_set = ds.split(windows, 0.8, seed=0)
    net, history = train(train_set, TrainingConfig(
        hidden=(6, 6), epochs=4, batch_size=256, seed=0))
    return net, history, train_set, test_set
