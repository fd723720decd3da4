import numpy as np
import pytest

from aps_assure import simulator as sim


def make_patient(**over):
    base = dict(
        patient_id="adult#001", group="Adult", body_weight=70.0,
        insulin_sensitivity=3.0e-4, glucose_effectiveness=0.02,
        carb_bioavailability=0.8, gut_absorption_rate=0.03,
        insulin_action_rate=0.02, insulin_clearance_rate=0.12,
        basal_rate=1.0, carb_ratio=12.0, basal_glucose=120.0,
    )
    base.update(over)
    return sim.PatientParams(**base)


class TestTraceShape:
    @pytest.mark.parametrize("days,rows", [(1, 289), (5, 1441), (40, 11521)])
    def test_row_count_law(self, days, rows):
        cfg = sim.SimConfig(days=days, seed=0)
        tr = sim.simulate_patient(make_patient(), cfg, [])
        assert len(tr) == rows
        assert tr.t[0] == 0 and tr.t[-1] == days * 1440
        assert np.all(np.diff(tr.t) == cfg.sample_period)

    def test_deterministic(self):
        p = make_patient()
        cfg = sim.SimConfig(days=2, seed=5)
        meals = sim.generate_meals(cfg, np.random.default_rng(5))
        a = sim.simulate_patient(p, cfg, meals)
        b = sim.simulate_patient(p, cfg, meals)
        assert np.array_equal(a.bg, b.bg)
        assert np.array_equal(a.insulin, b.insulin)
        assert np.array_equal(a.meal, b.meal)


class TestDynamics:
    def test_basal_equilibrium_without_meals(self):
        p = make_patient()
        tr = sim.simulate_patient(p, sim.SimConfig(days=2, seed=0), [])
        assert np.max(np.abs(tr.bg - p.basal_glucose)) < 1e-6

    def test_meal_raises_bg_within_two_hours(self):
        p = make_patient()
        meals = [sim.MealEvent(time=720, carbs=50.0)]
        tr = sim.simulate_patient(p, sim.SimConfig(days=1, seed=0), meals)
        window = (tr.t > 720) & (tr.t <= 840)
        assert tr.bg[window].max() > p.basal_glucose + 20
        # before the meal: still at equilibrium
        assert np.max(np.abs(tr.bg[tr.t <= 720] - p.basal_glucose)) < 1e-6

    def test_larger_meal_larger_peak(self):
        p = make_patient()
        peaks = []
        for carbs in (20.0, 60.0):
            tr = sim.simulate_patient(
                p, sim.SimConfig(days=1, seed=0, announce_meals=False),
                [sim.MealEvent(time=600, carbs=carbs)])
            peaks.append(tr.bg.max())
        assert peaks[1] > peaks[0]

    def test_insulin_and_meal_conservation(self):
        p = make_patient()
        cfg = sim.SimConfig(days=3, seed=7)
        meals = sim.generate_meals(cfg, np.random.default_rng(7))
        tr = sim.simulate_patient(p, cfg, meals)
        carbs_total = sum(m.carbs for m in meals)
        assert tr.meal.sum() == pytest.approx(carbs_total, rel=1e-12)
        expected_insulin = p.basal_rate * 24 * cfg.days + carbs_total / p.carb_ratio
        assert tr.insulin.sum() == pytest.approx(expected_insulin, rel=1e-9)

    def test_bolus_only_when_announced(self):
        p = make_patient()
        meals = [sim.MealEvent(time=600, carbs=40.0)]
        announced = sim.simulate_patient(
            p, sim.SimConfig(days=1, seed=0, announce_meals=True), meals)
        silent = sim.simulate_patient(
            p, sim.SimConfig(days=1, seed=0, announce_meals=False), meals)
        assert announced.insulin.sum() > silent.insulin.sum()
        # unannounced meals leave BG higher
        assert silent.bg.max() > announced.bg.max()

    def test_meal_outside_horizon_rejected(self):
        with pytest.raises(ValueError):
            sim.simulate_patient(make_patient(), sim.SimConfig(days=1, seed=0),
                                 [sim.MealEvent(time=2000, carbs=10.0)])


class TestController:
    def test_basal_dose_rate(self):
        p = make_patient(basal_rate=1.2)
        assert sim.basal_bolus_controller(p, 60.0, 0.0) == pytest.approx(1.2)
        assert sim.basal_bolus_controller(p, 1.0, 0.0) == pytest.approx(1.2 / 60)

    def test_bolus_added(self):
        p = make_patient(carb_ratio=10.0)
        dose = sim.basal_bolus_controller(p, 1.0, 50.0)
        assert dose == pytest.approx(p.basal_rate / 60 + 5.0)


class TestCohort:
    def test_groups_and_ranges(self):
        cohort = sim.sample_cohort(4, seed=1)
        assert len(cohort) == 12
        by_group = {}
        for p in cohort:
            by_group.setdefault(p.group, []).append(p)
            lo, hi = sim.GROUP_RANGES[p.group]["weight"]
            assert lo <= p.body_weight <= hi
        assert set(by_group) == set(sim.GROUPS)
        assert all(len(v) == 4 for v in by_group.values())

    def test_deterministic(self):
        a = sim.sample_cohort(2, seed=3)
        b = sim.sample_cohort(2, seed=3)
        assert a == b

    def test_param_validation(self):
        with pytest.raises(ValueError):
            make_patient(body_weight=-1.0)
        with pytest.raises(ValueError):
            make_patient(carb_ratio=0.0)


class TestMeals:
    def test_windows_respected(self):
        cfg = sim.SimConfig(days=10, seed=2)
        meals = sim.generate_meals(cfg, np.random.default_rng(2))
        assert meals, "expected meals over 10 days"
        for m in meals:
            clock = m.time % 1440
            assert any(w.start_min <= clock <= w.end_min
                       for w in cfg.meal_windows)
            lo = min(w.carbs_lo for w in cfg.meal_windows)
            hi = max(w.carbs_hi for w in cfg.meal_windows)
            assert lo <= m.carbs <= hi
        # roughly three meals a day at 0.95 probability each
        assert 20 <= len(meals) <= 30


class TestValidation:
    def test_negative_bg_rejected(self):
        tr = sim.simulate_patient(make_patient(), sim.SimConfig(days=1, seed=0), [])
        bad = sim.SimTrace(tr.patient_id, tr.group, tr.weight_kg, tr.seed,
                           tr.t, tr.bg - 200.0, tr.insulin, tr.meal)
        ok, reason = sim.validate_trace(bad)
        assert not ok and "negative BG" in reason

    def test_non_finite_rejected(self):
        tr = sim.simulate_patient(make_patient(), sim.SimConfig(days=1, seed=0), [])
        bg = tr.bg.copy()
        bg[5] = np.nan
        bad = sim.SimTrace(tr.patient_id, tr.group, tr.weight_kg, tr.seed,
                           tr.t, bg, tr.insulin, tr.meal)
        ok, reason = sim.validate_trace(bad)
        assert not ok and "non-finite" in reason

    def test_clean_trace_accepted(self):
        tr = sim.simulate_patient(make_patient(), sim.SimConfig(days=1, seed=0), [])
        assert sim.validate_trace(tr) == (True, "")


class TestPersistence:
    def test_csv_roundtrip_exact(self, tmp_path):
        p = make_patient()
        cfg = sim.SimConfig(days=1, seed=4)
        meals = sim.generate_meals(cfg, np.random.default_rng(4))
        tr = sim.simulate_patient(p, cfg, meals)
        path = tmp_path / "t.csv"
        path.write_text(sim.trace_to_csv(tr))
        back = sim.import_trace(path)
        assert back.patient_id == tr.patient_id
        assert back.group == tr.group
        assert back.weight_kg == tr.weight_kg
        assert np.array_equal(back.t, tr.t)
        assert np.array_equal(back.bg, tr.bg)
        assert np.array_equal(back.insulin, tr.insulin)
        assert np.array_equal(back.meal, tr.meal)

    def test_export_import_cohort(self, tmp_path, small_traces):
        sim.export_traces(small_traces, tmp_path)
        assert (tmp_path / "cohort.json").exists()
        back = sim.import_cohort(tmp_path)
        assert len(back) == len(small_traces)
        orig = {tr.patient_id: tr for tr in small_traces}
        for tr in back:
            assert np.array_equal(tr.bg, orig[tr.patient_id].bg)

    def test_import_empty_dir_raises(self, tmp_path):
        with pytest.raises(ValueError):
            sim.import_cohort(tmp_path)
