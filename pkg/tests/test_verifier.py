import numpy as np
import pytest

from aps_assure.nn import MinMaxScaler, Network, init_network
from aps_assure.properties import (
    AffineAtom, FAtom, Property, TRUE, VarRef, default_box, evaluate_concrete,
    instantiate, pre_holds, suite_properties,
)
from aps_assure.verifier import (
    Verdict, VerifierConfig, exact_oracle, falsify, model_hash, pre_vacuous,
    verdict_to_json, verify,
)

FAST = VerifierConfig(max_subproblems=2000, timeout=30.0,
                      falsify_samples=300, falsify_descent_steps=40)


def passthrough_net():
    """36 -> 1 -> 6: y0 = relu(x[0]) (identity on [0, 1]), y1..y5 = 0."""
    w1 = np.zeros((1, 36))
    w1[0, 0] = 1.0
    w2 = np.zeros((6, 1))
    w2[0, 0] = 1.0
    return Network([w1, w2], [np.zeros(1), np.zeros(6)], ["relu", "id"])


def out_le(bound, idx=0, cmp="LE"):
    return FAtom(AffineAtom(((1.0, VarRef("BG_out", idx)),), cmp, bound))


def prop_with_post(post, box=None, pre=TRUE, pid="p"):
    return Property(pid, default_box() if box is None else box, pre, post)


def assert_valid_witness(net, prop, verdict):
    x, y = verdict.witness_input, verdict.witness_output
    assert x is not None and y is not None
    assert prop.in_box(x)
    assert pre_holds(prop, x)
    assert np.array_equal(net.forward_scaled(x), y)
    assert not evaluate_concrete(prop, x, y)


class TestHandNet:
    def test_proved_with_slack(self):
        net = passthrough_net()
        v = verify(net, prop_with_post(out_le(1.5)), FAST)
        assert v.outcome == "Proved" and not v.vacuous
        assert v.witness_input is None
        assert v.stats["wall_time"] >= 0

    def test_counterexample_found_and_validated(self):
        net = passthrough_net()
        prop = prop_with_post(out_le(0.5))
        v = verify(net, prop, FAST)
        assert v.outcome == "Counterexample"
        assert_valid_witness(net, prop, v)
        assert v.witness_input[0] > 0.5

    def test_strict_post_violated_exactly_on_boundary(self):
        # y0 ranges over [0, 1]; y0 < 1 fails only at the single point x0 = 1.
        net = passthrough_net()
        prop = prop_with_post(out_le(1.0, cmp="LT"))
        v = verify(net, prop, FAST)
        assert v.outcome == "Counterexample"
        assert_valid_witness(net, prop, v)
        assert v.witness_input[0] == pytest.approx(1.0, abs=1e-9)

    def test_nonstrict_boundary_never_a_counterexample(self):
        # y0 <= 1 holds everywhere (equality at x0 = 1 satisfies it).
        net = passthrough_net()
        v = verify(net, prop_with_post(out_le(1.0)),
                   VerifierConfig(max_subproblems=50, timeout=10.0,
                                  falsify_samples=100, falsify_descent_steps=10))
        assert v.outcome in ("Proved", "Unknown")
        assert v.witness_input is None

    def test_precondition_narrows_verdict(self):
        net = passthrough_net()
        pre = FAtom(AffineAtom(((1.0, VarRef("BG_in", 0)),), "LE", 0.4))
        # under pre, y0 <= 0.5 actually holds
        v = verify(net, prop_with_post(out_le(0.5), pre=pre), FAST)
        assert v.outcome == "Proved" and not v.vacuous

    def test_vacuous_precondition(self):
        net = passthrough_net()
        pre = FAtom(AffineAtom(((1.0, VarRef("BG_in", 0)),), "GE", 2.0))
        v = verify(net, prop_with_post(out_le(0.5), pre=pre), FAST)
        assert v.outcome == "Proved" and v.vacuous


class TestBudgets:
    def test_budget_exhausted(self):
        net = passthrough_net()
        cfg = VerifierConfig(max_subproblems=3, timeout=10.0,
                             falsify_samples=50, falsify_descent_steps=5)
        v = verify(net, prop_with_post(out_le(1.0)), cfg)
        assert v.outcome == "Unknown" and "budget" in v.reason

    def test_timeout(self):
        net = init_network([36, 8, 8, 6], seed=0,
                           scaler=MinMaxScaler.identity(36))
        cfg = VerifierConfig(max_subproblems=10**9, timeout=1e-6,
                             falsify_samples=2, falsify_descent_steps=1)
        lo, hi = -50.0, 50.0  # wide box keeps the claim unprovable quickly
        box = np.tile([lo, hi], (36, 1))
        v = verify(net, prop_with_post(out_le(1e-9), box=box), cfg)
        assert v.outcome in ("Unknown", "Counterexample")
        if v.outcome == "Unknown":
            assert v.reason == "timeout"

    def test_unsplittable_degenerate_box(self):
        net = passthrough_net()
        box = np.tile([0.5, 0.5], (36, 1))  # single point, y0 = 0.5 exactly
        v = verify(net, prop_with_post(out_le(0.5), box=box), FAST)
        assert v.outcome == "Unknown" and "unsplittable" in v.reason

    def test_config_validation(self):
        with pytest.raises(ValueError):
            VerifierConfig(max_subproblems=0)
        with pytest.raises(ValueError):
            VerifierConfig(split_heuristic="Magic")

    def test_config_hash_sensitivity(self):
        a, b = VerifierConfig(), VerifierConfig(seed=1)
        assert a.content_hash() == VerifierConfig().content_hash()
        assert a.content_hash() != b.content_hash()


class TestFalsify:
    def test_finds_obvious_violation(self):
        net = passthrough_net()
        w = falsify(net, prop_with_post(out_le(0.2)), FAST)
        assert w is not None
        x, y = w
        assert y[0] > 0.2 and x[0] == pytest.approx(y[0])

    def test_none_on_valid_property(self):
        net = passthrough_net()
        assert falsify(net, prop_with_post(out_le(1.5)), FAST) is None

    def test_seed_determinism(self):
        net = init_network([36, 4, 4, 6], seed=2,
                           scaler=MinMaxScaler.identity(36))
        prop = prop_with_post(out_le(0.0, cmp="LT"), pid="f")
        a = falsify(net, prop, FAST)
        b = falsify(net, prop, FAST)
        assert (a is None) == (b is None)
        if a is not None:
            assert np.array_equal(a[0], b[0])


class TestVacuity:
    def test_pre_vacuous_direct(self):
        from aps_assure.verifier import _ensure_compiled
        net = passthrough_net()
        impossible = FAtom(AffineAtom(((1.0, VarRef("BG_in", 3)),), "GE", 5.0))
        cp = _ensure_compiled(net, prop_with_post(out_le(0.5), pre=impossible), FAST)
        assert pre_vacuous(cp, FAST)
        cp2 = _ensure_compiled(net, prop_with_post(out_le(0.5)), FAST)
        assert not pre_vacuous(cp2, FAST)


class TestOracle:
    def test_rejects_large_networks(self):
        net = init_network([36, 17, 6], seed=0)
        with pytest.raises(ValueError):
            exact_oracle(net, prop_with_post(out_le(0.5)))

    def test_matches_hand_net(self):
        net = passthrough_net()
        assert exact_oracle(net, prop_with_post(out_le(1.5)), FAST).outcome == "Proved"
        v = exact_oracle(net, prop_with_post(out_le(0.5)), FAST)
        assert v.outcome == "Counterexample"
        assert_valid_witness(net, prop_with_post(out_le(0.5)), v)

    def test_boundary_only_violation_counts_as_proved(self):
        # y0 <= 1: the widened violation set touches the box only at y0 = 1.
        net = passthrough_net()
        v = exact_oracle(net, prop_with_post(out_le(1.0)), FAST)
        assert v.outcome == "Proved"

    def test_strict_boundary_counterexample(self):
        net = passthrough_net()
        prop = prop_with_post(out_le(1.0, cmp="LT"))
        v = exact_oracle(net, prop, FAST)
        assert v.outcome == "Counterexample"
        assert_valid_witness(net, prop, v)


class TestAgreement:
    """verify and exact_oracle must never disagree when both are decisive."""

    def test_random_small_networks(self):
        rng = np.random.default_rng(2024)
        decisive_pairs = 0
        outcomes = set()
        for trial in range(12):
            net = init_network([36, 3, 3, 6], seed=trial,
                               scaler=MinMaxScaler.identity(36))
            center = rng.uniform(0.2, 0.8, 36)
            rad = rng.uniform(0.02, 0.15, 36)
            box = np.stack([center - rad, center + rad], axis=1)
            y_c = net.forward_scaled(center)
            j = int(rng.integers(0, 6))
            bound = float(y_c[j] + rng.choice([-0.05, -0.005, 0.005, 0.05]))
            prop = prop_with_post(out_le(bound, idx=j), box=box,
                                  pid=f"rand{trial}")
            v = verify(net, prop, FAST)
            o = exact_oracle(net, prop, FAST)
            outcomes.add(v.outcome)
            if v.outcome != "Unknown" and o.outcome != "Unknown":
                assert v.outcome == o.outcome, f"trial {trial}"
                decisive_pairs += 1
            for verdict in (v, o):
                if verdict.outcome == "Counterexample":
                    assert_valid_witness(net, prop, verdict)
        assert decisive_pairs >= 8
        assert {"Proved", "Counterexample"} <= outcomes


class TestUnits:
    def test_mixed_units_resolved_through_model_scaler(self):
        rows = np.zeros((2, 36))
        rows[1, :12] = 400.0
        rows[1, 12:24] = 10.0
        rows[1, 24:] = 100.0
        net = passthrough_net()
        net.scaler = MinMaxScaler.fit(rows)
        # physical-unit property: BG history in [100, 200] mg/dL implies the
        # (scaled) first output stays below 0.55; x0 scaled <= 0.5 so it holds
        box = default_box(bg=(100.0, 200.0))
        prop = Property("u", box, TRUE, out_le(0.55), {}, "mixed")
        v = verify(net, prop, FAST)
        assert v.outcome == "Proved"
        v2 = verify(net, Property("u2", box, TRUE, out_le(0.45), {}, "mixed"), FAST)
        assert v2.outcome == "Counterexample"

    def test_suite_rows_run_end_to_end(self):
        rows = np.zeros((2, 36))
        rows[1, :12] = 400.0
        rows[1, 12:24] = 10.0
        rows[1, 24:] = 100.0
        net = init_network([36, 3, 3, 6], seed=1, scaler=MinMaxScaler.fit(rows))
        name, prop = suite_properties()[0]
        cfg = VerifierConfig(max_subproblems=300, timeout=10.0,
                             falsify_samples=200, falsify_descent_steps=10)
        v = verify(net, prop, cfg)
        assert v.outcome in ("Proved", "Counterexample", "Unknown")
        assert v.stats["subproblems"] >= 1 or v.outcome == "Counterexample"


class TestReporting:
    def test_model_hash_tracks_weights(self):
        a = init_network([36, 4, 6], seed=0)
        b = init_network([36, 4, 6], seed=0)
        c = init_network([36, 4, 6], seed=1)
        assert model_hash(a) == model_hash(b)
        assert model_hash(a) != model_hash(c)

    def test_verdict_to_json(self):
        net = passthrough_net()
        prop = prop_with_post(out_le(0.5))
        v = verify(net, prop, FAST)
        doc = verdict_to_json(v, "p", net, FAST)
        assert doc["property_id"] == "p"
        assert doc["outcome"] == "Counterexample"
        assert doc["model_hash"] == model_hash(net)
        assert doc["config_hash"] == FAST.content_hash()
        assert len(doc["witness"]["input"]) == 36
        assert len(doc["witness"]["output"]) == 6
        proved = verify(net, prop_with_post(out_le(1.5)), FAST)
        doc2 = verdict_to_json(proved, "q")
        assert "witness" not in doc2 and "model_hash" not in doc2
