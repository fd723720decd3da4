import numpy as np
import pytest

from aps_assure.bounds import (
    BoundsResult, bound_output_expr, interval_bounds, output_expr_affine,
    relaxed_bounds,
)
from aps_assure.nn import Network, init_network


def hand_net():
    """2-2-1: first layer [[1,-1],[0,1]] relu, second [[1,1]] linear."""
    return Network(
        weights=[np.array([[1.0, -1.0], [0.0, 1.0]]), np.array([[1.0, 1.0]])],
        biases=[np.zeros(2), np.zeros(1)],
        activations=["relu", "id"],
    )


def sample_box(rng, box, n):
    return rng.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))


class TestInterval:
    def test_hand_values(self):
        net = hand_net()
        box = np.array([[0.0, 1.0], [0.0, 1.0]])
        br = interval_bounds(net, box)
        # z1 in [-1, 1], z2 in [0, 1]; relu -> h1 [0,1], h2 [0,1]; y in [0,2]
        assert br.pre_lo[0] == pytest.approx([-1.0, 0.0], abs=1e-8)
        assert br.pre_hi[0] == pytest.approx([1.0, 1.0], abs=1e-8)
        assert br.output_lo[0] == pytest.approx(0.0, abs=1e-8)
        assert br.output_hi[0] == pytest.approx(2.0, abs=1e-8)

    def test_degenerate_box_is_exact(self):
        net = init_network([4, 3, 2], seed=0)
        x = np.array([0.3, -0.2, 0.7, 0.1])
        box = np.stack([x, x], axis=1)
        br = interval_bounds(net, box)
        y = net.forward_scaled(x)
        assert np.all(br.output_lo <= y + 1e-8)
        assert np.all(br.output_hi >= y - 1e-8)
        assert np.all(br.output_hi - br.output_lo < 1e-6)

    def test_bad_box_rejected(self):
        net = hand_net()
        with pytest.raises(ValueError):
            interval_bounds(net, np.array([[1.0, 0.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            interval_bounds(net, np.zeros((3, 2)))


class TestSoundness:
    @pytest.mark.parametrize("seed", range(5))
    def test_samples_inside_interval_bounds(self, seed):
        rng = np.random.default_rng(seed)
        net = init_network([5, 6, 6, 3], seed=seed)
        center = rng.normal(size=5)
        rad = rng.uniform(0.05, 1.0, size=5)
        box = np.stack([center - rad, center + rad], axis=1)
        br = interval_bounds(net, box)
        ys = net.forward_scaled(sample_box(rng, box, 500))
        assert np.all(ys >= br.output_lo - 1e-9)
        assert np.all(ys <= br.output_hi + 1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_relaxed_contained_in_interval_and_sound(self, seed):
        rng = np.random.default_rng(100 + seed)
        net = init_network([5, 6, 6, 3], seed=seed)
        center = rng.normal(size=5)
        rad = rng.uniform(0.05, 1.0, size=5)
        box = np.stack([center - rad, center + rad], axis=1)
        iv = interval_bounds(net, box)
        rb = relaxed_bounds(net, box)
        for k in range(len(net.weights)):
            assert np.all(rb.pre_lo[k] >= iv.pre_lo[k] - 1e-9)
            assert np.all(rb.pre_hi[k] <= iv.pre_hi[k] + 1e-9)
            assert np.all(rb.post_lo[k] >= iv.post_lo[k] - 1e-9)
            assert np.all(rb.post_hi[k] <= iv.post_hi[k] + 1e-9)
        ys = net.forward_scaled(sample_box(rng, box, 500))
        assert np.all(ys >= rb.output_lo - 1e-9)
        assert np.all(ys <= rb.output_hi + 1e-9)

    def test_relaxed_strictly_tighter_somewhere(self):
        # On wide boxes the linear relaxation usually beats intervals.
        rng = np.random.default_rng(3)
        improved = False
        for seed in range(10):
            net = init_network([4, 8, 8, 2], seed=seed)
            box = np.stack([-np.ones(4), np.ones(4)], axis=1)
            iv = interval_bounds(net, box)
            rb = relaxed_bounds(net, box)
            width_iv = np.sum(iv.output_hi - iv.output_lo)
            width_rb = np.sum(rb.output_hi - rb.output_lo)
            assert width_rb <= width_iv + 1e-9
            if width_rb < width_iv - 1e-6:
                improved = True
        assert improved

    def test_affine_output_expressions_sound(self):
        rng = np.random.default_rng(7)
        net = init_network([4, 5, 3], seed=2)
        box = np.stack([rng.uniform(-1, 0, 4), rng.uniform(0.1, 1, 4)], axis=1)
        rb = relaxed_bounds(net, box)
        gains = rng.normal(size=3)
        offset = 0.4
        (a_lo, c_lo), (a_hi, c_hi) = output_expr_affine(rb, gains, offset)
        xs = sample_box(rng, box, 400)
        expr = net.forward_scaled(xs) @ gains + offset
        assert np.all(xs @ a_lo + c_lo <= expr + 1e-7)
        assert np.all(xs @ a_hi + c_hi >= expr - 1e-7)
        lo, hi = bound_output_expr(rb, gains, offset)
        assert np.all(expr >= lo - 1e-7) and np.all(expr <= hi + 1e-7)

    def test_bound_output_expr_requires_relaxation_for_affine(self):
        net = hand_net()
        box = np.array([[0.0, 1.0], [0.0, 1.0]])
        iv = interval_bounds(net, box)
        with pytest.raises(ValueError):
            output_expr_affine(iv, [1.0])
        lo, hi = bound_output_expr(iv, [1.0])  # falls back to intervals
        assert lo <= 0.0 and hi >= 2.0
