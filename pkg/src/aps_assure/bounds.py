"""Sound neuron bounds over an input box: intervals and linear relaxation.

interval_bounds propagates plain interval arithmetic through the layers.
relaxed_bounds keeps, per neuron, affine lower/upper expressions in the
*input* variables (triangle relaxation of unstable ReLUs, back-substituted
eagerly), and intersects their concrete evaluation with the interval bounds,
so the relaxation is never looser than intervals.  All concrete bound
operations are rounded outward by a small epsilon; soundness is at tolerance
level, not verified arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROUND_EPS = 1e-9


@dataclass
class BoundsResult:
    box: np.ndarray           # (n_in, 2)
    pre_lo: list              # per layer, pre-activation lower bounds
    pre_hi: list
    post_lo: list             # per layer, post-activation bounds
    post_hi: list
    out_lower: tuple | None   # (A, c): outputs >= A x + c on the box
    out_upper: tuple | None

    @property
    def output_lo(self) -> np.ndarray:
        return self.post_lo[-1]

    @property
    def output_hi(self) -> np.ndarray:
        return self.post_hi[-1]


def _affine_interval(w, b, lo, hi):
    """Interval image of w @ h + b for h in [lo, hi], rounded outward."""
    w_pos = np.maximum(w, 0.0)
    w_neg = np.minimum(w, 0.0)
    out_lo = w_pos @ lo + w_neg @ hi + b - ROUND_EPS
    out_hi = w_pos @ hi + w_neg @ lo + b + ROUND_EPS
    return out_lo, out_hi


def interval_bounds(net, box) -> BoundsResult:
    box = np.asarray(box, dtype=float)
    if box.shape != (net.input_dim, 2):
        raise ValueError(f"box shape {box.shape} != ({net.input_dim}, 2)")
    if np.any(box[:, 0] > box[:, 1]):
        raise ValueError("box lo > hi")
    lo, hi = box[:, 0].copy(), box[:, 1].copy()
    pre_lo, pre_hi, post_lo, post_hi = [], [], [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        zlo, zhi = _affine_interval(w, b, lo, hi)
        pre_lo.append(zlo)
        pre_hi.append(zhi)
        if act == "relu":
            lo, hi = np.maximum(zlo, 0.0), np.maximum(zhi, 0.0)
        else:
            lo, hi = zlo, zhi
        post_lo.append(lo.copy())
        post_hi.append(hi.copy())
    return BoundsResult(box, pre_lo, pre_hi, post_lo, post_hi, None, None)


def _eval_affine(a, c, box):
    """Interval of a @ x + c over the box, rounded outward."""
    a_pos = np.maximum(a, 0.0)
    a_neg = np.minimum(a, 0.0)
    lo = a_pos @ box[:, 0] + a_neg @ box[:, 1] + c - ROUND_EPS
    hi = a_pos @ box[:, 1] + a_neg @ box[:, 0] + c + ROUND_EPS
    return lo, hi


def relaxed_bounds(net, box) -> BoundsResult:
    box = np.asarray(box, dtype=float)
    iv = interval_bounds(net, box)  # baseline for intersection
    n_in = net.input_dim
    # Affine bounds on the current layer's post-activations, in input vars.
    al, cl = np.eye(n_in), np.zeros(n_in)
    au, cu = np.eye(n_in), np.zeros(n_in)
    pre_lo, pre_hi, post_lo, post_hi = [], [], [], []

    for k, (w, b, act) in enumerate(zip(net.weights, net.biases, net.activations)):
        w_pos = np.maximum(w, 0.0)
        w_neg = np.minimum(w, 0.0)
        z_al = w_pos @ al + w_neg @ au
        z_cl = w_pos @ cl + w_neg @ cu + b
        z_au = w_pos @ au + w_neg @ al
        z_cu = w_pos @ cu + w_neg @ cl + b
        zlo_aff, _ = _eval_affine(z_al, z_cl, box)
        _, zhi_aff = _eval_affine(z_au, z_cu, box)
        zlo = np.maximum(zlo_aff, iv.pre_lo[k])
        zhi = np.minimum(zhi_aff, iv.pre_hi[k])
        pre_lo.append(zlo)
        pre_hi.append(zhi)

        if act == "relu":
            n = len(zlo)
            al = np.zeros((n, n_in))
            cl = np.zeros(n)
            au = np.zeros((n, n_in))
            cu = np.zeros(n)
            for j in range(n):
                l, u = zlo[j], zhi[j]
                if l >= 0.0:
                    al[j], cl[j] = z_al[j], z_cl[j]
                    au[j], cu[j] = z_au[j], z_cu[j]
                elif u <= 0.0:
                    pass  # identically zero
                else:
                    lam = u / (u - l)
                    au[j] = lam * z_au[j]
                    cu[j] = lam * (z_cu[j] - l)
                    if u >= -l:  # keep the steeper lower slope
                        al[j], cl[j] = z_al[j], z_cl[j]
            plo_aff, _ = _eval_affine(al, cl, box)
            _, phi_aff = _eval_affine(au, cu, box)
            plo = np.maximum(np.maximum(plo_aff, 0.0), iv.post_lo[k])
            phi = np.minimum(np.maximum(phi_aff, 0.0), iv.post_hi[k])
        else:
            al, cl, au, cu = z_al, z_cl, z_au, z_cu
            plo_aff, _ = _eval_affine(al, cl, box)
            _, phi_aff = _eval_affine(au, cu, box)
            plo = np.maximum(plo_aff, iv.post_lo[k])
            phi = np.minimum(phi_aff, iv.post_hi[k])
        post_lo.append(plo)
        post_hi.append(phi)

    return BoundsResult(box, pre_lo, pre_hi, post_lo, post_hi,
                        (al, cl), (au, cu))


def output_expr_affine(br: BoundsResult, gains, offset: float = 0.0):
    """Affine-in-input bounds on gains . outputs + offset.

    Returns ((a_lo, c_lo), (a_hi, c_hi)) with
    a_lo x + c_lo <= expr(x) <= a_hi x + c_hi on the box.
    """
    if br.out_lower is None:
        raise ValueError("needs relaxed bounds (affine output expressions)")
    gains = np.asarray(gains, dtype=float)
    g_pos = np.maximum(gains, 0.0)
    g_neg = np.minimum(gains, 0.0)
    (al, cl), (au, cu) = br.out_lower, br.out_upper
    a_lo = g_pos @ al + g_neg @ au
    c_lo = g_pos @ cl + g_neg @ cu + offset
    a_hi = g_pos @ au + g_neg @ al
    c_hi = g_pos @ cu + g_neg @ cl + offset
    return (a_lo, c_lo), (a_hi, c_hi)


def bound_output_expr(br: BoundsResult, gains, offset: float = 0.0):
    """Concrete [lo, hi] of gains . outputs + offset over the box."""
    gains = np.asarray(gains, dtype=float)
    g_pos = np.maximum(gains, 0.0)
    g_neg = np.minimum(gains, 0.0)
    lo_int = g_pos @ br.output_lo + g_neg @ br.output_hi + offset - ROUND_EPS
    hi_int = g_pos @ br.output_hi + g_neg @ br.output_lo + offset + ROUND_EPS
    if br.out_lower is None:
        return lo_int, hi_int
    (a_lo, c_lo), (a_hi, c_hi) = output_expr_affine(br, gains, offset)
    lo_aff, _ = _eval_affine(a_lo, c_lo, br.box)
    _, hi_aff = _eval_affine(a_hi, c_hi, br.box)
    return max(lo_int, lo_aff), min(hi_int, hi_aff)
