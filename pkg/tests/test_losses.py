"""Objective values against independently computed references."""

import math

import numpy as np
import pytest

from tsgrade import autodiff as ad
from tsgrade.autodiff import ParamStore, Tensor, backward, finite_difference_check
from tsgrade.losses import (
    bce_loss,
    cosine_loss,
    cross_entropy,
    gaussian_reference,
    grading_loss,
    localization_loss,
    neutral_zone_mask,
    positive_proposal_index,
    total_loss,
)


def softmax_np(x):
    e = np.exp(x - x.max())
    return e / e.sum()


class TestBce:
    def test_perfect_prediction_is_tiny(self):
        eps = 1e-9
        probs = np.full(50, eps)
        probs[25] = 1.0 - eps
        loss = bce_loss(Tensor(probs), 25, delta=2.0)
        assert loss.item() <= 3e-7

    def test_uniform_half_fixture(self):
        # T=10, t=5, delta=1: zone [2, 8], negatives at j in {0, 1, 9}
        # L = -log(0.5) - (1/9) * 3*log(0.5) = (4/3) ln 2
        loss = bce_loss(Tensor(np.full(10, 0.5)), 5, delta=1.0)
        assert loss.item() == pytest.approx((4.0 / 3.0) * math.log(2.0), rel=1e-12)

    def test_matches_direct_formula_on_random_input(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            t_total = int(rng.integers(2, 120))
            t = int(rng.integers(0, t_total))
            delta = float(rng.integers(1, 12))
            p = rng.uniform(0.01, 0.99, t_total)
            expected = -math.log(p[t])
            acc = 0.0
            for j in range(t_total):
                if j < t - 3 * delta or j > t + 3 * delta:
                    acc += math.log(1.0 - p[j])
            expected -= acc / (t_total - 1)
            got = bce_loss(Tensor(p), t, delta).item()
            assert got == pytest.approx(expected, rel=1e-12)

    def test_neutral_zone_perturbation_leaves_loss_unchanged(self):
        rng = np.random.default_rng(6)
        p = rng.uniform(0.1, 0.9, 60)
        base = bce_loss(Tensor(p), 30, delta=3.0).item()
        for j in (22, 25, 29, 31, 36, 39):
            q = p.copy()
            q[j] = rng.uniform(0.1, 0.9)
            assert bce_loss(Tensor(q), 30, delta=3.0).item() == base

    def test_neutral_zone_gradient_exactly_zero(self):
        rng = np.random.default_rng(7)
        probs = Tensor(rng.uniform(0.1, 0.9, 60), requires_grad=True)
        backward(bce_loss(probs, 30, delta=3.0))
        zone = ~neutral_zone_mask(60, 30, 3.0).astype(bool)
        zone[30] = False
        assert np.all(probs.grad[zone] == 0.0)
        assert probs.grad[30] != 0.0
        outside = neutral_zone_mask(60, 30, 3.0).astype(bool)
        assert np.all(probs.grad[outside] != 0.0)

    def test_timestamp_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            bce_loss(Tensor(np.full(5, 0.5)), 5, delta=1.0)

    def test_single_frame_input(self):
        loss = bce_loss(Tensor(np.array([0.5])), 0, delta=1.0)
        assert loss.item() == pytest.approx(math.log(2.0))


class TestCosine:
    def test_zero_when_soft_scores_match_reference(self):
        delta = 4.0
        ref = gaussian_reference(80, 33, delta)
        scores = np.log(ref)  # softmax(log g + const) is proportional to g
        loss = cosine_loss(Tensor(scores), 33, delta)
        assert abs(loss.item()) < 1e-12

    def test_reference_scale_invariance(self):
        rng = np.random.default_rng(8)
        scores = rng.normal(size=40)
        base = cosine_loss(Tensor(scores), 20, 3.0).item()
        soft = softmax_np(scores)
        g = gaussian_reference(40, 20, 3.0)
        for k in (0.1, 2.0, 117.0):
            scaled = 1.0 - (soft @ (k * g)) / (np.linalg.norm(soft) * np.linalg.norm(k * g))
            assert scaled == pytest.approx(base, abs=1e-12)

    def test_uniform_scores_fixture(self):
        # T=5, t=2, delta=1: soft is uniform 1/5, reference is the bump below
        g = np.array([math.exp(-2.0), math.exp(-0.5), 1.0, math.exp(-0.5), math.exp(-2.0)])
        expected = 1.0 - (g.sum() / 5.0) / ((1.0 / math.sqrt(5.0)) * np.linalg.norm(g))
        loss = cosine_loss(Tensor(np.zeros(5)), 2, 1.0)
        assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_bounded_between_zero_and_one(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            scores = rng.normal(scale=rng.uniform(0.1, 5.0), size=int(rng.integers(1, 100)))
            t = int(rng.integers(0, scores.size))
            val = cosine_loss(Tensor(scores), t, 2.0).item()
            assert 0.0 <= val <= 1.0

    def test_shift_equivariance(self):
        pattern = np.sin(np.linspace(0, 3.0, 41)) * 2.0
        delta = 2.0

        def build(t):
            scores = np.full(300, -1e4)
            scores[t - 20:t + 21] = pattern
            return cosine_loss(Tensor(scores), t, delta).item()

        assert build(100) == pytest.approx(build(110), abs=1e-12)


class TestGrading:
    def test_single_proposal_uniform_logits(self):
        loss = grading_loss([Tensor(np.zeros(6))], [10], t=12, grade=3)
        assert loss.item() == pytest.approx(math.log(6.0), abs=1e-12)

    def test_saturated_logits_near_zero_loss(self):
        # each saturated term is log(1 + C*exp(-20)), so C must stay small
        # for the 1e-8 bound to hold
        pos = np.zeros(3)
        pos[2] = 20.0
        neg = np.zeros(3)
        neg[0] = 20.0
        loss = grading_loss([Tensor(pos), Tensor(neg)], [50, 90], t=52, grade=2)
        assert loss.item() <= 1e-8
        # larger class counts stay proportionally tiny
        pos6 = np.zeros(6)
        pos6[4] = 20.0
        neg6 = np.zeros(6)
        neg6[0] = 20.0
        loss6 = grading_loss(
            [Tensor(neg6), Tensor(pos6), Tensor(neg6)], [5, 50, 90], t=52, grade=4
        )
        assert loss6.item() <= 1e-7

    def test_three_proposal_fixture_matches_numpy_reference(self):
        rng = np.random.default_rng(10)
        tables = [rng.normal(size=6) for _ in range(3)]
        peaks = [15, 40, 80]
        t, grade = 43, 2
        # positive is the peak nearest t (index 1); others go to background
        expected = -math.log(softmax_np(tables[1])[grade])
        expected += 0.5 * sum(-math.log(softmax_np(tables[i])[0]) for i in (0, 2))
        got = grading_loss([Tensor(x) for x in tables], peaks, t, grade).item()
        assert got == pytest.approx(expected, rel=1e-12)

    def test_background_flag_keeps_only_positive_term(self):
        rng = np.random.default_rng(11)
        tables = [Tensor(rng.normal(size=4)) for _ in range(3)]
        peaks = [5, 20, 60]
        got = grading_loss(tables, peaks, t=18, grade=1, include_background=False)
        assert got.item() == pytest.approx(cross_entropy(tables[1], 1).item(), rel=1e-14)

    def test_label_perturbation_changes_only_positive_term(self):
        rng = np.random.default_rng(12)
        tables = [Tensor(rng.normal(size=5)) for _ in range(4)]
        peaks = [3, 30, 55, 70]
        l1 = grading_loss(tables, peaks, t=31, grade=1).item()
        l2 = grading_loss(tables, peaks, t=31, grade=4).item()
        ce1 = cross_entropy(tables[1], 1).item()
        ce2 = cross_entropy(tables[1], 4).item()
        assert l1 - l2 == pytest.approx(ce1 - ce2, abs=1e-12)

    def test_tie_breaks_to_smaller_peak(self):
        assert positive_proposal_index([10, 20], t=15) == 0
        assert positive_proposal_index([20, 10], t=15) == 1
        assert positive_proposal_index([7, 30, 12], t=11) == 2

    def test_empty_proposals_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            grading_loss([], [], 0, 1)

    def test_grade_range_validated(self):
        with pytest.raises(ValueError, match="grade"):
            grading_loss([Tensor(np.zeros(6))], [0], 0, 6)


class TestComposites:
    def test_alpha_zero_equals_bce(self):
        rng = np.random.default_rng(13)
        scores = rng.normal(size=30)
        probs = 1.0 / (1.0 + np.exp(-scores))
        combined = localization_loss(Tensor(scores), Tensor(probs), 12, 2.0, alpha=0.0,
                                     use_cos=False)
        assert combined.item() == pytest.approx(bce_loss(Tensor(probs), 12, 2.0).item())

    def test_alpha_one_is_plain_sum(self):
        rng = np.random.default_rng(14)
        scores = rng.normal(size=30)
        probs = 1.0 / (1.0 + np.exp(-scores))
        combined = localization_loss(Tensor(scores), Tensor(probs), 12, 2.0, alpha=1.0)
        parts = bce_loss(Tensor(probs), 12, 2.0).item() + cosine_loss(Tensor(scores), 12, 2.0).item()
        assert combined.item() == pytest.approx(parts, rel=1e-14)

    def test_total_loss_weighting(self):
        g, l = Tensor(2.0), Tensor(3.0)
        assert total_loss(g, l, beta=0.0).item() == 2.0
        assert total_loss(g, l, beta=1.0).item() == 5.0
        assert total_loss(Tensor(0.0), Tensor(0.0), beta=7.0).item() == 0.0

    def test_all_losses_nonnegative(self):
        rng = np.random.default_rng(15)
        for _ in range(25):
            n = int(rng.integers(2, 60))
            scores = rng.normal(size=n)
            probs = 1.0 / (1.0 + np.exp(-scores))
            t = int(rng.integers(0, n))
            assert bce_loss(Tensor(probs), t, 2.0).item() >= 0.0
            assert 0.0 <= cosine_loss(Tensor(scores), t, 2.0).item() <= 1.0


class TestGradients:
    def test_bce_gradient_matches_finite_differences(self):
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(200 + seed)
            store = ParamStore()
            scores = store.add("scores", rng.normal(size=20))
            report = finite_difference_check(
                store, lambda: bce_loss(ad.sigmoid(scores), 7, 2.0)
            )
            worst = max(worst, report.max_error)
        assert worst < 1e-4

    def test_cosine_gradient_matches_finite_differences(self):
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(300 + seed)
            store = ParamStore()
            scores = store.add("scores", rng.normal(size=20))
            report = finite_difference_check(store, lambda: cosine_loss(scores, 11, 3.0))
            worst = max(worst, report.max_error)
        assert worst < 1e-4

    def test_grading_gradient_matches_finite_differences(self):
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(400 + seed)
            store = ParamStore()
            logits = [store.add(f"l{i}", rng.normal(size=6)) for i in range(3)]
            report = finite_difference_check(
                store, lambda: grading_loss(logits, [4, 18, 33], 20, 2)
            )
            worst = max(worst, report.max_error)
        assert worst < 1e-4
