import math

import numpy as np
import pytest

from crowdcast.density import (MetricReport, js_divergence, kl_divergence, normalize_map,
                               rasterize_frame, rasterize_sequence, score_forecast)
from crowdcast.errors import ParameterError, RangeError


def brute_force_kl(g, c, eps=1e-12):
    """Independent scalar-loop oracle for the KL metric, prefactor included."""
    g = np.asarray(g, dtype=float) + eps
    c = np.asarray(c, dtype=float) + eps
    gbar = g / g.sum()
    cbar = c / c.sum()
    total = 0.0
    for gi, ci in zip(gbar.ravel(), cbar.ravel()):
        total += gi * math.log(gi / ci)
    return total / g.size


class TestRasterizeFrame:
    def test_empty_positions_gives_zero_frame(self):
        frame = rasterize_frame([], 32, 24, 3.0)
        assert frame.shape == (24, 32)
        assert not frame.any()

    def test_single_pedestrian_kernel_values(self):
        frame = rasterize_frame([(40.0, 40.0)], 80, 80, 3.0)
        assert frame[40, 40] == pytest.approx(1.0, abs=1e-12)
        # 3 px = one sigma to the right: direct kernel evaluation.
        expected = math.exp(-(3.0 ** 2) / (2.0 * 3.0 ** 2))
        assert frame[40, 43] == pytest.approx(expected, abs=1e-12)
        assert frame[43, 40] == pytest.approx(expected, abs=1e-12)

    def test_overlapping_pedestrians_clamp_to_one(self):
        frame = rasterize_frame([(40.0, 40.0), (40.0, 40.0)], 80, 80, 3.0)
        assert frame[40, 40] == 1.0
        assert frame.max() == 1.0

    def test_kernel_truncated_at_four_sigma(self):
        frame = rasterize_frame([(40.0, 40.0)], 80, 80, 3.0)
        radius = math.ceil(4 * 3.0)
        assert frame[40, 40 + radius] > 0.0
        assert frame[40, 40 + radius + 1] == 0.0

    def test_position_outside_scene_rejected(self):
        with pytest.raises(RangeError):
            rasterize_frame([(80.0, 10.0)], 80, 80, 3.0)
        with pytest.raises(RangeError):
            rasterize_frame([(-0.1, 10.0)], 80, 80, 3.0)

    def test_bad_sigma_rejected(self):
        with pytest.raises(ParameterError):
            rasterize_frame([(1.0, 1.0)], 8, 8, 0.0)
        with pytest.raises(ParameterError):
            rasterize_frame([(1.0, 1.0)], 8, 8, -1.0)

    def test_linear_before_clamp_for_separated_agents(self, rng):
        # Agents farther apart than twice the kernel radius never interact.
        positions = [(10.0, 12.0), (60.0, 55.0)]
        combined = rasterize_frame(positions, 80, 80, 2.0)
        summed = sum(rasterize_frame([p], 80, 80, 2.0) for p in positions)
        np.testing.assert_array_equal(combined, summed)

    def test_centered_kernel_symmetry(self):
        frame = rasterize_frame([(10.0, 10.0)], 21, 21, 2.5)
        np.testing.assert_allclose(frame, frame[::-1, :], atol=1e-15)
        np.testing.assert_allclose(frame, frame[:, ::-1], atol=1e-15)


class TestRasterizeSequence:
    def test_static_agent_gives_identical_frames(self):
        seq = rasterize_sequence([[(7.0, 9.0)]] * 20, 24, 24, 3.0)
        assert seq.shape == (20, 24, 24)
        for t in range(1, 20):
            np.testing.assert_array_equal(seq[t], seq[0])

    def test_absent_agent_contributes_nothing(self):
        frames = [[(5.0, 5.0)]] * 8 + [[]] * 12
        seq = rasterize_sequence(frames, 24, 24, 3.0)
        assert seq[:8].any()
        assert not seq[8:].any()

    def test_moving_agent_matches_per_frame_oracle(self):
        frames = [[(float(5 + t), 10.0)] for t in range(10)]
        seq = rasterize_sequence(frames, 32, 32, 2.0)
        for t in range(10):
            np.testing.assert_array_equal(seq[t], rasterize_frame(frames[t], 32, 32, 2.0))
            row, col = np.unravel_index(np.argmax(seq[t]), seq[t].shape)
            assert (row, col) == (10, 5 + t)

    def test_empty_window_rejected(self):
        with pytest.raises(ParameterError):
            rasterize_sequence([], 8, 8, 3.0)


class TestNormalizeMap:
    def test_all_zero_frame_normalizes_to_uniform(self):
        p = normalize_map(np.zeros((80, 80)), 1e-12)
        np.testing.assert_allclose(p, 1.0 / 6400.0, rtol=1e-12)

    def test_single_support_with_zero_epsilon(self):
        frame = np.zeros((4, 4))
        frame[2, 1] = 1.0
        p = normalize_map(frame, 0.0)
        assert p[2, 1] == 1.0
        assert p.sum() == 1.0

    def test_hand_normalization(self):
        p = normalize_map(np.array([[1.0, 1.0], [2.0, 0.0]]), 0.0)
        np.testing.assert_array_equal(p, [[0.25, 0.25], [0.5, 0.0]])

    def test_sums_to_one_for_random_maps(self, rng):
        for _ in range(50):
            frame = rng.random((9, 13))
            assert abs(normalize_map(frame, 1e-12).sum() - 1.0) < 1e-9

    def test_negative_values_rejected(self):
        with pytest.raises(ParameterError):
            normalize_map(np.array([[-0.1, 0.2]]))


class TestDivergences:
    def test_kl_zero_on_identical_maps(self, rng):
        m = rng.random((6, 6))
        assert kl_divergence(m, m) == 0.0

    def test_kl_two_pixel_example(self):
        g = np.array([[1.0, 0.0]])
        c = np.array([[0.5, 0.5]])
        got = kl_divergence(g, c, 1e-12)
        assert got == pytest.approx(brute_force_kl(g, c), abs=1e-12)
        assert got == pytest.approx(0.5 * math.log(2.0), abs=1e-9)

    def test_kl_uniform_vs_uniform_is_zero(self):
        assert kl_divergence(np.full((5, 7), 0.3), np.full((5, 7), 0.9)) == 0.0

    def test_kl_non_negative_on_random_pairs(self, rng):
        for _ in range(200):
            a, b = rng.random((2, 5, 5))
            assert kl_divergence(a, b) >= 0.0

    def test_kl_shape_mismatch(self):
        with pytest.raises(ParameterError):
            kl_divergence(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_js_zero_on_identical(self, rng):
        m = rng.random((4, 4))
        assert js_divergence(m, m) == 0.0

    def test_js_symmetric_bit_exact(self, rng):
        for _ in range(100):
            a, b = rng.random((2, 6, 6))
            assert js_divergence(a, b) == js_divergence(b, a)

    def test_js_two_pixel_example_brute_force(self):
        g = np.array([[1.0, 0.0]])
        c = np.array([[0.5, 0.5]])
        expected = 0.5 * (brute_force_kl(g, c) + brute_force_kl(c, g))
        assert js_divergence(g, c, 1e-12) == pytest.approx(expected, abs=1e-12)


class TestScoreForecast:
    def test_perfect_prediction_scores_zero(self, rng):
        seq = rng.random((4, 8, 8))
        report = score_forecast(seq, seq)
        assert report.ad_js == 0.0 and report.fd_js == 0.0
        assert report.per_step_js == [0.0] * 4

    def test_constant_steps_mean(self, rng):
        report = MetricReport.from_steps([0.25, 0.25, 0.25])
        assert report.ad_js == 0.25
        assert report.fd_js == 0.25

    def test_random_pair_matches_hand_average(self, rng):
        pred = rng.random((4, 6, 6))
        gt = rng.random((4, 6, 6))
        report = score_forecast(pred, gt)
        steps = [js_divergence(pred[t], gt[t]) for t in range(4)]
        assert report.per_step_js == steps
        assert report.ad_js == pytest.approx(np.mean(steps), rel=1e-15)
        assert report.fd_js == steps[-1]

    def test_reversal_changes_fd_but_not_multiset(self, rng):
        pred = rng.random((5, 6, 6))
        gt = rng.random((5, 6, 6))
        fwd = score_forecast(pred, gt)
        rev = score_forecast(pred[::-1], gt[::-1])
        # Reversing the step order permutes per-step values but moves the
        # final step, so fd_js changes while the multiset does not.
        assert sorted(rev.per_step_js) == sorted(fwd.per_step_js)
        assert rev.fd_js == fwd.per_step_js[0]
        assert rev.fd_js != fwd.fd_js

    def test_length_mismatch_rejected(self, rng):
        with pytest.raises(ParameterError):
            score_forecast(rng.random((3, 4, 4)), rng.random((4, 4, 4)))
