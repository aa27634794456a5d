import math

import numpy as np
import pytest

from xggm import numerics as nx
from xggm.encoder import EncoderLayout, GcnEncoder, encoder_iteration, relation_from_nodes
from xggm.errors import ContractError, ParameterError
from xggm.rggm import (hard_histogram, loss_grad_consistency, loss_kl_symmetric, num_pairs, r_gen,
                       r_init, rggm_total_loss, score_generated, score_noisy, soft_histogram)

from oracles import brute_kl, brute_score


class TestInit:
    def test_sigma_zero(self):
        rng = np.random.default_rng(0)
        x, W, b = rng.standard_normal(5), rng.standard_normal((6, 5)), rng.standard_normal(6)
        res = r_init(x, W, b, 0.0, nx.RngState(0), 4)
        assert np.array_equal(res.r, res.r_hat)
        assert np.array_equal(res.R0, res.R0.T) and np.all(np.diag(res.R0) == 1)
        assert np.all((res.r > 0) & (res.r < 1))
        assert np.array_equal(nx.pack_upper(res.R0), res.r_hat)

    def test_noise_reproducible(self):
        rng = np.random.default_rng(1)
        x, W, b = rng.standard_normal((2, 5)), rng.standard_normal((3, 5)), np.zeros(3)
        a = r_init(x, W, b, 1.0, nx.RngState(4, 2), 3)
        c = r_init(x, W, b, 1.0, nx.RngState(4, 2), 3)
        assert np.array_equal(a.r_hat, c.r_hat) and not np.array_equal(a.r_hat, a.r)
        assert a.R0.shape == (2, 3, 3)

    def test_errors(self):
        with pytest.raises(ParameterError):
            r_init(np.zeros(2), np.zeros((3, 2)), np.zeros(3), -1.0, None, 3)
        with pytest.raises(ContractError):
            r_init(np.zeros(2), np.zeros((4, 2)), np.zeros(4), 0.0, None, 3)


class TestGenerate:
    def test_single_iteration(self):
        layout = EncoderLayout(3, 4, 1, 2)
        params = layout.init(nx.RngState(0))
        rng = np.random.default_rng(0)
        O, R0 = rng.standard_normal((3, 4)), nx.unpack_upper(rng.uniform(0, 1, 3), 3)
        R_g, trace = r_gen(GcnEncoder(params, layout), O, R0)
        layers, assembly = GcnEncoder(params, layout).iteration_params(1)
        V1 = encoder_iteration(layers, assembly, O, R0)
        np.testing.assert_array_equal(R_g, relation_from_nodes(V1))
        np.testing.assert_array_equal(trace.readouts[0], V1.mean(axis=0))

    def test_two_iterations_hand_unrolled(self):
        layout = EncoderLayout(3, 4, 2, 1)
        params = layout.init(nx.RngState(3))
        rng = np.random.default_rng(3)
        O, R0 = rng.standard_normal((3, 4)), nx.unpack_upper(rng.uniform(0, 1, 3), 3)

        def sig(z):
            return 1 / (1 + np.exp(-z))

        def it(k, V, R):
            W, b = params[f"enc.{k}.W0"], params[f"enc.{k}.b0"]
            Wa, ba = params[f"enc.{k}.Wa"], params[f"enc.{k}.ba"]
            h = np.stack([sig((R @ V)[i] @ W[i] + b[i]) for i in range(3)])
            return np.stack([np.maximum(V[i] @ Wa[i] + ba[i], 0) + np.maximum(h[i] @ Wa[i] + ba[i], 0)
                             for i in range(3)])

        V1 = it(1, O, R0)
        V2 = it(2, V1, sig(V1 @ V1.T))
        R_g, _ = r_gen(GcnEncoder(params, layout), O, R0)
        np.testing.assert_allclose(R_g, sig(V2 @ V2.T), atol=1e-12)

    def test_zero_weights_degenerate_path(self):
        layout = EncoderLayout(3, 2, 2, 2)
        params = {k: np.zeros_like(v) for k, v in layout.init(nx.RngState(0)).items()}
        R_g, _ = r_gen(GcnEncoder(params, layout), np.ones((3, 2)), np.eye(3))
        assert np.all(np.isfinite(R_g)) and np.all((R_g > 0) & (R_g < 1))


class TestScores:
    def test_noisy_modes(self):
        r = np.array([0.3, 0.1])
        r_hat = r + np.array([0.5, 0.0])
        np.testing.assert_allclose(score_noisy(r_hat, r, 1.0, "corrected"), [-0.5, 0.0], atol=1e-15)
        np.testing.assert_allclose(score_noisy(r_hat, r, 1.0, "squared"), [-0.25, 0.0], atol=1e-15)
        assert not np.any(score_noisy(r, r, 2.0, "corrected"))
        assert not np.any(score_noisy(r, r, 2.0, "squared"))

    def test_noisy_scaling(self):
        r, r_hat = np.zeros(3), np.array([0.2, -0.4, 1.0])
        np.testing.assert_allclose(score_noisy(r_hat, r, 10.0), score_noisy(r_hat, r, 1.0) / 100, atol=1e-15)

    def test_noisy_errors(self):
        with pytest.raises(ParameterError):
            score_noisy(np.zeros(2), np.zeros(2), 0.0)
        with pytest.raises(ContractError):
            score_noisy(np.zeros(2), np.zeros(3), 1.0)
        with pytest.raises(ContractError):
            score_noisy(np.zeros(2), np.zeros(2), 1.0, "other")

    def test_generated_worked_example(self):
        s = score_generated(np.array([0.2, 0.4, 0.6]))
        assert s[0] == pytest.approx(7.5, abs=1e-12)
        assert s[1] == pytest.approx(0.0, abs=1e-12)

    def test_generated_constant(self):
        assert not np.any(score_generated(np.full(4, 0.3)))

    def test_generated_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(150):
            v = rng.uniform(0, 1, rng.integers(2, 12))
            np.testing.assert_allclose(score_generated(v), brute_score(v.tolist()), atol=1e-12, rtol=1e-12)

    def test_generated_too_small(self):
        with pytest.raises(ContractError):
            score_generated(np.array([0.5]))

    def test_grad_consistency_examples(self):
        # R_g with two pairs; choose r_hat so the noisy score is zero
        R_g = nx.unpack_upper(np.array([0.9, 0.1, 0.5]), 3)
        r = np.array([0.2, 0.2, 0.2])
        gen = score_generated(nx.pack_upper(R_g))
        assert loss_grad_consistency(R_g, r, r, 1.0) == pytest.approx(np.mean(gen**2), abs=1e-12)
        # shift the noisy score so the elementwise gap is (1, 0, 0): mean of squares 1/3
        d = np.array([1.0, 0.0, 0.0])
        r_hat = r + (d - gen)
        assert loss_grad_consistency(R_g, r_hat, r, 1.0) == pytest.approx(1 / 3, abs=1e-12)
        d2 = np.array([1.0, 1.0, 0.0])
        assert loss_grad_consistency(R_g, r + (d2 - gen), r, 1.0) == pytest.approx(2 / 3, abs=1e-12)

    def test_grad_consistency_zero_when_scores_match(self):
        R_g = nx.unpack_upper(np.array([0.9, 0.1, 0.5]), 3)
        gen = score_generated(nx.pack_upper(R_g))
        r = np.zeros(3)
        assert loss_grad_consistency(R_g, -gen, r, 1.0) == pytest.approx(0.0, abs=1e-20)

    def test_grad_consistency_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            R_g = nx.unpack_upper(rng.uniform(0, 1, 6), 4)
            r = rng.uniform(0, 1, 6)
            assert loss_grad_consistency(R_g, r + rng.standard_normal(6), r, 1.0) >= 0


class TestKl:
    def test_two_bin_hand_computed(self):
        eps = 1e-3
        p_big, p_small = (1 + eps) / (1 + 2 * eps), eps / (1 + 2 * eps)
        expected = 2 * (p_big - p_small) * math.log(p_big / p_small)
        got = loss_kl_symmetric(np.full(4, 0.2), np.full(4, 0.8), bins=2, eps=eps)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_identical_is_zero(self):
        s = np.random.default_rng(0).uniform(0, 1, 20)
        assert loss_kl_symmetric(s, s.copy()) == 0.0

    def test_brute_force_and_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(120):
            p, q = rng.uniform(0, 1, rng.integers(1, 20)), rng.uniform(0, 1, rng.integers(1, 20))
            got = loss_kl_symmetric(p, q)
            assert got == pytest.approx(brute_kl(p.tolist(), q.tolist(), 16, 1e-3), abs=1e-12)
            assert got == loss_kl_symmetric(q, p)
            assert got >= 0

    def test_hard_histogram_edges(self):
        np.testing.assert_array_equal(hard_histogram(np.array([0.0, 0.5, 1.0, 1.2]), 2), [0.25, 0.75])

    def test_soft_histogram_normalized(self):
        h = soft_histogram(np.random.default_rng(3).uniform(0, 1, (2, 7)), 16, 0.01)
        np.testing.assert_allclose(h.sum(axis=-1), 1.0, atol=1e-12)

    def test_soft_tracks_hard_at_bin_centres(self):
        s = (np.array([1, 4, 4, 9]) + 0.5) / 16
        np.testing.assert_allclose(soft_histogram(s, 16, 0.001), hard_histogram(s, 16), atol=1e-12)

    def test_errors(self):
        with pytest.raises(ContractError):
            loss_kl_symmetric(np.zeros(0), np.zeros(3))
        with pytest.raises(ParameterError):
            loss_kl_symmetric(np.zeros(2), np.zeros(3), bins=1)


class TestTotal:
    def test_arithmetic(self):
        assert rggm_total_loss(1.0, 1.0, 1.0).total == 79.0
        assert rggm_total_loss(3.0, 2.0, 0.7, alpha=0.0, beta=0.0).total == 0.7

    def test_breakdown_row(self):
        row = rggm_total_loss(1.0, 1.0, 1.0).as_row(5)
        assert row == [5, "R", 1.0, 1.0, 1.0, 79.0]


def _composite(mode):
    layout = EncoderLayout(4, 6, 2, 2)
    params = layout.init(nx.RngState(0))
    rng = np.random.default_rng(0)
    params["rinit.W"] = rng.standard_normal((num_pairs(4), 6)) / 3
    params["rinit.b"] = rng.standard_normal(num_pairs(4)) * 0.1
    x, O = rng.standard_normal(6), rng.standard_normal((4, 6)) * 0.5
    R_gt = nx.unpack_upper(rng.uniform(0, 1, 6), 4)

    def f(p):
        init = r_init(x, p["rinit.W"], p["rinit.b"], 0.3, nx.RngState(9), 4)
        R_g, _ = r_gen(GcnEncoder(p, layout), O, init.R0)
        l_grad = loss_grad_consistency(R_g, init.r_hat, init.r, 0.3, mode)
        l_dist = loss_kl_symmetric(nx.pack_upper(R_g), nx.pack_upper(R_gt), soft=True, tau=0.01)
        return nx.scale(l_grad, 6.0) + nx.scale(l_dist, 72.0)

    return f, params


@pytest.mark.parametrize("mode", ["corrected", "squared"])
def test_composite_loss_finite_differences(mode):
    f, params = _composite(mode)
    report = nx.grad_check_report(f, params)
    assert set(report) == set(params)
    assert max(report.values()) <= 1e-3
