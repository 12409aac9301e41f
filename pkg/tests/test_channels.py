import math

import numpy as np
import pytest

from privsum import (
    PrivacyBudget,
    errors,
    interactive_stage2,
    laplace_bin_means,
    laplace_channel,
    make_probability_vector,
    run_interactive_protocol,
    sample_categorical,
    uniform_law,
    verify_ldp_interactive,
    verify_ldp_ni,
    z_alpha,
)
from privsum.rng import laplace_from_uniform, substream


class TestLaplaceChannel:
    def test_near_one_hot_at_huge_alpha(self):
        # alpha -> infinity surrogate: noise scale sigma/alpha -> 0
        budget = PrivacyBudget(alpha=1e9)
        batch = laplace_channel([2], 3, budget, seed=4)
        assert np.allclose(batch.z[0], [0.0, 1.0, 0.0], atol=1e-7)

    def test_determinism(self):
        budget = PrivacyBudget(alpha=1.0)
        a = laplace_channel([1], 1, budget, seed=77)
        b = laplace_channel([1], 1, budget, seed=77)
        assert np.array_equal(a.z, b.z)

    def test_mean_band_large_sample(self):
        # Var(z_i1) = p(1-p) + 2 sigma^2/alpha^2 = 0.25 + 8; 4-sigma band
        budget = PrivacyBudget(alpha=1.0, sigma=2.0)
        x = sample_categorical(uniform_law(2), 100_000, seed=21)
        means = laplace_bin_means(x, 2, budget, seed=22)
        band = 4.0 * math.sqrt((0.25 + 8.0) / 100_000)
        assert abs(means[0] - 0.5) < band

    def test_noise_variance(self):
        budget = PrivacyBudget(alpha=0.7, sigma=2.0)
        x = np.ones(60_000, dtype=np.int64)
        batch = laplace_channel(x, 2, budget, seed=5)
        noise = batch.z[:, 1]  # pure noise coordinate
        expected = 2.0 * (budget.sigma / budget.alpha) ** 2
        stderr = expected * math.sqrt(20.0 / noise.size)  # generous 4th-moment margin
        assert abs(noise.var() - expected) < 4.0 * stderr
        assert abs(noise.mean()) < 4.0 * math.sqrt(expected / noise.size)

    def test_fast_path_matches_full_matrix(self):
        budget = PrivacyBudget(alpha=0.5)
        x = sample_categorical(uniform_law(5), 10_000, seed=8)
        batch = laplace_channel(x, 5, budget, seed=9)
        fast = laplace_bin_means(x, 5, budget, seed=9)
        assert np.allclose(fast, batch.bin_means, rtol=0, atol=1e-12)

    def test_category_out_of_range(self):
        with pytest.raises(errors.CategoryOutOfRange):
            laplace_channel([0, 1], 2, PrivacyBudget(alpha=1.0), seed=1)
        with pytest.raises(errors.CategoryOutOfRange):
            laplace_channel([3], 2, PrivacyBudget(alpha=1.0), seed=1)

    def test_empty_sample(self):
        with pytest.raises(errors.ZeroSampleSize):
            laplace_channel([], 2, PrivacyBudget(alpha=1.0), seed=1)

    def test_audit_dump(self, tmp_path):
        batch = laplace_channel([1, 2], 2, PrivacyBudget(alpha=1.0), seed=3)
        path = tmp_path / "batch.csv"
        batch.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "i,k,z"
        assert len(lines) == 1 + 2 * 2


class TestLaplaceInverseCdf:
    def test_symmetry_and_quantiles(self):
        assert laplace_from_uniform(np.array([0.5]))[0] == 0.0
        # inverse CDF at u = 0.25 is log(0.5); at 0.75 is -log(0.5)
        got = laplace_from_uniform(np.array([0.25, 0.75]))
        assert got[0] == pytest.approx(math.log(0.5), rel=1e-15)
        assert got[1] == pytest.approx(-math.log(0.5), rel=1e-15)

    def test_extreme_uniform_is_finite(self):
        assert np.isfinite(laplace_from_uniform(np.array([0.0, 1.0 - 1e-17]))).all()

    def test_kernel_matches_reference(self):
        # the compiled channel kernel must agree bitwise with the reference
        from privsum._kernels import laplace_fill

        u = substream(123).random((64, 8))
        out = np.empty_like(u)
        laplace_fill(u, out)
        assert np.array_equal(out, laplace_from_uniform(u))


class TestZAlpha:
    def test_gamma2_ln3(self):
        # direct evaluation: 2 * (3+1)/(3-1)
        assert z_alpha(PrivacyBudget(alpha=math.log(3.0)), 2.0) == pytest.approx(4.0, abs=1e-12)

    def test_gamma3_ln3(self):
        assert z_alpha(PrivacyBudget(alpha=math.log(3.0)), 3.0) == pytest.approx(8.0, abs=1e-12)

    def test_lower_bound_and_monotonicity(self):
        for gamma in (1.5, 2.0, 4.0):
            previous = math.inf
            for alpha in (0.1, 0.5, 1.0, 2.0):
                za = z_alpha(PrivacyBudget(alpha=alpha), gamma)
                assert za >= 2.0 ** (gamma - 1.0)
                assert za < previous
                previous = za

    def test_needs_gamma_above_one(self):
        with pytest.raises(errors.GammaNotAboveOne):
            z_alpha(PrivacyBudget(alpha=0.5), 1.0)


class TestInteractiveStage2:
    def test_symmetric_coin_at_zero_values(self):
        budget = PrivacyBudget(alpha=0.8)
        vals = np.zeros(3)
        x2 = sample_categorical(uniform_law(3), 50_000, seed=31)
        out = interactive_stage2(x2, vals, budget, 2.0, seed=32)
        za = z_alpha(budget, 2.0)
        assert set(np.unique(out)) == {-za, za}
        assert abs(out.mean()) < 4.0 * za / math.sqrt(out.size)

    def test_plus_probability_at_max_value(self):
        # P(+z) = (1 + 2/4)/2 = 0.75 for v = 2^(gamma-1) = 2, alpha = ln 3
        budget = PrivacyBudget(alpha=math.log(3.0))
        out = interactive_stage2(np.ones(100_000, dtype=np.int64), np.array([2.0]),
                                 budget, 2.0, seed=33)
        frac_plus = float(np.mean(out > 0))
        assert abs(frac_plus - 0.75) < 4.0 * math.sqrt(0.75 * 0.25 / out.size)

    def test_conditional_mean(self):
        budget = PrivacyBudget(alpha=0.6)
        v = 0.9
        out = interactive_stage2(np.ones(100_000, dtype=np.int64), np.array([v]),
                                 budget, 2.0, seed=34)
        za = z_alpha(budget, 2.0)
        assert abs(out.mean() - v) < 4.0 * za / math.sqrt(out.size)

    def test_magnitudes_exact(self):
        budget = PrivacyBudget(alpha=0.5)
        out = interactive_stage2([1, 2, 1], np.array([0.3, 1.0]), budget, 2.0, seed=35)
        za = z_alpha(budget, 2.0)
        assert np.all(np.abs(out) == za)

    def test_out_of_range_values_rejected(self):
        budget = PrivacyBudget(alpha=0.5)
        with pytest.raises(errors.StageOneValueOutOfRange):
            interactive_stage2([1], np.array([2.5]), budget, 2.0, seed=36)
        with pytest.raises(errors.StageOneValueOutOfRange):
            interactive_stage2([1], np.array([-0.1]), budget, 2.0, seed=36)

    def test_transcript_invariants(self):
        budget = PrivacyBudget(alpha=0.5)
        x1 = sample_categorical(uniform_law(4), 200, seed=41)
        x2 = sample_categorical(uniform_law(4), 200, seed=42)
        tr = run_interactive_protocol(x1, x2, 4, budget, 2.5, seed=43)
        assert np.all(np.abs(tr.stage2) == tr.z_alpha)
        assert np.all(tr.stage1_values <= 2.0 ** 1.5)
        assert tr.z_alpha == z_alpha(budget, 2.5)


class TestVerifyLdpNi:
    def test_sigma2_saturates_budget(self):
        rep = verify_ldp_ni(PrivacyBudget(alpha=0.7, sigma=2.0))
        assert rep.worst_case_log_ratio == pytest.approx(0.7, abs=1e-12)
        assert rep.satisfied

    def test_sigma4_slack(self):
        rep = verify_ldp_ni(PrivacyBudget(alpha=0.5, sigma=4.0))
        assert rep.worst_case_log_ratio == pytest.approx(0.25, abs=1e-12)
        assert rep.satisfied

    def test_sigma1_misconfiguration(self):
        rep = verify_ldp_ni(PrivacyBudget(alpha=0.5, sigma=1.0))
        assert rep.worst_case_log_ratio == pytest.approx(1.0, abs=1e-12)
        assert not rep.satisfied

    def test_grid_never_exceeds_closed_form(self):
        for alpha in (0.1, 0.5, 1.3):
            for sigma in (2.0, 3.7):
                rep = verify_ldp_ni(PrivacyBudget(alpha=alpha, sigma=sigma))
                assert rep.grid_max_log_ratio <= rep.worst_case_log_ratio + 1e-12


class TestVerifyLdpInteractive:
    def test_ln3_gamma2_ratio_three(self):
        rep = verify_ldp_interactive(PrivacyBudget(alpha=math.log(3.0)), 2.0)
        # extremes (4+2)/(4-2) = 3 = e^alpha
        assert rep.details["closed_ratio"] == pytest.approx(3.0, abs=1e-12)
        assert rep.satisfied

    def test_equal_values_ratio_one(self):
        budget = PrivacyBudget(alpha=0.4)
        za = z_alpha(budget, 2.0)
        v = 1.3
        assert (za + v) / (za + v) == 1.0

    def test_grid_bounded_by_exp_alpha(self):
        rep = verify_ldp_interactive(PrivacyBudget(alpha=0.3), 5.0)
        assert rep.details["grid_ratio"] <= math.exp(0.3) + 1e-12

    def test_hundred_random_pairs_saturate(self):
        rng = substream(2026)
        for _ in range(100):
            alpha = float(rng.uniform(0.05, 3.0))
            gamma = float(rng.uniform(1.0 + 1e-6, 5.0))
            rep = verify_ldp_interactive(PrivacyBudget(alpha=alpha), gamma)
            assert abs(rep.details["closed_ratio"] - math.exp(alpha)) <= 1e-12 * max(
                1.0, math.exp(alpha))
            assert rep.satisfied


class TestBatchInvariants:
    def test_bin_means_match(self):
        batch = laplace_channel([1, 2, 2], 3, PrivacyBudget(alpha=1.0), seed=6)
        assert np.allclose(batch.z.mean(axis=0), batch.bin_means, atol=1e-12)

    def test_expectation_contract(self):
        # E[mean_k] = p_k, checked statistically over a large batch
        p = make_probability_vector((0.6, 0.4))
        budget = PrivacyBudget(alpha=1.0)
        x = sample_categorical(p, 80_000, seed=51)
        means = laplace_bin_means(x, 2, budget, seed=52)
        band = 4.0 * math.sqrt((0.25 + 8.0) / 80_000)
        assert abs(means[0] - 0.6) < band
        assert abs(means[1] - 0.4) < band
