import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import norm

from raresig import (
    DegenerateDataError,
    LabeledSample,
    RitStatistic,
    ValidationError,
    compute_rit,
    condition_diagnostic,
    dcov_kernel,
    estimate_xi01,
    estimate_xi02,
    estimate_xi10,
    group_by_label,
    ipcov_kernel,
    kendall_kernel,
    local_power_threshold,
    pearson_kernel,
    power_first_order,
    power_highdim,
    pvalue_asymptotic_first,
    pvalue_asymptotic_highdim,
    pvalue_permutation,
)
from raresig.simulate import MethodConfig, ScenarioSpec, run_erp


def _grouped(n0, n1, rng, p=1, shift=0.0):
    labels = np.r_[np.zeros(n0, np.int64), np.ones(n1, np.int64)]
    x = rng.standard_normal((n0 + n1, p))
    x[labels == 0] += shift
    return group_by_label(LabeledSample(x, labels))


def _stat(value, kernel, n0, n1):
    return RitStatistic(value, kernel, kernel.order, n0, n1, "test")


# ---------------------------------------------------------------------------
# variance estimators
# ---------------------------------------------------------------------------


def test_xi01_pearson_is_case_variance():
    rng = np.random.default_rng(0)
    g = _grouped(5000, 2000, rng)
    xi = estimate_xi01(g, pearson_kernel())
    assert abs(xi - 1.0) < 0.1


def test_xi01_constant_cases_is_zero():
    g = group_by_label(
        LabeledSample(
            np.r_[np.random.default_rng(1).standard_normal(50), np.full(10, 2.0)][:, None],
            np.r_[np.zeros(50, np.int64), np.ones(10, np.int64)],
        )
    )
    assert estimate_xi01(g, pearson_kernel()) < 1e-28
    assert estimate_xi01(g, kendall_kernel()) < 1e-28


def test_xi01_needs_first_order_kernel_and_two_cases():
    rng = np.random.default_rng(2)
    g = _grouped(30, 5, rng, p=2)
    with pytest.raises(ValidationError):
        estimate_xi01(g, dcov_kernel())
    g1 = _grouped(30, 1, rng)
    with pytest.raises(DegenerateDataError):
        estimate_xi01(g1, kendall_kernel())


def test_xi10_mirrors_xi01_for_kendall():
    rng = np.random.default_rng(3)
    g = _grouped(3000, 1500, rng)
    assert abs(estimate_xi10(g, kendall_kernel()) - 1 / 3) < 0.05


def test_xi02_identical_cases_has_zero_variance():
    rng = np.random.default_rng(4)
    x = np.vstack([rng.standard_normal((40, 2)), np.tile([1.0, 2.0], (5, 1))])
    labels = np.r_[np.zeros(40, np.int64), np.ones(5, np.int64)]
    g = group_by_label(LabeledSample(x, labels))
    assert_allclose(estimate_xi02(g, dcov_kernel()), 0.0, atol=1e-20)


def test_xi02_single_pair_errors():
    rng = np.random.default_rng(5)
    g = _grouped(20, 2, rng, p=2)
    with pytest.raises(DegenerateDataError, match="single pair"):
        estimate_xi02(g, dcov_kernel())


def test_xi02_stable_across_draws():
    vals = []
    for rep in range(30):
        rng = np.random.default_rng(100 + rep)
        g = _grouped(400, 60, rng, p=20)
        vals.append(estimate_xi02(g, dcov_kernel()))
    vals = np.array(vals)
    assert vals.std(ddof=1) / vals.mean() < 0.2


def test_xi02_pooled_reference_option():
    rng = np.random.default_rng(6)
    g = _grouped(100, 20, rng, p=5)
    a = estimate_xi02(g, dcov_kernel(), reference="controls")
    b = estimate_xi02(g, dcov_kernel(), reference="pooled")
    assert a > 0 and b > 0 and a != b
    with pytest.raises(ValidationError):
        estimate_xi02(g, dcov_kernel(), reference="cases")
    assert estimate_xi02(g, ipcov_kernel()) > 0


def test_condition_diagnostic_positive_and_finite():
    rng = np.random.default_rng(7)
    g = _grouped(300, 50, rng, p=30)
    ratio = condition_diagnostic(g, dcov_kernel())
    assert 0 < ratio < 10


# ---------------------------------------------------------------------------
# asymptotic p-values
# ---------------------------------------------------------------------------


def test_first_order_pvalue_at_zero_statistic():
    out = pvalue_asymptotic_first(_stat(0.0, kendall_kernel(), 1000, 100), 1 / 3)
    assert out.p_value == 1.0
    assert out.method == "asymptotic_first"


def test_first_order_pvalue_at_normal_quantile():
    # sqrt(n1) T / sigma = 1.96 -> p close to 0.05
    n1 = 100
    xi01 = 1.0
    value = 1.959963984540054 / math.sqrt(n1)
    out = pvalue_asymptotic_first(_stat(value, pearson_kernel(), 1000, n1), xi01)
    assert_allclose(out.p_value, 0.05, atol=1e-9)


def test_first_order_pvalue_kendall_example():
    out = pvalue_asymptotic_first(_stat(0.1, kendall_kernel(), 10_000, 100), 1 / 3)
    z = 1.0 / math.sqrt(1 / 3)
    assert_allclose(out.p_value, 2 * norm.sf(z), atol=1e-12)
    assert_allclose(out.p_value, 0.0833, atol=5e-4)


def test_first_order_pvalue_with_subsampling_variance():
    stat = _stat(0.1, kendall_kernel(), 10_000, 100)
    out = pvalue_asymptotic_first(stat, 1 / 3, s=5, xi10=1 / 3)
    assert_allclose(out.variance_estimate, 1 / 3 + 1 / 15, atol=1e-12)
    with pytest.raises(ValidationError):
        pvalue_asymptotic_first(stat, 1 / 3, s=5)


def test_first_order_pvalue_degenerate_xi_errors():
    stat = _stat(0.1, kendall_kernel(), 1000, 50)
    with pytest.raises(DegenerateDataError, match="permutation"):
        pvalue_asymptotic_first(stat, 0.0)
    with pytest.raises(ValidationError):
        pvalue_asymptotic_first(_stat(0.1, dcov_kernel(), 1000, 50), 1 / 3)


def test_highdim_pvalue_values():
    stat = _stat(0.0, dcov_kernel(), 1000, 100)
    assert pvalue_asymptotic_highdim(stat, 2.0).p_value == 1.0
    # n1 T / sqrt(xi02) = sqrt(2) * 1.96 with variance 2 -> p = 0.05
    n1 = 100
    target = math.sqrt(2.0) * 1.959963984540054
    stat = _stat(target / n1, dcov_kernel(), 1000, n1)
    out = pvalue_asymptotic_highdim(stat, 1.0)
    assert_allclose(out.p_value, 0.05, atol=1e-9)
    with pytest.raises(ValidationError):
        pvalue_asymptotic_highdim(_stat(0.1, kendall_kernel(), 100, 10), 1.0)
    with pytest.raises(DegenerateDataError):
        pvalue_asymptotic_highdim(_stat(0.1, dcov_kernel(), 100, 10), 0.0)


# ---------------------------------------------------------------------------
# permutation
# ---------------------------------------------------------------------------


def test_permutation_floor_on_separated_data():
    rng = np.random.default_rng(8)
    x = np.r_[rng.random(40), 10 + rng.random(8)]
    labels = np.r_[np.zeros(40, np.int64), np.ones(8, np.int64)]
    out = pvalue_permutation(LabeledSample(x[:, None], labels), kendall_kernel(), B=99, seed=0)
    assert out.p_value == 1 / 100
    assert out.statistic == 1.0


def test_permutation_requires_enough_replicates():
    rng = np.random.default_rng(9)
    s = LabeledSample(rng.standard_normal((20, 1)), np.r_[np.zeros(15, np.int64), np.ones(5, np.int64)])
    with pytest.raises(ValidationError):
        pvalue_permutation(s, kendall_kernel(), B=10)


def test_permutation_ties_count_toward_rejection():
    # constant features: every permuted statistic equals the observed 0
    x = np.ones((30, 1))
    labels = np.r_[np.zeros(24, np.int64), np.ones(6, np.int64)]
    out = pvalue_permutation(LabeledSample(x, labels), kendall_kernel(), B=49, seed=1)
    assert out.p_value == 1.0


def test_permutation_invariant_to_monotone_transforms():
    rng = np.random.default_rng(10)
    x = rng.standard_normal(60)
    labels = np.r_[np.zeros(48, np.int64), np.ones(12, np.int64)]
    a = pvalue_permutation(LabeledSample(x[:, None], labels), kendall_kernel(), B=99, seed=5)
    b = pvalue_permutation(
        LabeledSample(np.exp(x)[:, None], labels), kendall_kernel(), B=99, seed=5
    )
    assert a.p_value == b.p_value


def test_permutation_pooled_path_matches_generic():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((70, 4))
    labels = np.r_[np.zeros(55, np.int64), np.ones(15, np.int64)]
    sample = LabeledSample(x, labels)
    fast = pvalue_permutation(sample, dcov_kernel(), B=59, seed=2)
    slow = pvalue_permutation(sample, dcov_kernel(), B=59, seed=2, max_pooled=10)
    assert fast.metadata["batched"] and not slow.metadata["batched"]
    assert_allclose(fast.statistic, slow.statistic, rtol=1e-10)
    assert fast.p_value == slow.p_value
    # subsampled variant agrees across paths too
    fast_s = pvalue_permutation(sample, dcov_kernel(), B=59, seed=2, s=3)
    slow_s = pvalue_permutation(sample, dcov_kernel(), B=59, seed=2, s=3, max_pooled=10)
    assert fast_s.p_value == slow_s.p_value


def test_permutation_null_pvalues_roughly_uniform():
    rng = np.random.default_rng(12)
    pvals = []
    for rep in range(60):
        x = np.random.default_rng(500 + rep).standard_normal(40)
        labels = np.r_[np.zeros(32, np.int64), np.ones(8, np.int64)]
        pvals.append(
            pvalue_permutation(
                LabeledSample(x[:, None], labels), kendall_kernel(), B=39, seed=rep
            ).p_value
        )
    assert 0.3 < np.mean(pvals) < 0.7


# ---------------------------------------------------------------------------
# power calculators
# ---------------------------------------------------------------------------


def test_power_first_order_reference_points():
    assert_allclose(power_first_order(0.0, 100, 1, 1, 1 / 3, 0.05), 0.05, atol=1e-12)
    assert power_first_order(100.0, 100, 1, 1, 1 / 3, 0.05) > 1 - 1e-12
    full = power_first_order(0.3, 100, 1, 1, 1 / 3, 0.05)
    gaps = []
    for s in (2, 5, 20, 100):
        sub = power_first_order(0.3, 100, 1, 1, 1 / 3, 0.05, s=s, xi10=1 / 3)
        assert sub <= full
        gaps.append(full - sub)
    assert gaps == sorted(gaps, reverse=True)
    # xi10 = 0 collapses to the full-sample branch exactly
    assert power_first_order(0.3, 100, 1, 1, 1 / 3, 0.05, s=7, xi10=0.0) == full


def test_power_highdim_reference_points():
    assert_allclose(power_highdim(0.0, 100, 2, 1.0, 0.05), 0.05, atol=1e-12)
    assert power_highdim(0.05, 200, 2, 1.0, 0.05) > power_highdim(
        0.05, 100, 2, 1.0, 0.05
    )


def test_local_power_threshold_quantile_arithmetic():
    c = local_power_threshold(0.2, 0.05, 1.0, 1 / 3)
    assert_allclose(c, 0.6457, atol=1e-3)
    # subsampled variance raises the threshold
    xi_eff = 1 / 3 + 1 / (5 * 1)
    assert local_power_threshold(0.2, 0.05, 1.0, xi_eff) > c
    # the beta parameter acts as the power level: higher beta, larger C
    assert local_power_threshold(0.4, 0.05, 1.0, 1 / 3) > c
    with pytest.raises(ValidationError):
        local_power_threshold(0.2, 0.05, 0.0, 1 / 3)
    with pytest.raises(ValidationError):
        local_power_threshold(0.97, 0.05, 1.0, 1 / 3)


def test_local_power_threshold_consistency_with_mixture_power():
    # at delta0 = 1.2 C the Monte Carlo power of the sign-kernel test
    # matches the analytic first-order power and clears the beta floor
    beta, alpha, g_shift = 0.2, 0.05, 1.0
    mu_g1 = 2 * norm.cdf(g_shift / math.sqrt(2)) - 1
    c = local_power_threshold(beta, alpha, mu_g1, 1 / 3)
    n1 = 500
    delta0 = 1.2 * c
    scenario = ScenarioSpec(
        "mixture_local", n=10_500, n1=n1, effect=g_shift,
        params={"delta0": delta0}, M=400, alpha=alpha, seed=31,
    )
    method = MethodConfig(kernel="kendall", mode="rit", xi_basis="controls")
    report = run_erp(scenario, method)
    predicted = power_first_order(delta0 * mu_g1 / math.sqrt(n1), n1, 1, 1, 1 / 3, alpha)
    assert abs(report.erp - predicted) < 0.07
    assert report.erp >= beta - 0.04
