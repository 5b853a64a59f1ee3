import math
import pytest
import numpy as np
from scipy import stats

from app.exceptions import ValidationError
from app.g_function import build_g_approx
from app.protocols import KMaj
from app.theory import (
    GaussianZ,
    centering,
    clt_moments,
    concentration_set,
    concentration_value,
    endgame_runtime,
    runtime_cdf_prediction,
    subsequence_limit_pmf,
    win_probability,
    win_probability_integral,
    z_density,
)

N = 10 ** 6


@pytest.fixture(scope="module")
def g_kmaj3():
    return build_g_approx(KMaj(3), grid_size=256)


@pytest.fixture(scope="module")
def law_kmaj3(g_kmaj3):
    return runtime_cdf_prediction(KMaj(3), N, 0.0, g_kmaj3)


# Test cases for the Gaussian bias limit

def test_gaussian_z_from_bias():
    z = GaussianZ.from_bias(0.5, 1.5)
    assert z.mean == 0.5
    assert z.variance == pytest.approx(0.2)
    assert z.std == pytest.approx(math.sqrt(0.2))

def test_gaussian_z_abs_cdf_limits():
    z = GaussianZ.from_bias(0.0, 1.5)
    assert float(z.abs_cdf(0.0)) == 0.0
    assert float(z.abs_cdf(50.0)) == pytest.approx(1.0)
    assert float(z.abs_cdf(z.std)) == pytest.approx(stats.norm.cdf(1.0) - stats.norm.cdf(-1.0))

def test_gaussian_z_rejects_gamma_at_most_one():
    with pytest.raises(ValidationError, match="gamma must exceed 1"):
        GaussianZ.from_bias(0.0, 1.0)

@pytest.mark.parametrize("t, d, gamma, expected", [
    (0, 0.7, 1.5, (0.7, 0.0)),
    (1, 2.0, 1.5, (3.0, 0.25)),
    (3, 0.0, 1.5, (0.0, 2.078125)),
])
def test_clt_moments(t, d, gamma, expected):
    assert clt_moments(t, d, gamma) == pytest.approx(expected, rel=1e-12)

def test_clt_moments_rejects_negative_rounds():
    with pytest.raises(ValidationError, match="t must be at least 0"):
        clt_moments(-1, 0.0, 1.5)

# Test cases for win_probability

def test_win_probability_unbiased_is_half():
    assert win_probability(0.0, 1.5) == 0.5

def test_win_probability_closed_form():
    assert win_probability(1.0, 1.5) == pytest.approx(stats.norm.cdf(math.sqrt(5.0)), rel=1e-12)
    assert win_probability(1.0, 1.5) == pytest.approx(0.9873, abs=1e-4)

@pytest.mark.parametrize("d", [0.0, 0.05, 0.3, 1.0, 2.5])
@pytest.mark.parametrize("gamma", [1.5, 1.875, 8.04])
def test_win_probability_matches_integral(d, gamma):
    assert win_probability_integral(d, gamma) == pytest.approx(win_probability(d, gamma), abs=1e-10)

@pytest.mark.parametrize("d", [0.01, 0.4, 3.0])
def test_win_probability_is_antisymmetric(d):
    assert win_probability(d, 1.5) + win_probability(-d, 1.5) == 1.0

def test_win_probability_integral_of_far_negative_bias():
    assert win_probability_integral(-40.0, 1.5) == 0.0

# Test cases for centering and endgame_runtime

def test_centering_small_bias():
    expected = 0.5 * math.log(N, 1.5) + math.log(math.log(N), 2)
    assert centering(KMaj(3), N) == pytest.approx(expected, rel=1e-12)
    assert centering(KMaj(3), N, 0.9) == pytest.approx(expected, rel=1e-12)

def test_centering_large_bias():
    expected = 0.5 * math.log(N / 100.0 ** 2, 1.5) + math.log(math.log(N), 2)
    assert centering(KMaj(3), N, -100.0) == pytest.approx(expected, rel=1e-12)

def test_endgame_runtime():
    assert endgame_runtime(KMaj(3), N, 0.75) == 4

@pytest.mark.parametrize("x", [0.5, 0.4, 1.0])
def test_endgame_runtime_rejects_fraction_outside_upper_half(x):
    with pytest.raises(ValidationError, match="x must lie in \\(1/2, 1\\)"):
        endgame_runtime(KMaj(3), N, x)

# Test cases for the predicted runtime law

def test_survival_is_a_tail_function(law_kmaj3):
    lo, hi = law_kmaj3.support()
    s = np.arange(lo, hi + 1)
    survival = law_kmaj3.survival(s)
    assert survival[0] >= 1.0 - 1e-12
    assert survival[-1] <= 1e-12
    assert np.all(np.diff(survival) <= 0.0)

def test_pmf_sums_to_one(law_kmaj3):
    lo, hi = law_kmaj3.support()
    assert float(np.sum(law_kmaj3.pmf(np.arange(lo, hi + 1)))) == pytest.approx(1.0, abs=1e-9)

def test_median_sits_near_centering(law_kmaj3):
    lo, hi = law_kmaj3.support()
    s = np.arange(lo, hi + 1)
    median = int(s[np.argmax(law_kmaj3.survival(s) < 0.5)])
    sigma = math.sqrt(0.2)
    expected = 0.5 * math.log(N, 1.5) + math.log(math.log(N), 2) - math.log(0.6745 * sigma, 1.5)
    assert abs(median - expected) <= 2.0

def test_upper_tail_decays_by_gamma(law_kmaj3):
    _, hi = law_kmaj3.support()
    s = np.arange(hi - 40, hi)
    survival = law_kmaj3.survival(s)
    deep = s[(survival > 1e-9) & (survival < 1e-5)]
    assert deep.size >= 2
    ratio = law_kmaj3.survival(deep[1]) / law_kmaj3.survival(deep[0])
    assert ratio == pytest.approx(1 / 1.5, rel=1e-3)

def test_survival_is_invariant_under_sign_of_bias(g_kmaj3):
    plus = runtime_cdf_prediction(KMaj(3), N, 0.4, g_kmaj3)
    minus = runtime_cdf_prediction(KMaj(3), N, -0.4, g_kmaj3)
    s = np.arange(10, 40)
    np.testing.assert_allclose(plus.survival(s), minus.survival(s), atol=1e-12)
    assert plus.win_probability() + minus.win_probability() == 1.0

@pytest.mark.parametrize("offset", [-1, 0, 2])
def test_quadrature_agrees_with_gaussian_mass(law_kmaj3, offset):
    s = int(round(law_kmaj3.mean_runtime())) + offset
    assert law_kmaj3.survival_by_quadrature(s) == pytest.approx(law_kmaj3.survival(s), abs=1e-5)

def test_mean_runtime_is_sum_of_survival(law_kmaj3):
    lo, hi = law_kmaj3.support()
    assert lo > 0
    expected = float(np.sum(law_kmaj3.survival(np.arange(1, hi + 1))))
    assert law_kmaj3.mean_runtime() == pytest.approx(expected, rel=1e-12)

def test_to_frame_and_metadata(law_kmaj3):
    frame = law_kmaj3.to_frame()
    assert list(frame.columns) == ["s", "P_R_geq_s"]
    assert frame["s"].iloc[0] == max(0, law_kmaj3.support()[0])
    assert law_kmaj3.to_frame(5, 9)["s"].tolist() == [5, 6, 7, 8, 9]
    meta = law_kmaj3.metadata()
    assert meta["n"] == N
    assert meta["m"] == 2
    assert meta["win_probability"] == 0.5
    assert law_kmaj3.label == "kmaj:3"

def test_prediction_rejects_mismatched_tabulation(g_kmaj3):
    with pytest.raises(ValidationError, match="g tabulation is for kmaj:3"):
        runtime_cdf_prediction(KMaj(5), N, 0.0, g_kmaj3)

# Test cases for subsequence_limit_pmf

def test_subsequence_pmf_is_normalised(g_kmaj3):
    pmf = subsequence_limit_pmf(KMaj(3), 0.3, 0.6, 0.0, g_kmaj3)
    assert sum(pmf.values()) == pytest.approx(1.0, abs=1e-6)
    assert all(mass >= 0.0 for mass in pmf.values())

def test_runtime_law_is_a_shifted_subsequence_law(g_kmaj3, law_kmaj3):
    half_log_n = 0.5 * math.log(N, law_kmaj3.gamma)
    log_log_n = math.log(math.log(N), law_kmaj3.m)
    a, b = math.floor(half_log_n), math.floor(log_log_n)
    pmf = subsequence_limit_pmf(KMaj(3), half_log_n - a, log_log_n - b, 0.0, g_kmaj3)
    for s in range(min(pmf) + a + b, max(pmf) + a + b + 1):
        tail = sum(mass for j, mass in pmf.items() if j >= s - a - b)
        assert law_kmaj3.survival(s) == pytest.approx(tail, abs=1e-9), f"s={s}"

def test_subsequence_lower_tail_collapses_doubly_exponentially(g_kmaj3):
    pmf = subsequence_limit_pmf(KMaj(3), 0.0, 0.0, 0.0, g_kmaj3)

    def at_most(t):
        return sum(mass for j, mass in pmf.items() if j <= t)

    assert min(pmf) <= -4
    assert 0.0 < at_most(-3) < at_most(-2) < at_most(-1)
    assert at_most(-3) / at_most(-2) < at_most(-2) / at_most(-1)

@pytest.mark.parametrize("x, y", [(1.0, 0.2), (0.2, -0.1)])
def test_subsequence_pmf_rejects_offsets_outside_unit_interval(g_kmaj3, x, y):
    with pytest.raises(ValidationError, match="must lie in \\[0, 1\\)"):
        subsequence_limit_pmf(KMaj(3), x, y, 0.0, g_kmaj3)

# Test cases for concentration_set

def test_concentration_set_for_large_bias(g_kmaj3):
    s_star, support = concentration_set(KMaj(3), N, 100.0, g_kmaj3)
    assert s_star == math.ceil(concentration_value(KMaj(3), N, 100.0, g_kmaj3))
    assert support == frozenset({s_star - 1, s_star})
    assert abs(s_star - centering(KMaj(3), N, 100.0)) <= 2

def test_concentration_value_decreases_with_bias(g_kmaj3):
    values = [concentration_value(KMaj(3), N, d, g_kmaj3) for d in (5.0, 10.0, 25.0, 50.0, 100.0, 200.0, 500.0)]
    assert all(later < earlier for earlier, later in zip(values, values[1:]))

def test_concentration_at_the_half_root_n_boundary(g_kmaj3):
    d = math.sqrt(N) / 2
    base = math.log(2, 1.5)
    expected = base + math.log2(math.log(N)) + float(g_kmaj3.evaluate(base))
    assert concentration_value(KMaj(3), N, d, g_kmaj3) == pytest.approx(expected, rel=1e-12)
    s_star, _ = concentration_set(KMaj(3), N, d, g_kmaj3)
    assert s_star == math.ceil(expected)
    assert s_star <= math.ceil(math.log2(math.log(N))) + 2

@pytest.mark.parametrize("d", [0.0, -3.0])
def test_concentration_value_rejects_non_positive_bias(g_kmaj3, d):
    with pytest.raises(ValidationError, match="d must be positive"):
        concentration_value(KMaj(3), N, d, g_kmaj3)

# Test cases for z_density

@pytest.mark.parametrize("d", [0.0, 1.0])
def test_z_density_integrates_to_one(d):
    frame = z_density(KMaj(3), d)
    assert list(frame.columns) == ["w", "density"]
    assert (frame["density"] >= 0.0).all()
    assert np.trapezoid(frame["density"], frame["w"]) == pytest.approx(1.0, abs=1e-4)

def test_z_density_on_custom_grid():
    grid = np.array([0.0, 1.0, 2.0])
    frame = z_density(KMaj(3), 0.0, grid)
    np.testing.assert_array_equal(frame["w"], grid)
