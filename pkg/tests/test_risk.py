import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from robhedge.errors import DomainError, ParameterError
from robhedge.risk import (DistortionSpec, alpha_beta_from_tails, cvar_empirical, kde_cdf,
                           kde_pdf, rdeu_empirical, silverman_half_bandwidth,
                           tail_expectations, wasserstein_p)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
samples = arrays(np.float64, st.integers(10, 60), elements=finite)
specs = st.builds(lambda a, gap, p: DistortionSpec.alpha_beta(a, min(a + gap, 0.99), p),
                  st.floats(0.01, 0.6), st.floats(0.0, 0.4), st.floats(0.0, 1.0))


def piecewise_trapezoid(f, breaks, n=100_000):
    """Trapezoid rule on n nodes, split at the breakpoints with one-sided limits."""
    edges = [0.0, *sorted(breaks), 1.0]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        k = max(2, int(n * (hi - lo)))
        u = np.linspace(lo, hi, k)
        inner = 1e-12 * (hi - lo)
        u[0], u[-1] = lo + inner, hi - inner
        total += np.trapezoid(f(u), np.linspace(lo, hi, k))
    return total


def test_gamma_cvar_example():
    g = DistortionSpec.cvar(0.2)
    np.testing.assert_allclose(g.gamma([0.0, 0.1, 0.2, 0.2001, 0.9]), [5, 5, 5, 0, 0])


def test_gamma_alpha_beta_example():
    g = DistortionSpec.alpha_beta(0.1, 0.9, 0.7)
    assert g.eta == pytest.approx(0.1)
    np.testing.assert_allclose(g.gamma([0.05, 0.5, 0.95]), [7, 0, 3])


@pytest.mark.parametrize("spec", [DistortionSpec.cvar(0.2), DistortionSpec.alpha_beta(0.1, 0.9, 0.7),
                                  DistortionSpec.alpha_beta(0.137, 0.61, 0.25), DistortionSpec.mean()])
def test_gamma_integrates_to_one(spec):
    breaks = [] if spec.uniform else [spec.alpha, spec.beta]
    assert abs(piecewise_trapezoid(spec.gamma, breaks) - 1) < 1e-6
    for n in (1, 7, 1000):
        assert abs(spec.cell_weights(n).sum() - 1) < 1e-12


@given(specs)
def test_cell_weights_normalised(spec):
    assert abs(spec.cell_weights(37).sum() - 1) < 1e-12


def test_invalid_distortion():
    with pytest.raises(ParameterError):
        DistortionSpec.alpha_beta(0.5, 0.4, 0.5)
    with pytest.raises(ParameterError):
        DistortionSpec.alpha_beta(0.1, 0.9, 1.5)


def test_rdeu_cvar_example():
    assert rdeu_empirical([-2, -1, 0, 1], DistortionSpec.cvar(0.25)) == pytest.approx(2.0)


def test_rdeu_uniform_is_negative_mean(rng):
    x = rng.normal(size=101)
    assert rdeu_empirical(x, DistortionSpec.mean()) == pytest.approx(-x.mean(), abs=1e-12)


def test_rdeu_empty():
    with pytest.raises(DomainError):
        rdeu_empirical([], DistortionSpec.cvar(0.2))


@given(samples, specs, st.floats(-20, 20))
def test_translation_equivariance(x, spec, m):
    assert abs(rdeu_empirical(x + m, spec) - (rdeu_empirical(x, spec) - m)) < 1e-10


@given(samples, specs, st.floats(0.01, 20))
def test_positive_homogeneity(x, spec, b):
    assert abs(rdeu_empirical(b * x, spec) - b * rdeu_empirical(x, spec)) < 1e-10 * (1 + b * np.abs(x).max())


@given(samples, specs, arrays(np.float64, 60, elements=st.floats(0, 5)))
def test_monotonicity(x, spec, bump):
    y = np.sort(x) + bump[: x.size]
    assert rdeu_empirical(x, spec) >= rdeu_empirical(y, spec) - 1e-10


def test_cvar_standard_normal():
    x = np.random.default_rng(1).standard_normal(100_000)
    oracle = stats.norm.pdf(stats.norm.ppf(0.2)) / 0.2
    assert oracle == pytest.approx(1.3998, abs=1e-4)
    assert abs(cvar_empirical(x, 0.2) - oracle) < 0.02


def test_cvar_constant_and_definition(rng):
    assert cvar_empirical(np.full(50, 3.5), 0.2) == pytest.approx(-3.5)
    x = rng.normal(size=333)
    assert cvar_empirical(x, 0.2) == rdeu_empirical(x, DistortionSpec.alpha_beta(0.2, 0.5, 1.0))


def test_tail_expectations_example():
    lte, ute = tail_expectations(np.arange(1, 11, dtype=float), 0.2, 0.8)
    assert lte == pytest.approx(0.3) and ute == pytest.approx(1.9)


def test_tail_expectations_symmetry(rng):
    x = rng.normal(size=500)
    x = np.concatenate([x, -x])
    lte, ute = tail_expectations(x, 0.1, 0.9)
    assert lte == pytest.approx(-ute, abs=1e-12)


def test_tail_expectations_empty_lower_tail():
    with pytest.raises(DomainError):
        tail_expectations([1.0, 2.0, 3.0], 0.2, 0.8)


@pytest.mark.parametrize("p", [0.0, 0.3, 0.7, 0.84, 1.0])
def test_tail_decomposition_reproduces_rdeu(rng, p):
    x = rng.normal(0.1, 1.3, size=1000)
    spec = DistortionSpec.alpha_beta(0.1, 0.9, p)
    lte, ute = tail_expectations(x, 0.1, 0.9)
    assert abs(alpha_beta_from_tails(lte, ute, spec) - rdeu_empirical(x, spec)) < 1e-10
    if 0 < p < 1:
        # a minus sign in front of the upper-tail term does not reproduce it
        wrong = -(p * lte - (1 - p) * ute) / spec.eta
        assert abs(wrong - rdeu_empirical(x, spec)) > 1e-3


def test_wasserstein_examples():
    assert wasserstein_p([0, 1], [1, 2], 1) == pytest.approx(1.0)
    assert wasserstein_p([3, 1, 2], [2, 3, 1], 2) == 0.0
    with pytest.raises(DomainError):
        wasserstein_p([1, 2], [1, 2, 3])


@given(samples, st.floats(-30, 30))
def test_wasserstein_shift(x, m):
    assert abs(wasserstein_p(x, x + m, 1) - abs(m)) < 1e-12 * (1 + np.abs(x).max())


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 2.0]))
def test_wasserstein_metric_axioms(seed, order):
    r = np.random.default_rng(seed)
    a, b, c = r.normal(size=(3, 40)) * r.uniform(0.1, 3, size=(3, 1))
    dab, dba = wasserstein_p(a, b, order), wasserstein_p(b, a, order)
    assert dab == pytest.approx(dba, abs=1e-12) and dab >= 0
    assert dab <= wasserstein_p(a, c, order) + wasserstein_p(c, b, order) + 1e-12


def test_silverman_value():
    x = np.random.default_rng(0).normal(size=100_000)
    x = (x - x.mean()) / x.std(ddof=1)
    assert silverman_half_bandwidth(x) == pytest.approx(0.053, rel=1e-12)


def test_silverman_scaling_and_floor(rng):
    x = rng.normal(size=200)
    assert silverman_half_bandwidth(-3 * x) == pytest.approx(3 * silverman_half_bandwidth(x))
    with pytest.warns(UserWarning):
        assert silverman_half_bandwidth(np.full(10, 2.0)) == pytest.approx(3e-8)


def test_kde_limits_and_symmetry(rng):
    x = rng.normal(size=50)
    h = 0.3
    assert kde_cdf(x.min() - 20 * h, x, h) < 1e-6
    assert kde_cdf(x.max() + 20 * h, x, h) > 1 - 1e-6
    assert kde_cdf(0.0, [0.0], 1.0) == 0.5
    with pytest.raises(ParameterError):
        kde_pdf(0.0, x, 0.0)


def test_kde_pdf_normalised_and_cdf_monotone(rng):
    x = rng.normal(size=80)
    h = silverman_half_bandwidth(x)
    grid = np.linspace(x.min() - 10 * h, x.max() + 10 * h, 20_001)
    assert abs(np.trapezoid(kde_pdf(grid, x, h), grid) - 1) < 1e-4
    F = kde_cdf(grid, x, h)
    assert np.all(np.diff(F) >= 0) and np.all(kde_pdf(grid, x, h) >= 0)
