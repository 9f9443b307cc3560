from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayes_qcd.prior import GeometricPrior, TabulatedPrior, make_prior


def entropy_by_summation(rho: float) -> float:
    """Oracle: sum pi_k |log pi_k| until the remaining tail is below 1e-15."""
    total, k = [], 1
    while (1 - rho) ** (k - 1) > 1e-15:
        pk = rho * (1 - rho) ** (k - 1)
        total.append(-pk * math.log(pk))
        k += 1
    return math.fsum(total)


class TestGeometric:
    def test_masses(self):
        p = GeometricPrior(0.5)
        assert p.pi(1) == pytest.approx(0.5, abs=1e-15)
        assert p.pi(3) == pytest.approx(0.125, abs=1e-15)

    def test_tails(self):
        p = GeometricPrior(0.5)
        assert p.tail(1) == 1.0
        assert p.tail(4) == pytest.approx(0.125, abs=1e-15)

    @pytest.mark.parametrize("rho, expected", [(0.5, 1.386294361119891), (0.1, 3.250829733914482)])
    def test_entropy_constant_closed_form(self, rho, expected):
        # expected values: log((1-rho)/rho) - log(1-rho)/rho evaluated by hand
        assert GeometricPrior(rho).entropy_constant() == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("rho", [0.01, 0.1, 0.37, 0.5, 0.9])
    def test_entropy_matches_direct_sum(self, rho):
        assert GeometricPrior(rho).entropy_constant() == pytest.approx(entropy_by_summation(rho), abs=1e-9)

    def test_zero_index_rejected(self):
        with pytest.raises(ValueError, match="no mass at 0"):
            GeometricPrior(0.3).pi(0)

    @pytest.mark.parametrize("rho", [0.0, 1.0, -0.2, 1.5])
    def test_bad_rho(self, rho):
        with pytest.raises(ValueError, match="0 < rho < 1"):
            GeometricPrior(rho)

    def test_sampling_mean(self):
        rng = np.random.default_rng(11)
        p = GeometricPrior(0.2)
        draws = np.array([p.sample(rng) for _ in range(20_000)])
        assert draws.min() >= 1
        # E lambda = 1 / rho = 5, sd = sqrt(1 - rho) / rho
        assert abs(draws.mean() - 5.0) < 4 * math.sqrt(0.8) / 0.2 / math.sqrt(len(draws))


class TestTabulated:
    def test_lookup(self):
        p = TabulatedPrior((0.2, 0.3, 0.5))
        assert p.pi(2) == pytest.approx(0.3, abs=1e-15)
        assert p.tail(3) == pytest.approx(0.5, abs=1e-15)
        assert p.support == 3

    def test_beyond_support(self):
        p = TabulatedPrior((0.2, 0.3, 0.5))
        assert p.pi(4) == 0.0
        assert p.tail(4) == 0.0
        assert p.tail(100) == 0.0

    def test_degenerate_entropy(self):
        assert TabulatedPrior((1.0,)).entropy_constant() == 0.0

    def test_normalizes_with_warning(self):
        with pytest.warns(UserWarning, match="normalizing"):
            p = TabulatedPrior((1.0, 1.0, 2.0))
        assert p.weights == pytest.approx((0.25, 0.25, 0.5))

    def test_no_warning_when_normalized(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            TabulatedPrior((0.25, 0.75))

    def test_trailing_zeros_trimmed(self):
        p = TabulatedPrior((0.5, 0.5, 0.0, 0.0))
        assert p.support == 2

    def test_interior_zero(self):
        p = TabulatedPrior((0.5, 0.0, 0.5))
        assert p.pi(2) == 0.0
        assert p.tail(2) == pytest.approx(0.5)
        assert p.entropy_constant() == pytest.approx(math.log(2))

    @pytest.mark.parametrize("weights, msg", [((), "non-empty"), ((0.5, -0.1), "nonnegative"), ((0.0, 0.0), "sum to zero")])
    def test_invalid(self, weights, msg):
        with pytest.raises(ValueError, match=msg):
            TabulatedPrior(weights)

    def test_mass_at_zero_rejected(self):
        with pytest.raises(ValueError, match="k = 0"):
            TabulatedPrior.from_pmf({0: 0.1, 1: 0.9})

    def test_from_pmf(self):
        p = TabulatedPrior.from_pmf({1: 0.5, 3: 0.5})
        assert p.weights == (0.5, 0.0, 0.5)

    def test_from_csv(self, tmp_path):
        f = tmp_path / "w.csv"
        f.write_text("weight\n# comment\n1\n3\n")
        with pytest.warns(UserWarning):
            p = TabulatedPrior.from_csv(f)
        assert p.weights == pytest.approx((0.25, 0.75))

    def test_sampling_frequencies(self):
        p = TabulatedPrior((0.2, 0.3, 0.5))
        rng = np.random.default_rng(5)
        draws = np.array([p.sample(rng) for _ in range(20_000)])
        freq = np.bincount(draws, minlength=4)[1:] / len(draws)
        assert np.all(np.abs(freq - np.array([0.2, 0.3, 0.5])) < 0.015)


class TestMakePrior:
    def test_geometric(self):
        assert make_prior({"kind": "geometric", "rho": 0.3}) == GeometricPrior(0.3)

    def test_tabulated(self):
        assert make_prior({"kind": "tabulated", "weights": [0.5, 0.5]}).support == 2

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown prior kind"):
            make_prior({"kind": "poisson"})


weights_strategy = st.lists(st.floats(0.0, 10.0), min_size=1, max_size=40).filter(lambda w: sum(w) > 1e-3)


class TestInvariants:
    @settings(max_examples=60, deadline=None)
    @given(weights_strategy)
    def test_tabulated_tail_difference(self, weights):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p = TabulatedPrior(tuple(weights))
        assert math.fsum(p.pi(k) for k in range(1, p.support + 1)) == pytest.approx(1.0, abs=1e-12)
        assert p.tail(1) == pytest.approx(1.0, abs=1e-12)
        for n in range(1, p.support + 1):
            assert p.tail(n) - p.tail(n + 1) == pytest.approx(p.pi(n), abs=1e-15)
            assert p.tail(n + 1) <= p.tail(n)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.001, 0.999), st.integers(1, 500))
    def test_geometric_tail_difference(self, rho, n):
        p = GeometricPrior(rho)
        assert p.tail(n) - p.tail(n + 1) == pytest.approx(p.pi(n), rel=1e-9, abs=1e-300)
