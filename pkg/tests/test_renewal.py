from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bayes_qcd.detect import Calibration
from bayes_qcd.models import ArModel, DeterministicDrift, ExpModel
from bayes_qcd.prior import GeometricPrior
from bayes_qcd.renewal import (
    EstimateRefused,
    Order,
    add_approx,
    calibrate_threshold,
    cond_add_approx,
    default_level,
    estimate_overshoot,
    pfa_corrected,
)

# constants of the worked exponential example as written in the source material
I_TEXT, C_PI_01 = 0.193147, 3.250830


class SlowClaimExp(ExpModel):
    """Exponential model that overstates its drift, so the horizon 10 b / q is far too short."""

    @property
    def kl_number(self) -> float:
        return 50.0


class TestEstimateOvershoot:
    def test_exponential_q1(self):
        est = estimate_overshoot(ExpModel(1.0), b=20, n_trials=10_000, seed=1)
        assert abs(est.zeta_hat - 0.5) < 3 * est.se_zeta
        assert abs(est.kappa_bar_hat - 1.0) < 3 * est.se_kappa
        assert est.censored == 0 and est.b_used == 20

    def test_exponential_q3(self):
        est = estimate_overshoot(ExpModel(3.0), b=20, n_trials=10_000, seed=2)
        assert abs(est.zeta_hat - 0.25) < 3 * est.se_zeta
        assert abs(est.kappa_bar_hat - 3.0) < 3 * est.se_kappa

    def test_exponential_law_at_small_level(self):
        est = estimate_overshoot(ExpModel(1.0), b=5, n_trials=10_000, seed=3, keep_samples=True)
        assert stats.kstest(est.overshoots, stats.expon(scale=1.0).cdf).pvalue > 1e-3

    def test_drift_has_no_overshoot(self):
        est = estimate_overshoot(DeterministicDrift(0.5), b=10.0, n_trials=200, seed=0)
        assert est.zeta_hat == pytest.approx(1.0, abs=1e-12)
        assert est.kappa_bar_hat == pytest.approx(0.0, abs=1e-12)

    def test_stable_in_level(self):
        model = ArModel(1.0, 1.0, (0.5,))
        a = estimate_overshoot(model, b=25, n_trials=4000, seed=4)
        b = estimate_overshoot(model, b=50, n_trials=4000, seed=5)
        assert abs(a.zeta_hat - b.zeta_hat) < 3 * math.hypot(a.se_zeta, b.se_zeta)

    def test_default_level(self):
        assert default_level(ExpModel(1.0)) == 25.0
        assert default_level(DeterministicDrift(2.0)) == 50.0

    def test_reproducible(self):
        a = estimate_overshoot(ExpModel(1.0), b=10, n_trials=500, seed=9)
        b = estimate_overshoot(ExpModel(1.0), b=10, n_trials=500, seed=9)
        assert a == b

    def test_sharded_equals_serial(self):
        a = estimate_overshoot(ExpModel(1.0), b=10, n_trials=300, seed=9, keep_samples=True)
        b = estimate_overshoot(ExpModel(1.0), b=10, n_trials=300, seed=9, workers=3, keep_samples=True)
        assert np.array_equal(a.overshoots, b.overshoots)

    def test_censoring_refused(self):
        with pytest.raises(EstimateRefused, match="did not cross"):
            estimate_overshoot(SlowClaimExp(1.0), b=50, n_trials=200, seed=0)

    def test_bad_level(self):
        with pytest.raises(ValueError, match="positive"):
            estimate_overshoot(ExpModel(1.0), b=-1.0, n_trials=10)

    def test_as_dict(self):
        d = estimate_overshoot(ExpModel(1.0), b=5, n_trials=100, seed=0).as_dict()
        assert set(d) == {"zeta_hat", "kappa_bar_hat", "se_zeta", "se_kappa", "b_used", "n_trials", "censored"}


class TestPfaCorrected:
    def test_bound_recovered(self):
        assert pfa_corrected(100.0, 1.0) == 0.01

    def test_exponential_calibration(self):
        assert pfa_corrected(50.0, 0.5) == pytest.approx(0.01, rel=1e-15)
        assert pfa_corrected(200.0, 0.5) == pytest.approx(0.0025, rel=1e-15)

    @pytest.mark.parametrize("A, zeta", [(1.0, 0.5), (10.0, 0.0), (10.0, 1.5)])
    def test_invalid(self, A, zeta):
        with pytest.raises(ValueError):
            pfa_corrected(A, zeta)


class TestCalibrate:
    def test_conservative(self):
        p = calibrate_threshold(0.01)
        assert p.A == pytest.approx(100.0) and p.calibration is Calibration.CONSERVATIVE and p.alpha == 0.01

    def test_corrected(self):
        assert calibrate_threshold(0.01, "overshoot_corrected", 0.5).A == pytest.approx(200.0)
        assert calibrate_threshold(0.001, Calibration.OVERSHOOT_CORRECTED, 0.25).A == pytest.approx(4000.0)

    @pytest.mark.parametrize("alpha", [1.0, 1.5, 0.0])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError, match="alpha"):
            calibrate_threshold(alpha)

    def test_corrected_needs_zeta(self):
        with pytest.raises(ValueError, match="needs zeta"):
            calibrate_threshold(0.01, "overshoot_corrected")


class TestAddApprox:
    def test_worked_example_values(self):
        assert add_approx(200.0, I_TEXT, C_PI_01, 1.0, Order.HIGHER_ORDER) == pytest.approx(44.26, abs=0.005)
        assert add_approx(200.0, I_TEXT, C_PI_01, 1.0, "first_order") == pytest.approx(39.08, abs=0.005)

    def test_c_pi_from_prior(self):
        assert GeometricPrior(0.1).entropy_constant() == pytest.approx(C_PI_01, abs=1e-6)

    def test_no_overshoot_orders_coincide(self):
        assert add_approx(300.0, 0.4, 2.0, 0.0, Order.HIGHER_ORDER) == add_approx(300.0, 0.4, 2.0, 0.0, Order.FIRST_ORDER)

    def test_no_kappa_order(self):
        assert add_approx(math.e**3, 0.5, 1.0, 7.0, Order.NO_KAPPA_NO_MINUS_ONE) == pytest.approx(8.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1.01, 1e8), st.floats(0.01, 5), st.floats(0, 10), st.floats(0, 5))
    def test_slope_and_ordering(self, A, I, C, kappa):
        ho = add_approx(A, I, C, kappa, Order.HIGHER_ORDER)
        fo = add_approx(A, I, C, kappa, Order.FIRST_ORDER)
        assert ho >= fo
        assert add_approx(A * math.e, I, C, kappa) - ho == pytest.approx(1.0 / I, rel=1e-9)

    def test_invalid(self):
        with pytest.raises(ValueError):
            add_approx(1.0, 0.2, 1.0, 1.0)
        with pytest.raises(ValueError):
            add_approx(10.0, 0.0, 1.0, 1.0)


class TestCondAddApprox:
    def test_worked_example(self):
        val = cond_add_approx(200.0, 0.5, I_TEXT, 1.0, Order.HIGHER_ORDER)
        assert val == pytest.approx(math.log(400) / I_TEXT, rel=1e-12)
        assert val == pytest.approx(31.02, abs=0.005)

    def test_affine_in_k(self):
        prior, I = GeometricPrior(0.5), 0.3
        d = [cond_add_approx(200.0, prior.pi(k + 1), I, 1.0) - cond_add_approx(200.0, prior.pi(k), I, 1.0) for k in (1, 7, 30)]
        assert d == pytest.approx([abs(math.log(0.5)) / I] * 3, rel=1e-10)

    def test_orders_differ_by_kappa(self):
        ho = cond_add_approx(200.0, 0.1, 0.25, 1.0, "higher_order")
        fo = cond_add_approx(200.0, 0.1, 0.25, 1.0, "first_order")
        assert ho - fo == pytest.approx(1.0 / 0.25)

    def test_zero_mass_rejected(self):
        with pytest.raises(ValueError, match="pi_k"):
            cond_add_approx(200.0, 0.0, 0.2, 1.0)
