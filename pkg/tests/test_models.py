import math

import numpy as np
import pytest

from fwdsmile.models import (
    AbsClamped,
    ConstantVol,
    ExtendedSteinStein,
    Identity,
    ModelSpec,
    OuParams,
    SmoothedAbs,
)

OU = OuParams(kappa=1.0, m=0.2, lam=0.25, y0=0.25)


class TestOuParams:
    def test_mean_and_variance(self):
        assert OU.mean(0.25, 0.0, 0.0) == pytest.approx(0.25)
        d = math.exp(-0.5)
        assert OU.mean(0.25, 0.0, 0.5) == pytest.approx(0.25 * d + 0.2 * (1 - d))
        assert OU.variance(0.0, 0.5) == pytest.approx(
            0.25**2 * (1 - math.exp(-1.0)) / 2.0)
        assert OU.variance(0.3, 0.3) == 0.0

    def test_mean_reversion_limit(self):
        assert OU.mean(1.0, 0.0, 50.0) == pytest.approx(0.2)
        assert OU.variance(0.0, 50.0) == pytest.approx(0.25**2 / 2.0)

    def test_kappa_zero_limits(self):
        flat = OuParams(kappa=0.0, m=0.0, lam=0.3, y0=0.1)
        assert flat.mean(0.1, 0.0, 2.0) == pytest.approx(0.1)
        assert flat.variance(0.0, 2.0) == pytest.approx(0.3**2 * 2.0)
        assert flat.malliavin_d_y(0.0, 2.0) == pytest.approx(0.3)

    def test_lam_zero_deterministic(self):
        det = OuParams(kappa=1.0, m=0.2, lam=0.0, y0=0.5)
        assert det.variance(0.0, 1.0) == 0.0
        assert det.malliavin_d_y(0.2, 1.0) == 0.0

    def test_malliavin_d_y(self):
        assert OU.malliavin_d_y(0.2, 0.7) == pytest.approx(0.25 * math.exp(-0.5))
        assert OU.malliavin_d_y(0.7, 0.7) == pytest.approx(0.25)

    def test_empirical_transition_moments(self):
        # exact transition vs a large Euler simulation at fine steps
        rng = np.random.default_rng(7)
        n, steps, dt = 1_000_000, 128, 0.5 / 128
        y = np.full(n, OU.y0)
        for _ in range(steps):
            y += OU.kappa * (OU.m - y) * dt + OU.lam * math.sqrt(dt) * rng.standard_normal(n)
        se_mean = y.std() / math.sqrt(n)
        assert abs(y.mean() - OU.mean(OU.y0, 0.0, 0.5)) < 3 * se_mean + 5e-4
        assert abs(y.var() - OU.variance(0.0, 0.5)) / OU.variance(0.0, 0.5) < 0.01

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            OuParams(kappa=-1.0, m=0.2, lam=0.25, y0=0.25)
        with pytest.raises(ValueError):
            OuParams(kappa=1.0, m=0.2, lam=-0.1, y0=0.25)
        with pytest.raises(ValueError):
            OuParams(kappa=1.0, m=math.nan, lam=0.25, y0=0.25)
        with pytest.raises(ValueError):
            OU.mean(0.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            OU.variance(1.0, 0.5)


class TestVolFunctions:
    def test_identity(self):
        f = Identity()
        y = np.array([-1.0, 0.0, 2.0])
        assert np.allclose(f(y), y)
        assert np.allclose(f.fprime(y), 1.0)
        assert not f.corner_mask(y).any()
        assert f.bounded is False

    def test_abs_clamped(self):
        f = AbsClamped(sig_min=0.01, sig_max=2.0)
        y = np.array([-3.0, -0.5, 0.0, 0.005, 0.5, 3.0])
        assert np.allclose(f(y), [2.0, 0.5, 0.01, 0.01, 0.5, 2.0])
        assert np.allclose(f.fprime(y), [0.0, -1.0, 0.0, 0.0, 1.0, 0.0])
        assert list(f.corner_mask(y)) == [True, False, True, True, False, True]

    def test_smoothed_abs(self):
        f = SmoothedAbs(eps=1e-3, sig_min=0.01, sig_max=2.0)
        y = np.array([-0.5, 0.0, 0.5])
        assert np.allclose(f(y), np.clip(np.sqrt(y**2 + 1e-6), 0.01, 2.0))
        assert f(np.array([0.0]))[0] == 0.01  # clamped from sqrt(eps^2)
        # fprime matches a central difference away from the clamps
        h = 1e-7
        for point in (-0.5, 0.03, 0.7):
            num = (f(np.array([point + h]))[0] - f(np.array([point - h]))[0]) / (2 * h)
            assert abs(f.fprime(np.array([point]))[0] - num) < 1e-6
        # zero derivative on the clamped plateaus
        assert f.fprime(np.array([0.0, 5.0]))[0] == 0.0
        assert f.fprime(np.array([0.0, 5.0]))[1] == 0.0
        assert f.bounded

    def test_vol_fn_validation(self):
        with pytest.raises(ValueError):
            SmoothedAbs(eps=0.0)
        with pytest.raises(ValueError):
            SmoothedAbs(sig_min=0.5, sig_max=0.1)
        with pytest.raises(ValueError):
            AbsClamped(sig_min=0.0)
        with pytest.raises(ValueError):
            ConstantVol(sigma=0.0)


class TestExtendedSteinStein:
    model = ExtendedSteinStein(ou=OU, vol_fn=SmoothedAbs())

    def test_malliavin_d_sigma_sq_chain_rule(self):
        y_s = np.array([-0.4, 0.1, 0.6])
        got = self.model.malliavin_d_sigma_sq(y_s, 0.2, 0.7)
        f, fp = self.model.vol_fn, self.model.vol_fn.fprime
        want = 2.0 * f(y_s) * fp(y_s) * 0.25 * math.exp(-0.5)
        assert np.allclose(got, want)

    def test_sigma_bar_sq_is_u_to_s_limit(self):
        y_s = np.array([0.3])
        lim = self.model.malliavin_d_sigma_sq(y_s, 0.7, 0.7)
        assert np.allclose(self.model.sigma_bar_sq(y_s), lim)

    def test_skew_quotient_identity_f(self):
        ident = ExtendedSteinStein(ou=OU, vol_fn=Identity())
        y_s = np.array([0.2, -0.5])
        assert np.allclose(ident.skew_quotient(y_s), 2.0 * OU.lam / y_s)


class TestModelSpec:
    def test_validation(self):
        vol = ConstantVol(0.2)
        ModelSpec(rate=0.01, rho=-0.5, x0=0.0, vol=vol)
        with pytest.raises(ValueError):
            ModelSpec(rate=0.01, rho=-1.5, x0=0.0, vol=vol)
        with pytest.raises(ValueError):
            ModelSpec(rate=math.inf, rho=0.0, x0=0.0, vol=vol)
        with pytest.raises(TypeError):
            ModelSpec(rate=0.0, rho=0.0, x0=0.0, vol="not a model")

    def test_is_constant_vol(self):
        assert ModelSpec(0.0, 0.0, 0.0, ConstantVol(0.2)).is_constant_vol
        stein = ModelSpec(0.0, 0.0, 0.0, ExtendedSteinStein(OU))
        assert not stein.is_constant_vol
