import math

import numpy as np
import pytest

from fwdsmile import forward_smile as fsm
from fwdsmile import mc_engine as mc
from fwdsmile.mc_engine import McConfig
from fwdsmile.models import (
    ConstantVol,
    ExtendedSteinStein,
    ModelSpec,
    OuParams,
    SmoothedAbs,
)

CONST = ModelSpec(rate=0.01, rho=-0.5, x0=0.0, vol=ConstantVol(0.2))
STEIN = ModelSpec(rate=0.01, rho=-0.5, x0=0.0,
                  vol=ExtendedSteinStein(OuParams(1.0, 0.2, 0.25, 0.25), SmoothedAbs()))


class TestContractSpec:
    def test_gap(self):
        c = fsm.ContractSpec(0.0, 0.5, 0.6, 0.0)
        assert c.gap == pytest.approx(0.1)

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            fsm.ContractSpec(0.6, 0.5, 0.7, 0.0)
        with pytest.raises(ValueError):
            fsm.ContractSpec(0.0, 0.5, 0.5, 0.0)


class TestAtmAlpha:
    def test_values(self):
        assert fsm.atm_alpha(0.5, 0.6, 0.0) == 0.0
        assert fsm.atm_alpha(0.5, 0.6, 0.05) == pytest.approx(0.005)

    def test_zeroes_d_sum(self):
        # at alpha*, d+ + d- = 0 for the forward BS price at x=0
        from scipy.optimize import brentq
        from fwdsmile import blackscholes as bs
        gap, vol, rate = 0.1, 0.3, 0.05

        def d_sum(alpha):
            dp, dm = bs.d_plus_minus(gap, 0.0, math.exp(alpha), vol, rate)
            return dp + dm

        root = brentq(d_sum, -0.1, 0.1, xtol=1e-12)
        assert abs(root - fsm.atm_alpha(0.5, 0.6, rate)) < 1e-10


def make_batch(model, gap, n_paths, seed, spy=400):
    grid = mc.SimGrid.build(0.0, 0.5, 0.5 + gap, spy)
    return mc.simulate(model, grid, n_paths, seed)


class TestImpliedForwardVol:
    def test_constant_vol_recovery(self):
        gap = 0.1
        contract = fsm.ContractSpec(0.0, 0.5, 0.5 + gap, fsm.atm_alpha(0.5, 0.6, 0.01))
        batch = make_batch(CONST, gap, 200_000, 21)
        price = mc.price_forward_start(batch, contract)
        point = fsm.implied_forward_vol(price, 0.0, 0.5, 0.5 + gap,
                                        contract.alpha, 0.01)
        assert point.error is None
        assert abs(point.vol - 0.2) < 3 * point.vol_se
        assert point.vol_se < 1e-3

    def test_boundary_price_flags(self):
        est = mc.McEstimate(0.0, 0.0, 10, 0)
        point = fsm.implied_forward_vol(est, 0.0, 0.5, 0.6, 0.1, 0.0)
        assert point.boundary
        assert point.vol == 0.0

    def test_unattainable_price_reports_error(self):
        est = mc.McEstimate(2.0, 0.0, 10, 0)
        point = fsm.implied_forward_vol(est, 0.0, 0.5, 0.6, 0.0, 0.0)
        assert point.error is not None
        assert math.isnan(point.vol)


class TestSmileSlice:
    def test_crn_points_share_paths(self):
        gap = 0.1
        contract = fsm.ContractSpec(0.0, 0.5, 0.5 + gap, 0.001)
        batch = make_batch(STEIN, gap, 50_000, 23)
        points = fsm.smile_slice(batch, contract, [-0.02, 0.0, 0.02])
        vols = [p.vol for p in points]
        assert all(np.isfinite(vols))
        # negative correlation: downside vol above upside vol
        assert vols[0] > vols[-1]


class TestAtmDerivatives:
    def test_constant_vol_flat_smile(self):
        gap = 0.1
        contract = fsm.ContractSpec(0.0, 0.5, 0.5 + gap, fsm.atm_alpha(0.5, 0.6, 0.01))
        batch = make_batch(CONST, gap, 200_000, 29)
        rep = fsm.atm_derivatives(batch, contract)
        assert abs(rep.level - 0.2) < max(3 * rep.level_se, 1e-3)
        assert abs(rep.skew) < 3 * rep.skew_se
        assert abs(rep.curvature) < 3 * rep.curvature_se
        assert not rep.underpowered

    def test_fd_step_signal_arm(self):
        gap = 0.1
        contract = fsm.ContractSpec(0.0, 0.5, 0.5 + gap, fsm.atm_alpha(0.5, 0.6, 0.01))
        batch = make_batch(CONST, gap, 100_000, 31)
        rep = fsm.atm_derivatives(batch, contract)
        # with CRN the noise floor must not bind at this budget
        assert rep.fd_step == pytest.approx(0.05 * math.sqrt(gap) * rep.level, rel=0.05)

    def test_explicit_h_respected(self):
        gap = 0.1
        contract = fsm.ContractSpec(0.0, 0.5, 0.5 + gap, fsm.atm_alpha(0.5, 0.6, 0.01))
        batch = make_batch(CONST, gap, 20_000, 37)
        rep = fsm.atm_derivatives(batch, contract, h=0.01)
        assert rep.fd_step == 0.01

    def test_streamed_matches_batch(self):
        gap = 0.1
        cfg = McConfig(n_paths=40_000, steps_per_year=100, seed=41, chunk_size=8192)
        contract = fsm.ContractSpec(0.0, 0.5, 0.5 + gap,
                                    fsm.atm_alpha(0.5, 0.6, STEIN.rate))
        grid = mc.SimGrid.build(0.0, 0.5, 0.5 + gap, 100)
        batch = mc.simulate(STEIN, grid, cfg.n_paths, cfg.seed,
                            chunk_size=cfg.chunk_size)
        direct = fsm.atm_derivatives(batch, contract, h=0.005)
        streamed = fsm.atm_derivatives_streamed(STEIN, contract, cfg, h=0.005)
        assert streamed.level == pytest.approx(direct.level, rel=1e-12)
        assert streamed.curvature == pytest.approx(direct.curvature, rel=1e-9)
        assert streamed.level_se == pytest.approx(direct.level_se, rel=1e-9)

    def test_negative_skew_for_negative_rho(self):
        gap = 0.1
        contract = fsm.ContractSpec(0.0, 0.5, 0.5 + gap,
                                    fsm.atm_alpha(0.5, 0.6, STEIN.rate))
        batch = make_batch(STEIN, gap, 100_000, 43)
        rep = fsm.atm_derivatives(batch, contract)
        assert rep.skew < -3 * rep.skew_se


class TestRichardson:
    def test_exact_on_linear_data(self):
        # values exactly linear in the gap extrapolate exactly
        gaps = [0.2, 0.1, 0.05]
        values = [1.0 + 2.0 * g for g in gaps]
        value, se = fsm._richardson(gaps, values, [0.0, 0.0, 0.0])
        assert value == pytest.approx(1.0)
        assert se == 0.0

    def test_se_combination(self):
        value, se = fsm._richardson([0.1, 0.05], [1.0, 1.0], [0.1, 0.1])
        assert se == pytest.approx(math.hypot(0.2, 0.1))


class TestConvergenceStudy:
    def test_constant_vol_levels_and_extrapolation(self):
        cfg = McConfig(n_paths=50_000, steps_per_year=100, seed=47)
        study = fsm.convergence_study(CONST, 0.0, 0.5, [0.1, 0.05], cfg)
        assert len(study.reports) == 2
        assert abs(study.level.value - 0.2) < max(3 * study.level.std_error, 2e-3)
        assert abs(study.skew.value) < 3 * study.skew.std_error
        # decorrelated seeds per gap
        assert study.reports[0].seed != study.reports[1].seed

    def test_rejects_bad_gap_lists(self):
        cfg = McConfig(n_paths=1000, steps_per_year=100, seed=1)
        with pytest.raises(ValueError):
            fsm.convergence_study(CONST, 0.0, 0.5, [0.05, 0.1], cfg)
        with pytest.raises(ValueError):
            fsm.convergence_study(CONST, 0.0, 0.5, [0.1, 0.001], cfg)

    def test_csv_rows_schema(self):
        cfg = McConfig(n_paths=20_000, steps_per_year=100, seed=53)
        study = fsm.convergence_study(CONST, 0.0, 0.5, [0.1], cfg)
        rows = fsm.reports_to_csv_rows(study.reports)
        assert len(rows) == 1
        assert len(rows[0]) == len(fsm.CSV_COLUMNS)
        assert rows[0][0] == pytest.approx(0.1)
        assert rows[0][-2] == 20_000
