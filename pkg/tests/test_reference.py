"""Closed-form, finite-difference and hat-function reference solvers."""

import math

import numpy as np
import pytest

from igafin.models import AfvParams, LelandParams, default_domain
from igafin.reference import (bs_exact_call, bs_exact_greeks, fdm_solve_afv,
                              fdm_solve_leland, misfit_epsilon, p1fem_solve)
from igafin.stepper import (SchemeConfig, build_discretization,
                            leland_price_curve, run_leland)

LIN = LelandParams(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)


class TestClosedForm:
    def test_reference_value(self):
        assert bs_exact_call(100.0, 0.0, LIN) \
            == pytest.approx(10.450583572185565, abs=1e-12)

    def test_terminal_payoff(self):
        assert bs_exact_call(130.0, 1.0, LIN) == pytest.approx(30.0)
        assert bs_exact_call(70.0, 1.0, LIN) == pytest.approx(0.0)

    def test_deep_in_the_money_limit(self):
        v = bs_exact_call(1.0e6, 0.0, LIN)
        intrinsic = 1.0e6 - 100.0 * math.exp(-0.05)
        assert v == pytest.approx(intrinsic, rel=1e-9)

    def test_greeks_match_finite_differences(self):
        rng = np.random.default_rng(610)
        h = 1e-4
        for _ in range(20):
            s = float(rng.uniform(60.0, 160.0))
            t = float(rng.uniform(0.0, 0.8))
            delta, gamma, theta = bs_exact_greeks(s, t, LIN)
            fd_delta = (bs_exact_call(s + h, t, LIN)
                        - bs_exact_call(s - h, t, LIN)) / (2 * h)
            fd_gamma = (bs_exact_call(s + h, t, LIN)
                        - 2 * bs_exact_call(s, t, LIN)
                        + bs_exact_call(s - h, t, LIN)) / h ** 2
            fd_theta = (bs_exact_call(s, t + h, LIN)
                        - bs_exact_call(s, t - h, LIN)) / (2 * h)
            assert delta == pytest.approx(fd_delta, abs=1e-7)
            assert gamma == pytest.approx(fd_gamma, abs=1e-5)
            assert theta == pytest.approx(fd_theta, abs=1e-5)

    def test_delta_bounds(self):
        rng = np.random.default_rng(611)
        for _ in range(50):
            s = float(rng.uniform(10.0, 400.0))
            delta, gamma, _ = bs_exact_greeks(s, 0.3, LIN)
            assert 0.0 <= delta <= 1.0
            assert gamma >= 0.0


class TestFdmLeland:
    def test_converges_without_costs(self):
        a, b = default_domain(LIN)
        errs = []
        for n in (128, 256):
            res = fdm_solve_leland(LIN, a, b, n, 4 * n)
            tau = LIN.tau_max
            x = math.log(100.0) + LIN.kappa * tau
            v = math.exp(-LIN.kappa * tau) \
                * float(np.interp(x, res.x, res.values["vhat"]))
            errs.append(abs(v - bs_exact_call(100.0, 0.0, LIN)))
        assert errs[1] < errs[0]
        assert errs[1] < 0.05

    def test_costs_widen_the_spread(self):
        le = LelandParams(rate=0.1, sigma=0.2, strike=100.0, maturity=1.0,
                          leland_number=0.8)
        a, b = default_domain(le)
        res_le = fdm_solve_leland(le, a, b, 256, 320)
        lin = LelandParams(rate=0.1, sigma=0.2, strike=100.0, maturity=1.0)
        res_0 = fdm_solve_leland(lin, a, b, 256, 320)
        tau = le.tau_max
        x = math.log(100.0) + le.kappa * tau
        v_le = math.exp(-le.kappa * tau) * np.interp(x, res_le.x,
                                                     res_le.values["vhat"])
        v_0 = math.exp(-lin.kappa * tau) * np.interp(x, res_0.x,
                                                     res_0.values["vhat"])
        assert v_le > v_0 + 1.0

    def test_agrees_with_the_galerkin_march(self):
        le = LelandParams(rate=0.1, sigma=0.2, strike=100.0, maturity=1.0,
                          leland_number=0.8)
        a, b = default_domain(le)
        disc = build_discretization(a, b, 256)
        surf = run_leland(le, disc, SchemeConfig(n_steps=80))
        v_iga = float(leland_price_curve(le, disc, surf.final, [100.0])[0])
        res = fdm_solve_leland(le, a, b, 256, 80)
        tau = le.tau_max
        x = math.log(100.0) + le.kappa * tau
        v_fdm = math.exp(-le.kappa * tau) * float(
            np.interp(x, res.x, res.values["vhat"]))
        assert v_iga == pytest.approx(v_fdm, abs=0.25)


class TestFdmAfv:
    def _params(self, **overrides):
        base = dict(rate=0.05, sigma=0.2, maturity=5.0, face_value=100.0,
                    conversion_ratio=1.0, s_initial=100.0, hazard_rate=0.02,
                    recovery=0.0, eta=0.0,
                    coupons=tuple((0.5 * i, 4.0) for i in range(1, 11)),
                    call_window=(2.0, 5.0, 110.0),
                    put_window=(3.0, 3.0, 105.0), rho=1.0e6)
        base.update(overrides)
        return AfvParams(**base)

    def test_splitting_identity_when_unconstrained(self):
        p = self._params(rho=0.0, call_window=None, put_window=None,
                         hazard_rate=0.0)
        res = fdm_solve_afv(p, n_cells=64, n_steps=50)
        gap = np.abs(res.values["U"] - res.values["B"]
                     - res.values["C"]).max()
        assert gap < 1e-8

    def test_right_boundary_tracks_conversion(self):
        p = self._params()
        res = fdm_solve_afv(p, n_cells=64, n_steps=50)
        s_right = 100.0 * math.exp(res.x[-1])
        assert res.values["U"][-1] == pytest.approx(s_right, rel=0.02)

    def test_call_ceiling_respected(self):
        p = self._params(put_window=None)
        res = fdm_solve_afv(p, n_cells=128, n_steps=100)
        # at t = 0 the call window is closed, but the cash component can
        # never have grown past the ceiling plus one accrued coupon
        assert res.values["B"].max() <= 110.0 + 4.0 + 1e-6


class TestP1Fem:
    def test_is_the_degree_one_pipeline(self):
        a, b = default_domain(LIN)
        disc, surf = p1fem_solve(LIN, a, b, 64, SchemeConfig(n_steps=32))
        assert disc.basis.degree == 1
        direct = build_discretization(a, b, 64, degree=1)
        expect = run_leland(LIN, direct, SchemeConfig(n_steps=32))
        assert np.array_equal(surf.final.coeffs["vhat"],
                              expect.final.coeffs["vhat"])

    def test_hat_functions_converge(self):
        a, b = default_domain(LIN)
        errs = []
        for n in (128, 512):
            disc, surf = p1fem_solve(LIN, a, b, n, SchemeConfig(n_steps=n))
            v = float(leland_price_curve(LIN, disc, surf.final, [100.0])[0])
            errs.append(abs(v - bs_exact_call(100.0, 0.0, LIN)))
        assert errs[1] < errs[0] / 4.0


class TestMisfit:
    def test_plain_two_norm(self):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([1.0, 0.0, 7.0])
        assert misfit_epsilon(a, b) == pytest.approx(math.sqrt(4.0 + 16.0))
        assert misfit_epsilon(a, a) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="grid"):
            misfit_epsilon(np.ones(3), np.ones(4))
