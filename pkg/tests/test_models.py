"""Model parameter sets, coefficient tables, transforms and constraints."""

import math

import numpy as np
import pytest

from igafin.models import (AfvParams, LelandParams, accrued_interest,
                           afv_terminal, apply_B_constraints,
                           apply_joint_constraints, calibrate_weights,
                           constraint_state, default_domain,
                           default_source_terms, leland_inverse,
                           leland_payoff_vhat, leland_transform,
                           penalty_terms, price_from_vhat,
                           unified_coefficients, vhat_from_price)


def _table3_params(**overrides):
    base = dict(rate=0.05, sigma=0.2, maturity=5.0, face_value=100.0,
                conversion_ratio=1.0, s_initial=100.0, hazard_rate=0.02,
                recovery=0.0, eta=0.0,
                coupons=tuple((0.5 * i, 4.0) for i in range(1, 11)),
                call_window=(2.0, 5.0, 110.0), put_window=(3.0, 3.0, 105.0),
                rho=1.0e6, newton_tol=1.0e-6)
    base.update(overrides)
    return AfvParams(**base)


class TestLelandParams:
    def test_derived_quantities(self):
        p = LelandParams(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)
        assert p.kappa == pytest.approx(2.5)
        assert p.tau_max == pytest.approx(0.02)

    def test_from_costs(self):
        p = LelandParams.from_costs(0.1, 0.2, 100.0, 1.0, cost=0.02,
                                    rebalance_dt=0.01)
        expect = math.sqrt(2.0 / math.pi) * 0.02 / (0.2 * 0.1)
        assert p.leland_number == pytest.approx(expect)

    @pytest.mark.parametrize("bad", [
        dict(sigma=0.0), dict(strike=-1.0), dict(maturity=0.0),
        dict(rate=-0.01), dict(leland_number=-0.1)])
    def test_validation(self, bad):
        kwargs = dict(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)
        kwargs.update(bad)
        with pytest.raises(ValueError):
            LelandParams(**kwargs)


class TestAfvParams:
    def test_terminal_coupon_detection(self):
        p = _table3_params()
        assert p.terminal_coupon == 4.0
        q = _table3_params(coupons=((1.0, 4.0),))
        assert q.terminal_coupon == 0.0

    def test_rho_zero_disables_exercise(self):
        p = _table3_params(rho=0.0)
        assert p.rho == 0.0

    @pytest.mark.parametrize("bad", [
        dict(sigma=-0.2), dict(eta=1.5), dict(recovery=-0.1),
        dict(hazard_rate=-0.02), dict(rho=0.5), dict(newton_tol=0.0),
        dict(coupons=((1.0, 4.0), (0.5, 4.0))),
        dict(coupons=((6.0, 4.0),)),
        dict(call_window=(4.0, 2.0, 110.0))])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            _table3_params(**bad)


class TestUnifiedCoefficients:
    def test_call_model(self):
        p = LelandParams(rate=0.1, sigma=0.2, strike=100.0, maturity=1.0)
        assert unified_coefficients(p, "vhat") == (1.0, -1.0, 0.0)
        with pytest.raises(ValueError):
            unified_coefficients(p, "U")

    def test_bond_model_reference_values(self):
        # sigma^2/2 = 0.02, r + p*eta - sigma^2/2 = 0.03, r + p = 0.07
        p = _table3_params()
        for unknown in ("U", "C"):
            y = unified_coefficients(p, unknown)
            assert y == pytest.approx((0.02, 0.03, 0.07))
        # zero recovery makes the cash-component reaction term coincide
        assert unified_coefficients(p, "B") == pytest.approx(
            (0.02, 0.03, 0.07))
        assert unified_coefficients(p, "U").diffusion == pytest.approx(0.02)

    def test_recovery_lowers_cash_reaction_only(self):
        p = _table3_params(recovery=0.4)
        yu = unified_coefficients(p, "U")
        yb = unified_coefficients(p, "B")
        assert yu.reaction == pytest.approx(0.07)
        assert yb.reaction == pytest.approx(0.07 - 0.4 * 0.02)
        with pytest.raises(ValueError):
            unified_coefficients(p, "vhat")


class TestLelandTransform:
    def test_maturity_is_identity(self):
        p = LelandParams(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)
        x, tau = leland_transform(80.0, 1.0, p)
        assert tau == 0.0
        assert x == pytest.approx(math.log(80.0))
        assert vhat_from_price(3.0, 0.0, p) == 3.0

    def test_reference_point(self):
        p = LelandParams(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)
        x, tau = leland_transform(100.0, 0.0, p)
        assert tau == pytest.approx(0.02)
        assert x == pytest.approx(math.log(100.0) + 0.05)

    def test_roundtrip(self):
        rng = np.random.default_rng(510)
        p = LelandParams(rate=0.08, sigma=0.3, strike=50.0, maturity=2.0)
        for _ in range(100):
            s = float(rng.uniform(1.0, 400.0))
            t = float(rng.uniform(0.0, 2.0))
            x, tau = leland_transform(s, t, p)
            s2, t2 = leland_inverse(x, tau, p)
            assert s2 == pytest.approx(s, rel=1e-13)
            assert t2 == pytest.approx(t, abs=1e-13)
            v = float(rng.uniform(0.0, 100.0))
            assert price_from_vhat(vhat_from_price(v, tau, p), tau, p) \
                == pytest.approx(v, rel=1e-14, abs=1e-14)

    def test_rejects_nonpositive_price(self):
        p = LelandParams(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)
        with pytest.raises(ValueError):
            leland_transform(0.0, 0.5, p)

    def test_payoff_kink_values(self):
        p = LelandParams(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)
        assert leland_payoff_vhat(math.log(100.0), p) == pytest.approx(0.0)
        assert leland_payoff_vhat(math.log(200.0), p) == pytest.approx(100.0)
        assert leland_payoff_vhat(-30.0, p) == 0.0


class TestAfvTerminal:
    def test_reference_points(self):
        p = _table3_params()
        # redemption = face + final coupon = 104
        assert afv_terminal(90.0, p) == pytest.approx((104.0, 104.0, 0.0))
        assert afv_terminal(120.0, p) == pytest.approx((120.0, 104.0, 16.0))
        assert afv_terminal(104.0, p) == pytest.approx((104.0, 104.0, 0.0))

    def test_splitting_identity(self):
        rng = np.random.default_rng(511)
        p = _table3_params()
        s = rng.uniform(1.0, 500.0, 200)
        u, b, c = afv_terminal(s, p)
        assert np.abs(u - (b + c)).max() == 0.0


class TestAccruedInterest:
    def test_schedule_points(self):
        p = _table3_params()
        assert accrued_interest(0.5, p) == pytest.approx(4.0)
        assert accrued_interest(0.75, p) == pytest.approx(2.0)
        assert accrued_interest(0.5 + 1e-12, p) == pytest.approx(0.0, abs=1e-9)
        assert accrued_interest(0.0, p) == 0.0

    def test_no_coupons(self):
        p = _table3_params(coupons=())
        assert accrued_interest(1.3, p) == 0.0


class TestDefaultSourceTerms:
    def test_zero_recovery(self):
        p = _table3_params()
        x = np.array([-1.0, 0.0, 0.5])
        delta, gamma = default_source_terms(x, np.zeros(3), p)
        expect = 100.0 * np.exp(x)
        assert delta == pytest.approx(expect)
        assert gamma == pytest.approx(expect)

    def test_recovery_branch(self):
        p = _table3_params(recovery=0.5)
        # deep out of the money the recovered cash exceeds conversion value
        delta, gamma = default_source_terms(
            np.array([-4.0]), np.array([100.0]), p)
        assert delta[0] == pytest.approx(50.0)
        assert gamma[0] == 0.0

    def test_eta_haircut(self):
        p = _table3_params(eta=0.3)
        delta, _ = default_source_terms(np.array([0.0]), np.array([0.0]), p)
        assert delta[0] == pytest.approx(70.0)


class TestConstraintState:
    def test_window_edges_left_open(self):
        p = _table3_params()
        x = np.array([0.0])
        # call window (2, 5]: inactive exactly at the start, active at the end
        assert not np.isfinite(constraint_state(p, 2.0, x).b_call_dirty)
        assert np.isfinite(constraint_state(p, 2.5, x).b_call_dirty)
        assert np.isfinite(constraint_state(p, 5.0, x).b_call_dirty)

    def test_dirty_prices_include_accrual(self):
        p = _table3_params()
        st = constraint_state(p, 2.75, np.array([0.0]))
        assert st.b_call_dirty == pytest.approx(110.0 + 2.0)
        st3 = constraint_state(p, 3.0, np.array([0.0]), put_active=True)
        # t = 3 is a payment date: accrual has reset to the full coupon
        assert st3.b_put_dirty == pytest.approx(105.0 + 4.0)

    def test_coupon_settlement_nets_the_payment(self):
        p = _table3_params()
        st = constraint_state(p, 3.0, np.array([0.0]), put_active=True,
                              coupon_now=4.0)
        # pre-injection clamp: accrual resets, put floor surrenders the coupon
        assert st.b_put_dirty == pytest.approx(101.0)
        assert st.b_call_dirty == pytest.approx(110.0)

    def test_pointwise_bounds(self):
        p = _table3_params()
        x = np.array([-1.0, 0.0, 0.5])
        st = constraint_state(p, 4.0, x)
        ks = 100.0 * np.exp(x)
        assert st.conversion_value == pytest.approx(ks)
        assert st.u_star_call == pytest.approx(np.maximum(st.b_call_dirty, ks))
        assert np.all(st.u_star_put <= st.u_star_call + 1e-12)

    def test_inactive_windows_are_sentinels(self):
        p = _table3_params()
        st = constraint_state(p, 1.0, np.array([0.0]))
        assert st.b_call_dirty == math.inf
        assert st.b_put_dirty == -math.inf
        assert st.u_star_put == pytest.approx([100.0])  # conversion floor


class TestApplyConstraints:
    def test_call_ceiling(self):
        p = _table3_params()
        st = constraint_state(p, 5.0, np.array([0.0]))
        b = apply_B_constraints(np.array([120.0]), np.array([0.0]), st)
        assert b[0] == pytest.approx(st.b_call_dirty)

    def test_put_floor_counts_equity_component(self):
        p = _table3_params(put_window=(3.0, 3.0, 105.0), call_window=None)
        st = constraint_state(p, 3.0, np.array([0.0]), put_active=True)
        floor = st.b_put_dirty
        b = apply_B_constraints(np.array([0.0]), np.array([0.0]), st)
        assert b[0] == pytest.approx(floor)
        # equity already carries part of the floor
        b2 = apply_B_constraints(np.array([0.0]), np.array([40.0]), st)
        assert b2[0] == pytest.approx(floor - 40.0)

    def test_joint_clip_shifts_cash_component(self):
        p = _table3_params()
        x = np.array([0.3, 0.3])
        st = constraint_state(p, 4.0, x)
        u = np.array([100.0, 400.0])
        b = np.array([60.0, 60.0])
        b_new = apply_joint_constraints(b, u, st)
        ks = 100.0 * math.exp(0.3)
        # below the conversion floor the shift raises B; above the call
        # ceiling (here ks > call price) it lowers it
        assert b_new[0] == pytest.approx(60.0 + (ks - 100.0))
        assert b_new[1] == pytest.approx(60.0 + (st.u_star_call[1] - 400.0))

    def test_penalty_terms_signs_and_indicators(self):
        p = _table3_params()
        st = constraint_state(p, 5.0, np.array([0.0, 0.0]))
        u = np.array([st.u_star_put[0] - 1.0, st.u_star_call[1] + 2.0])
        pen, a_put, a_call = penalty_terms(u, st, rho=100.0)
        assert pen[0] == pytest.approx(100.0)
        assert pen[1] == pytest.approx(200.0)
        assert a_put.tolist() == [1.0, 0.0]
        assert a_call.tolist() == [0.0, 1.0]
        inside = 0.5 * (st.u_star_put + st.u_star_call)
        pen0, _, _ = penalty_terms(inside, st, rho=100.0)
        assert np.all(pen0 == 0.0)


class TestCalibrateWeights:
    def test_improves_kink_fit(self):
        from igafin.assembly import PhysicalMap
        from igafin.basis import (NurbsBasis, eval_spline_many,
                                  make_refined_open_knots)
        from igafin.assembly import group_project

        p = LelandParams(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)
        a, b = default_domain(p, "refined")
        knots = make_refined_open_knots(16, 3, 0.5, 0.75)
        pmap = PhysicalMap(a, b)
        payoff = lambda x: leland_payoff_vhat(x, p)
        w = calibrate_weights(knots, pmap, payoff, n_samples=401, sweeps=3)
        assert w.shape == (knots.n_basis,)
        assert np.all(w > 0)

        xi = np.linspace(0.0, 1.0, 1501)
        target = payoff(np.asarray(pmap.to_physical(xi)))

        def fit_error(weights):
            basis = NurbsBasis(knots, weights)
            from igafin.assembly import Collocation
            colloc = Collocation(basis)
            coeffs = colloc.project(payoff(np.asarray(
                pmap.to_physical(colloc.points))))
            return np.abs(eval_spline_many(basis, coeffs, xi) - target).max()

        assert fit_error(w) < fit_error(np.ones(knots.n_basis))

    def test_deterministic(self):
        from igafin.assembly import PhysicalMap
        from igafin.basis import make_refined_open_knots
        p = LelandParams(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)
        a, b = default_domain(p, "refined")
        knots = make_refined_open_knots(8, 3, 0.5, 0.8)
        pmap = PhysicalMap(a, b)
        payoff = lambda x: leland_payoff_vhat(x, p)
        w1 = calibrate_weights(knots, pmap, payoff, n_samples=201, sweeps=2)
        w2 = calibrate_weights(knots, pmap, payoff, n_samples=201, sweeps=2)
        assert np.array_equal(w1, w2)


class TestDefaultDomain:
    def test_model_specific_windows(self):
        afv = _table3_params()
        assert default_domain(afv) == (-6.0, 2.0)
        lin = LelandParams(rate=0.05, sigma=0.2, strike=100.0, maturity=1.0)
        c = math.log(100.0)
        assert default_domain(lin, "uniform") == pytest.approx(
            (c - 3.4425, c + 3.1613))
        assert default_domain(lin, "refined") == pytest.approx(
            (c - 3.3019, c + 3.3019))
        le = LelandParams(rate=0.1, sigma=0.2, strike=100.0, maturity=1.0,
                          leland_number=0.8)
        assert default_domain(le) == pytest.approx((c - 6.4, c + 6.4))
