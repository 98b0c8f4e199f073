"""Structural invariant suite shared by the CLI and the acceptance gate.

Each check exercises one property that the solvers silently rely on:
partition of unity, quadrature exactness, SPD mass / zero-row-sum stiffness,
agreement of the banded assembly with a dense quadrature oracle, NURBS
derivatives against finite differences, change-of-variable round trips,
reduction of the nonlinear steppers to the linear one, superposition of the
convertible-bond components, exact coupon injection, and post-run constraint
satisfaction.  The suite is cheap (a few seconds) and is meant to run before
any table experiment; the ``validate`` CLI verb and the acceptance tests both
call :func:`run_checks`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import PhysicalMap, assemble
from .basis import (NurbsBasis, eval_nurbs_all, eval_spline_many,
                    make_refined_open_knots, make_uniform_open_knots)
from .models import (AfvParams, LelandParams, constraint_state,
                     leland_inverse, leland_transform, penalty_terms,
                     unified_coefficients)
from .quadrature import gauss_legendre_rule
from .reference import fdm_solve_afv
from .stepper import (SchemeConfig, build_discretization, run_afv,
                      run_leland, step_leland, step_linear,
                      _coupon_levels, _put_level)

__all__ = ["CheckResult", "run_checks", "format_report"]

_SEED = 20240915


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = "ok  " if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return (f"{tag} {self.name}: {self.measured:.3e} "
                f"<= {self.tolerance:.1e}{extra}")


def _sample_bases() -> list[tuple[str, NurbsBasis]]:
    rng = np.random.default_rng(_SEED)
    uni = make_uniform_open_knots(16, 3)
    ref = make_refined_open_knots(16, 3, kink_xi=0.5, cluster_ratio=0.75)
    out = [
        ("uniform", NurbsBasis(uni, np.ones(uni.n_basis))),
        ("refined", NurbsBasis(ref, np.ones(ref.n_basis))),
        ("weighted", NurbsBasis(uni, rng.uniform(0.5, 2.0, uni.n_basis))),
        ("degree1", NurbsBasis(make_uniform_open_knots(16, 1),
                               np.ones(17))),
    ]
    return out


def check_partition_of_unity() -> CheckResult:
    rng = np.random.default_rng(_SEED)
    worst = 0.0
    for _, basis in _sample_bases():
        pts = np.concatenate([rng.uniform(0.0, 1.0, 200), [0.0, 1.0],
                              basis.knots.breakpoints])
        for xi in pts:
            worst = max(worst, abs(eval_nurbs_all(basis, float(xi)).sum() - 1.0))
    return CheckResult("partition_of_unity", worst <= 1e-12, worst, 1e-12)


def check_quadrature_exactness() -> CheckResult:
    rng = np.random.default_rng(_SEED)
    worst = 0.0
    for q in range(1, 9):
        rule = gauss_legendre_rule(q)
        a = rng.uniform(-2.0, 0.0)
        b = a + rng.uniform(0.5, 3.0)
        for d in range(2 * q):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            num = half * np.sum(rule.weights * (mid + half * rule.nodes) ** d)
            exact = (b ** (d + 1) - a ** (d + 1)) / (d + 1)
            worst = max(worst, abs(num - exact) / max(1.0, abs(exact)))
    return CheckResult("quadrature_exactness", worst <= 1e-12, worst, 1e-12)


def check_mass_spd() -> CheckResult:
    pmap = PhysicalMap(-1.0, 2.0)
    rule = gauss_legendre_rule(5)
    worst_sym, min_eig = 0.0, np.inf
    for _, basis in _sample_bases():
        m = assemble(basis, pmap, rule).mass.to_dense()
        worst_sym = max(worst_sym, float(np.max(np.abs(m - m.T))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(m).min()))
    passed = worst_sym <= 1e-10 and min_eig > 0.0
    return CheckResult("mass_spd", passed, worst_sym, 1e-10,
                       f"min eigenvalue {min_eig:.3e}")


def check_stiffness_rowsum() -> CheckResult:
    # constants are exactly representable, so K applied to 1 must vanish
    pmap = PhysicalMap(-1.0, 2.0)
    rule = gauss_legendre_rule(5)
    worst = 0.0
    for _, basis in _sample_bases():
        sys_ = assemble(basis, pmap, rule)
        ones = np.ones(sys_.n_full - 2)
        rows = sys_.stiffness.matvec(ones) + sys_.stiffness_cols @ [1.0, 1.0]
        worst = max(worst, float(np.max(np.abs(rows))))
    return CheckResult("stiffness_rowsum", worst <= 1e-10, worst, 1e-10)


def _dense_oracle(basis: NurbsBasis, pmap: PhysicalMap, rule) -> tuple:
    """Dense n x n matrices by direct quadrature, no banded bookkeeping."""
    n = basis.n_basis
    mass = np.zeros((n, n))
    stiff = np.zeros((n, n))
    adv = np.zeros((n, n))
    bp = basis.knots.breakpoints
    for a, b in zip(bp[:-1], bp[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        for z, wq in zip(rule.nodes, rule.weights):
            xi = mid + half * z
            v0 = eval_nurbs_all(basis, float(xi), order=0)
            v1 = eval_nurbs_all(basis, float(xi), order=1)
            w = wq * half
            mass += w * np.outer(v0, v0)
            stiff += w * np.outer(v1, v1)
            adv += w * np.outer(v1, v0)
    return mass * pmap.dx_dxi, stiff * pmap.dxi_dx, adv


def check_assembly_dense_oracle() -> CheckResult:
    pmap = PhysicalMap(-1.0, 2.0)
    rule = gauss_legendre_rule(5)
    worst = 0.0
    for _, basis in _sample_bases():
        if basis.n_basis > 24:
            continue
        sys_ = assemble(basis, pmap, rule)
        for banded, cols, dense in zip(
                (sys_.mass, sys_.stiffness, sys_.advection),
                (sys_.mass_cols, sys_.stiffness_cols, sys_.advection_cols),
                _dense_oracle(basis, pmap, rule)):
            worst = max(worst, float(np.max(np.abs(
                banded.to_dense() - dense[1:-1, 1:-1]))))
            worst = max(worst, float(np.max(np.abs(
                cols - dense[1:-1][:, [0, -1]]))))
    return CheckResult("assembly_dense_oracle", worst <= 1e-10, worst, 1e-10)


def check_derivative_vs_fd() -> CheckResult:
    rng = np.random.default_rng(_SEED)
    h = 1e-6
    worst = 0.0
    for _, basis in _sample_bases():
        coeffs = rng.uniform(-1.0, 1.0, basis.n_basis)
        xi = rng.uniform(3 * h, 1.0 - 3 * h, 40)
        for order in (1, 2):
            an = eval_spline_many(basis, coeffs, xi, order)
            lo = eval_spline_many(basis, coeffs, xi - h, order - 1)
            hi = eval_spline_many(basis, coeffs, xi + h, order - 1)
            fd = (hi - lo) / (2 * h)
            rel = np.abs(an - fd) / np.maximum(1.0, np.abs(an))
            worst = max(worst, float(rel.max()))
    return CheckResult("derivative_vs_fd", worst <= 1e-5, worst, 1e-5)


def check_transform_roundtrip() -> CheckResult:
    rng = np.random.default_rng(_SEED)
    params = LelandParams(rate=0.1, sigma=0.2, strike=100.0, maturity=1.0)
    worst = 0.0
    for _ in range(200):
        s = rng.uniform(1.0, 400.0)
        t = rng.uniform(0.0, params.maturity)
        x, tau = leland_transform(s, t, params)
        s2, t2 = leland_inverse(x, tau, params)
        worst = max(worst, abs(s2 - s) / s, abs(t2 - t))
    s0 = 100.0
    s = rng.uniform(1.0, 700.0, 200)
    worst = max(worst, float(np.max(np.abs(s0 * np.exp(np.log(s / s0)) - s) / s)))
    return CheckResult("transform_roundtrip", worst <= 1e-12, worst, 1e-12)


def check_le_zero_equivalence() -> CheckResult:
    params = LelandParams(rate=0.1, sigma=0.2, strike=100.0, maturity=1.0)
    from .models import default_domain
    a, b = default_domain(params)
    disc = build_discretization(a, b, 2 ** 5)
    scheme = SchemeConfig(n_steps=8)
    plain = run_leland(params, disc, scheme, force_mixed=False)
    mixed = run_leland(params, disc, scheme, force_mixed=True)
    worst = float(np.max(np.abs(plain.final.coeffs["vhat"]
                                - mixed.final.coeffs["vhat"])))
    w0 = plain.initial.coeffs["vhat"]
    dtau = params.tau_max / 8
    one_lin = step_linear(disc.system, unified_coefficients(params, "vhat"),
                          w0, w0[[0, -1]], dtau, 1.0)
    one_lel = step_leland(disc.system, w0, dtau, 1.0, 0.0)
    worst = max(worst, float(np.max(np.abs(one_lin - one_lel))))
    return CheckResult("le_zero_equivalence", worst <= 1e-12, worst, 1e-12)


def _superposition_params(coupons) -> AfvParams:
    return AfvParams(rate=0.05, sigma=0.2, maturity=5.0, face_value=100.0,
                     conversion_ratio=1.0, s_initial=100.0, hazard_rate=0.0,
                     recovery=0.0, eta=0.0, coupons=coupons,
                     call_window=None, put_window=None, rho=0.0)


def check_afv_superposition() -> CheckResult:
    worst = 0.0
    for coupons in ((), tuple((0.5 * i, 4.0) for i in range(1, 11))):
        params = _superposition_params(coupons)
        disc = build_discretization(-6.0, 2.0, 2 ** 6)
        f = run_afv(params, disc, SchemeConfig(n_steps=50)).final
        worst = max(worst, float(np.max(np.abs(
            f.coeffs["U"] - (f.coeffs["B"] + f.coeffs["C"])))))
        res = fdm_solve_afv(params, n_cells=2 ** 6, n_steps=50)
        worst = max(worst, float(np.max(np.abs(
            res.values["U"] - (res.values["B"] + res.values["C"])))))
    return CheckResult("afv_superposition", worst <= 1e-8, worst, 1e-8)


def check_coupon_jump() -> CheckResult:
    # last-level coupon: with constraints off the A/B difference is the
    # injected amount exactly, except at the pinned right boundary
    amount = 2.5
    base = _superposition_params(())
    with_c = _superposition_params(((0.04, amount),))
    disc = build_discretization(-6.0, 2.0, 2 ** 5)
    scheme = SchemeConfig(n_steps=10)
    f0 = run_afv(base, disc, scheme).final
    f1 = run_afv(with_c, disc, scheme).final
    worst = 0.0
    for name in ("U", "B"):
        diff = f1.coeffs[name] - f0.coeffs[name]
        worst = max(worst, float(np.max(np.abs(diff[:-1] - amount))),
                    abs(diff[-1]))
    worst = max(worst, float(np.max(np.abs(
        f1.coeffs["C"] - f0.coeffs["C"]))))
    r0 = fdm_solve_afv(base, n_cells=2 ** 5, n_steps=10)
    r1 = fdm_solve_afv(with_c, n_cells=2 ** 5, n_steps=10)
    diff = r1.values["U"] - r0.values["U"]
    worst = max(worst, float(np.max(np.abs(diff[:-1] - amount))),
                abs(diff[-1]))
    return CheckResult("coupon_jump", worst <= 1e-12, worst, 1e-12)


def check_constraint_violation() -> CheckResult:
    params = AfvParams(rate=0.05, sigma=0.2, maturity=5.0, face_value=100.0,
                       conversion_ratio=1.0, s_initial=100.0,
                       hazard_rate=0.02, recovery=0.0, eta=0.0,
                       coupons=tuple((0.5 * i, 4.0) for i in range(1, 11)),
                       call_window=(2.0, 5.0, 110.0),
                       put_window=(3.0, 3.0, 105.0), rho=1e6)
    disc = build_discretization(-6.0, 2.0, 2 ** 6)
    n_steps = 50
    surf = run_afv(params, disc, SchemeConfig(n_steps=n_steps, store_every=1))
    dtau = params.maturity / n_steps
    coupon_at = _coupon_levels(params, dtau, n_steps)
    put_level = _put_level(params, dtau, n_steps)
    worst = 0.0
    for level, slice_ in zip(surf.levels, surf.slices):
        if level == 0:
            continue
        t = params.maturity - level * dtau
        c_now = coupon_at.get(level, 0.0)
        state = constraint_state(params, t, disc.greville_x,
                                 put_active=(level == put_level),
                                 coupon_now=c_now)
        # stored slices are post-injection; compare net of the coupon
        # (the pinned right coefficient never receives it)
        u = slice_.coeffs["U"].copy()
        b = slice_.coeffs["B"].copy()
        u[:-1] -= c_now
        b[:-1] -= c_now
        pen, _, _ = penalty_terms(u, state, params.rho)
        worst = max(worst, float(np.max(np.abs(pen))) / params.rho)
        if np.isfinite(state.b_call_dirty):
            worst = max(worst, float(np.max(b[:-1] - state.b_call_dirty)))
        if np.isfinite(state.b_put_dirty):
            shortfall = state.b_put_dirty - slice_.coeffs["C"] - b
            worst = max(worst, float(np.max(shortfall[:-1])))
    return CheckResult("constraint_violation", worst <= 1e-4, worst, 1e-4)


ALL_CHECKS = (
    check_partition_of_unity,
    check_quadrature_exactness,
    check_mass_spd,
    check_stiffness_rowsum,
    check_assembly_dense_oracle,
    check_derivative_vs_fd,
    check_transform_roundtrip,
    check_le_zero_equivalence,
    check_afv_superposition,
    check_coupon_jump,
    check_constraint_violation,
)


def run_checks() -> list[CheckResult]:
    """Run the whole suite; never raises, failures land in the results."""
    return [fn() for fn in ALL_CHECKS]


def format_report(results) -> str:
    lines = [r.line() for r in results]
    n_bad = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_bad}/{len(results)} invariant checks passed")
    return "\n".join(lines)
