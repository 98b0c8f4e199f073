"""Theta-scheme time marching for the unified pricing PDE.

One step solves

    (M + theta dtau A) w^{m+1} = (M - (1-theta) dtau A) w^m
                                 + dtau [theta s^{m+1} + (1-theta) s^m]
                                 - dtau [theta b_A^{m+1} + (1-theta) b_A^m]
                                 - M_cols (wb^{m+1} - wb^m)

with A = Y1 K + Y2 N + Y3 M on the interior coefficients, b_A the boundary-
column lift of A, and s = M nu the group-coefficient source.  The first
``rannacher_steps`` steps run fully implicit (theta = 1) to damp the
non-smooth initial data before switching to the configured theta.

Coefficient vectors follow the group convention throughout: the initial
slice takes the payoff values at the Greville abscissae as coefficients
(the variation-diminishing spline of the payoff), and nonlinear sources are
expanded with coefficients nu_j computed directly from the solution
coefficients, nu_j = N(w_j, x_j).  No collocation solve enters the march.

The transaction-cost step linearises |vtilde^{m+1}| ~ |vtilde^m| where the
auxiliary vtilde solves M vtilde = -(K - N) vhat (the mixed form of
vtilde = vhat_xx - vhat_x), so each step stays a single banded solve.

The convertible-bond step follows the operator-splitting order: advance B
unconstrained, form gamma, advance C, clamp B against the call/put bounds,
form delta, solve the penalised U system by Newton, shift the joint
conversion/call clipping of U onto B, then inject coupons.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import Collocation, GalerkinSystem, PhysicalMap, assemble
from .basis import (NurbsBasis, eval_spline_many, greville_abscissae,
                    make_refined_open_knots, make_uniform_open_knots)
from .linsolve import BandedLU, BandedMatrix
from .models import (AfvParams, LelandParams, afv_terminal,
                     apply_B_constraints, apply_joint_constraints,
                     constraint_state, default_source_terms,
                     leland_payoff_vhat, penalty_terms, unified_coefficients)
from .quadrature import gauss_legendre_rule

__all__ = [
    "SchemeConfig", "TimeSlice", "SolutionSurface", "Discretization",
    "build_discretization", "step_linear", "step_leland",
    "step_afv_boundary", "newton_solve_U", "NewtonDivergenceError", "run",
    "run_leland", "run_afv", "evaluate_slice", "leland_price_curve",
    "afv_value_curve",
]


@dataclass(frozen=True)
class SchemeConfig:
    """Time-integration controls.

    ``store_every = k`` keeps every k-th slice (plus the first and the final
    two, which Greeks need); 0 keeps only those mandatory slices.
    """

    n_steps: int
    theta: float = 0.5
    rannacher_steps: int = 2
    store_every: int = 1

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.rannacher_steps < 0 or self.store_every < 0:
            raise ValueError("rannacher_steps and store_every must be >= 0")

    def theta_at(self, m: int) -> float:
        return 1.0 if m < self.rannacher_steps else self.theta


@dataclass
class TimeSlice:
    """Coefficient vectors (boundary entries included) at one time level."""

    tau: float
    coeffs: dict[str, np.ndarray]

    def interior(self, name: str) -> np.ndarray:
        return self.coeffs[name][1:-1]

    def boundary(self, name: str) -> tuple[float, float]:
        v = self.coeffs[name]
        return float(v[0]), float(v[-1])


@dataclass
class SolutionSurface:
    """Stored slices of one run, ordered by time level."""

    slices: list[TimeSlice]
    levels: list[int]
    n_steps: int
    dtau: float

    @property
    def initial(self) -> TimeSlice:
        return self.slices[0]

    @property
    def final(self) -> TimeSlice:
        return self.slices[-1]

    def slice_at_level(self, m: int) -> TimeSlice:
        try:
            return self.slices[self.levels.index(m)]
        except ValueError:
            raise KeyError(f"time level {m} was not stored") from None


@dataclass
class Discretization:
    """Basis, physical map and assembled Galerkin system for one run."""

    basis: NurbsBasis
    pmap: PhysicalMap
    system: GalerkinSystem
    colloc: Collocation
    greville_xi: np.ndarray
    greville_x: np.ndarray

    @property
    def n_basis(self) -> int:
        return self.basis.n_basis

    def min_span_x(self) -> float:
        widths = np.diff(self.basis.knots.breakpoints)
        return float(widths.min() * self.pmap.dx_dxi)


def build_discretization(x_min: float, x_max: float, n_elements: int,
                         degree: int = 3, knot_mode: str = "uniform",
                         cluster_ratio: float | None = None,
                         kink_xi: float = 0.5,
                         weights: np.ndarray | None = None,
                         quad_order: int = 5) -> Discretization:
    """Assemble everything a run needs on [x_min, x_max].

    ``knot_mode`` is ``uniform`` or ``refined``; the refined mode clusters
    spans toward ``kink_xi`` and inserts it with multiplicity 3.  When
    ``cluster_ratio`` is omitted the refined mode keeps a fixed 100:1
    largest-to-smallest span grading, so refining the mesh halves every span
    instead of piling new spans onto the kink.
    """
    if knot_mode == "uniform":
        knots = make_uniform_open_knots(n_elements, degree)
    elif knot_mode == "refined":
        if cluster_ratio is None:
            n_side = max(2, int(round(n_elements * min(kink_xi, 1.0 - kink_xi))))
            cluster_ratio = 100.0 ** (-1.0 / (n_side - 1))
        knots = make_refined_open_knots(n_elements, degree, kink_xi,
                                        cluster_ratio)
    else:
        raise ValueError(f"unknown knot_mode {knot_mode!r}")
    if weights is None:
        weights = np.ones(knots.n_basis)
    basis = NurbsBasis(knots, weights)
    pmap = PhysicalMap(x_min, x_max)
    rule = gauss_legendre_rule(quad_order)
    system = assemble(basis, pmap, rule)
    colloc = Collocation(basis)
    greville_xi = colloc.points
    greville_x = np.asarray(pmap.to_physical(greville_xi))
    return Discretization(basis, pmap, system, colloc, greville_xi, greville_x)


class _ThetaOperator:
    """Factorisations of (M + theta dtau A) reused across the whole run."""

    def __init__(self, system: GalerkinSystem, coeffs, dtau: float,
                 thetas: tuple[float, ...]):
        self.system = system
        self.dtau = dtau
        self.a_int, self.a_cols = system.operator(coeffs)
        self.m_int = system.mass
        self.m_cols = system.mass_cols
        self.lhs_mat: dict[float, BandedMatrix] = {}
        self.lhs_lu: dict[float, BandedLU] = {}
        self.rhs_mat: dict[float, BandedMatrix] = {}
        for th in sorted(set(thetas)):
            self.lhs_mat[th] = self.m_int + self.a_int.scaled(th * dtau)
            self.lhs_lu[th] = self.lhs_mat[th].lu_factor()
            self.rhs_mat[th] = self.m_int - self.a_int.scaled((1.0 - th) * dtau)

    def mass_apply(self, nu_full: np.ndarray) -> np.ndarray:
        """(M nu) restricted to interior rows, boundary columns included."""
        return self.m_int.matvec(nu_full[1:-1]) + self.m_cols @ nu_full[[0, -1]]

    def build_rhs(self, w_full: np.ndarray, wb_new, theta: float,
                  nu_m: np.ndarray | None = None,
                  nu_new: np.ndarray | None = None) -> np.ndarray:
        wb_m = w_full[[0, -1]]
        wb_new = np.asarray(wb_new, dtype=float)
        dtau = self.dtau
        rhs = self.rhs_mat[theta].matvec(w_full[1:-1])
        rhs -= dtau * (theta * (self.a_cols @ wb_new)
                       + (1.0 - theta) * (self.a_cols @ wb_m))
        rhs -= self.m_cols @ (wb_new - wb_m)
        if nu_m is not None:
            rhs += dtau * (1.0 - theta) * self.mass_apply(nu_m)
        if nu_new is not None:
            rhs += dtau * theta * self.mass_apply(nu_new)
        return rhs

    def step(self, w_full: np.ndarray, wb_new, theta: float,
             nu_m=None, nu_new=None) -> np.ndarray:
        rhs = self.build_rhs(w_full, wb_new, theta, nu_m, nu_new)
        out = np.empty_like(w_full)
        out[1:-1] = self.lhs_lu[theta].solve(rhs)
        out[0], out[-1] = wb_new
        return out


def step_linear(system: GalerkinSystem, coeffs, w_full: np.ndarray, wb_new,
                dtau: float, theta: float,
                nu_m: np.ndarray | None = None,
                nu_new: np.ndarray | None = None) -> np.ndarray:
    """One theta step of the linear PDE; returns the new full vector.

    Standalone variant that factors on the fly -- run loops use the cached
    operator instead.
    """
    op = _ThetaOperator(system, coeffs, dtau, (theta,))
    return op.step(np.asarray(w_full, dtype=float), wb_new, theta, nu_m, nu_new)


def _vtilde(op: _ThetaOperator, mass_lu: BandedLU,
            w_full: np.ndarray) -> np.ndarray:
    """Mixed-form auxiliary: M vtilde = -(K - N) vhat, zero at the ends."""
    wb = w_full[[0, -1]]
    rhs = -(op.a_int.matvec(w_full[1:-1]) + op.a_cols @ wb)
    out = np.zeros_like(w_full)
    out[1:-1] = mass_lu.solve(rhs)
    return out


def step_leland(system: GalerkinSystem, w_full: np.ndarray, dtau: float,
                theta: float, leland_number: float) -> np.ndarray:
    """One linearised transaction-cost step (standalone, factors on the fly)."""
    coeffs = (1.0, -1.0, 0.0)
    op = _ThetaOperator(system, coeffs, dtau, (theta,))
    mass_lu = system.mass.lu_factor()
    w_full = np.asarray(w_full, dtype=float)
    vt = _vtilde(op, mass_lu, w_full)
    nu = leland_number * np.abs(vt)
    # linearisation gives the source full dtau weight at level m
    return op.step(w_full, w_full[[0, -1]], theta, nu_m=nu, nu_new=nu)


def step_afv_boundary(values_m, params: AfvParams, dtau: float,
                      theta: float) -> tuple[float, float, float]:
    """Theta step of the S = 0 boundary ODEs for (U, B, C).

    dB/dtau = -(r + p - Rp) B;  dU/dtau = -(r+p) U + p R B;
    dC/dtau = -(r+p) C.  B feeds U through the recovery flow only.
    """
    u0, b0, c0 = (float(v) for v in values_m)
    r = params.rate
    p = params.hazard_rate
    rb = r + p - params.recovery * p
    rc = r + p
    b1 = (1.0 - (1.0 - theta) * dtau * rb) * b0 / (1.0 + theta * dtau * rb)
    src = params.hazard_rate * params.recovery * (theta * b1 + (1.0 - theta) * b0)
    u1 = ((1.0 - (1.0 - theta) * dtau * rc) * u0 + dtau * src) \
        / (1.0 + theta * dtau * rc)
    c1 = (1.0 - (1.0 - theta) * dtau * rc) * c0 / (1.0 + theta * dtau * rc)
    return u1, b1, c1


class NewtonDivergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float, level: int | None = None):
        self.iterations = iterations
        self.residual = residual
        self.level = level
        at = f" at time level {level}" if level is not None else ""
        super().__init__(
            f"penalty Newton failed to converge{at}: {iterations} iterations,"
            f" residual {residual:.3e}")


def newton_solve_U(a11: BandedMatrix, phi: np.ndarray, u_star_put: np.ndarray,
                   u_star_call: np.ndarray, mass: BandedMatrix, rho: float,
                   dtau: float, tol: float, max_iter: int = 50,
                   u_init: np.ndarray | None = None):
    """Damped-free Newton iteration on the penalised interior U system.

    Solves f(U) = A11 U + rho dtau M [P_put (U - U*_put) + P_call
    (U - U*_call)] - phi = 0 with indicator refresh each iterate; the
    Jacobian A11 + rho dtau M (P_put + P_call) stays banded because the
    penalty acts diagonally on coefficients.  Stops when the update drops
    below ``tol`` in the max norm or the active sets repeat.

    Returns (U, iterations, converged).
    """
    a11_lu = a11.lu_factor()
    u = a11_lu.solve(phi) if u_init is None else np.asarray(u_init, dtype=float).copy()
    p_put = (u_star_put - u >= 0.0).astype(float)
    p_call = (u - u_star_call >= 0.0).astype(float)
    for it in range(1, max_iter + 1):
        pen = np.where(p_put > 0, u - u_star_put, 0.0) \
            + np.where(p_call > 0, u - u_star_call, 0.0)
        f = a11.matvec(u) + rho * dtau * mass.matvec(pen) - phi
        jac = a11 + mass.scale_columns(rho * dtau * (p_put + p_call))
        du = jac.lu_factor().solve(f)
        u = u - du
        p_put_new = (u_star_put - u >= 0.0).astype(float)
        p_call_new = (u - u_star_call >= 0.0).astype(float)
        same_active = np.array_equal(p_put_new, p_put) and \
            np.array_equal(p_call_new, p_call)
        p_put, p_call = p_put_new, p_call_new
        if np.max(np.abs(du)) <= tol or same_active:
            return u, it, True
    pen = np.where(p_put > 0, u - u_star_put, 0.0) \
        + np.where(p_call > 0, u - u_star_call, 0.0)
    residual = float(np.max(np.abs(a11.matvec(u) + rho * dtau * mass.matvec(pen) - phi)))
    return u, max_iter, False


def _warn_if_unstable(disc: Discretization, dtau: float) -> None:
    """Step-ratio guard for the linearised transaction-cost source.

    Only the lagged nonlinear term can oscillate; the theta scheme itself
    is unconditionally stable, so linear runs skip this check.
    """
    dx = disc.min_span_x()
    if dtau / dx > 1.0 or dtau / dx ** 2 > 1.0:
        warnings.warn(
            f"time step dtau={dtau:.3e} is large for the smallest span "
            f"dx={dx:.3e} (dtau/dx={dtau / dx:.2f}, dtau/dx^2={dtau / dx ** 2:.2f}); "
            "the lagged transaction-cost term may oscillate", RuntimeWarning)


def _store_levels(scheme: SchemeConfig) -> set[int]:
    n = scheme.n_steps
    keep = {0, max(0, n - 2), max(0, n - 1), n}
    if scheme.store_every > 0:
        keep.update(range(0, n + 1, scheme.store_every))
    return keep


def run_leland(params: LelandParams, disc: Discretization,
               scheme: SchemeConfig, force_mixed: bool | None = None
               ) -> SolutionSurface:
    """March the (possibly nonlinear) transformed call problem to t = 0."""
    n_steps = scheme.n_steps
    horizon = params.tau_max
    dtau = horizon / n_steps if n_steps else 0.0
    mixed = params.leland_number > 0 if force_mixed is None else force_mixed
    if n_steps and mixed:
        _warn_if_unstable(disc, dtau)
    w = leland_payoff_vhat(disc.greville_x, params)
    keep = _store_levels(scheme)
    slices = [TimeSlice(0.0, {"vhat": w.copy()})]
    levels = [0]
    if n_steps == 0:
        return SolutionSurface(slices, levels, 0, dtau)
    coeffs = unified_coefficients(params, "vhat")
    thetas = tuple({scheme.theta_at(m) for m in range(n_steps)})
    op = _ThetaOperator(disc.system, coeffs, dtau, thetas)
    mass_lu = disc.system.mass.lu_factor() if mixed else None
    wb = w[[0, -1]]  # transformed boundary data is time-independent
    for m in range(n_steps):
        theta = scheme.theta_at(m)
        if mixed:
            vt = _vtilde(op, mass_lu, w)
            nu = params.leland_number * np.abs(vt)
            w = op.step(w, wb, theta, nu_m=nu, nu_new=nu)
        else:
            w = op.step(w, wb, theta)
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(
                f"solution blew up at time level {m + 1} of {n_steps}")
        if (m + 1) in keep:
            slices.append(TimeSlice((m + 1) * dtau, {"vhat": w.copy()}))
            levels.append(m + 1)
    return SolutionSurface(slices, levels, n_steps, dtau)


def _coupon_levels(params: AfvParams, dtau: float, n_steps: int) -> dict[int, float]:
    """Backward-time level -> coupon amount (terminal coupon excluded)."""
    out: dict[int, float] = {}
    for t_i, amount in params.coupons:
        if abs(t_i - params.maturity) < 1e-12:
            continue  # folded into the terminal condition
        tau_c = params.maturity - t_i
        level = int(round(tau_c / dtau))
        if 1 <= level <= n_steps and abs(level * dtau - tau_c) <= 0.5 * dtau:
            out[level] = out.get(level, 0.0) + amount
    return out


def _put_level(params: AfvParams, dtau: float, n_steps: int) -> int | None:
    """Level realising a single-date put (window with start == end)."""
    win = params.put_window
    if win is None or win[0] != win[1]:
        return None
    tau_put = params.maturity - win[1]
    level = int(round(tau_put / dtau))
    return min(max(level, 1), n_steps)


def run_afv(params: AfvParams, disc: Discretization,
            scheme: SchemeConfig) -> SolutionSurface:
    """March the constrained convertible-bond system to t = 0."""
    n_steps = scheme.n_steps
    dtau = params.maturity / n_steps if n_steps else 0.0
    x_g = disc.greville_x
    s_g = params.s_initial * np.exp(x_g)
    ks_g = params.conversion_ratio * s_g

    u_vals, b_vals, c_vals = afv_terminal(s_g, params)
    w = {"U": u_vals, "B": b_vals, "C": c_vals}
    keep = _store_levels(scheme)
    slices = [TimeSlice(0.0, {k: v.copy() for k, v in w.items()})]
    levels = [0]
    if n_steps == 0:
        return SolutionSurface(slices, levels, 0, dtau)

    thetas = tuple({scheme.theta_at(m) for m in range(n_steps)})
    ops = {name: _ThetaOperator(disc.system, unified_coefficients(params, name),
                                dtau, thetas) for name in ("U", "B", "C")}
    coupon_at = _coupon_levels(params, dtau, n_steps)
    put_level = _put_level(params, dtau, n_steps)
    single_date_put = put_level is not None

    def nodal_sources(b_full: np.ndarray):
        delta_g, gamma_g = default_source_terms(x_g, b_full, params)
        return params.hazard_rate * delta_g, params.hazard_rate * gamma_g

    nu_delta_m, nu_gamma_m = nodal_sources(w["B"])
    right_bc = {"U": ks_g[-1], "B": 0.0, "C": ks_g[-1]}
    constrained = params.rho > 0.0

    for m in range(n_steps):
        theta = scheme.theta_at(m)
        level = m + 1
        t_new = params.maturity - level * dtau
        put_active = (level == put_level) if single_date_put else None
        state = constraint_state(params, t_new, x_g, put_active=put_active,
                                 coupon_now=coupon_at.get(level, 0.0))

        # boundary values at the new level: scalar ODEs at S = 0, pin at S_max
        u0, b0, c0 = step_afv_boundary(
            (w["U"][0], w["B"][0], w["C"][0]), params, dtau, theta)
        if constrained:
            if np.isfinite(state.b_call_dirty):
                b0 = min(b0, state.b_call_dirty)
            if np.isfinite(state.b_put_dirty):
                b0 = max(b0, state.b_put_dirty - c0)
            u0 = float(np.clip(u0, state.u_star_put[0], state.u_star_call[0]))

        # 1) cash component, unconstrained
        b_new = ops["B"].step(w["B"], (b0, right_bc["B"]), theta)
        # 2) equity component with its default source
        _, nu_gamma_new = nodal_sources(b_new)
        c_new = ops["C"].step(w["C"], (c0, right_bc["C"]), theta,
                              nu_m=nu_gamma_m, nu_new=nu_gamma_new)
        # 3) clamp B against the call ceiling / put floor
        if constrained:
            b_new[1:-1] = apply_B_constraints(b_new[1:-1], c_new[1:-1],
                                              _interior_state(state))
        # 4) holder value: penalised Newton solve
        nu_delta_new, _ = nodal_sources(b_new)
        phi = ops["U"].build_rhs(w["U"], (u0, right_bc["U"]), theta,
                                 nu_m=nu_delta_m, nu_new=nu_delta_new)
        u_int, iters, converged = newton_solve_U(
            ops["U"].lhs_mat[theta], phi, state.u_star_put[1:-1],
            state.u_star_call[1:-1], ops["U"].m_int, params.rho, dtau,
            params.newton_tol, params.newton_max_iter)
        if not converged:
            pen, _, _ = penalty_terms(u_int, _interior_state(state), params.rho)
            raise NewtonDivergenceError(iters, float(np.max(np.abs(pen))), level)
        u_new = np.empty_like(w["U"])
        u_new[1:-1] = u_int
        u_new[0], u_new[-1] = u0, right_bc["U"]
        # 5) shift the joint clipping of U onto B
        if constrained:
            b_new[1:-1] = apply_joint_constraints(
                b_new[1:-1], u_new[1:-1], _interior_state(state))
        # 6) coupons: bond holders collect while the bond is alive
        if level in coupon_at:
            amount = coupon_at[level]
            u_new[:-1] += amount
            b_new[:-1] += amount
        w = {"U": u_new, "B": b_new, "C": c_new}
        nu_delta_m, nu_gamma_m = nodal_sources(b_new)
        if level in keep:
            slices.append(TimeSlice(level * dtau,
                                    {k: v.copy() for k, v in w.items()}))
            levels.append(level)
    return SolutionSurface(slices, levels, n_steps, dtau)


def _interior_state(state):
    from dataclasses import replace
    return replace(state,
                   conversion_value=state.conversion_value[1:-1],
                   u_star_put=state.u_star_put[1:-1],
                   u_star_call=state.u_star_call[1:-1])


def run(params, disc: Discretization, scheme: SchemeConfig) -> SolutionSurface:
    """Dispatch on the parameter type."""
    if isinstance(params, LelandParams):
        return run_leland(params, disc, scheme)
    if isinstance(params, AfvParams):
        return run_afv(params, disc, scheme)
    raise TypeError(f"unsupported parameter object {type(params).__name__}")


def evaluate_slice(disc: Discretization, slice_: TimeSlice, name: str,
                   x_points, order: int = 0) -> np.ndarray:
    """Spline values (or parametric derivative) of one unknown at physical x."""
    xi = np.asarray(disc.pmap.to_parameter(np.asarray(x_points, dtype=float)))
    return eval_spline_many(disc.basis, slice_.coeffs[name], np.atleast_1d(xi),
                            order)


def leland_price_curve(params: LelandParams, disc: Discretization,
                       slice_: TimeSlice, s_points) -> np.ndarray:
    """Untransformed option prices V(S, t(tau)) on one stored slice."""
    s = np.atleast_1d(np.asarray(s_points, dtype=float))
    x = np.log(s) + params.kappa * slice_.tau
    vhat = evaluate_slice(disc, slice_, "vhat", x)
    return math.exp(-params.kappa * slice_.tau) * vhat


def afv_value_curve(params: AfvParams, disc: Discretization,
                    slice_: TimeSlice, s_points, name: str = "U") -> np.ndarray:
    """Bond component values at stock prices S on one stored slice."""
    s = np.atleast_1d(np.asarray(s_points, dtype=float))
    x = np.log(s / params.s_initial)
    return evaluate_slice(disc, slice_, name, x)
