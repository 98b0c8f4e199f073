"""Option sensitivities from the spline expansion.

Delta and gamma come from exact parametric derivatives of the stored
coefficient vector, mapped to stock-price space through the chain rule of
each model's variable transform:

* call (log-price drift transform):
  delta = e^{-kappa tau} / S   * (dxi/dx) sum_j w_j R'_j
  gamma = e^{-kappa tau} / S^2 * ((dxi/dx)^2 sum_j w_j R''_j
                                  - (dxi/dx) sum_j w_j R'_j)
* convertible bond (x = ln(S / S_int), no scaling): same without the
  exponential factor.

Theta is a backward difference of two stored time slices; the semidiscrete
system gives no direct access to the calendar-time derivative.  Slice pairs
that straddle a coupon or put date are skipped (the value jumps there) and
the difference is taken one-sided on the smooth side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import eval_spline_many
from .models import AfvParams, LelandParams
from .stepper import (Discretization, SolutionSurface, TimeSlice,
                      _coupon_levels, _put_level, evaluate_slice)

__all__ = ["GreekCurve", "GreekTable", "delta", "gamma", "theta",
           "greeks_table", "write_greeks_csv"]


@dataclass(frozen=True)
class GreekCurve:
    """One sensitivity sampled on a stock-price grid at calendar time t."""

    s: np.ndarray
    values: np.ndarray
    name: str
    time: float


@dataclass(frozen=True)
class GreekTable:
    """Delta, gamma and theta on a common stock-price grid."""

    s: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    time: float


def _slice_time(params, tau: float) -> float:
    """Calendar time of a slice from its backward time coordinate."""
    if isinstance(params, LelandParams):
        return params.maturity - 2.0 * tau / params.sigma ** 2
    return params.maturity - tau


def _field_name(params, name: str | None) -> str:
    if isinstance(params, LelandParams):
        return "vhat"
    return "U" if name is None else name


def _default_grid(params, disc: Discretization, slice_: TimeSlice
                  ) -> np.ndarray:
    """Greville abscissae mapped to stock prices (no extrapolation)."""
    if isinstance(params, LelandParams):
        return np.exp(disc.greville_x - params.kappa * slice_.tau)
    return params.s_initial * np.exp(disc.greville_x)


def _checked_s(s_points) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s_points, dtype=float))
    if np.any(s <= 0.0):
        raise ValueError("stock prices must be positive")
    return s


def _pde_x(params, disc: Discretization, slice_: TimeSlice, s: np.ndarray,
           clip: bool = False) -> np.ndarray:
    if isinstance(params, LelandParams):
        x = np.log(s) + params.kappa * slice_.tau
    else:
        x = np.log(s / params.s_initial)
    lo, hi = disc.pmap.x_min, disc.pmap.x_max
    if clip:
        return np.clip(x, lo, hi)
    slack = 1e-12 * (hi - lo)
    if np.any(x < lo - slack) or np.any(x > hi + slack):
        raise ValueError("probe outside the computational domain")
    return np.clip(x, lo, hi)


def delta(params, disc: Discretization, slice_: TimeSlice,
          s_points=None, name: str | None = None) -> GreekCurve:
    """First derivative with respect to the stock price."""
    field = _field_name(params, name)
    s = (_default_grid(params, disc, slice_) if s_points is None
         else _checked_s(s_points))
    x = _pde_x(params, disc, slice_, s)
    dw = disc.pmap.dxi_dx * evaluate_slice(disc, slice_, field, x, order=1)
    if isinstance(params, LelandParams):
        dw = math.exp(-params.kappa * slice_.tau) * dw
    return GreekCurve(s, dw / s, "delta", _slice_time(params, slice_.tau))


def gamma(params, disc: Discretization, slice_: TimeSlice,
          s_points=None, name: str | None = None,
          side: str = "right") -> GreekCurve:
    """Second derivative with respect to the stock price.

    ``side`` selects the one-sided limit at repeated interior knots, where
    a triple knot deliberately breaks C2 continuity.
    """
    if disc.basis.degree < 2:
        raise ValueError("gamma needs basis degree >= 2")
    field = _field_name(params, name)
    s = (_default_grid(params, disc, slice_) if s_points is None
         else _checked_s(s_points))
    x = _pde_x(params, disc, slice_, s)
    xi = np.asarray(disc.pmap.to_parameter(x))
    coeffs = slice_.coeffs[field]
    d1 = eval_spline_many(disc.basis, coeffs, xi, order=1, side=side)
    d2 = eval_spline_many(disc.basis, coeffs, xi, order=2, side=side)
    scale = disc.pmap.dxi_dx
    curv = scale * scale * d2 - scale * d1
    if isinstance(params, LelandParams):
        curv = math.exp(-params.kappa * slice_.tau) * curv
    return GreekCurve(s, curv / s ** 2, "gamma",
                      _slice_time(params, slice_.tau))


def _value_curve(params, disc: Discretization, slice_: TimeSlice,
                 s: np.ndarray, field: str) -> np.ndarray:
    """Model value V(S, t) on one slice; clamps to the domain at the tails."""
    x = _pde_x(params, disc, slice_, s, clip=True)
    v = evaluate_slice(disc, slice_, field, x)
    if isinstance(params, LelandParams):
        return math.exp(-params.kappa * slice_.tau) * v
    return v


def _jump_levels(params, surface: SolutionSurface) -> set[int]:
    if not isinstance(params, AfvParams) or surface.n_steps == 0:
        return set()
    jumps = set(_coupon_levels(params, surface.dtau, surface.n_steps))
    put = _put_level(params, surface.dtau, surface.n_steps)
    if put is not None:
        jumps.add(put)
    return jumps


def theta(params, disc: Discretization, surface: SolutionSurface,
          index: int = -1, s_points=None, name: str | None = None
          ) -> GreekCurve:
    """Calendar-time derivative by differencing two stored slices."""
    if len(surface.slices) < 2:
        raise ValueError("theta needs at least two stored slices")
    i = index if index >= 0 else len(surface.slices) + index
    jumps = _jump_levels(params, surface)

    def straddles(j0: int, j1: int) -> bool:
        lo, hi = surface.levels[j0], surface.levels[j1]
        return any(lo < m <= hi for m in jumps)

    pairs = [(i - 1, i), (i, i + 1), (i - 2, i - 1)]
    pair = next(((j0, j1) for j0, j1 in pairs
                 if 0 <= j0 < j1 < len(surface.slices)
                 and not straddles(j0, j1)), None)
    if pair is None:
        raise ValueError("no jump-free slice pair near the requested level")

    field = _field_name(params, name)
    target = surface.slices[i]
    s = (_default_grid(params, disc, target) if s_points is None
         else _checked_s(s_points))
    s0, s1 = (surface.slices[j] for j in pair)
    t0, t1 = (_slice_time(params, sl.tau) for sl in (s0, s1))
    v0 = _value_curve(params, disc, s0, s, field)
    v1 = _value_curve(params, disc, s1, s, field)
    rate = (v1 - v0) / (t1 - t0)
    return GreekCurve(s, rate, "theta", _slice_time(params, target.tau))


def greeks_table(params, disc: Discretization, surface: SolutionSurface,
                 index: int = -1, s_points=None, name: str | None = None
                 ) -> GreekTable:
    """Delta, gamma and theta of one slice on a shared grid."""
    slice_ = surface.slices[index]
    s = (_default_grid(params, disc, slice_) if s_points is None
         else _checked_s(s_points))
    d = delta(params, disc, slice_, s, name)
    g = gamma(params, disc, slice_, s, name)
    th = theta(params, disc, surface, index, s, name)
    return GreekTable(s, d.values, g.values, th.values, d.time)


def write_greeks_csv(path, table: GreekTable) -> None:
    """One row per stock price, 10 significant digits."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("S,delta,gamma,theta\n")
        for row in zip(table.s, table.delta, table.gamma, table.theta):
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")
