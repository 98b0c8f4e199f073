"""Command-line batch runner for the pricing experiments.

Verbs
-----
price      one solve; writes surface.csv, slice_t0.csv, greeks.csv and prints
           the value at the probe price, both as the exact NURBS evaluation
           and at the nearest Greville grid point (the exact number is the
           one the benchmark tables quote).
converge   ladder of (n_elements, n_tau) runs; writes convergence.csv with
           value, oracle-error and contraction columns.
greeks     one solve; writes greeks.csv only.
validate   runs the structural invariant suite, one report line per check.

Exit codes: 0 success, 1 failed validation, 2 configuration error, 3 solver
failure.  Unknown configuration keys are hard errors carrying the offending
line number, and nothing is written unless the whole configuration parses.
Ladder rungs run concurrently (IGAFIN_THREADS caps the pool, the only
environment variable read); CSV rows keep ladder order regardless.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .checks import format_report, run_checks
from .greeks import greeks_table, write_greeks_csv
from .models import (AfvParams, LelandParams, calibrate_weights,
                     default_domain, leland_payoff_vhat)
from .reference import (bs_exact_call, fdm_solve_afv, fdm_solve_leland,
                        misfit_epsilon, p1fem_solve)
from .stepper import (NewtonDivergenceError, SchemeConfig, afv_value_curve,
                      build_discretization, evaluate_slice,
                      leland_price_curve, run)

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "run_pricing",
           "run_convergence", "run_greeks", "main"]


class ConfigError(ValueError):
    """Configuration problem; carries the file path and 1-based line."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        at = f"{path}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(at + message)
        self.path = path
        self.line = line


_KNOWN_KEYS = {
    "experiment": {"model", "probe_s"},
    "discretization": {"degree", "n_elements", "knot_mode", "cluster_ratio",
                       "kink_xi", "weight_source", "weights_file", "n_tau",
                       "theta", "rannacher_steps", "x_min", "x_max",
                       "store_every"},
    "model": {"rate", "sigma", "strike", "maturity", "leland_number",
              "face_value", "conversion_ratio", "s_initial", "hazard_rate",
              "recovery", "eta", "coupons", "call_window", "put_window",
              "rho", "newton_tol"},
    "ladder": {"rungs", "reference"},
    "output": {"dir"},
}
_MODELS = ("linear-bs", "leland", "afv")
_LELAND_KEYS = {"rate", "sigma", "strike", "maturity", "leland_number"}
_AFV_KEYS = {"rate", "sigma", "maturity", "face_value", "conversion_ratio",
             "s_initial", "hazard_rate", "recovery", "eta", "coupons",
             "call_window", "put_window", "rho", "newton_tol"}


@dataclass
class ExperimentConfig:
    """Validated run description; everything the verbs need."""

    path: str
    model: str
    params: object
    degree: int
    n_elements: int
    knot_mode: str
    cluster_ratio: float | None
    kink_xi: float
    weight_source: str
    weights_file: str | None
    n_tau: int
    theta: float
    rannacher_steps: int
    x_min: float
    x_max: float
    store_every: int
    probe_s: float
    out_dir: str
    rungs: list[tuple[int, int]] = field(default_factory=list)
    reference: tuple[int, int] | None = None


def _line_map(path: str, text: str) -> dict[tuple[str, str], int]:
    """(section, key) -> 1-based line number, by a pre-scan of the raw file."""
    out: dict[tuple[str, str], int] = {}
    section = ""
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        m = re.match(r"\[(.+)\]\s*$", line)
        if m:
            section = m.group(1).strip().lower()
            out[(section, "")] = no
            continue
        if raw[:1] in " \t":
            continue  # continuation of the previous value
        m = re.match(r"([^=:]+)[=:]", line)
        if m:
            out[(section, m.group(1).strip().lower())] = no
    return out


def _get(cp, lines, path, section, key, conv, default=None, required=False):
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(f"missing key '{key}' in [{section}]", path,
                              lines.get((section, "")))
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for '{key}': {raw!r} ({exc})", path,
                          lines.get((section, key))) from None


def _parse_pairs(raw: str) -> tuple[tuple[float, float], ...]:
    """Coupon schedule 't:amount, t:amount, ...'."""
    items = [s for s in re.split(r"[,\n]+", raw) if s.strip()]
    out = []
    for item in items:
        t_s, a_s = item.split(":")
        out.append((float(t_s), float(a_s)))
    return tuple(out)


def _parse_window(raw: str) -> tuple[float, float, float] | None:
    raw = raw.strip().lower()
    if raw in ("", "none"):
        return None
    a, b, price = (float(v) for v in raw.split(":"))
    return (a, b, price)


def _parse_rungs(raw: str) -> list[tuple[int, int]]:
    out = []
    for item in (s for s in re.split(r"[,\n]+", raw) if s.strip()):
        n_e, n_t = item.split(":")
        out.append((int(n_e), int(n_t)))
    return out


def parse_config(path: str) -> ExperimentConfig:
    """Read and fully validate an INI experiment description."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(str(exc), path) from None
    lines = _line_map(path, text)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"parse error: {exc.message}", path, line) from None

    for section in cp.sections():
        sec = section.lower()
        if sec not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]", path,
                              lines.get((sec, "")))
        for key in cp.options(section):
            if key not in _KNOWN_KEYS[sec]:
                raise ConfigError(f"unknown key '{key}' in [{section}]",
                                  path, lines.get((sec, key)))

    model = _get(cp, lines, path, "experiment", "model", str, required=True)
    model = model.strip().lower()
    if model not in _MODELS:
        raise ConfigError(f"model must be one of {_MODELS}, got '{model}'",
                          path, lines.get(("experiment", "model")))
    allowed = _LELAND_KEYS if model != "afv" else _AFV_KEYS
    if cp.has_section("model"):
        for key in cp.options("model"):
            if key not in allowed:
                raise ConfigError(
                    f"key '{key}' does not apply to model '{model}'", path,
                    lines.get(("model", key)))

    def g(section, key, conv, default=None, required=False):
        return _get(cp, lines, path, section, key, conv, default, required)

    try:
        if model == "afv":
            params = AfvParams(
                rate=g("model", "rate", float, required=True),
                sigma=g("model", "sigma", float, required=True),
                maturity=g("model", "maturity", float, required=True),
                face_value=g("model", "face_value", float, required=True),
                conversion_ratio=g("model", "conversion_ratio", float, 1.0),
                s_initial=g("model", "s_initial", float, required=True),
                hazard_rate=g("model", "hazard_rate", float, 0.0),
                recovery=g("model", "recovery", float, 0.0),
                eta=g("model", "eta", float, 0.0),
                coupons=g("model", "coupons", _parse_pairs, ()),
                call_window=g("model", "call_window", _parse_window, None),
                put_window=g("model", "put_window", _parse_window, None),
                rho=g("model", "rho", float, 1e6),
                newton_tol=g("model", "newton_tol", float, 1e-6))
        else:
            le = g("model", "leland_number", float, 0.0)
            if model == "linear-bs" and le != 0.0:
                raise ConfigError("linear-bs requires leland_number = 0",
                                  path, lines.get(("model", "leland_number")))
            params = LelandParams(
                rate=g("model", "rate", float, required=True),
                sigma=g("model", "sigma", float, required=True),
                strike=g("model", "strike", float, required=True),
                maturity=g("model", "maturity", float, required=True),
                leland_number=le)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid [model] parameters: {exc}", path,
                          lines.get(("model", ""))) from None

    knot_mode = g("discretization", "knot_mode", str, "uniform").strip().lower()
    if knot_mode not in ("uniform", "refined"):
        raise ConfigError("knot_mode must be 'uniform' or 'refined'", path,
                          lines.get(("discretization", "knot_mode")))
    weight_source = g("discretization", "weight_source", str, "none")
    weight_source = weight_source.strip().lower()
    if weight_source not in ("none", "file", "calibrated"):
        raise ConfigError(
            "weight_source must be 'none', 'file' or 'calibrated'", path,
            lines.get(("discretization", "weight_source")))
    weights_file = g("discretization", "weights_file", str, None)
    if weight_source == "file":
        if weights_file is None:
            raise ConfigError("weight_source = file needs weights_file",
                              path, lines.get(("discretization", "")))
        if not os.path.exists(weights_file):
            raise ConfigError(f"weights file not found: {weights_file}",
                              path, lines.get(("discretization",
                                               "weights_file")))

    a_def, b_def = default_domain(params, knot_mode)
    cfg = ExperimentConfig(
        path=path,
        model=model,
        params=params,
        degree=g("discretization", "degree", int, 3),
        n_elements=g("discretization", "n_elements", int, required=True),
        knot_mode=knot_mode,
        cluster_ratio=g("discretization", "cluster_ratio", float, None),
        kink_xi=g("discretization", "kink_xi", float, 0.5),
        weight_source=weight_source,
        weights_file=weights_file,
        n_tau=g("discretization", "n_tau", int, required=True),
        theta=g("discretization", "theta", float, 0.5),
        rannacher_steps=g("discretization", "rannacher_steps", int, 2),
        x_min=g("discretization", "x_min", float, a_def),
        x_max=g("discretization", "x_max", float, b_def),
        store_every=g("discretization", "store_every", int, 0),
        probe_s=g("experiment", "probe_s", float, 100.0),
        out_dir=g("output", "dir", str, "out"),
        rungs=g("ladder", "rungs", _parse_rungs, []),
        reference=g("ladder", "reference",
                    lambda s: _parse_rungs(s)[0], None))
    if cfg.n_elements < 1 or cfg.n_tau < 0:
        raise ConfigError("n_elements must be >= 1 and n_tau >= 0", path,
                          lines.get(("discretization", "")))
    return cfg


def _payoff_of(cfg: ExperimentConfig):
    params = cfg.params
    if cfg.model == "afv":
        from .models import afv_terminal
        return lambda x: afv_terminal(params.s_initial * np.exp(x), params)[0]
    return lambda x: leland_payoff_vhat(x, params)


def _build(cfg: ExperimentConfig, n_elements: int | None = None,
           n_tau: int | None = None):
    n_e = cfg.n_elements if n_elements is None else n_elements
    n_t = cfg.n_tau if n_tau is None else n_tau
    kwargs = dict(degree=cfg.degree, knot_mode=cfg.knot_mode,
                  cluster_ratio=cfg.cluster_ratio, kink_xi=cfg.kink_xi)
    disc = build_discretization(cfg.x_min, cfg.x_max, n_e, **kwargs)
    if cfg.weight_source != "none":
        from .basis import load_weights
        if cfg.weight_source == "file":
            w = load_weights(cfg.weights_file, disc.basis.knots.n_basis)
        else:
            w = calibrate_weights(disc.basis.knots, disc.pmap,
                                  _payoff_of(cfg), kink_xi=cfg.kink_xi)
        disc = build_discretization(cfg.x_min, cfg.x_max, n_e, weights=w,
                                    **kwargs)
    scheme = SchemeConfig(n_steps=n_t, theta=cfg.theta,
                          rannacher_steps=cfg.rannacher_steps,
                          store_every=cfg.store_every
                          if cfg.store_every > 0 else max(1, n_t // 50))
    surf = run(cfg.params, disc, scheme)
    return disc, surf


def _value_field(cfg: ExperimentConfig) -> str:
    return "U" if cfg.model == "afv" else "V"


def _price_curve(cfg, disc, slice_, s_points) -> np.ndarray:
    if cfg.model == "afv":
        return afv_value_curve(cfg.params, disc, slice_, s_points)
    return leland_price_curve(cfg.params, disc, slice_, s_points)


def _grid_s(cfg, disc, slice_) -> np.ndarray:
    """Image of the Greville points in price space on one slice."""
    if cfg.model == "afv":
        return cfg.params.s_initial * np.exp(disc.greville_x)
    return np.exp(disc.greville_x - cfg.params.kappa * slice_.tau)


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    return "" if v is None else f"{v:.10g}"


def _write_csv(path: str, header: list[str], rows) -> None:
    body = "\n".join(",".join(_fmt(v) for v in row) for row in rows)
    _atomic_write(path, ",".join(header) + "\n" + body + "\n")


def _probe_report(cfg, disc, surf) -> list[str]:
    name = _value_field(cfg)
    final = surf.final
    exact = float(_price_curve(cfg, disc, final, [cfg.probe_s])[0])
    grid = _grid_s(cfg, disc, final)
    j = int(np.argmin(np.abs(grid - cfg.probe_s)))
    near = float(_price_curve(cfg, disc, final, [grid[j]])[0])
    return [f"{name}({cfg.probe_s:g}) = {exact:.4f}  [exact evaluation]",
            f"{name}({grid[j]:.4f}) = {near:.4f}  [nearest Greville point]"]


def _oracle_value(cfg: ExperimentConfig, oracle: str) -> float | None:
    if oracle == "none":
        return None
    params = cfg.params
    if oracle == "closed-form":
        if cfg.model != "linear-bs":
            raise ConfigError("closed-form oracle exists only for linear-bs",
                              cfg.path)
        return float(bs_exact_call(cfg.probe_s, 0.0, params))
    if oracle == "p1":
        if cfg.model == "afv":
            raise ConfigError("p1 oracle applies to the call models only",
                              cfg.path)
        disc, surf = p1fem_solve(params, cfg.x_min, cfg.x_max,
                                 cfg.n_elements,
                                 SchemeConfig(n_steps=cfg.n_tau))
        return float(leland_price_curve(params, disc, surf.final,
                                        [cfg.probe_s])[0])
    if oracle == "fdm":
        if cfg.model == "afv":
            res = fdm_solve_afv(params, cfg.x_min, cfg.x_max,
                                cfg.n_elements, cfg.n_tau)
            return float(np.interp(math.log(cfg.probe_s / params.s_initial),
                                   res.x, res.values["U"]))
        res = fdm_solve_leland(params, cfg.x_min, cfg.x_max,
                               cfg.n_elements, cfg.n_tau)
        tau = params.tau_max
        x = math.log(cfg.probe_s) + params.kappa * tau
        return math.exp(-params.kappa * tau) * float(
            np.interp(x, res.x, res.values["vhat"]))
    raise ConfigError(f"unknown oracle '{oracle}'", cfg.path)


def run_pricing(cfg: ExperimentConfig, oracle: str = "none") -> int:
    disc, surf = _build(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    name = _value_field(cfg)
    fields = ("U", "B", "C") if cfg.model == "afv" else ("vhat",)

    rows = []
    for level, slice_ in zip(surf.levels, surf.slices):
        s_grid = _grid_s(cfg, disc, slice_)
        t = (cfg.params.maturity - slice_.tau if cfg.model == "afv"
             else cfg.params.maturity - 2.0 * slice_.tau / cfg.params.sigma ** 2)
        vals = [_price_curve(cfg, disc, slice_, s_grid)] if cfg.model != "afv" \
            else [evaluate_slice(disc, slice_, f,
                                 np.log(s_grid / cfg.params.s_initial))
                  for f in fields]
        for i, s in enumerate(s_grid):
            rows.append([level, t, s] + [v[i] for v in vals])
    head = ["level", "t", "S"] + ([name] if cfg.model != "afv"
                                  else ["U", "B", "C"])
    _write_csv(os.path.join(cfg.out_dir, "surface.csv"), head, rows)

    final = surf.final
    s_grid = _grid_s(cfg, disc, final)
    if cfg.model == "afv":
        x = np.log(s_grid / cfg.params.s_initial)
        cols = [evaluate_slice(disc, final, f, x) for f in ("U", "B", "C")]
        slice_rows = [[s] + [c[i] for c in cols] for i, s in enumerate(s_grid)]
        _write_csv(os.path.join(cfg.out_dir, "slice_t0.csv"),
                   ["S", "U", "B", "C"], slice_rows)
    else:
        curve = _price_curve(cfg, disc, final, s_grid)
        _write_csv(os.path.join(cfg.out_dir, "slice_t0.csv"), ["S", name],
                   [[s, v] for s, v in zip(s_grid, curve)])

    table = greeks_table(cfg.params, disc, surf)
    write_greeks_csv(os.path.join(cfg.out_dir, "greeks.csv"), table)

    for line in _probe_report(cfg, disc, surf):
        print(line)
    ov = _oracle_value(cfg, oracle)
    if ov is not None:
        print(f"oracle ({oracle}): {name}({cfg.probe_s:g}) = {ov:.4f}")
    return 0


def _rung_error(cfg, ref, disc, surf, value) -> float | None:
    """Rung error per the fixed oracle map; None when no oracle applies."""
    if cfg.model == "linear-bs":
        return abs(value - float(bs_exact_call(cfg.probe_s, 0.0, cfg.params)))
    if cfg.model == "leland" and ref is not None:
        # price misfit 2-norm against the hat-function reference, sampled
        # at this rung's Greville stock prices at or below three strikes
        ref_disc, ref_surf = ref
        grid = _grid_s(cfg, disc, surf.final)
        grid = grid[grid <= 3.0 * cfg.params.strike]
        mine = leland_price_curve(cfg.params, disc, surf.final, grid)
        theirs = leland_price_curve(cfg.params, ref_disc, ref_surf.final,
                                    grid)
        return misfit_epsilon(theirs, mine)
    return None


def run_convergence(cfg: ExperimentConfig, oracle: str = "default") -> int:
    if not cfg.rungs:
        raise ConfigError("converge needs a [ladder] section with rungs",
                          cfg.path)
    ref = None
    if cfg.model == "leland" and oracle != "none":
        n_e, n_t = cfg.reference if cfg.reference else max(cfg.rungs)
        ref = p1fem_solve(cfg.params, cfg.x_min, cfg.x_max, n_e,
                          SchemeConfig(n_steps=n_t))

    def solve(rung):
        n_e, n_t = rung
        disc, surf = _build(cfg, n_e, n_t)
        value = float(_price_curve(cfg, disc, surf.final, [cfg.probe_s])[0])
        err = None if oracle == "none" else _rung_error(cfg, ref, disc, surf,
                                                        value)
        return value, err

    workers = int(os.environ.get("IGAFIN_THREADS", "0")) \
        or min(4, len(cfg.rungs))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(solve, cfg.rungs))

    rows, prev_err = [], None
    for (n_e, n_t), (value, err) in zip(cfg.rungs, results):
        contraction = (prev_err / err) if (err and prev_err) else None
        rows.append([n_e, n_t, value, err, contraction])
        prev_err = err
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_csv(os.path.join(cfg.out_dir, "convergence.csv"),
               ["n_e", "n_tau", "value", "error", "contraction"], rows)
    for row in rows:
        print("  ".join(_fmt(v) or "-" for v in row))
    return 0


def run_greeks(cfg: ExperimentConfig) -> int:
    disc, surf = _build(cfg)
    table = greeks_table(cfg.params, disc, surf)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "greeks.csv")
    write_greeks_csv(path, table)
    print(f"wrote {path} ({len(table.s)} rows)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="igafin", description="NURBS Galerkin option-pricing runs")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("price", "converge", "greeks", "validate"):
        sp = sub.add_parser(verb)
        sp.add_argument("--config", required=(verb != "validate"))
        sp.add_argument("--out", default=None)
        sp.add_argument("--probe-s", type=float, default=None)
        sp.add_argument("--oracle", default=None,
                        choices=["closed-form", "p1", "fdm", "none"])
    args = parser.parse_args(argv)

    if args.verb == "validate":
        results = run_checks()
        print(format_report(results))
        return 0 if all(r.passed for r in results) else 1

    try:
        cfg = parse_config(args.config)
        if args.out is not None:
            cfg.out_dir = args.out
        if args.probe_s is not None:
            cfg.probe_s = args.probe_s
        if args.verb == "price":
            return run_pricing(cfg, args.oracle or "none")
        if args.verb == "converge":
            return run_convergence(cfg, args.oracle or "default")
        return run_greeks(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NewtonDivergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
