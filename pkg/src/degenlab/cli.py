"""Batch front end: parse a configuration, run one experiment, emit result files.

Every subcommand writes two files into the output directory:

* ``<name>.json`` -- one self-describing record: the full effective
  configuration, all scalar results, the sweep table, and a status block.
  Timestamps and wall time live in a separate ``meta`` field so that records
  are bit-identical across runs with the same configuration and seed.
* ``<name>.csv`` -- the sweep table alone, for plotting.

Exit codes: 0 success, 1 usage error, 2 invariant or inequality violation,
3 convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import carleman as carleman_mod
from .control import HumSystem, observability_ratio, time_average_check
from .elliptic import elliptic_convergence_sweep, solve_elliptic
from .errors import ConvergenceError, InvalidInputError
from .grid import Field, Mesh1D, TimeGrid, default_grading
from .parabolic import (
    energy_check,
    mass_l2_norm,
    parabolic_convergence_sweep,
    solve_backward,
    solve_parabolic,
)
from .randomfields import random_nodal_field, random_smooth_field
from .weights import (
    CoefficientSpec,
    WeightSpec,
    ap_constant_estimate,
    dyadic_intervals,
    hardy_check,
    poincare_sweep,
)

__all__ = ["ExperimentConfig", "run_subcommand", "main", "SUBCOMMANDS"]


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    alpha: float = 0.5
    a: float = 0.3
    b: float = 0.6
    T: float = 1.0
    gamma: float = 1.0
    lam: float = 1.0
    n: int = 512
    q: float | None = None  # None -> 2/(1 - alpha) clamped to [1, 4]
    n_t: int = 256
    theta: float = 0.5
    s_grid: tuple = (1.0, 2.0, 4.0, 8.0)
    k_grid: tuple = (2, 4, 8, 16, 32)
    eps_ladder: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    samples: int = 20
    seed: int = 42
    ap_levels: int = 12
    ap_p: float = 3.0

    def validate(self):
        msgs = []
        if not 0.0 <= self.alpha < 1.0:
            msgs.append(f"alpha={self.alpha}: solver runs need alpha in [0, 1)")
        if not 0.0 < self.a < self.b < 1.0:
            msgs.append(f"window ({self.a}, {self.b}): need 0 < a < b < 1")
        if self.T <= 0:
            msgs.append(f"T={self.T}: final time must be positive")
        if self.gamma < 1.0:
            msgs.append(f"gamma={self.gamma}: must be >= 1")
        if not 0.0 < self.lam <= 1.0:
            msgs.append(f"lam={self.lam}: ellipticity constant must be in (0, 1]")
        if self.n < 4:
            msgs.append(f"n={self.n}: need at least 4 elements")
        if self.q is not None and self.q < 1.0:
            msgs.append(f"q={self.q}: grading exponent must be >= 1")
        if self.n_t < 8:
            msgs.append(f"n_t={self.n_t}: need at least 8 time steps")
        if self.theta not in (0.5, 1.0):
            msgs.append(f"theta={self.theta}: only 0.5 and 1.0 are supported")
        if any(s < 1.0 for s in self.s_grid):
            msgs.append(f"s_grid={self.s_grid}: inequality reports need s >= 1")
        if any(int(k) != k or k < 2 for k in self.k_grid):
            msgs.append(f"k_grid={self.k_grid}: truncation indices must be integers >= 2")
        if any(e <= 0 for e in self.eps_ladder):
            msgs.append(f"eps_ladder={self.eps_ladder}: penalties must be positive")
        if self.samples < 1:
            msgs.append(f"samples={self.samples}: need at least one sample")
        if self.ap_p <= 1.0:
            msgs.append(f"ap_p={self.ap_p}: Muckenhoupt exponent must exceed 1")
        if msgs:
            raise UsageError("; ".join(msgs))

    @property
    def grading(self):
        return default_grading(self.alpha) if self.q is None else self.q

    def mesh(self):
        return Mesh1D.graded(self.n, self.grading)

    def coeff(self):
        return CoefficientSpec(WeightSpec(self.alpha), lam=self.lam)

    def time_grid(self):
        return TimeGrid(self.T, self.n_t, self.theta)

    def rng(self):
        return np.random.default_rng(self.seed)


def _closed_form_solution(alpha):
    return lambda x: (x ** (1.0 - alpha) - x ** (2.0 - alpha)) / (2.0 - alpha)


# ---------------------------------------------------------------------------
# drivers: each returns (results, header, rows, violations)


def _run_ap_check(cfg: ExperimentConfig):
    w = WeightSpec(cfg.alpha)
    rows = []
    for level in range(cfg.ap_levels + 1):
        ivals = dyadic_intervals(level)
        rows.append([level, ap_constant_estimate(w, cfg.ap_p, ivals)])
    constant = rows[-1][1]
    violations = [] if constant >= 1.0 - 1e-12 else ["A_p estimate fell below 1"]
    results = {"ap_constant": constant, "p": cfg.ap_p, "levels": cfg.ap_levels}
    return results, ["max_level", "ap_estimate"], rows, violations


def _run_hardy(cfg: ExperimentConfig):
    w = WeightSpec(cfg.alpha)
    mesh = cfg.mesh()
    rng = cfg.rng()
    cases = [
        ("x(1-x)", Field.dirichlet(mesh, mesh.nodes * (1.0 - mesh.nodes))),
        ("sin(pi x)", Field.dirichlet(mesh, np.sin(np.pi * mesh.nodes))),
        ("x^0.8 (1-x)", Field.dirichlet(mesh, mesh.nodes**0.8 * (1.0 - mesh.nodes))),
    ]
    cases += [(f"random_{i}", random_nodal_field(mesh, rng)) for i in range(cfg.samples)]
    rows, violations = [], []
    for name, v in cases:
        chk = hardy_check(v, w)
        ok = chk.lhs <= chk.bound * chk.rhs * (1.0 + 1e-8)
        rows.append([name, chk.lhs, chk.rhs, chk.bound, ok])
        if not ok:
            violations.append(f"Hardy inequality violated for case {name}")
    results = {"bound": 4.0 / (1.0 - cfg.alpha) ** 2, "cases": len(cases)}
    return results, ["case", "lhs", "rhs", "bound", "ok"], rows, violations


def _run_poincare(cfg: ExperimentConfig):
    mesh, coeff = cfg.mesh(), cfg.coeff()
    sweep = poincare_sweep(mesh, coeff, cfg.k_grid)
    rows = [[("full" if np.isinf(k) else int(k)), beta, its] for k, beta, its in sweep]
    betas = [beta for _, beta, _ in sweep[:-1]]
    beta_full = sweep[-1][1]
    violations = []
    if any(b2 > b1 + 1e-9 * abs(b1) for b1, b2 in zip(betas, betas[1:])):
        violations.append("beta_k is not non-increasing in k")
    if any(b < beta_full - 1e-6 for b in betas):
        violations.append("beta_k dropped below the full-domain beta")
    results = {"beta_full": beta_full, "c_domain": float(np.sqrt(cfg.lam / beta_full))}
    return results, ["k", "beta", "iterations"], rows, violations


def _run_solve_elliptic(cfg: ExperimentConfig):
    mesh, coeff = cfg.mesh(), cfg.coeff()
    solution = solve_elliptic(1.0, mesh, coeff)
    exact = _closed_form_solution(cfg.alpha)(mesh.nodes)
    max_err = float(np.max(np.abs(solution.values - exact)))
    results = {"max_nodal_error_vs_closed_form": max_err, "n": cfg.n, "q": cfg.grading}
    rows = [[float(x), float(u)] for x, u in zip(mesh.nodes[:: max(1, cfg.n // 32)],
                                                 solution.values[:: max(1, cfg.n // 32)])]
    return results, ["x", "u"], rows, []


def _run_elliptic_sweep(cfg: ExperimentConfig):
    mesh, coeff = cfg.mesh(), cfg.coeff()
    sweep = elliptic_convergence_sweep(
        1.0, cfg.k_grid, (cfg.a, cfg.b), mesh, coeff,
        reference=_closed_form_solution(cfg.alpha),
    )
    rows = [[r.k, r.err_full, r.err_window] for r in sweep]
    errs = [r.err_window for r in sweep]
    violations = []
    if any(e2 >= e1 for e1, e2 in zip(errs, errs[1:])):
        violations.append("window error is not strictly decreasing in k")
    results = {"final_window_error": errs[-1]}
    return results, ["k", "err_L2w_full", "err_L2w_window"], rows, violations


def _run_solve_parabolic(cfg: ExperimentConfig):
    mesh, coeff, tg = cfg.mesh(), cfg.coeff(), cfg.time_grid()
    phi0 = Field.dirichlet(mesh, mesh.nodes * (1.0 - mesh.nodes))
    traj = solve_parabolic(phi0, None, coeff, tg)
    norms = [mass_l2_norm(traj.frame(i)) for i in range(0, tg.n_t + 1)]
    chk = energy_check(traj, phi0, None, coeff)
    violations = []
    if any(n2 > n1 * (1.0 + 1e-12) for n1, n2 in zip(norms, norms[1:])):
        violations.append("L2 norm of frames is not non-increasing")
    if chk.bound_margin < -1e-10:
        violations.append("energy estimate margin is negative")
    rows = [[tg.times[i], norms[i]] for i in range(0, tg.n_t + 1, max(1, tg.n_t // 64))]
    results = {
        "final_norm": norms[-1],
        "identity_residual": chk.identity_residual,
        "bound_margin": chk.bound_margin,
    }
    return results, ["t", "l2_norm"], rows, violations


def _run_parabolic_sweep(cfg: ExperimentConfig):
    mesh, coeff, tg = cfg.mesh(), cfg.coeff(), cfg.time_grid()
    sweep = parabolic_convergence_sweep(
        lambda x: x * (1.0 - x), None, cfg.k_grid, (cfg.a, cfg.b), mesh, coeff, tg
    )
    rows = [[k, err] for k, err in sweep]
    errs = [err for _, err in sweep]
    violations = []
    if any(e2 >= e1 for e1, e2 in zip(errs, errs[1:])):
        violations.append("space-time window error is not strictly decreasing in k")
    return {"final_window_error": errs[-1]}, ["k", "err_L2w_spacetime"], rows, violations


def _run_carleman(cfg: ExperimentConfig):
    mesh, coeff, tg = cfg.mesh(), cfg.coeff(), cfg.time_grid()
    rng = cfg.rng()
    params0 = carleman_mod.CarlemanParams.build(
        cfg.alpha, cfg.a, cfg.b, cfg.T, gamma=cfg.gamma, s=min(cfg.s_grid)
    )
    terminal = [random_smooth_field(mesh, rng) for _ in range(cfg.samples)]
    trajectories = [solve_backward(phiT, None, coeff, tg) for phiT in terminal]

    rows, violations = [], []
    max_c = -np.inf
    for s in cfg.s_grid:
        params = params0.with_s(s)
        for i, traj in enumerate(trajectories):
            rep = carleman_mod.carleman_report(traj, None, params)
            rows.append([s, i, rep.empirical_c, rep.log_lhs_total, rep.log_rhs_total])
            if rep.violation or not np.isfinite(rep.empirical_c):
                violations.append(f"report (s={s}, sample {i}) is not finite")
            max_c = max(max_c, rep.empirical_c)

    _, resid = carleman_mod.transform_and_decompose(trajectories[0], None, params0)
    results = {
        "max_empirical_c": float(max_c),
        "eta_sup": params0.eta_sup,
        "decomposition_residual_s_min": resid,
    }
    header = ["s", "sample", "empirical_c", "log_lhs", "log_rhs"]
    return results, header, rows, violations


def _run_observability(cfg: ExperimentConfig):
    mesh, coeff, tg = cfg.mesh(), cfg.coeff(), cfg.time_grid()
    rng = cfg.rng()
    window = (cfg.a, cfg.b)
    rows, violations = [], []
    ratios = []
    for i in range(cfg.samples):
        phiT = random_smooth_field(mesh, rng)
        ratio = observability_ratio(phiT, window, tg, coeff)
        traj = solve_backward(phiT, None, coeff, tg)
        lhs, rhs = time_average_check(traj)
        ok = np.isfinite(ratio) and lhs <= rhs + 1e-8 * max(rhs, 1.0)
        rows.append([i, ratio, lhs, rhs, ok])
        ratios.append(ratio)
        if not ok:
            violations.append(f"observability sample {i} failed")
    results = {"max_ratio": float(np.max(ratios)), "samples": cfg.samples}
    return results, ["sample", "ratio", "avg_lhs", "avg_rhs", "ok"], rows, violations


def _run_hum(cfg: ExperimentConfig):
    mesh, coeff, tg = cfg.mesh(), cfg.coeff(), cfg.time_grid()
    system = HumSystem(mesh, coeff, (cfg.a, cfg.b), tg)
    y0 = Field.dirichlet(mesh, mesh.nodes * (1.0 - mesh.nodes))

    rng = cfg.rng()
    a_dir = random_smooth_field(mesh, rng)
    b_dir = random_smooth_field(mesh, rng)
    ga, gb = system.gramian_apply(a_dir), system.gramian_apply(b_dir)
    gd, go = (system.scheme.mass_diag_full, system.scheme.mass_off_full)
    from .quadrature import tridiag_matvec

    lhs = float(tridiag_matvec(gd, go, ga.values) @ b_dir.values)
    rhs = float(tridiag_matvec(gd, go, gb.values) @ a_dir.values)
    sym_defect = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)

    rows, violations = [], []
    norms = []
    for eps in sorted(cfg.eps_ladder, reverse=True):
        res = system.solve(y0, eps)
        rows.append([eps, res.terminal_norm, res.cg_iterations, res.uncontrolled_terminal_norm])
        norms.append(res.terminal_norm)
    if any(n2 > n1 * (1.0 + 1e-9) for n1, n2 in zip(norms, norms[1:])):
        violations.append("terminal norm is not non-increasing along the eps ladder")
    if sym_defect > 1e-8:
        violations.append(f"Gramian symmetry defect {sym_defect:.3e} exceeds 1e-8")
    results = {
        "gramian_symmetry_defect": sym_defect,
        "terminal_norm_smallest_eps": norms[-1],
        "uncontrolled_norm": rows[0][3],
    }
    return results, ["epsilon", "terminal_norm", "cg_iterations", "uncontrolled_norm"], rows, violations


SUBCOMMANDS = {
    "ap-check": _run_ap_check,
    "hardy": _run_hardy,
    "poincare": _run_poincare,
    "solve-elliptic": _run_solve_elliptic,
    "elliptic-sweep": _run_elliptic_sweep,
    "solve-parabolic": _run_solve_parabolic,
    "parabolic-sweep": _run_parabolic_sweep,
    "carleman": _run_carleman,
    "observability": _run_observability,
    "hum": _run_hum,
}


def run_subcommand(name, cfg: ExperimentConfig, out_dir):
    """Run one experiment, write <name>.json and <name>.csv, return exit code."""
    if name not in SUBCOMMANDS:
        raise UsageError(f"unknown subcommand {name!r}")
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    results, header, rows, violations = SUBCOMMANDS[name](cfg)
    record = {
        "subcommand": name,
        "config": asdict(cfg),
        "results": results,
        "table": {"header": header, "rows": rows},
        "status": {"ok": not violations, "violations": violations},
        "meta": {
            "timestamp_utc": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": time.perf_counter() - started,
        },
    }
    slug = name.replace("-", "_")
    (out / f"{slug}.json").write_text(
        json.dumps(record, sort_keys=True, indent=2, default=_json_default) + "\n",
        encoding="utf-8",
    )
    with (out / f"{slug}.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return 0 if not violations else 2


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_tuple(text):
    return tuple(float(v) for v in text.split(","))


def _int_tuple(text):
    return tuple(int(v) for v in text.split(","))


def build_parser():
    parser = _Parser(prog="degenlab", description=__doc__)
    parser.add_argument("subcommand", choices=sorted(SUBCOMMANDS))
    parser.add_argument("--config", type=Path, help="JSON file with config fields")
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--a", type=float)
    parser.add_argument("--b", type=float)
    parser.add_argument("--t", dest="T", type=float, help="final time T")
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--lam", type=float)
    parser.add_argument("--n", type=int)
    parser.add_argument("--q", type=float, help="mesh grading exponent")
    parser.add_argument("--n-t", dest="n_t", type=int)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--s-grid", dest="s_grid", type=_float_tuple)
    parser.add_argument("--k-grid", dest="k_grid", type=_int_tuple)
    parser.add_argument("--eps-ladder", dest="eps_ladder", type=_float_tuple)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--ap-levels", dest="ap_levels", type=int)
    parser.add_argument("--ap-p", dest="ap_p", type=float)
    return parser


def config_from_args(args):
    cfg = ExperimentConfig()
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for key in ("s_grid", "k_grid", "eps_ladder"):
            if key in loaded:
                loaded[key] = tuple(loaded[key])
        cfg = replace(cfg, **loaded)
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(ExperimentConfig)
        if getattr(args, f.name, None) is not None
    }
    return replace(cfg, **overrides)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = config_from_args(args)
        return run_subcommand(args.subcommand, cfg, args.out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
