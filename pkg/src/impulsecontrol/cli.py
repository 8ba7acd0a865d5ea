"""Command-line front end.

Commands: ``solve`` (full constrained pipeline), ``analytic`` (closed-form
fluid benchmark), ``dual-curve`` (CSV of dual evaluations over a multiplier
grid), ``eval`` (cost vector of a policy table), ``verify`` (invariant
suite).  JSON reports and CSV curves are emitted with 17 significant digits;
every JSON report names the schema file it validates against (shipped under
``impulsecontrol/schemas``).

Exit codes: 0 success, 2 malformed configuration, 3 solvability validation
failure, 4 non-converged solve, 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import model
from .model import ConfigError, discretize, problem_from_config, validate
from .bellman import BellmanConfig, StationaryPolicy, solve_W
from .policy_eval import (check_characteristic, eval_policy, occupation_measure,
                          policy_from_table, simulate_oracle)
from .dual import (DualBracketError, DualConfig, MixtureInfeasibleError,
                   dual_value, solve_constrained)
from . import fluidq

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_NOT_CONVERGED = 4
EXIT_VERIFY_FAILED = 5


@dataclass
class RunConfig:
    """Parsed invocation: command, config document, output target, overrides."""

    command: str
    problem_file: str
    output: str | None
    overrides: dict
    dual_grid: list | None = None
    tol_scale: float = 1.0
    policy_file: str | None = None
    bellman_trace: str | None = None
    g_min: float = 0.0
    g_max: float = 2.0
    g_steps: int = 21


# ---------------------------------------------------------------------------
# rendering: all numeric output carries 17 significant digits


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        raise ValueError("refusing to serialize NaN")
    if math.isinf(x):
        return '"INF"' if x > 0 else '"-INF"'
    return format(float(x), ".17g")


def render_json(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple, np.ndarray)):
        items = [render_json(v, indent + 1) for v in obj]
        if not items:
            return "[]"
        inner = ",\n".join("  " * (indent + 1) + s for s in items)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        rows = []
        for k, v in obj.items():
            rows.append("  " * (indent + 1) + json.dumps(str(k)) + ": "
                        + render_json(v, indent + 1))
        return "{\n" + ",\n".join(rows) + "\n" + pad + "}"
    raise TypeError(f"cannot render {type(obj)!r} into a report")


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(out, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# configuration loading


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_override(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def load_config(run: RunConfig) -> dict:
    try:
        with open(run.problem_file) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {run.problem_file}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    for key, value in run.overrides.items():
        _apply_override(doc, key, value)
    return doc


def _dual_config(run: RunConfig) -> DualConfig:
    return DualConfig(
        bellman=BellmanConfig(tolerance=1e-9 * run.tol_scale),
        g_tol=1e-8 * run.tol_scale)


def _policy_rows(mdp, pol: StationaryPolicy) -> list:
    rows = []
    for i in range(mdp.n_states):
        t_idx, a_idx = pol.choice[i]
        theta = float(mdp.theta_points[t_idx])
        rows.append([float(mdp.states[i]), theta, str(mdp.action_labels[a_idx])])
    return rows


def _grid_metadata(doc: dict, mdp) -> dict:
    g = dict(doc.get("grid", {}))
    g["clamped_cells"] = int(mdp.clamped_cells)
    return g


# ---------------------------------------------------------------------------
# commands


def _prepare(run: RunConfig, need_delta: bool = True):
    doc = load_config(run)
    problem, grid = problem_from_config(doc)
    report = validate(problem, grid)
    if need_delta and not report.delta_ok:
        for msg in report.messages():
            sys.stderr.write(f"validation: {msg}\n")
        sys.stderr.write(
            "refusing to run the dual pipeline: impulse costs must be bounded "
            "away from zero so that endless zero-wait impulse chains are "
            "infinitely costly\n")
        return doc, None, None, None
    mdp = discretize(problem, grid)
    return doc, problem, grid, mdp


def cmd_solve(run: RunConfig) -> int:
    doc, problem, grid, mdp = _prepare(run)
    if mdp is None:
        return EXIT_VALIDATION
    dcfg = _dual_config(run)
    t0 = time.perf_counter()
    try:
        result = solve_constrained(mdp, dcfg)
    except (DualBracketError, MixtureInfeasibleError) as exc:
        sys.stderr.write(f"solve failed: {exc}\n")
        return EXIT_NOT_CONVERGED
    wall = time.perf_counter() - t0
    sol = solve_W(mdp, result.g_star, dcfg.bellman)
    if run.bellman_trace is not None:
        lines = ["iteration,residual"]
        lines += [f"{k},{format(r, '.17g')}" for k, r in sol.trace]
        _emit("\n".join(lines), run.bellman_trace)
    regime = ("constrained" if np.any(result.g_star > dcfg.multiplier_tol)
              else "unconstrained")
    report = {
        "schema": "solve_report.schema.json",
        "command": "solve",
        "regime": regime,
        "g_star": [float(g) for g in result.g_star],
        "h_star": float(result.h_star),
        "W0": float(result.W0),
        "costs": [float(v) for v in result.costs.v],
        "bounds": [float(d) for d in mdp.bounds],
        "mixture": {
            "weights": [float(w) for w in result.mixture.weights],
            "policies": [_policy_rows(mdp, p) for p in result.mixture.policies],
        },
        "certificates": result.certificates.as_dict(),
        "dual_evaluations": len(result.trace),
        "bellman_iterations": int(sol.iterations),
        "minimizer_slack": float(result.slack_used),
        "converged": bool(result.converged),
        "grid": _grid_metadata(doc, mdp),
        "wall_time_seconds": float(wall),
    }
    _emit(render_json(report), run.output)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _fluid_params(doc: dict) -> fluidq.FluidParams:
    if doc.get("model") != "fluid":
        raise ConfigError("the analytic command requires model = 'fluid'")
    for key in ("alpha", "h", "K", "d"):
        if key not in doc:
            raise ConfigError(f"missing required field '{key}'")
    return fluidq.FluidParams(alpha=float(doc["alpha"]), h=float(doc["h"]),
                              K=float(doc["K"]), d=float(doc["d"]))


def cmd_analytic(run: RunConfig) -> int:
    doc = load_config(run)
    params = _fluid_params(doc)
    sol = fluidq.solve_analytic(params)
    report = {
        "schema": "analytic_report.schema.json",
        "command": "analytic",
        "params": {"alpha": params.alpha, "h": params.h,
                   "K": params.K, "d": params.d},
        "regime": sol.regime,
        "x_star": sol.x_star,
        "g_star": sol.g_star,
        "V0": sol.V0,
        "V1": sol.V1,
        "W0": sol.W0,
    }
    _emit(render_json(report), run.output)
    return EXIT_OK


def cmd_dual_curve(run: RunConfig) -> int:
    doc, problem, grid, mdp = _prepare(run)
    if mdp is None:
        return EXIT_VALIDATION
    J = mdp.n_constraints
    grid_pts: list
    if run.dual_grid is not None:
        grid_pts = [np.atleast_1d(np.asarray(g, dtype=float)) for g in run.dual_grid]
    elif "dual_grid" in doc:
        grid_pts = [np.atleast_1d(np.asarray(g, dtype=float)) for g in doc["dual_grid"]]
    else:
        if J != 1:
            raise ConfigError(
                "dual-curve needs an explicit dual_grid for multi-constraint "
                "problems (use the config 'dual_grid' field)")
        grid_pts = [np.asarray([g]) for g in
                    np.linspace(run.g_min, run.g_max, run.g_steps)]
    bcfg = BellmanConfig(tolerance=1e-9 * run.tol_scale)
    header = ([f"g_{j + 1}" for j in range(J)] + ["h", "W0"]
              + [f"slack_{j + 1}" for j in range(J)])
    lines = [",".join(header)]
    for g in grid_pts:
        if g.size != J:
            raise ConfigError(
                f"dual_grid entry {g.tolist()} has {g.size} components, "
                f"expected {J}")
        pt = dual_value(mdp, g, bcfg)
        row = ([format(float(x), ".17g") for x in pt.g]
               + [format(pt.h, ".17g"), format(pt.W0, ".17g")]
               + [format(float(s), ".17g") for s in pt.slacks])
        lines.append(",".join(row))
    _emit("\n".join(lines), run.output)
    return EXIT_OK


def cmd_eval(run: RunConfig) -> int:
    doc, problem, grid, mdp = _prepare(run, need_delta=False)
    if run.policy_file is None:
        raise ConfigError("eval requires --policy <table file>")
    try:
        with open(run.policy_file) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"policy file not found: {run.policy_file}")
    try:
        pol = policy_from_table(mdp, text)
    except ValueError as exc:
        raise ConfigError(str(exc))
    costs = eval_policy(mdp, pol)
    report = {
        "schema": "eval_report.schema.json",
        "command": "eval",
        "costs": [float(v) for v in costs.v],
        "finite": bool(costs.finite),
        "bounds": [float(d) for d in mdp.bounds],
        "feasible": bool(np.all(costs.v[1:] <= np.asarray(mdp.bounds) + 1e-9))
        if mdp.n_constraints else True,
    }
    _emit(render_json(report), run.output)
    return EXIT_OK


def _verify_checks(problem, grid, mdp, tol_scale: float):
    """Yield (name, passed, detail) for the invariant suite."""
    rep = validate(problem, grid)
    yield "impulse-cost-positive", rep.delta_ok, f"delta_hat={rep.delta_hat:.6g}"
    yield "costs-bounded", rep.bounded_ok, f"cost_sup={rep.cost_sup:.6g}"
    yield ("flow-identities", rep.flow_ok,
           f"semigroup={rep.semigroup_residual:.3e} identity={rep.identity_residual:.3e}")

    mass_err = float(np.max(np.abs(mdp.w_lo + mdp.w_hi - 1.0)))
    nonneg = bool(np.all(mdp.w_lo >= 0.0) and np.all(mdp.w_hi >= 0.0))
    yield "kernel-mass", mass_err <= 1e-12 and nonneg, f"max|w_lo+w_hi-1|={mass_err:.3e}"

    L = mdp.n_labels
    th = mdp.theta_points
    s_fin = mdp.survival[::L][:-1]
    zero_ok = bool(np.all(mdp.survival[(th.size - 1) * L:] == 0.0))
    one_ok = bool(np.all(mdp.survival[:L] == 1.0))
    mono = bool(np.all(np.diff(s_fin) < 0.0)) if s_fin.size > 1 else True
    yield ("survival-shape", zero_ok and one_ok and mono,
           "exact kill at INF, exact carry at 0, strictly decreasing between")

    # tabulated costs against the scalar quadrature on a sample of cells
    idxs = np.unique(np.linspace(0, mdp.n_states - 1, 5).astype(int))
    ks = np.unique(np.linspace(0, th.size - 1, 5).astype(int))
    worst = 0.0
    for i in idxs:
        for k in ks:
            for a_idx, label in enumerate(mdp.action_labels):
                q = k * L + a_idx
                for j in range(mdp.n_costs):
                    ref = model.stage_cost(problem, float(mdp.states[i]),
                                           float(th[k]), label, j,
                                           step=grid.quadrature_step)
                    got = float(mdp.costs[j, i, q])
                    worst = max(worst, abs(got - ref) / (1.0 + abs(ref)))
    yield "stage-cost-quadrature", worst <= 1e-8, f"max rel err {worst:.3e}"

    bcfg = BellmanConfig(tolerance=1e-9 * tol_scale)
    ones = np.ones(mdp.n_constraints)
    for tag, g in (("zero", np.zeros(mdp.n_constraints)), ("ones", ones)):
        sol = solve_W(mdp, g, bcfg)
        ok = sol.converged and sol.residual <= bcfg.tolerance
        yield (f"bellman-converges-g-{tag}", ok,
               f"iterations={sol.iterations} residual={sol.residual:.3e}")

    # occupation and oracle identities on a few constant-waiting policies
    m_fin = th.size - 1
    probes = sorted({max(1, m_fin // 8), max(1, m_fin // 4),
                     max(1, m_fin // 2), m_fin - 1})
    occ_ok, occ_detail = True, []
    tri_ok, tri_detail = True, []
    for k in probes:
        flat = np.full(mdp.n_states, k * L, dtype=np.intp)
        pol = StationaryPolicy.from_flat(flat, L)
        costs = eval_policy(mdp, pol)
        if not costs.finite:
            continue
        mu = occupation_measure(mdp, pol)
        resid = check_characteristic(mdp, mu)
        occ_ok &= resid <= 1e-9
        dual_costs = np.tensordot(mu.mass, mdp.costs, axes=([0, 1], [1, 2]))
        rel = float(np.max(np.abs(dual_costs - costs.v) / (1.0 + np.abs(costs.v))))
        occ_ok &= rel <= 1e-8
        occ_detail.append(f"theta={th[k]:.4g}: char={resid:.2e} dual={rel:.2e}")
        oracle = simulate_oracle(problem, pol, horizon=4000, mdp=mdp,
                                 step=grid.quadrature_step)
        rel_o = float(np.max(np.abs(oracle.v - costs.v) / (1.0 + np.abs(costs.v))))
        tri_ok &= rel_o <= 1e-6
        tri_detail.append(f"theta={th[k]:.4g}: oracle={rel_o:.2e}")
    yield "occupation-identities", occ_ok, "; ".join(occ_detail)
    yield "oracle-agreement", tri_ok, "; ".join(tri_detail)

    # weak duality: dual values never exceed feasible policy values
    d = np.asarray(mdp.bounds, dtype=float)
    feas_values = []
    for k in probes:
        pol = StationaryPolicy.from_flat(np.full(mdp.n_states, k * L, dtype=np.intp), L)
        v = eval_policy(mdp, pol).v
        if np.all(np.isfinite(v)) and np.all(v[1:] <= d + 1e-9):
            feas_values.append(v[0])
    wd_ok = True
    worst_gap = -math.inf
    if feas_values and mdp.n_constraints >= 1:
        for scale in (0.0, 0.5, 1.0, 2.0, 4.0):
            pt = dual_value(mdp, scale * ones, bcfg)
            gap = pt.h - min(feas_values)
            worst_gap = max(worst_gap, gap)
            wd_ok &= gap <= 10.0 * bcfg.tolerance + 1e-9
    yield ("weak-duality", wd_ok,
           f"max h(g) - V0(feasible) = {worst_gap:.3e}" if feas_values
           else "no feasible probe policy")


def cmd_verify(run: RunConfig) -> int:
    doc, problem, grid, mdp = _prepare(run, need_delta=False)
    failures = 0
    for name, passed, detail in _verify_checks(problem, grid, mdp, run.tol_scale):
        status = "PASS" if passed else "FAIL"
        print(f"{status} {name}: {detail}")
        failures += 0 if passed else 1
    print(f"{'OK' if failures == 0 else 'FAILED'} "
          f"({failures} failing check{'s' if failures != 1 else ''})")
    return EXIT_OK if failures == 0 else EXIT_VERIFY_FAILED


# ---------------------------------------------------------------------------
# argument parsing


def _parse_args(argv) -> RunConfig:
    parser = argparse.ArgumentParser(
        prog="impulsecontrol",
        description="Constrained impulse control solver and analytic benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="problem definition JSON")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (dotted path, repeatable)")
        p.add_argument("--tol", type=float, default=1.0,
                       help="global tolerance scale factor")

    p_solve = sub.add_parser("solve", help="run the constrained dual pipeline")
    common(p_solve)
    p_solve.add_argument("--bellman-trace", default=None,
                         help="write the final Bellman solve trace CSV here")

    p_analytic = sub.add_parser("analytic", help="closed-form fluid solution")
    common(p_analytic)

    p_curve = sub.add_parser("dual-curve", help="CSV of dual values over a grid")
    common(p_curve)
    p_curve.add_argument("--g-min", type=float, default=0.0)
    p_curve.add_argument("--g-max", type=float, default=2.0)
    p_curve.add_argument("--g-steps", type=int, default=21)

    p_eval = sub.add_parser("eval", help="evaluate a policy table")
    common(p_eval)
    p_eval.add_argument("--policy", required=True, help="policy table file")

    p_verify = sub.add_parser("verify", help="run the invariant suite")
    common(p_verify)

    args = parser.parse_args(argv)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            parser.error(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        overrides[key.strip()] = _parse_override_value(raw.strip())
    return RunConfig(
        command=args.command,
        problem_file=args.config,
        output=args.out,
        overrides=overrides,
        tol_scale=args.tol,
        policy_file=getattr(args, "policy", None),
        bellman_trace=getattr(args, "bellman_trace", None),
        g_min=getattr(args, "g_min", 0.0),
        g_max=getattr(args, "g_max", 2.0),
        g_steps=getattr(args, "g_steps", 21),
    )


_COMMANDS = {
    "solve": cmd_solve,
    "analytic": cmd_analytic,
    "dual-curve": cmd_dual_curve,
    "eval": cmd_eval,
    "verify": cmd_verify,
}


def run(config: RunConfig) -> int:
    """Dispatch a parsed run configuration; returns the process exit status."""
    try:
        return _COMMANDS[config.command](config)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG


def main(argv=None) -> int:
    return run(_parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
