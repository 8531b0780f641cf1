"""Command-line front end.

    lagqvi validate --config run.json
    lagqvi solve    --config run.json --out runs/c
    lagqvi simulate --config run.json --controller policy --x0 0.5
    lagqvi report   --config run.json --out runs/c

Exit codes: 0 ok, 1 other failure, 2 hypothesis failure, 3 bad configuration,
4 missing artifact, 5 inadmissible impulse.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import analysis
from .errors import AdmissibilityError, ConfigError, HypothesisError, LagQviError
from .grid import Grid, build_grid, interpolate, load_field, save_field
from .hjb import residuals, solve
from .model import ProblemSpec, validate_hypotheses
from .policy import ImpulseSchedule, extract_policy
from .simulate import McConfig, check_admissible, dpp_check, estimate_cost

log = logging.getLogger("lagqvi")

RUN_KEYS = {"problem", "grid", "mc", "output_dir", "mode"}
GRID_KEYS = {"n_t", "n_x", "x_lo", "x_hi"}


@dataclass
class RunConfig:
    problem: ProblemSpec
    grid: dict[str, Any]
    mc: McConfig
    output_dir: Path
    mode: str = "strict"

    @property
    def strict(self) -> bool:
        return self.mode == "strict"


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found", field="config")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                          field="config") from exc
    if not isinstance(doc, dict) or not {"problem", "grid", "mc"} <= set(doc) or not set(doc) <= RUN_KEYS:
        raise ConfigError(f"{p}: expected keys {sorted(RUN_KEYS)} (output_dir and mode optional)", field="config")
    grid = doc["grid"]
    if not isinstance(grid, dict) or set(grid) != GRID_KEYS:
        raise ConfigError(f"grid: expected exactly {sorted(GRID_KEYS)}", field="grid")
    try:
        grid = {"n_t": int(grid["n_t"]), "n_x": int(grid["n_x"]),
                "x_lo": float(grid["x_lo"]), "x_hi": float(grid["x_hi"])}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}", field="grid") from exc
    mode = doc.get("mode", "strict")
    if mode not in ("strict", "tolerant"):
        raise ConfigError(f"mode must be strict or tolerant, got {mode!r}", field="mode")
    return RunConfig(ProblemSpec.from_dict(doc["problem"]), grid,
                     McConfig.from_dict(doc["mc"], strict=mode == "strict"),
                     Path(doc.get("output_dir", "out")), mode)


def _threads() -> int | None:
    raw = os.environ.get("LAGQVI_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"LAGQVI_THREADS must be a positive integer, got {raw!r}", field="LAGQVI_THREADS")
    return n


def _dump(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(type(obj).__name__)


def _mc(cfg: RunConfig, args) -> McConfig:
    mc = cfg.mc
    return McConfig(args.paths if getattr(args, "paths", None) else mc.n_paths, mc.dt_sim,
                    mc.seed if args.seed is None else args.seed, mc.antithetic, cfg.strict or args.strict)


def _grid(cfg: RunConfig) -> Grid:
    g = cfg.grid
    return build_grid(cfg.problem, g["n_t"], g["n_x"], g["x_lo"], g["x_hi"])


def _require_valid(spec: ProblemSpec, seed: int):
    report = validate_hypotheses(spec, seed=seed)
    if not report.passed:
        raise HypothesisError(f"hypothesis check failed: {', '.join(report.failed())}", report.failed())
    return report


def _load(cfg: RunConfig, out: Path):
    field, manifest = load_field(out / "field")
    if manifest.get("spec_hash") != cfg.problem.spec_hash():
        raise ConfigError(f"field in {out / 'field'} was solved for a different problem", field="config")
    return field


# --------------------------------------------------------------------------
# subcommands

def cmd_validate(cfg: RunConfig, out: Path, args) -> int:
    report = validate_hypotheses(cfg.problem, seed=args.seed or 0)
    _dump(out / "validation.json", report.to_dict())
    for c in report.clauses:
        print(f"{c.name:22s} {'ok  ' if c.passed else 'FAIL'} worst={c.worst:.6g} limit={c.limit:.6g}")
    if not report.passed:
        raise HypothesisError(f"hypothesis check failed: {', '.join(report.failed())}", report.failed())
    return 0


def cmd_solve(cfg: RunConfig, out: Path, args) -> int:
    _require_valid(cfg.problem, args.seed or 0)
    grid = _grid(cfg)
    field = solve(cfg.problem, grid)
    save_field(field, out / "field", cfg.problem.spec_hash())
    res = residuals(field, cfg.problem, grid)
    _dump(out / "residuals.json", res.to_dict())
    print(f"solved n_t={grid.n_t} m={grid.m} n_x={grid.n_x}; residual {res.pde_residual_sup:.3g}, "
          f"active fraction {res.active_fraction:.3f}")
    return 0


def cmd_policy(cfg: RunConfig, out: Path, args) -> int:
    field = _load(cfg, out)
    policy = extract_policy(field, cfg.problem)
    policy.to_csv(out / "policy.csv")
    print(f"{int(policy.act.sum())} active nodes (tol {policy.tol:.3g})")
    return 0


def cmd_simulate(cfg: RunConfig, out: Path, args) -> int:
    spec = cfg.problem
    mc = _mc(cfg, args)
    r0 = spec.delta if args.r0 is None else args.r0
    kind = args.controller or ("schedule" if args.schedule else "trivial")
    if kind == "schedule":
        if not args.schedule:
            raise ConfigError("--controller schedule needs --schedule FILE", field="schedule")
        controller = ImpulseSchedule.from_csv(args.schedule)
        verdict = check_admissible(controller, args.t0, r0, spec.delta, T=spec.T, cone=spec.cone)
        if not verdict.admissible:
            msg = f"schedule entry {verdict.index}: {verdict.rule}: {verdict.message}"
            if mc.strict:
                raise AdmissibilityError(msg)
            log.warning("inadmissible schedule, offending impulses will be rejected: %s", msg)
    elif kind == "policy":
        controller = extract_policy(_load(cfg, out), spec)
    else:
        controller = None
    result = estimate_cost(spec, (args.t0, r0, args.x0), controller, mc, record=args.save_paths > 0)
    result.write_json(out / "sim_result.json")
    if result.paths is not None:
        p = result.paths
        keep = slice(0, args.save_paths)
        type(p)(p.t, p.x[keep], p.r[keep], p.impulse[keep], p.xi[keep]).to_csv(out / "paths.csv")
    print(f"mean cost {result.mean_cost:.17g} +- {result.stderr:.3g} over {result.n_paths} paths")
    return 0


def cmd_dpp(cfg: RunConfig, out: Path, args) -> int:
    field = _load(cfg, out)
    res = dpp_check(field, cfg.problem, (args.t, args.r, args.x), args.s, _mc(cfg, args))
    _dump(out / "dpp.json", res.to_dict())
    print(f"{res.regime}: mc {res.mc_value:.6g} field {res.field_value:.6g} residual {res.residual:.3g} "
          f"+- {res.stderr:.3g}")
    return 0


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--{what}: {exc}", field=what) from exc


def cmd_limit(cfg: RunConfig, out: Path, args) -> int:
    deltas = _floats(args.deltas, "deltas")
    study = analysis.lag_limit_study(cfg.problem, _grid(cfg), deltas)
    out.mkdir(parents=True, exist_ok=True)
    study.to_csv(out / "limit.csv")
    _dump(out / "limit.json", {**study.to_dict(), "strictly_decreasing": study.strictly_decreasing()})
    for d, g in zip(study.deltas, study.gaps):
        print(f"delta={d:.6g} sup_gap={g:.6g}")
    return 0


def cmd_smooth(cfg: RunConfig, out: Path, args) -> int:
    field = _load(cfg, out)
    v = field.stacked()
    spacing = (field.grid.dt, field.grid.dt, field.grid.dx)
    rows = []
    for gamma in _floats(args.gamma_list, "gamma-list"):
        up = analysis.sup_convolution(field, gamma).stacked()
        lo = analysis.inf_convolution(field, gamma).stacked()
        rows.append({"gamma": gamma, "sup_gap": float(np.max(up - v)), "inf_gap": float(np.max(v - lo)),
                     "ordered": bool(np.all(lo <= v) and np.all(v <= up)),
                     "semiconvexity_margin": analysis.semiconvexity_margin(up, spacing, gamma)})
    _dump(out / "smooth.json", {"convolutions": rows})
    for r in rows:
        print(f"gamma={r['gamma']:.4g} sup_gap={r['sup_gap']:.6g} inf_gap={r['inf_gap']:.6g}")
    return 0


def _check(ok: bool, **detail) -> dict[str, Any]:
    return {"pass": bool(ok), **detail}


def _step_multiple(span: float, dt: float) -> float:
    return max(1, math.floor(span / dt + 1e-9)) * dt


def cmd_report(cfg: RunConfig, out: Path, args) -> int:
    """Solve, persist, reload, and check the reloaded field end to end."""
    spec = cfg.problem
    mc = _mc(cfg, args)
    checks: dict[str, dict[str, Any]] = {}

    validation = validate_hypotheses(spec, seed=args.seed or 0)
    checks["hypotheses"] = _check(validation.passed, failed=validation.failed())
    if not validation.passed:
        raise HypothesisError(f"hypothesis check failed: {', '.join(validation.failed())}", validation.failed())

    grid = _grid(cfg)
    solved = solve(spec, grid)
    save_field(solved, out / "field", spec.spec_hash())
    field, _ = load_field(out / "field")
    checks["persistence_roundtrip"] = _check(
        np.array_equal(field.v0, solved.v0) and np.array_equal(field.v_lag, solved.v_lag))

    res = residuals(field, spec, grid)
    _dump(out / "residuals.json", res.to_dict())
    v = field.stacked()
    tol = float(field.meta.get("obstacle_tol", 0.0))
    checks["value_bound"] = _check(float(np.max(np.abs(v))) <= spec.value_bound + 1e-8,
                                   sup_abs=float(np.max(np.abs(v))), bound=spec.value_bound)
    checks["obstacle"] = _check(res.obstacle_violation_sup <= tol, violation=res.obstacle_violation_sup, tol=tol)
    checks["r_monotone"] = _check(bool(np.all(np.diff(v, axis=1) <= 0.0)))

    policy = extract_policy(field, spec)
    policy.to_csv(out / "policy.csv")
    eps = 10.0 * (grid.dt + grid.dx)
    span = grid.x_hi - grid.x_lo
    points = [grid.x[int(np.argmin(np.abs(grid.x - (grid.x_lo + f * span))))] for f in (0.375, 0.5, 0.625)]
    sims = []
    pol_ok = triv_ok = True
    for x0 in points:
        value = float(interpolate(field, 0.0, spec.delta, x0))
        pol = estimate_cost(spec, (0.0, spec.delta, x0), policy, mc)
        triv = estimate_cost(spec, (0.0, spec.delta, x0), None, mc)
        pol_ok &= value - 3 * pol.stderr - eps <= pol.mean_cost <= value + 3 * pol.stderr + eps
        triv_ok &= triv.mean_cost >= value - 3 * triv.stderr
        sims.append({"x": x0, "value": value, "policy": pol.to_dict(), "trivial": triv.to_dict()})
    _dump(out / "simulations.json", sims)
    checks["policy_consistency"] = _check(pol_ok, eps_scheme=eps)
    checks["trivial_upper_bound"] = _check(triv_ok)

    dpp_tol = 5.0 * (grid.dt + grid.dx)
    t_spot = _step_multiple(0.25 * spec.T, mc.dt_sim)
    hop = _step_multiple(0.5 * spec.delta, mc.dt_sim)
    spots = []
    dpp_ok = True
    for r in (0.0, spec.delta):
        d = dpp_check(field, spec, (t_spot, r, points[1]), t_spot + hop, mc)
        bound = 3 * d.stderr + dpp_tol
        ok = abs(d.residual) <= bound if d.regime == "lag" else (d.residual >= -bound and bool(d.obstacle_ok))
        dpp_ok &= ok
        spots.append({**d.to_dict(), "pass": ok})
    _dump(out / "dpp.json", spots)
    checks["dpp"] = _check(dpp_ok, tol=dpp_tol)

    moduli = analysis.continuity_moduli(field)
    _dump(out / "moduli.json", moduli)
    finite = all(math.isfinite(moduli[k]) for k in ("x_lipschitz", "t_holder_local", "t_holder_global", "r_holder"))
    checks["moduli_finite"] = _check(finite)

    verdict = {
        "verdict": "pass" if all(c["pass"] for c in checks.values()) else "fail",
        "checks": checks, "spec_hash": spec.spec_hash(), "grid": grid.to_dict(),
        "mc": mc.to_dict(), "threads": _threads(),
    }
    _dump(out / "report.json", verdict)
    print(f"verdict: {verdict['verdict']}")
    for name, c in checks.items():
        print(f"  {name:22s} {'pass' if c['pass'] else 'FAIL'}")
    return 0 if verdict["verdict"] == "pass" else 1


COMMANDS = {
    "validate": cmd_validate, "solve": cmd_solve, "policy": cmd_policy, "simulate": cmd_simulate,
    "dpp": cmd_dpp, "limit": cmd_limit, "smooth": cmd_smooth, "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}", field="argv")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration JSON")
    common.add_argument("--out", help="output directory (default: output_dir from the config)")
    common.add_argument("--seed", type=int, help="override the Monte Carlo / sampling seed")
    common.add_argument("--strict", action="store_true", help="treat infeasible impulses as errors")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="lagqvi", description="Impulse control with decision lag: solver and checks")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("validate", "solve", "policy"):
        sub.add_parser(name, parents=[common])

    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--controller", choices=["trivial", "schedule", "policy"])
    s.add_argument("--schedule", help="CSV with columns tau,xi")
    s.add_argument("--paths", type=int)
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--r0", type=float, help="initial elapsed time (default: delta)")
    s.add_argument("--x0", type=float, default=0.0)
    s.add_argument("--save-paths", type=int, default=0, help="write the first N paths to paths.csv")

    d = sub.add_parser("dpp", parents=[common])
    for flag in ("t", "r", "x", "s"):
        d.add_argument(f"--{flag}", type=float, required=True)
    d.add_argument("--paths", type=int)

    lim = sub.add_parser("limit", parents=[common])
    lim.add_argument("--deltas", default="0.2,0.1,0.05")

    sm = sub.add_parser("smooth", parents=[common])
    sm.add_argument("--gamma-list", default="0.2,0.1,0.05")

    rep = sub.add_parser("report", parents=[common])
    rep.add_argument("--paths", type=int)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        threads = _threads()
        if threads is not None:
            log.info("LAGQVI_THREADS=%d (computation is single-threaded)", threads)
        cfg = load_config(args.config)
        out = Path(args.out) if args.out else cfg.output_dir
        return COMMANDS[args.command](cfg, out, args)
    except LagQviError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError:
        raise
    except Exception as exc:  # noqa: BLE001 - anything else is exit 1
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
