"""Command-line front end: scenario in, artifacts out.

Four subcommands share one artifact layout under --out: run.json echoes the
resolved config and versions, trajectory.csv carries the integrated flow,
rates.json the generator validity report, paths.jsonl the sampled paths,
and report.json whatever the subcommand measured. Exit codes are a stable
contract: 0 success, 1 config or input error, 2 rate-validity failure,
3 bridge nonconvergence, 4 sampler bound violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .dynamics import (
    hopf_cole,
    hopf_cole_inverse,
    integrate,
    madelung,
    madelung_inverse,
    monodromy,
    symplectic_check,
)
from .errors import (
    GraphHamError,
    NonconvergedIPFP,
    NonsmoothSpec,
    RateBoundExceeded,
)
from .hamiltonians import PhasePoint, ReferenceRates, sbp_entropic, vector_field
from .markov import (
    build_rate_matrix,
    empirical_densities,
    propagator,
    sample_paths,
)
from .sbp import (
    BridgeProblem,
    markov_condition_residual,
    path_entropy_bruteforce,
    relative_entropy,
    solve_bridge,
    stationary_point,
)
from .scenarios import ConfigError, Scenario, load_config


def _version() -> str:
    try:
        return metadata.version("graphham")
    except metadata.PackageNotFoundError:
        return "unknown"


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_run(out: Path, command: str, scenario: Scenario) -> None:
    _dump(out / "run.json", {
        "command": command,
        "config": scenario.echo,
        "effective": {"t0": scenario.t0, "t1": scenario.t1, "dt": scenario.dt,
                      "method": scenario.method, "particles": scenario.particles,
                      "seed": scenario.seed, "checkpoints": scenario.checkpoints},
        "versions": {"graphham": _version(), "numpy": np.__version__},
    })


def _to_s_chart(state: PhasePoint) -> PhasePoint:
    if state.chart == "S":
        return state
    if state.chart == "psi":
        return hopf_cole_inverse(state)
    return madelung_inverse(state)


def _write_trajectory(out: Path, traj) -> None:
    n = traj.rho.shape[1]
    with open(out / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + ["rho_%d" % i for i in range(n)]
                        + ["S_%d" % i for i in range(n)] + ["H", "mass_defect"])
        for k, t in enumerate(traj.times):
            if traj.chart == "fg":
                rho = traj.rho[k] * traj.pot[k]
            else:
                rho = traj.rho[k]
            writer.writerow(["%.17g" % t]
                            + ["%.17g" % v for v in rho]
                            + ["%.17g" % v for v in traj.pot[k]]
                            + ["%.17g" % traj.H[k], "%.17g" % traj.mass_defect[k]])


def _write_paths(out: Path, paths) -> None:
    with open(out / "paths.jsonl", "w") as fh:
        for p in paths:
            fh.write(json.dumps({
                "seed": list(p.seed), "t0": p.t0, "t1": p.t1,
                "jump_times": p.jump_times.tolist(),
                "states": p.states.tolist(),
            }) + "\n")


def _rate_report(scenario: Scenario, traj) -> dict:
    report = {"kind": scenario.rate_kind, "valid": True, "violations": [],
              "clamped": 0, "checked_times": 0, "first_invalid_time": None,
              "entries_t0": None}
    for k, t in enumerate(traj.times):
        state = _to_s_chart(traj.state(k))
        rm = build_rate_matrix(scenario.rate_kind, scenario.graph, state,
                               reference=scenario.reference, t=float(t),
                               theta_kind=scenario.hamiltonian.theta
                               if scenario.rate_kind == "theta_general" else None)
        report["checked_times"] += 1
        report["clamped"] += rm.clamped
        if k == 0:
            report["entries_t0"] = rm.entries.tolist()
        if not rm.valid and report["first_invalid_time"] is None:
            report["valid"] = False
            report["first_invalid_time"] = float(t)
            report["violations"] = [[int(i), int(j), float(v)]
                                    for i, j, v in rm.violations]
    return report


def cmd_geodesic(scenario: Scenario, out: Path, args) -> int:
    if scenario.initial is None:
        raise ConfigError("initial", "geodesic runs need an initial state")
    if scenario.hamiltonian is None or scenario.rate_kind is None:
        raise ConfigError("hamiltonian", "geodesic runs need a hamiltonian")
    steps = max(1, int(round((scenario.t1 - scenario.t0) / scenario.dt)))
    every = max(1, steps // 256)
    traj = integrate(scenario.hamiltonian, scenario.initial, scenario.t0,
                     scenario.t1, scenario.dt, method=scenario.method,
                     record_every=every)
    _write_trajectory(out, traj)
    report = _rate_report(scenario, traj)
    _dump(out / "rates.json", report)
    if not report["valid"]:
        print("invalid generator at t = %g; see rates.json"
              % report["first_invalid_time"], file=sys.stderr)
        return 2

    rec_dt = float(traj.times[1] - traj.times[0]) if len(traj.times) > 1 else scenario.dt
    qs = np.stack([
        build_rate_matrix(scenario.rate_kind, scenario.graph,
                          _to_s_chart(traj.state(k)),
                          reference=scenario.reference, t=float(t),
                          theta_kind=scenario.hamiltonian.theta
                          if scenario.rate_kind == "theta_general" else None).entries
        for k, t in enumerate(traj.times)])
    # nearest recorded snapshot; the final recording gap may be short
    top = len(qs) - 1

    def snap(ts):
        return np.clip(np.round((np.asarray(ts) - scenario.t0) / rec_dt), 0, top).astype(int)

    frozen = ReferenceRates(scenario.graph.n,
                            fn=lambda t: qs[int(snap(t))],
                            batch_fn=lambda ts: qs[snap(ts)])
    rho0 = _to_s_chart(scenario.initial).rho
    paths = sample_paths(frozen, rho0, scenario.particles, scenario.t0,
                         scenario.t1, seed=scenario.seed, lam=scenario.lam,
                         threads=args.threads)
    _write_paths(out, paths)
    return 0


def cmd_bridge(scenario: Scenario, out: Path, args) -> int:
    if scenario.rho0 is None or scenario.rho1 is None:
        raise ConfigError("marginals", "bridge runs need rho0 and rho1")
    if scenario.reference is None:
        raise ConfigError("reference", "bridge runs need reference rates")
    problem = BridgeProblem(scenario.reference, scenario.rho0, scenario.rho1,
                            reference_initial=scenario.reference_initial,
                            t0=scenario.t0, t1=scenario.t1)
    tol = args.tol if args.tol is not None else 1e-8
    try:
        sol = solve_bridge(problem, dt=scenario.dt, tol=tol)
    except NonconvergedIPFP as exc:
        _dump(out / "bridge.json", {
            "converged": False,
            "residuals": [float(r) for r in exc.residuals],
            "history": [[float(a), float(b)] for a, b in exc.history],
        })
        print("bridge did not converge: %s" % exc, file=sys.stderr)
        return 3
    doc = {
        "iterations": sol.iterations,
        "residuals": [float(r) for r in sol.residuals],
        "entropy": sol.entropy,
        "objective": sol.objective,
        "coupling_entropy": sol.coupling_entropy,
        "grid": {"t0": scenario.t0, "t1": scenario.t1, "dt": scenario.dt},
        "times": sol.times.tolist(),
        "f": sol.f.tolist(),
        "g": sol.g.tolist(),
        "rho": sol.rho.tolist(),
        "m_hat": sol.m_hat.tolist(),
    }
    if args.oracle:
        brute = path_entropy_bruteforce(sol, args.oracle)
        target = relative_entropy(problem.rho0, problem.reference_initial) + sol.entropy
        doc["oracle"] = {"n_steps": args.oracle, "bruteforce": brute,
                         "target": target, "gap": brute - target}
    _dump(out / "bridge.json", doc)
    return 0


def cmd_simulate(scenario: Scenario, out: Path, args) -> int:
    if scenario.reference is None:
        raise ConfigError("reference", "simulate runs need a rate source")
    if scenario.initial is None:
        raise ConfigError("initial", "simulate runs need an initial density")
    rho0 = _to_s_chart(scenario.initial).rho
    paths = sample_paths(scenario.reference, rho0, scenario.particles,
                         scenario.t0, scenario.t1, seed=scenario.seed,
                         lam=scenario.lam, threads=args.threads)
    _write_paths(out, paths)

    ts = np.linspace(scenario.t0, scenario.t1, scenario.checkpoints)
    empirical = empirical_densities(paths, ts)
    master = np.empty_like(empirical)
    cur = rho0.copy()
    master[0] = cur
    for k in range(1, len(ts)):
        cur = cur @ propagator(scenario.reference, float(ts[k - 1]), float(ts[k]),
                               dt=scenario.dt)
        master[k] = cur
    tv = 0.5 * np.abs(empirical - master).sum(axis=1)
    _dump(out / "report.json", {
        "particles": scenario.particles,
        "seed": scenario.seed,
        "bound": 3.0 * np.sqrt(2.0 / scenario.particles),
        "max_tv": float(tv.max()),
        "checkpoints": [
            {"t": float(ts[k]), "tv": float(tv[k]),
             "empirical": empirical[k].tolist(), "master": master[k].tolist()}
            for k in range(len(ts))],
    })
    return 0


def cmd_analyze(scenario: Scenario, out: Path, args) -> int:
    report = {}

    if scenario.reference is not None and (scenario.period is not None
                                           or scenario.reference.constant):
        # a constant chain still flags its stationary direction over the window
        span = scenario.period if scenario.period is not None \
            else scenario.t1 - scenario.t0
        mon = monodromy(scenario.reference, period=span)
        report["floquet"] = {
            "multipliers": [[float(z.real), float(z.imag)] for z in mon.multipliers],
            "exponents": [[float(z.real), float(z.imag)] for z in mon.exponents],
            "unit_flags": [bool(b) for b in mon.unit_flags],
            "has_unit_multiplier": bool(mon.has_unit_multiplier),
        }

    if scenario.reference is not None and scenario.reference.constant:
        star = stationary_point(scenario.reference)
        drho, dpot = vector_field(sbp_entropic(scenario.graph, scenario.reference), star)
        report["stationary"] = {
            "rho": star.rho.tolist(),
            "field_residual": float(max(np.abs(drho).max(), np.abs(dpot).max())),
        }

    if scenario.hamiltonian is not None and scenario.initial is not None:
        spec = scenario.hamiltonian
        if spec.variant == "sbp_psi":
            # same flow through the log-density half-shift, same generator
            spec = sbp_entropic(scenario.graph, scenario.reference)
        try:
            res = markov_condition_residual(spec, _to_s_chart(scenario.initial),
                                            t=scenario.t0)
            report["markov_residual"] = {"max": float(res.max()),
                                         "entries": res.tolist()}
        except (NonsmoothSpec, ValueError) as exc:
            report["markov_residual"] = {"error": str(exc)}

    rho = (_to_s_chart(scenario.initial).rho if scenario.initial is not None
           else np.full(scenario.graph.n, 1.0 / scenario.graph.n))
    probe = PhasePoint(rho, np.zeros(scenario.graph.n))
    report["symplectic"] = {
        "hopf_cole": float(symplectic_check(hopf_cole, probe)),
        "madelung": float(symplectic_check(madelung, probe)),
    }

    _dump(out / "report.json", report)
    return 0


_COMMANDS = {
    "geodesic": cmd_geodesic,
    "bridge": cmd_bridge,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("args", message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="graphham",
                     description="Hamiltonian flows and bridges on finite graphs")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="JSON config path or built-in scenario name")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--oracle", type=int, default=None,
                       help="brute-force step count for the bridge cross-check")
        p.add_argument("--particles", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        scenario = load_config(args.config)
        if args.dt is not None:
            scenario.dt = args.dt
        if args.particles is not None:
            scenario.particles = args.particles
        if args.seed is not None:
            scenario.seed = args.seed
        if args.threads is None:
            args.threads = os.cpu_count() or 1
        out = Path(args.out) if args.out else Path("runs") / (
            "%s-%s" % (args.command, scenario.name))
        out.mkdir(parents=True, exist_ok=True)
        _write_run(out, args.command, scenario)
        return _COMMANDS[args.command](scenario, out, args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except NonconvergedIPFP as exc:
        print("bridge did not converge: %s" % exc, file=sys.stderr)
        return 3
    except RateBoundExceeded as exc:
        print("sampler bound violated: %s" % exc, file=sys.stderr)
        return 4
    except GraphHamError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
