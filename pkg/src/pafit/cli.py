"""Command-line front end.

Subcommands: ``phase``, ``simulate``, ``verify``, ``urn``, ``couple``,
``scan``.  Every option can also come from an INI file given with
``--config``; its ``[model]`` section holds ``name`` plus model parameters
and its ``[run]`` section holds any other long option (dashes or
underscores).  Command-line flags override the file.  Unknown keys are
rejected.

Each invocation writes into its own directory under the output root
(``--out``, else ``$PAFIT_OUT``, else ``./runs``): an echo of the resolved
configuration, a JSON run report and CSV data.

Exit codes: 0 success, 1 a statistical check failed, 2 invalid input or a
hard invariant failed.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import inspect
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import coupling, fitness, graph, theory, urn, verify
from .errors import PafitError

OUT_ENV = "PAFIT_OUT"
MODEL_PARAMS = ("f", "f1", "f2", "q1", "h", "alpha", "beta", "theta", "rate", "fitnesses", "probs")
EXIT_OK, EXIT_STAT, EXIT_HARD = 0, 1, 2


class UsageError(Exception):
    """Bad configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# parsing helpers


def _floats(text):
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _ints(text):
    return [int(float(x)) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _intervals(text):
    out = []
    for part in str(text).split(","):
        if part.strip():
            a, b = part.split(":")
            out.append((float(a), float(b)))
    return out


def _window(text):
    lo, hi, k = str(text).split(":")
    return float(lo), float(hi), int(k)


def _add_model_args(p):
    g = p.add_argument_group("fitness model")
    g.add_argument("--model", help=f"model name: {', '.join(sorted(fitness.REGISTRY))}")
    for name in ("f", "f1", "f2", "q1", "h", "alpha", "beta", "theta", "rate"):
        g.add_argument(f"--{name}", type=float)
    g.add_argument("--fitnesses", type=_floats, help="comma-separated atoms (model 'finite')")
    g.add_argument("--probs", type=_floats, help="comma-separated probabilities (model 'finite')")


def _add_common(p):
    p.add_argument("--config", help="INI file with [model] and [run] sections")
    p.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    p.add_argument("--run-name", help="directory name under the output root")
    p.add_argument("--quiet", action="store_true", help="do not print the report to stdout")


def _add_seeds(p, default_count=1):
    p.add_argument("--seeds", type=int, default=default_count, help="number of seeds")
    p.add_argument("--base-seed", type=int, default=0, help="first seed")
    p.add_argument("--workers", type=int, default=0, help="worker processes (0 = one per CPU)")


def build_parser():
    parser = argparse.ArgumentParser(prog="pafit", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phase", help="phase, lambda0 and limit tables")
    _add_common(p)
    _add_model_args(p)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--atoms", type=_ints, help="atoms to tabulate (discrete models)")
    p.add_argument("--intervals", type=_intervals, help="a:b,c:d intervals to tabulate")

    p = sub.add_parser("simulate", help="grow graphs and store summaries")
    _add_common(p)
    _add_model_args(p)
    _add_seeds(p)
    p.add_argument("--n", type=int, required=False)
    p.add_argument("--checkpoints", type=_ints, help="comma-separated step counts")
    p.add_argument("--grid-cells", type=int, default=100, help="fitness cells for densities")
    p.add_argument("--grid", type=_floats, help="explicit fitness cell edges")
    p.add_argument("--track-first", type=int, default=0)
    p.add_argument("--track-window", type=_window, help="lo:hi:K")

    p = sub.add_parser("verify", help="compare simulations with limit laws")
    _add_common(p)
    _add_model_args(p)
    _add_seeds(p)
    p.add_argument("--n", type=int)
    p.add_argument("--summaries", nargs="+", help="summary JSON files instead of simulating")
    p.add_argument("--tolerance", type=float, default=0.02)
    p.add_argument("--degree-tolerance", type=float, help="also compare per-atom degree laws")
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--atoms", type=_ints)
    p.add_argument("--intervals", type=_intervals)
    p.add_argument("--grid", type=_floats, help="fitness cell edges for densities")

    p = sub.add_parser("urn", help="build an urn; Perron pair and/or simulation")
    _add_common(p)
    _add_model_args(p)
    p.add_argument("--builder", choices=("degree", "fitness", "joint", "discretization"),
                   required=False)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--I", type=int, default=10)
    p.add_argument("--perron", action="store_true")
    p.add_argument("--n", type=int, default=0, help="simulate this many steps")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("couple", help="coupled truncation runs with violation logs")
    _add_common(p)
    _add_model_args(p)
    _add_seeds(p)
    p.add_argument("--I", type=int, default=5)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--mode", choices=("class", "vertex", "inversion"), default="class",
                   help="'class' checks fitness and endpoint orderings; the other two "
                        "also check degree tails")

    p = sub.add_parser("scan", help="truncated or discretised roots over I")
    _add_common(p)
    _add_model_args(p)
    p.add_argument("--I", type=_ints, default=[10, 50, 250])
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _read_config(path, sub):
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise UsageError(f"cannot read config file {path}")
    dests = {a.dest: a for a in sub._actions if a.option_strings}
    values = {}
    for section in cp.sections():
        if section not in ("model", "run"):
            raise UsageError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            if section == "model" and dest == "name":
                dest = "model"
            if section == "model" and dest not in MODEL_PARAMS and dest != "model":
                raise UsageError(f"unknown model key {key!r}")
            if dest not in dests or dest in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} in [{section}]")
            act = dests[dest]
            if isinstance(act, argparse._StoreTrueAction):
                values[dest] = cp.getboolean(section, key)
            elif act.type is not None:
                try:
                    values[dest] = act.type(raw)
                except ValueError as exc:
                    raise UsageError(f"bad value for {key!r}: {exc}") from None
            else:
                values[dest] = raw
    return values


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        values = _read_config(args.config, sub)
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def make_model(args):
    if not args.model:
        raise UsageError("no model given (--model or [model] name)")
    try:
        ctor = fitness.REGISTRY[args.model]
    except KeyError:
        raise UsageError(f"unknown model {args.model!r}; known: {sorted(fitness.REGISTRY)}") from None
    accepted = set(inspect.signature(ctor).parameters)
    given = {k: getattr(args, k) for k in MODEL_PARAMS if getattr(args, k, None) is not None}
    extra = set(given) - accepted
    if extra:
        raise UsageError(f"model {args.model!r} does not take {sorted(extra)}")
    model = ctor(**given)
    rep = model.validate()
    if not rep.ok:
        raise UsageError("invalid model: " + "; ".join(rep.failures))
    return model


# ---------------------------------------------------------------------------
# output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _config_echo(args):
    keep = {k: v for k, v in vars(args).items() if k not in ("config", "out", "quiet", "run_name")}
    return _jsonable(keep)


def run_dir(args):
    root = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    echo = _config_echo(args)
    if args.run_name:
        name = args.run_name
    else:
        digest = hashlib.sha1(json.dumps(echo, sort_keys=True).encode()).hexdigest()[:10]
        name = f"{args.command}-{args.model or 'custom'}-{digest}"
    d = root / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    return d


def _write(d, name, text):
    (d / name).write_text(text)


def _emit(args, d, report):
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
    _write(d, "report.json", text)
    if not args.quiet:
        sys.stdout.write(text)


def _seed_list(args):
    return list(range(args.base_seed, args.base_seed + args.seeds))


def _fan_out(fn, jobs, workers):
    """Run ``fn`` over ``jobs`` in a bounded process pool; results in job order."""
    workers = workers or os.cpu_count() or 1
    workers = min(workers, len(jobs))
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


# ---------------------------------------------------------------------------
# commands


def cmd_phase(args):
    model = make_model(args)
    report = theory.classify_phase(model)
    law = theory.limit_law(model, report, atoms=args.atoms, k_max=args.k_max,
                           intervals=args.intervals)
    d = run_dir(args)
    out = law.to_dict()
    out["model"] = model.describe()
    if report.phase is theory.Phase.FIRST_MOVER:
        out["tail_exponent"] = 2.0
    _emit(args, d, out)
    return EXIT_OK


def _simulate_job(job):
    model, n, seed, checkpoints, grid, track_first, track_window = job
    return graph.simulate(model, n, seed, checkpoints=checkpoints, grid=grid,
                          track_first=track_first, track_window=track_window)


def _grid_for(args, model):
    if model.is_discrete:
        return None
    if getattr(args, "grid", None):
        return np.asarray(args.grid)
    return graph.default_grid(model, getattr(args, "grid_cells", 100))


def _simulate(args, model):
    if not args.n or args.n < 1:
        raise UsageError("--n must be a positive integer")
    grid = _grid_for(args, model)
    jobs = [(model, args.n, s, getattr(args, "checkpoints", None), grid,
             getattr(args, "track_first", 0), getattr(args, "track_window", None))
            for s in _seed_list(args)]
    return _fan_out(_simulate_job, jobs, args.workers)


def cmd_simulate(args):
    model = make_model(args)
    sums = _simulate(args, model)
    d = run_dir(args)
    runs = []
    for s in sums:
        _write(d, f"summary_seed{s.seed}.json", s.to_json())
        _write(d, f"M_seed{s.seed}.csv", s.m_csv())
        _write(d, f"N_seed{s.seed}.csv", s.n_csv())
        if s.trajectories:
            _write(d, f"trajectories_seed{s.seed}.csv", s.trajectory_csv())
        fin = s.final
        runs.append({"seed": s.seed, "n": fin.n, "flags": s.flags,
                     "degree1_share": fin.L(1) / fin.n,
                     "accounting": verify.check_accounting(s) or "ok"})
    report = {"model": model.describe(), "seeds": _seed_list(args), "runs": runs}
    _emit(args, d, report)
    hard = any(r["accounting"] != "ok" for r in runs)
    return EXIT_HARD if hard else EXIT_OK


def _load_summaries(paths):
    out = []
    for p in paths:
        try:
            out.append(graph.EmpiricalSummary.from_json(Path(p).read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot load summary {p}: {exc}") from None
    return out


def cmd_verify(args):
    model = make_model(args)
    if args.summaries:
        sums = _load_summaries(args.summaries)
    else:
        sums = _simulate(args, model)
    report = theory.classify_phase(model)
    intervals = args.intervals
    if intervals is None and not model.is_discrete:
        e = sums[0].edges
        intervals = [(e[i], e[i + 1]) for i in range(len(e) - 1) if np.isfinite(e[i + 1])]
    law = theory.limit_law(model, report, atoms=args.atoms, k_max=args.k_max,
                           intervals=intervals)
    comp = verify.compare_link_shares(sums, law, args.tolerance)
    if args.degree_tolerance is not None and model.is_discrete:
        comp.extend(verify.compare_degree_laws(sums, law, args.degree_tolerance,
                                               ks=range(1, args.k_max + 1)))
    d = run_dir(args)
    _write(d, "comparison.csv", comp.to_csv())
    _emit(args, d, comp.to_dict())
    return comp.exit_code()


def _build_urn(args):
    if args.builder is None:
        raise UsageError("--builder is required")
    if args.builder == "degree":
        return urn.degree_urn(args.k)
    model = make_model(args)
    if args.builder == "fitness":
        return urn.fitness_urn(model)
    if args.builder == "joint":
        return urn.joint_urn(model, args.k)
    return urn.discretization_urn(model, args.I)


def cmd_urn(args):
    spec = _build_urn(args)
    d = run_dir(args)
    out = {"urn": spec.name, "bins": spec.q, "labels": spec.labels}
    _write(d, "urn.json", json.dumps(spec.to_config(), sort_keys=True) + "\n")
    if args.perron or not args.n:
        pr = urn.perron_of(spec)
        out["perron"] = pr.to_dict()
        out["limit_ratios"] = (pr.lambda1 * pr.v1).tolist()
    if args.n:
        traj = urn.run_urn(spec, args.n, np.random.default_rng(args.seed))
        _write(d, f"trajectory_seed{args.seed}.csv", traj.to_csv())
        out["final_ratios"] = (traj.final / args.n).tolist()
    _emit(args, d, out)
    return EXIT_OK


def _couple_job(job):
    model, I, n, seed, mode = job
    if mode == "class":
        return coupling.coupled_triple_run(model, I, n, seed)
    return coupling.coupled_degree_run(model, I, n, seed, mode=mode)


def cmd_couple(args):
    model = make_model(args)
    jobs = [(model, args.I, args.n, s, args.mode) for s in _seed_list(args)]
    runs = _fan_out(_couple_job, jobs, args.workers)
    d = run_dir(args)
    lines = []
    for r in runs:
        for v in r.violations:
            lines.append(json.dumps({"seed": r.seed, **_jsonable(v)}, sort_keys=True))
    _write(d, "violations.jsonl", "".join(l + "\n" for l in lines))
    total = sum(len(r.violations) for r in runs)
    out = {"model": model.describe(), "I": args.I, "n": args.n, "mode": args.mode,
           "runs": [r.to_dict() for r in runs], "violations": total}
    _emit(args, d, out)
    return EXIT_HARD if total else EXIT_OK


def cmd_scan(args):
    model = make_model(args)
    table = coupling.lambda0_convergence_scan(model, args.I)
    d = run_dir(args)
    _write(d, "scan.csv", table.to_csv())
    diag = table.diagnostics()
    _emit(args, d, {"model": model.describe(), "diagnostics": diag, "rows": table.rows})
    if table.kind == "discretization" and (diag["max_residual"] > 1e-10 or diag["max_sum_error"] > 1e-9):
        return EXIT_HARD
    return EXIT_OK


COMMANDS = {"phase": cmd_phase, "simulate": cmd_simulate, "verify": cmd_verify,
            "urn": cmd_urn, "couple": cmd_couple, "scan": cmd_scan}


def main(argv=None):
    try:
        args = parse(argv)
    except UsageError as exc:
        print(f"pafit: error: {exc}", file=sys.stderr)
        return EXIT_HARD
    try:
        return COMMANDS[args.command](args)
    except (UsageError, PafitError) as exc:
        print(f"pafit: error: {exc}", file=sys.stderr)
        return EXIT_HARD


if __name__ == "__main__":
    sys.exit(main())
