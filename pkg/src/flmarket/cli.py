"""Command-line front end: ``flmarket {generate,solve,compare,verify}``.

Exit codes: 0 success, 1 verification failure, 2 infeasible instance,
64 usage error, 65 malformed input file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .experiments import (
    ALGORITHMS,
    CELL_COLUMNS,
    CSV_COLUMNS,
    SWEEP_COLUMNS,
    ExperimentReport,
    client_from_dict,
    client_to_dict,
    compare,
    csv_rows,
    fmt,
    population_digest,
    run_algorithm,
    run_record,
    solution_from_record,
)
from .model import InfeasibleError, SystemConfig
from .population import RNG_NAME, PopulationSpec, default_spec, default_system, generate
from .solver import SolverOptions, verify_equilibrium

log = logging.getLogger("flmarket")

EXIT_OK, EXIT_FAIL, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_DATAERR = 0, 1, 2, 64, 65
SEED_ENV = "FLMARKET_SEED"


class UsageError(Exception):
    pass


class MalformedInput(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedInput(f"{path}: {exc}") from exc


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _write_csv(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)


def load_config(path) -> tuple[PopulationSpec, SystemConfig]:
    if path is None:
        return default_spec(), default_system()
    cfg = _read_json(path)
    try:
        spec = PopulationSpec.from_dict({**default_spec().to_dict(), **cfg.get("population", {})})
        system = SystemConfig(**{**asdict(default_system()), **cfg.get("system", {})})
    except (TypeError, ValueError, AttributeError) as exc:
        raise MalformedInput(f"{path}: {exc}") from exc
    return spec, system


def load_population(path):
    doc = _read_json(path)
    try:
        clients = [client_from_dict(c) for c in doc["clients"]]
        spec = PopulationSpec.from_dict(doc["spec"])
        seed = doc["seed"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"{path}: {exc!r}") from exc
    if len({c.id for c in clients}) != len(clients):
        raise MalformedInput(f"{path}: duplicate client ids")
    return clients, spec, seed


def population_document(spec: PopulationSpec, seed: int, clients) -> dict:
    return {
        "version": __version__,
        "rng": RNG_NAME,
        "seed": seed,
        "spec": spec.to_dict(),
        "clients": [client_to_dict(c) for c in clients],
    }


def _resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        raise UsageError(f"seed required (pass --seed or set {SEED_ENV})")
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer") from exc


def _system_from_args(base: SystemConfig, args) -> SystemConfig:
    over = {
        "t0": args.t0, "kappa": args.kappa, "mu": args.mu, "global_rounds": args.ig,
        "n0": args.n0, "bandwidth": args.bandwidth, "noise_power": args.noise,
        "model_bits": args.model_bits,
    }
    over = {k: v for k, v in over.items() if v is not None}
    try:
        return replace(base, **over)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _parse_int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def cmd_generate(args) -> int:
    spec, _ = load_config(args.config)
    over = {}
    if args.n_clients is not None:
        over["n_clients"] = args.n_clients
    if args.data_mode is not None:
        over["data_mode"] = args.data_mode
    spec = replace(spec, **over)
    seed = _resolve_seed(args.seed)
    clients = generate(spec, seed)
    _write_json(args.out, population_document(spec, seed, clients))
    print(f"wrote {len(clients)} clients to {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    clients, _, pop_seed = load_population(args.population)
    _, base = load_config(args.config)
    system = _system_from_args(base, args)
    seed = args.seed if args.seed is not None else os.environ.get(SEED_ENV, pop_seed)
    seed = int(seed)
    opts = SolverOptions(mode=args.solver)
    sol = run_algorithm(args.algo, clients, system, system.n0, seed, opts)
    rec = run_record(sol, args.algo, seed, system.n0, f"solve-{args.algo}")
    rep = ExperimentReport(
        experiment=f"solve-{args.algo}",
        seeds=[seed],
        algorithms=[args.algo],
        system=asdict(system),
        runs=[rec],
        population={"digest": population_digest(clients), "seed": pop_seed},
    ).finalize()
    out = Path(args.out)
    _write_json(out, rep.to_dict())
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    _write_csv(csv_path, CSV_COLUMNS, csv_rows(rec))
    print(f"{args.algo}: Q={fmt(sol.ps_utility)} T={fmt(sol.system_latency)} "
          f"selected={len(sol.selected)} -> {out}, {csv_path}")
    return EXIT_OK


def verify_report(report: dict, clients) -> list[str]:
    """Re-audit every run of a stored report against its population."""
    problems = []
    pop = report.get("population", {})
    if pop.get("digest") != population_digest(clients):
        return ["provenance mismatch: report was not produced from this population"]
    try:
        system = SystemConfig(**report["system"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"bad system block: {exc!r}") from exc
    data = {c.id: c.data_size for c in clients}
    for i, rec in enumerate(report.get("runs", [])):
        try:
            sol = solution_from_record(rec)
        except (KeyError, TypeError) as exc:
            raise MalformedInput(f"run {i}: {exc!r}") from exc
        label = f"run {i} ({rec['algo']}, seed {rec['seed']}, n0 {rec['n0']})"
        if sol.total_data != sum(data[c] for c in sol.selected if c in data):
            problems.append(f"{label}: total data mismatch")
        if rec["algo"] == "ipg":
            checks = ("client", "constraints")
            prices = {o.price for o in sol.participants}
            if len(prices) > 1:
                problems.append(f"{label}: [uniform-price] participants carry different prices")
        else:
            checks = ("client", "ps", "constraints")
        rep = verify_equilibrium(sol, clients, system, checks=checks)
        problems.extend(f"{label}: [{f.check}] client={f.client_id!r}: {f.detail}" for f in rep.failures)
    return problems


def cmd_verify(args) -> int:
    report = _read_json(args.report)
    clients, _, _ = load_population(args.population)
    problems = verify_report(report, clients)
    if problems:
        for p in problems:
            print("FAIL", p)
        return EXIT_FAIL
    print(f"PASS {len(report.get('runs', []))} run(s) verified")
    return EXIT_OK


def cmd_compare(args) -> int:
    spec, base = load_config(args.config)
    system = _system_from_args(base, args)
    seeds = _parse_int_list(args.seeds) if args.seeds else [_resolve_seed(None)]
    n0_list = _parse_int_list(args.n0_list)
    modes = [m.strip() for m in args.data_modes.split(",")] if args.data_modes else None
    rep = compare(spec, system, seeds, n0_list, modes, ALGORITHMS, args.sweep, args.jobs,
                  SolverOptions())
    out = Path(args.out_dir)
    _write_json(out / "compare.json", rep.to_dict())
    _write_csv(out / "runs.csv", CSV_COLUMNS, [row for r in rep.runs for row in csv_rows(r)])
    _write_csv(out / "cells.csv", CELL_COLUMNS,
               [[fmt(c[k]) if not isinstance(c[k], str) else c[k] for k in CELL_COLUMNS] for c in rep.cells])
    if rep.sweep:
        _write_csv(out / "sweep.csv", SWEEP_COLUMNS,
                   [[fmt(s[k]) if not isinstance(s[k], str) else s[k] for k in SWEEP_COLUMNS]
                    for s in rep.sweep])
    for c in rep.cells:
        print(f"{c['data_mode']:8s} n0={c['n0']:<3d} {c['algo']:7s} Q={c['mean_Q']:.4f} "
              f"T={c['mean_T']:.4f} Gamma={c['mean_Gamma']:.6f} var(U)={c['mean_utility_variance']:.3e}")
    return EXIT_OK


def _add_system_flags(p) -> None:
    p.add_argument("--config", help="JSON config with 'population' and 'system' blocks")
    p.add_argument("--t0", type=float, help="latency threshold T0 (s)")
    p.add_argument("--kappa", type=float, help="weight on the loss bound")
    p.add_argument("--mu", type=float, help="weight on training time")
    p.add_argument("--ig", type=int, help="global rounds I_g")
    p.add_argument("--n0", type=int, help="client-count threshold N0")
    p.add_argument("--bandwidth", type=float, help="uplink bandwidth (Hz)")
    p.add_argument("--noise", type=float, help="noise power (W)")
    p.add_argument("--model-bits", type=float, help="model size (bits)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flmarket", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="sample a client population")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-clients", type=int)
    g.add_argument("--data-mode", choices=("iid", "non_iid"))
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run one algorithm on a population file")
    s.add_argument("population")
    s.add_argument("--algo", required=True, choices=ALGORITHMS)
    s.add_argument("--seed", type=int, help="selection seed for 'random'")
    s.add_argument("--solver", default="refined", choices=("refined", "iterative", "oracle"))
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    _add_system_flags(s)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compare", help="run all algorithms over a seed x N0 grid")
    c.add_argument("--seeds", help="e.g. '0-19' or '1,2,3'")
    c.add_argument("--n0-list", default="10,15,20")
    c.add_argument("--data-modes", help="comma list of iid,non_iid (default: config)")
    c.add_argument("--sweep", type=int, default=0, metavar="POINTS",
                   help="also sweep Q over T for a designated 10-client coalition")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out-dir", required=True)
    _add_system_flags(c)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify", help="re-audit a stored report")
    v.add_argument("report")
    v.add_argument("population")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"flmarket: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MalformedInput as exc:
        print(f"flmarket: malformed input: {exc}", file=sys.stderr)
        return EXIT_DATAERR
    except InfeasibleError as exc:
        print(f"flmarket: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
