"""Experiment orchestration: algorithm dispatch, seed grids, report records."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import aca_select, ipg_objective_at, ipg_solve, random_select, tca_select
from .model import ClientProfile, Diagnostics, GameSolution, SystemConfig
from .population import PopulationSpec, generate
from .selection import feasible_candidates, greedy_path
from .solver import Coalition, SolverOptions, build_solution

log = logging.getLogger(__name__)

ALGORITHMS = ("pdg", "random", "aca", "tca", "ipg")
CSV_COLUMNS = ("experiment", "seed", "algo", "n0", "client_id", "selected", "alpha", "freq_hz",
               "latency_s", "utility", "payment", "Q", "T", "Gamma")
CELL_COLUMNS = ("experiment", "data_mode", "n0", "algo", "n_seeds", "mean_Q", "mean_T",
                "mean_Gamma", "mean_utility_variance", "mean_selected")
SWEEP_COLUMNS = ("experiment", "seed", "point", "T", "Q_pdg", "Q_ipg")


def fmt(x) -> str:
    """Round-trippable 17-significant-digit float text."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def population_digest(clients: Sequence[ClientProfile]) -> str:
    rows = [client_to_dict(c) for c in clients]
    blob = json.dumps(rows, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def client_to_dict(c: ClientProfile) -> dict:
    return {
        "id": c.id,
        "cycles_per_tuple": c.cycles_per_tuple,
        "local_iters": c.local_iters,
        "data_size": c.data_size,
        "f_max_hz": c.f_max,
        "capacitance": c.capacitance,
        "energy_cost": c.energy_cost,
        "tx_power_w": c.tx_power,
        "channel_gain": c.channel_gain,
    }


def client_from_dict(d: dict) -> ClientProfile:
    return ClientProfile(
        id=d["id"],
        cycles_per_tuple=float(d["cycles_per_tuple"]),
        local_iters=int(d["local_iters"]),
        data_size=int(d["data_size"]),
        f_max=float(d["f_max_hz"]),
        capacitance=float(d["capacitance"]),
        energy_cost=float(d["energy_cost"]),
        tx_power=float(d["tx_power_w"]),
        channel_gain=float(d["channel_gain"]),
    )


class GreedyCache:
    """One greedy trajectory per population, sliced for any floor ``n0``."""

    def __init__(self, clients: Sequence[ClientProfile], sys: SystemConfig, min_n0: int,
                 opts: SolverOptions | None = None):
        self.clients = list(clients)
        self.sys = sys
        self.opts = opts or SolverOptions()
        self.coal = Coalition(feasible_candidates(clients, sys), sys)
        self.min_n0 = min_n0
        self.states = greedy_path(self.coal, min_n0, "floor", self.opts.refine_tol)

    def solution(self, n0: int) -> GameSolution:
        if n0 < self.min_n0:
            raise ValueError("trajectory was computed for a larger n0")
        taken = [s for s in self.states if len(s[0]) >= n0]
        keep, _, T = taken[-1]
        diag = Diagnostics(
            iterations=len(taken) - 1,
            path=tuple((float(len(k)), q) for k, q, _ in taken),
            solver="greedy",
        )
        return build_solution(self.coal.take(keep), T, self.clients, diag)


def run_algorithm(algo: str, clients: Sequence[ClientProfile], sys: SystemConfig, n0: int,
                  seed: int = 0, opts: SolverOptions | None = None,
                  greedy: GreedyCache | None = None) -> GameSolution:
    """Run one algorithm end to end.

    ``ipg`` prices the coalition chosen by ``pdg`` with a single uniform price.
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")
    sys = replace(sys, n0=n0)
    if algo in ("pdg", "ipg"):
        g = greedy if greedy is not None else GreedyCache(clients, sys, n0, opts)
        pdg = g.solution(n0)
        if algo == "pdg":
            return pdg
        chosen = [c for c in clients if c.id in pdg.selected]
        return ipg_solve(chosen, sys, candidates=clients)
    if algo == "random":
        return random_select(clients, sys, n0, seed, opts)
    if algo == "aca":
        return aca_select(clients, sys, n0, opts)
    return tca_select(clients, sys, n0, opts)


def utility_variance(sol: GameSolution) -> float:
    u = [o.utility for o in sol.participants]
    return float(np.var(u)) if u else 0.0


def run_record(sol: GameSolution, algo: str, seed: int, n0: int, experiment: str) -> dict:
    return {
        "experiment": experiment,
        "seed": seed,
        "algo": algo,
        "n0": n0,
        "selected": sorted(sol.selected),
        "Q": sol.ps_utility,
        "T": sol.system_latency,
        "Gamma": sol.gamma,
        "total_data": sol.total_data,
        "total_payment": sol.total_payment,
        "utility_variance": utility_variance(sol),
        "clients": [
            {
                "client_id": o.client_id,
                "selected": o.participating,
                "alpha": o.price,
                "freq_hz": o.frequency,
                "latency_s": o.latency,
                "utility": o.utility,
                "payment": o.payment,
            }
            for o in sol.outcomes
        ],
    }


def solution_from_record(rec: dict) -> GameSolution:
    from .model import ClientOutcome

    outs = tuple(
        ClientOutcome(
            client_id=c["client_id"], price=c["alpha"], frequency=c["freq_hz"],
            latency=c["latency_s"], utility=c["utility"], payment=c["payment"],
            participating=bool(c["selected"]),
        )
        for c in rec["clients"]
    )
    return GameSolution(
        selected=frozenset(rec["selected"]),
        outcomes=outs,
        system_latency=rec["T"],
        ps_utility=rec["Q"],
        total_data=rec["total_data"],
        gamma=rec["Gamma"],
        diagnostics=Diagnostics(solver=rec["algo"]),
    )


def csv_rows(rec: dict) -> list[list[str]]:
    rows = []
    for c in rec["clients"]:
        rows.append([
            rec["experiment"], fmt(rec["seed"]), rec["algo"], fmt(rec["n0"]), str(c["client_id"]),
            fmt(c["selected"]), fmt(c["alpha"]), fmt(c["freq_hz"]), fmt(c["latency_s"]),
            fmt(c["utility"]), fmt(c["payment"]), fmt(rec["Q"]), fmt(rec["T"]), fmt(rec["Gamma"]),
        ])
    return rows


@dataclass
class ExperimentReport:
    experiment: str
    seeds: list[int]
    algorithms: list[str]
    system: dict
    runs: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    population: dict = field(default_factory=dict)
    cells: list[dict] = field(default_factory=list)
    sweep: list[dict] = field(default_factory=list)
    version: str = __version__

    def finalize(self) -> "ExperimentReport":
        by_algo: dict[str, list[dict]] = {}
        for r in self.runs:
            by_algo.setdefault(r["algo"], []).append(r)
        self.aggregate = {
            algo: {
                f"{stat}_{key}": float(fn([r[key] for r in rs]))
                for key in ("Q", "T", "Gamma", "total_payment", "utility_variance")
                for stat, fn in (("mean", np.mean), ("std", np.std))
            }
            for algo, rs in sorted(by_algo.items())
        }
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(**d)


def designated_coalition(clients: Sequence[ClientProfile], sys: SystemConfig, size: int,
                         opts: SolverOptions | None = None) -> list[ClientProfile]:
    """The ``size``-client coalition the discriminating game's greedy selection would keep.

    Removals are forced until at most ``size`` clients remain.
    """
    opts = opts or SolverOptions()
    coal = Coalition(feasible_candidates(clients, sys), sys)
    states = greedy_path(coal, size, "cap", opts.refine_tol)
    keep = next((k for k, _, _ in states if len(k) <= size))
    return [coal.clients[i] for i in keep]


def price_sweep(coalition: Sequence[ClientProfile], sys: SystemConfig, points: int = 50):
    """(T, Q_pdg(T), Q_ipg(T)) over the discriminating game's feasible latency range."""
    coal = Coalition(coalition, sys)
    ts = np.linspace(coal.lo, coal.hi, points)
    return [(float(T), float(coal.q_hat(T)), ipg_objective_at(coalition, sys, float(T))) for T in ts]


def _cell_task(args):
    spec, sys, seed, n0_list, algos, sweep_points, opts = args
    clients = generate(spec, seed)
    out = []
    greedy = GreedyCache(clients, sys, min(n0_list), opts) if {"pdg", "ipg"} & set(algos) else None
    exp = f"compare-{spec.data_mode}"
    for n0 in n0_list:
        for algo in algos:
            sol = run_algorithm(algo, clients, sys, n0, seed, opts, greedy)
            out.append(run_record(sol, algo, seed, n0, exp))
    sweep = []
    if sweep_points:
        coal = designated_coalition(clients, sys, 10, opts)
        for i, (T, qp, qi) in enumerate(price_sweep(coal, sys, sweep_points)):
            sweep.append({"experiment": f"sweep-{spec.data_mode}", "seed": seed, "point": i,
                          "T": T, "Q_pdg": qp, "Q_ipg": qi})
    return spec.data_mode, seed, out, sweep


def compare(spec: PopulationSpec, sys: SystemConfig, seeds: Sequence[int], n0_list: Sequence[int],
            data_modes: Sequence[str] | None = None, algos: Sequence[str] = ALGORITHMS,
            sweep_points: int = 0, jobs: int = 1, opts: SolverOptions | None = None) -> ExperimentReport:
    """Run every algorithm over the data-mode x seed x n0 grid."""
    modes = list(data_modes) if data_modes else [spec.data_mode]
    tasks = [(replace(spec, data_mode=m), sys, s, sorted(n0_list), tuple(algos), sweep_points, opts)
             for m in modes for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_cell_task, tasks))
    else:
        results = [_cell_task(t) for t in tasks]
    # keyed assembly keeps the output independent of completion order
    results.sort(key=lambda r: (modes.index(r[0]), r[1]))
    rep = ExperimentReport(
        experiment="compare",
        seeds=list(seeds),
        algorithms=list(algos),
        system=asdict(sys),
        population={"spec": spec.to_dict(), "data_modes": modes},
    )
    for _, _, runs, sweep in results:
        rep.runs.extend(runs)
        rep.sweep.extend(sweep)
    for m in modes:
        for n0 in sorted(n0_list):
            for algo in algos:
                rs = [r for r in rep.runs if r["experiment"] == f"compare-{m}" and r["n0"] == n0
                      and r["algo"] == algo]
                rep.cells.append({
                    "experiment": f"compare-{m}", "data_mode": m, "n0": n0, "algo": algo,
                    "n_seeds": len(rs),
                    "mean_Q": float(np.mean([r["Q"] for r in rs])),
                    "mean_T": float(np.mean([r["T"] for r in rs])),
                    "mean_Gamma": float(np.mean([r["Gamma"] for r in rs])),
                    "mean_utility_variance": float(np.mean([r["utility_variance"] for r in rs])),
                    "mean_selected": float(np.mean([len(r["selected"]) for r in rs])),
                })
    return rep.finalize()
