"""Reference algorithms: random / accuracy-first / time-first selection, identical pricing.

The selection baselines fix a coalition and price it with the same
equilibrium pricer as the discriminating game, so that only the selection
policy differs.  The identical-pricing game (IPG) instead offers one
uniform price to every client of a fixed coalition.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from .model import (
    ClientOutcome,
    ClientProfile,
    Diagnostics,
    DomainError,
    GameSolution,
    InfeasibleError,
    SystemConfig,
    gamma_bound,
    ps_utility,
)
from .population import _Sampler
from .selection import feasible_candidates
from .solver import SolverOptions, _golden_batch, solve_refined
from .strategy import break_even_price, compute_thresholds, price_for_latency

PARTICIPATION_RTOL = 1e-9


def _pick(candidates, sys, n0: int, key) -> list[ClientProfile]:
    pool = feasible_candidates(candidates, sys)
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    return sorted(pool, key=key)[:n0]


def random_select(candidates: Sequence[ClientProfile], sys: SystemConfig, n0: int, seed: int,
                  opts: SolverOptions | None = None) -> GameSolution:
    pool = feasible_candidates(candidates, sys)
    s = _Sampler(seed)
    idx = list(range(len(pool)))
    k = min(n0, len(pool))
    for j in range(k):  # partial Fisher-Yates
        r = s.integer(j, len(pool) - 1)
        idx[j], idx[r] = idx[r], idx[j]
    chosen = [pool[i] for i in sorted(idx[:k])]
    sol = solve_refined(chosen, sys, opts, candidates)
    return _relabel(sol, "random")


def aca_select(candidates: Sequence[ClientProfile], sys: SystemConfig, n0: int,
               opts: SolverOptions | None = None) -> GameSolution:
    """Accuracy first: the ``n0`` clients holding the most data."""
    chosen = _pick(candidates, sys, n0, key=lambda c: (-c.data_size, c.id))
    return _relabel(solve_refined(chosen, sys, opts, candidates), "aca")


def tca_select(candidates: Sequence[ClientProfile], sys: SystemConfig, n0: int,
               opts: SolverOptions | None = None) -> GameSolution:
    """Time first: the ``n0`` clients with the shortest full-speed round time."""
    chosen = _pick(candidates, sys, n0, key=lambda c: (compute_thresholds(c, sys).t_min, c.id))
    return _relabel(solve_refined(chosen, sys, opts, candidates), "tca")


def _relabel(sol: GameSolution, name: str) -> GameSolution:
    return replace(sol, diagnostics=replace(sol.diagnostics, solver=name))


class _UniformPriceModel:
    """Vectorised client responses to a common price."""

    def __init__(self, clients: Sequence[ClientProfile], sys: SystemConfig):
        self.clients = list(clients)
        self.sys = sys
        self.ths = [compute_thresholds(c, sys) for c in clients]
        self.t_com = np.array([t.t_com for t in self.ths])
        self.t_min = np.array([t.t_min for t in self.ths])
        self.w = np.array([c.workload for c in clients])
        self.bv = np.array([c.energy_cost * c.capacitance for c in clients])
        self.beta = np.array([c.energy_cost for c in clients])
        self.v = np.array([c.capacitance for c in clients])
        self.f_max = np.array([c.f_max for c in clients])
        self.e_com = np.array([c.tx_power for c in clients]) * self.t_com
        self.data = np.array([c.data_size for c in clients], dtype=np.int64)
        self.break_even = np.array([break_even_price(c, sys, t) for c, t in zip(clients, self.ths)])
        self.saturating = np.array([price_for_latency(c, sys, t.t_min) for c, t in zip(clients, self.ths)])

    def respond(self, alpha):
        """Frequencies, latencies, utilities and participation mask for price(s) ``alpha``."""
        a = np.asarray(alpha, dtype=float)[..., None]
        f = np.minimum((a / (2.0 * self.bv)) ** (1.0 / 3.0), self.f_max)
        lat = self.t_com + self.w / f
        energy = self.beta * (self.v * f * f * self.w + self.e_com)
        util = a * (self.sys.t0 - lat) - energy
        part = util >= -PARTICIPATION_RTOL * (a * self.sys.t0 + energy)
        return f, lat, util, part

    def cost(self, alpha):
        s = self.sys
        a = np.asarray(alpha, dtype=float)
        _, lat, _, part = self.respond(a)
        data = (self.data * part).sum(axis=-1)
        t_sys = np.where(part, lat, -np.inf).max(axis=-1)
        paid = (a[..., None] * (s.t0 - lat) * part).sum(axis=-1)
        gamma = (s.global_rounds * np.maximum(data, 1)) ** -0.5 + 1.0 / s.global_rounds
        q = s.kappa * gamma + s.mu * s.global_rounds * t_sys + s.global_rounds * paid
        return np.where(data > 0, q, np.inf)


def ipg_solve(selected_clients: Sequence[ClientProfile], sys: SystemConfig, grid: int = 10_000,
              candidates: Sequence[ClientProfile] | None = None) -> GameSolution:
    """Best single uniform price for a fixed coalition.

    Clients whose best response to the price leaves them with negative
    utility abstain.  The price is found on a log grid and refined by golden
    section around the best grid point.
    """
    if not selected_clients:
        raise InfeasibleError("empty coalition")
    m = _UniformPriceModel(selected_clients, sys)
    lo = float(m.break_even.min()) * (1 - 1e-6)
    hi = float(max(m.saturating.max(), m.break_even.max()))
    alphas = np.geomspace(lo, hi, grid)
    qs = m.cost(alphas)
    i = int(np.argmin(qs))
    if not np.isfinite(qs[i]):
        raise InfeasibleError("no uniform price keeps a participant")
    best_a, best_q = float(alphas[i]), float(qs[i])
    la, lb = math.log(alphas[max(i - 1, 0)]), math.log(alphas[min(i + 1, grid - 1)])
    if lb > la:
        x, fx, _ = _golden_batch(lambda u: m.cost(np.exp(u)), np.array([la]), np.array([lb]), 1e-9)
        if fx[0] < best_q:
            best_a, best_q = float(np.exp(x[0])), float(fx[0])
    return _uniform_solution(m, best_a, candidates)


def _uniform_solution(m: _UniformPriceModel, alpha: float, candidates=None) -> GameSolution:
    sys = m.sys
    f, lat, util, part = m.respond(alpha)
    chosen = {}
    for k, c in enumerate(m.clients):
        if part[k]:
            chosen[c.id] = ClientOutcome(
                client_id=c.id, price=alpha, frequency=float(f[k]), latency=float(lat[k]),
                utility=float(util[k]), payment=alpha * (sys.t0 - float(lat[k])), participating=True,
            )
    pool = candidates if candidates is not None else m.clients
    outcomes = tuple(chosen.get(c.id) or ClientOutcome.idle(c.id) for c in pool)
    data = int(sum(c.data_size for c in m.clients if c.id in chosen))
    return GameSolution(
        selected=frozenset(chosen),
        outcomes=outcomes,
        system_latency=max(o.latency for o in chosen.values()),
        ps_utility=ps_utility(outcomes, data, sys),
        total_data=data,
        gamma=gamma_bound(data, sys.global_rounds),
        diagnostics=Diagnostics(solver="ipg"),
    )


def ipg_price_at(selected_clients: Sequence[ClientProfile], sys: SystemConfig, T: float) -> float:
    """Smallest uniform price under which every client participates and finishes by ``T``."""
    m = _UniformPriceModel(selected_clients, sys)
    if T < m.t_min.max() * (1 - 1e-12) or T >= sys.t0:
        raise DomainError(f"T={T!r} outside [max t_min, T0)")
    needed = [max(price_for_latency(c, sys, max(T, t.t_min)), be)
              for c, t, be in zip(m.clients, m.ths, m.break_even)]
    return float(max(needed))


def ipg_objective_at(selected_clients: Sequence[ClientProfile], sys: SystemConfig, T: float) -> float:
    """Server cost of the uniform-price operating point for target latency ``T``.

    The time term uses the target ``T`` so that the curve is comparable with
    the discriminating game's cost at the same ``T``.
    """
    alpha = ipg_price_at(selected_clients, sys, T)
    m = _UniformPriceModel(selected_clients, sys)
    _, lat, _, part = m.respond(alpha)
    if not part.all():
        raise InfeasibleError("a client abstains at the uniform price")
    s = sys
    data = int(m.data.sum())
    return (s.kappa * gamma_bound(data, s.global_rounds) + s.mu * s.global_rounds * T
            + s.global_rounds * float((alpha * (s.t0 - lat)).sum()))


def ipg_solution_at(selected_clients: Sequence[ClientProfile], sys: SystemConfig, T: float,
                    candidates=None) -> GameSolution:
    m = _UniformPriceModel(selected_clients, sys)
    return _uniform_solution(m, ipg_price_at(selected_clients, sys, T), candidates)
