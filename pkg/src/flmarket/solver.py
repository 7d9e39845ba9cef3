"""Equilibrium pricing for a fixed coalition.

Every coalition client is steered by the common system latency ``T``: on
``[t_min, t_tilde]`` it is paid its natural price for latency ``T``, beyond
``t_tilde`` it settles at the break-even point.  The server's cost is then a
scalar function of ``T`` (:func:`ps_objective_at`) which is minimised either
by the step-down procedure (:func:`solve_iterative`) or by golden-section
search over its smooth pieces (:func:`solve_refined`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Hashable, Sequence

import numpy as np

from .model import (
    ClientOutcome,
    ClientProfile,
    Diagnostics,
    DomainError,
    EmptyCoalitionError,
    GameSolution,
    InfeasibleError,
    SystemConfig,
    client_utility,
    comm_energy,
    comm_time,
    gamma_bound,
    ps_utility,
    round_time,
    train_energy,
)
from .strategy import (
    best_response,
    break_even_price,
    compute_thresholds,
    min_price,
    pinned_outcome,
)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SolverOptions:
    t_step: float | None = None  # None -> (T_hi - T_lo) / 1000
    refine_tol: float | None = None  # None -> 1e-9 * T0
    grid_points: int = 10_000
    mode: str = "refined"

    def __post_init__(self):
        if self.t_step is not None and not self.t_step > 0:
            raise ValueError("t_step must be positive")
        if self.refine_tol is not None and not self.refine_tol > 0:
            raise ValueError("refine_tol must be positive")
        if self.grid_points < 100:
            raise ValueError("grid_points must be >= 100")
        if self.mode not in ("iterative", "refined", "oracle"):
            raise ValueError(f"unknown solver mode {self.mode!r}")


class Coalition:
    """Array view of a fixed client set, for vectorised evaluation in ``T``."""

    def __init__(self, clients: Sequence[ClientProfile], sys: SystemConfig):
        if not clients:
            raise EmptyCoalitionError()
        self.clients = tuple(clients)
        self.sys = sys
        ths = [compute_thresholds(c, sys) for c in self.clients]
        self.thresholds = tuple(ths)
        self.t_com = np.array([t.t_com for t in ths])
        self.t_min = np.array([t.t_min for t in ths])
        self.t_tilde = np.array([t.t_tilde for t in ths])
        self.forced = np.array([t.forced_min_price for t in ths])
        w = np.array([c.workload for c in self.clients])
        bv = np.array([c.energy_cost * c.capacitance for c in self.clients])
        # first-branch payment is price_coef * (T0 - T) / (T - t_com)^3
        self.price_coef = 2.0 * bv * w ** 3
        self.floor_payment = np.array([
            break_even_price(c, sys, t) * (sys.t0 - t.floor_latency)
            for c, t in zip(self.clients, ths)
        ])
        self.data = np.array([c.data_size for c in self.clients], dtype=np.int64)
        self._finish()

    def _finish(self):
        sys = self.sys
        self.lo = float(self.t_min.max())
        if self.lo >= sys.t0:
            raise InfeasibleError("coalition infeasible")
        self.hi = min(sys.t0 * (1 - 1e-9), max(self.lo, float(self.t_tilde.max())))
        self.total_data = int(self.data.sum())
        self.gamma = gamma_bound(self.total_data, sys.global_rounds)
        self.const = sys.kappa * self.gamma

    def take(self, idx) -> "Coalition":
        idx = np.asarray(idx, dtype=np.intp)
        if idx.size == 0:
            raise EmptyCoalitionError()
        sub = object.__new__(Coalition)
        sub.clients = tuple(self.clients[i] for i in idx)
        sub.thresholds = tuple(self.thresholds[i] for i in idx)
        sub.sys = self.sys
        for name in ("t_com", "t_min", "t_tilde", "forced", "price_coef",
                     "floor_payment", "data"):
            setattr(sub, name, getattr(self, name)[idx])
        sub._finish()
        return sub

    @property
    def ids(self) -> list[Hashable]:
        return [c.id for c in self.clients]

    def _check(self, T: np.ndarray) -> None:
        if np.any(T < self.lo * (1 - 1e-12)) or np.any(T >= self.sys.t0):
            raise DomainError(f"T outside [{self.lo!r}, T0)")

    def payments(self, T) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        self._check(T)
        Tc = T[..., None]
        first = Tc <= self.t_tilde
        slack = Tc - self.t_com
        natural = self.price_coef * (self.sys.t0 - Tc) / slack ** 3
        return np.where(first, natural, self.floor_payment)

    def q_hat(self, T):
        T = np.asarray(T, dtype=float)
        s = self.sys
        q = self.const + s.mu * s.global_rounds * T + s.global_rounds * self.payments(T).sum(axis=-1)
        return q if q.ndim else float(q)

    def dq_hat(self, T):
        T = np.asarray(T, dtype=float)
        self._check(T)
        s = self.sys
        Tc = T[..., None]
        slack = Tc - self.t_com
        d = -self.price_coef / slack ** 3 * (1.0 + 3.0 * (s.t0 - Tc) / slack)
        d = np.where(Tc <= self.t_tilde, d, 0.0)
        out = s.mu * s.global_rounds + s.global_rounds * d.sum(axis=-1)
        return out if out.ndim else float(out)

    def breakpoints(self) -> np.ndarray:
        pts = np.concatenate(([self.lo, self.hi], self.t_tilde, self.t_min))
        pts = pts[(pts >= self.lo) & (pts <= self.hi)]
        return np.unique(pts)


def _golden_batch(fn, a: np.ndarray, b: np.ndarray, tol: float):
    """Golden-section minimisation on every interval ``[a_i, b_i]`` at once."""
    a = a.astype(float).copy()
    b = b.astype(float).copy()
    width = float(np.max(b - a)) if a.size else 0.0
    if width <= tol:
        x = 0.5 * (a + b)
        return x, fn(x), 0
    n_iter = int(math.ceil(math.log(tol / width) / math.log(INV_PHI)))
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(n_iter):
        left = fc <= fd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        x_new = np.where(left, b - INV_PHI * (b - a), a + INV_PHI * (b - a))
        f_new = fn(x_new)
        c, d, fc, fd = (
            np.where(left, x_new, d),
            np.where(left, c, x_new),
            np.where(left, f_new, fd),
            np.where(left, fc, f_new),
        )
    take_c = fc <= fd
    return np.where(take_c, c, d), np.where(take_c, fc, fd), n_iter


def _pick_min(ts: np.ndarray, qs: np.ndarray) -> tuple[float, float]:
    """Smallest ``T`` among the minimisers (ties within ``TIE_RTOL``)."""
    order = np.argsort(ts, kind="stable")
    ts, qs = ts[order], qs[order]
    best = qs.min()
    i = int(np.argmax(qs <= best + TIE_RTOL * abs(best)))
    return float(ts[i]), float(qs[i])


def refine_min(coal: Coalition, tol: float | None = None):
    """Piecewise golden-section minimum of Q-hat; returns (T, Q, path, iterations)."""
    tol = tol if tol is not None else 1e-9 * coal.sys.t0
    pts = coal.breakpoints()
    if pts.size == 1:
        q = coal.q_hat(pts[0])
        return float(pts[0]), q, ((float(pts[0]), q),), 1
    a, b = pts[:-1], pts[1:]
    x, fx, n_iter = _golden_batch(coal.q_hat, a, b, tol)
    ts = np.concatenate((pts, x))
    qs = np.concatenate((coal.q_hat(pts), fx))
    T, Q = _pick_min(ts, qs)
    path = tuple(zip(ts.tolist(), qs.tolist()))
    return T, Q, path, n_iter


def iterate_min(coal: Coalition, t_step: float | None = None):
    """Step the target latency down from ``T_hi`` until Q-hat rises."""
    lo, hi = coal.lo, coal.hi
    T, Q = hi, coal.q_hat(hi)
    path = [(T, Q)]
    if hi <= lo:
        return T, Q, tuple(path), 1
    step = t_step if t_step is not None else (hi - lo) / 1000.0
    best_T, best_Q = T, Q
    it = 1
    while T > lo:
        T = max(T - step, lo)
        Q = coal.q_hat(T)
        it += 1
        path.append((T, Q))
        if Q > best_Q:
            break
        best_T, best_Q = T, Q
    return best_T, best_Q, tuple(path), it


def grid_min(coal: Coalition, points: int):
    ts = np.linspace(coal.lo, coal.hi, points)
    qs = coal.q_hat(ts)
    i = int(np.argmin(qs))
    return float(ts[i]), float(qs[i])


def _as_coalition(clients, sys) -> Coalition:
    return clients if isinstance(clients, Coalition) else Coalition(clients, sys)


def feasible_latency_range(clients: Sequence[ClientProfile], sys: SystemConfig) -> tuple[float, float]:
    coal = _as_coalition(clients, sys)
    return coal.lo, coal.hi


def ps_objective_at(clients: Sequence[ClientProfile], sys: SystemConfig, T: float) -> float:
    """Server cost when every coalition client is pinned to system latency ``T``.

    Defined for ``max t_min <= T < T0``; past the last break-even latency the
    payments are constant and the cost grows with slope ``mu * I_g``.
    """
    return _as_coalition(clients, sys).q_hat(T)


def build_solution(
    coal: Coalition,
    T: float,
    candidates: Sequence[ClientProfile] | None = None,
    diagnostics: Diagnostics | None = None,
) -> GameSolution:
    """Assemble the outcome vector induced by pinning the coalition to ``T``."""
    sys = coal.sys
    pinned = {c.id: pinned_outcome(c, sys, th, T) for c, th in zip(coal.clients, coal.thresholds)}
    pool = candidates if candidates is not None else coal.clients
    outcomes = tuple(pinned.get(c.id) or ClientOutcome.idle(c.id) for c in pool)
    missing = set(pinned) - {c.id for c in pool}
    if missing:
        raise ValueError(f"coalition clients {sorted(missing)} not among candidates")
    return GameSolution(
        selected=frozenset(pinned),
        outcomes=outcomes,
        system_latency=max(o.latency for o in pinned.values()),
        ps_utility=ps_utility(outcomes, coal.total_data, sys),
        total_data=coal.total_data,
        gamma=coal.gamma,
        diagnostics=diagnostics or Diagnostics(),
    )


def solve_iterative(clients, sys: SystemConfig, opts: SolverOptions | None = None,
                    candidates: Sequence[ClientProfile] | None = None) -> GameSolution:
    opts = opts or SolverOptions()
    coal = _as_coalition(clients, sys)
    T, _, path, it = iterate_min(coal, opts.t_step)
    return build_solution(coal, T, candidates, Diagnostics(it, path, "iterative"))


def solve_refined(clients, sys: SystemConfig, opts: SolverOptions | None = None,
                  candidates: Sequence[ClientProfile] | None = None) -> GameSolution:
    opts = opts or SolverOptions()
    coal = _as_coalition(clients, sys)
    T, _, path, it = refine_min(coal, opts.refine_tol)
    return build_solution(coal, T, candidates, Diagnostics(it, path, "refined"))


def solve_oracle(clients, sys: SystemConfig, opts: SolverOptions | None = None,
                 candidates: Sequence[ClientProfile] | None = None) -> GameSolution:
    """Brute-force grid minimum over the feasible latency range."""
    opts = opts or SolverOptions()
    coal = _as_coalition(clients, sys)
    T, Q = grid_min(coal, opts.grid_points)
    return build_solution(coal, T, candidates, Diagnostics(opts.grid_points, ((T, Q),), "oracle"))


def solve(clients, sys: SystemConfig, opts: SolverOptions | None = None,
          candidates: Sequence[ClientProfile] | None = None) -> GameSolution:
    opts = opts or SolverOptions()
    fn = {"iterative": solve_iterative, "refined": solve_refined, "oracle": solve_oracle}[opts.mode]
    return fn(clients, sys, opts, candidates)


@dataclass(frozen=True)
class CheckFailure:
    check: str
    client_id: Hashable | None
    detail: str


@dataclass
class EquilibriumReport:
    failures: list[CheckFailure] = field(default_factory=list)
    checks_run: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.failures

    def fail(self, check: str, client_id, detail: str) -> None:
        self.failures.append(CheckFailure(check, client_id, detail))

    def __str__(self) -> str:
        if self.ok:
            return "equilibrium verified (" + ", ".join(self.checks_run) + ")"
        return "\n".join(f"[{f.check}] client={f.client_id!r}: {f.detail}" for f in self.failures)


def _rel_close(a: float, b: float, rtol: float) -> bool:
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


def verify_equilibrium(
    solution: GameSolution,
    clients: Sequence[ClientProfile],
    sys: SystemConfig,
    grid_points: int = 10_000,
    checks: Sequence[str] = ("client", "ps", "constraints"),
    rtol: float = 1e-9,
) -> EquilibriumReport:
    """Audit a solution: client best responses, server optimality over ``T``, constraints.

    ``clients`` must contain a profile for every outcome in the solution.
    """
    rep = EquilibriumReport(checks_run=tuple(checks))
    profiles = {c.id: c for c in clients}
    missing = [o.client_id for o in solution.outcomes if o.client_id not in profiles]
    if missing:
        rep.fail("provenance", None, f"no profile for clients {missing}")
        return rep
    parts = [(profiles[o.client_id], o) for o in solution.outcomes if o.participating]

    if "client" in checks:
        for c, o in parts:
            if not o.price > 0:
                rep.fail("client", c.id, f"non-positive price {o.price!r}")
                continue
            f_star = best_response(c, o.price)
            if not _rel_close(o.frequency, f_star, rtol):
                rep.fail("client", c.id, f"frequency {o.frequency!r} is not the best response {f_star!r}")
                continue
            fs = np.linspace(c.f_max / grid_points, c.f_max, grid_points)
            e_com = comm_energy(c, sys)
            u_grid = (o.price * (sys.t0 - comm_time(c, sys) - c.workload / fs)
                      - c.energy_cost * (c.capacitance * fs ** 2 * c.workload + e_com))
            u_star = client_utility(c, sys, o.price, f_star)
            scale = abs(o.price) * sys.t0 + c.energy_cost * (train_energy(c, f_star) + e_com)
            if u_grid.max() > u_star + rtol * scale:
                rep.fail("client", c.id, f"grid frequency improves utility by {u_grid.max() - u_star:.3g}")

    if "ps" in checks and parts:
        try:
            coal = Coalition([c for c, _ in parts], sys)
            ts = np.linspace(coal.lo, coal.hi, grid_points)
            q_min = float(coal.q_hat(ts).min())
            if q_min < solution.ps_utility - rtol * abs(solution.ps_utility):
                rep.fail("ps", None, f"Q-hat reaches {q_min!r} < solution Q {solution.ps_utility!r}")
        except (InfeasibleError, DomainError) as exc:
            rep.fail("ps", None, str(exc))

    if "constraints" in checks:
        for o in solution.outcomes:
            if o.participating:
                continue
            if any((o.price, o.frequency, o.utility, o.payment)):
                rep.fail("constraints", o.client_id, "non-participant with non-zero price/frequency/utility/payment")
        for c, o in parts:
            if not o.latency <= sys.t0:
                rep.fail("constraints", c.id, f"latency {o.latency!r} exceeds T0")
                continue
            if not 0 < o.frequency <= c.f_max * (1 + 1e-12):
                rep.fail("constraints", c.id, f"frequency {o.frequency!r} outside (0, f_max]")
                continue
            if not _rel_close(round_time(c, sys, o.frequency), o.latency, rtol):
                rep.fail("constraints", c.id, "latency inconsistent with frequency")
            energy = c.energy_cost * (train_energy(c, o.frequency) + comm_energy(c, sys))
            scale = abs(o.price) * sys.t0 + energy
            u = client_utility(c, sys, o.price, o.frequency)
            if u < -rtol * scale:
                rep.fail("constraints", c.id, f"negative utility {u!r}")
            if not _rel_close(u, o.utility, 1e-6) and abs(u - o.utility) > rtol * scale:
                rep.fail("constraints", c.id, f"stored utility {o.utility!r} != {u!r}")
            # measured on the utility scale so it agrees with the participation rule
            if (min_price(c, sys, o.latency, o.frequency) - o.price) * (sys.t0 - o.latency) > rtol * scale:
                rep.fail("constraints", c.id, "price below the zero-utility minimum")
            if not _rel_close(o.payment, o.price * (sys.t0 - o.latency), rtol):
                rep.fail("constraints", c.id, "payment != price * (T0 - latency)")
        if parts:
            t_sys = max(o.latency for _, o in parts)
            if not _rel_close(t_sys, solution.system_latency, rtol):
                rep.fail("constraints", None, "system latency is not the straggler latency")
            data = sum(c.data_size for c, _ in parts)
            if data != solution.total_data:
                rep.fail("constraints", None, "total data does not match participants")
            else:
                q = ps_utility(solution.outcomes, data, sys)
                if not _rel_close(q, solution.ps_utility, rtol):
                    rep.fail("constraints", None, f"stored Q {solution.ps_utility!r} != recomputed {q!r}")
        else:
            rep.fail("constraints", None, "no participating client")
    return rep


def with_outcome(solution: GameSolution, client_id, **changes) -> GameSolution:
    """Copy of ``solution`` with one client's outcome fields replaced (for audits)."""
    outs = tuple(replace(o, **changes) if o.client_id == client_id else o for o in solution.outcomes)
    return replace(solution, outcomes=outs)
