"""Client selection: greedy elimination and an exhaustive oracle."""

from __future__ import annotations

import itertools
import logging
from typing import Sequence

import numpy as np

from .model import ClientProfile, Diagnostics, InfeasibleError, SystemConfig
from .solver import Coalition, SolverOptions, build_solution, refine_min
from .strategy import is_feasible

log = logging.getLogger(__name__)

MAX_EXHAUSTIVE = 14


def feasible_candidates(candidates: Sequence[ClientProfile], sys: SystemConfig) -> list[ClientProfile]:
    """Candidates able to beat T0 at full speed, sorted by id."""
    ok = [c for c in candidates if is_feasible(c, sys)]
    dropped = len(candidates) - len(ok)
    if dropped:
        log.warning("dropping %d infeasible candidate(s) with t_min >= T0", dropped)
    if not ok:
        raise InfeasibleError("all candidates infeasible")
    return sorted(ok, key=lambda c: c.id)


def greedy_path(coal: Coalition, n0: int, n0_mode: str = "floor", tol: float | None = None):
    """Run the greedy elimination on an already-built coalition.

    Returns the list of ``(kept index array, Q, T)`` states, first state being
    the full set.  With ``n0_mode="floor"`` removal stops once ``|N| == n0``
    or when no single removal lowers Q; with ``"cap"`` removals are forced
    while ``|N| > n0`` and continue afterwards only while they lower Q.
    """
    if n0_mode not in ("floor", "cap"):
        raise ValueError(f"unknown n0_mode {n0_mode!r}")
    keep = np.arange(len(coal.clients))
    T, Q, _, _ = refine_min(coal, tol)
    states = [(keep, Q, T)]
    while keep.size > 1:
        if n0_mode == "floor" and keep.size <= n0:
            break
        best = None
        # keep is sorted by id, so the first strict minimum is the smallest id on ties
        for j in range(keep.size):
            sub = np.delete(keep, j)
            t_j, q_j, _, _ = refine_min(coal.take(sub), tol)
            if best is None or q_j < best[1]:
                best = (sub, q_j, t_j)
        forced = n0_mode == "cap" and keep.size > n0
        if not forced and best[1] >= Q:
            break
        keep, Q, T = best
        states.append(best)
    return states


def greedy_select(
    candidates: Sequence[ClientProfile],
    sys: SystemConfig,
    opts: SolverOptions | None = None,
    n0: int | None = None,
    n0_mode: str = "floor",
):
    opts = opts or SolverOptions()
    pool = feasible_candidates(candidates, sys)
    coal = Coalition(pool, sys)
    states = greedy_path(coal, sys.n0 if n0 is None else n0, n0_mode, opts.refine_tol)
    keep, _, T = states[-1]
    diag = Diagnostics(
        iterations=len(states) - 1,
        path=tuple((float(len(k)), q) for k, q, _ in states),
        solver="greedy",
    )
    return build_solution(coal.take(keep), T, candidates, diag)


def exhaustive_select(
    candidates: Sequence[ClientProfile],
    sys: SystemConfig,
    max_size: int | None = None,
    min_size: int = 1,
    opts: SolverOptions | None = None,
):
    """Global minimum of Q over all feasible subsets with ``min_size <= |N| <= max_size``.

    Ties go to the lexicographically smallest id tuple.
    """
    opts = opts or SolverOptions()
    pool = feasible_candidates(candidates, sys)
    if len(pool) > MAX_EXHAUSTIVE:
        raise ValueError(f"exhaustive search limited to {MAX_EXHAUSTIVE} candidates")
    coal = Coalition(pool, sys)
    hi = len(pool) if max_size is None else min(max_size, len(pool))
    best = None
    for k in range(max(1, min_size), hi + 1):
        for combo in itertools.combinations(range(len(pool)), k):
            T, Q, _, _ = refine_min(coal.take(combo), opts.refine_tol)
            ids = tuple(pool[i].id for i in combo)
            if best is None or Q < best[0] or (Q == best[0] and ids < best[1]):
                best = (Q, ids, combo, T)
    if best is None:
        raise InfeasibleError("no subset within the size bounds")
    _, _, combo, T = best
    return build_solution(coal.take(combo), T, candidates, Diagnostics(solver="exhaustive"))
