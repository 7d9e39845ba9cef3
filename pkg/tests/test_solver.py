import numpy as np
import pytest

from flmarket.model import DomainError, InfeasibleError, SystemConfig, gamma_bound, ps_utility, recompute_ps_utility
from flmarket.solver import (
    Coalition,
    SolverOptions,
    feasible_latency_range,
    ps_objective_at,
    solve,
    solve_iterative,
    solve_oracle,
    solve_refined,
    build_solution,
    verify_equilibrium,
    with_outcome,
)
from flmarket.strategy import break_even_price, compute_thresholds, pinned_outcome

from conftest import feasible_pool, make_client, seeded_coalition


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(t_step=0)
    with pytest.raises(ValueError):
        SolverOptions(refine_tol=-1)
    with pytest.raises(ValueError):
        SolverOptions(grid_points=10)
    with pytest.raises(ValueError):
        SolverOptions(mode="magic")


def test_objective_matches_outcome_assembly():
    sys = SystemConfig()
    rng = np.random.default_rng(0)
    clients = seeded_coalition(1)
    lo, hi = feasible_latency_range(clients, sys)
    for T in rng.uniform(lo, hi, 100):
        outs = [pinned_outcome(c, sys, compute_thresholds(c, sys), T) for c in clients]
        q = ps_utility(outs, sum(c.data_size for c in clients), sys)
        assert ps_objective_at(clients, sys, T) == pytest.approx(q, rel=1e-9)


def test_objective_tail_is_affine():
    sys = SystemConfig()
    clients = seeded_coalition(2)
    t_last = max(compute_thresholds(c, sys).floor_latency for c in clients)
    ts = np.linspace(t_last + 0.1, 9.5, 7)
    q = np.array([ps_objective_at(clients, sys, t) for t in ts])
    slope = np.diff(q) / np.diff(ts)
    assert slope == pytest.approx(sys.mu * sys.global_rounds, rel=1e-6)


def test_single_client_at_break_even():
    sys = SystemConfig()
    c = make_client(f_max=4e9)
    th = compute_thresholds(c, sys)
    expected = (sys.kappa * gamma_bound(c.data_size, sys.global_rounds)
                + sys.mu * sys.global_rounds * th.t_tilde
                + sys.global_rounds * break_even_price(c, sys, th) * (sys.t0 - th.t_tilde))
    assert ps_objective_at([c], sys, th.t_tilde) == pytest.approx(expected, rel=1e-9)


def test_objective_domain():
    sys = SystemConfig()
    clients = seeded_coalition(3)
    lo, _ = feasible_latency_range(clients, sys)
    with pytest.raises(DomainError):
        ps_objective_at(clients, sys, lo * 0.9)
    with pytest.raises(DomainError):
        ps_objective_at(clients, sys, sys.t0)


def test_feasible_range_two_clients():
    # build two clients with chosen (t_min, t_tilde) by stubbing thresholds on a Coalition
    sys = SystemConfig()
    coal = Coalition([make_client(0), make_client(1)], sys)
    coal.t_min = np.array([0.4, 0.6])
    coal.t_tilde = np.array([0.9, 1.2])
    coal._finish()
    assert (coal.lo, coal.hi) == (0.6, 1.2)


def test_feasible_range_one_client_and_forced():
    sys = SystemConfig()
    c = make_client(f_max=4e9)
    th = compute_thresholds(c, sys)
    assert feasible_latency_range([c], sys) == (th.t_min, max(th.t_min, th.t_tilde))
    forced = [make_client(0, f_max=1.5e8), make_client(1, f_max=1.4e8, data=900)]
    lo, hi = feasible_latency_range(forced, sys)
    assert lo == hi == max(compute_thresholds(x, sys).t_min for x in forced)


def test_infeasible_coalition():
    sys = SystemConfig(t0=0.2)
    with pytest.raises(InfeasibleError):
        feasible_latency_range([make_client()], sys)


def test_degenerate_range_single_evaluation():
    sys = SystemConfig()
    forced = [make_client(0, f_max=1.5e8), make_client(1, f_max=1.4e8, data=900)]
    sol = solve_iterative(forced, sys)
    assert sol.diagnostics.iterations == 1
    assert sol.system_latency == pytest.approx(feasible_latency_range(forced, sys)[0])


def test_monotone_decreasing_objective_returns_top():
    # negligible time weight: payments fall with T, so the top of the range wins
    sys = SystemConfig(mu=1e-9, kappa=1.0)
    c = make_client(f_max=4e9)
    lo, hi = feasible_latency_range([c], sys)
    sol = solve_iterative([c], sys)
    assert sol.system_latency == pytest.approx(hi)
    sol_r = solve_refined([c], sys)
    assert sol_r.system_latency == pytest.approx(hi, rel=1e-6)


def test_refined_agrees_with_grid_and_dominates_iterative():
    sys = SystemConfig()
    for seed in range(10):
        clients = seeded_coalition(seed)
        r = solve_refined(clients, sys)
        g = solve_oracle(clients, sys, SolverOptions(grid_points=100_000))
        it = solve_iterative(clients, sys)
        assert r.ps_utility <= g.ps_utility * (1 + 1e-6)
        assert r.ps_utility >= g.ps_utility * (1 - 1e-6)
        assert r.ps_utility <= it.ps_utility + 1e-9 * abs(it.ps_utility)


def test_refined_stationary_or_endpoint():
    sys = SystemConfig()
    c = make_client(f_max=4e9)
    coal = Coalition([c], sys)
    sol = solve_refined([c], sys)
    T = sol.system_latency
    at_end = np.isclose(T, coal.breakpoints(), rtol=1e-9).any()
    if not at_end:
        h = 1e-6 * T
        fd = (coal.q_hat(T + h) - coal.q_hat(T - h)) / (2 * h)
        scale = abs(coal.dq_hat(coal.lo)) + abs(sys.mu * sys.global_rounds)
        assert abs(fd) <= 1e-3 * scale


def test_lemma1_consequence():
    sys = SystemConfig()
    for seed in range(10):
        clients = seeded_coalition(seed)
        sol = solve_refined(clients, sys)
        T = sol.system_latency
        for c in clients:
            th = compute_thresholds(c, sys)
            o = sol.outcome(c.id)
            if T <= th.t_tilde:
                assert o.latency == T
            else:
                assert o.latency == th.floor_latency
                assert o.latency <= T


def test_solution_invariants_and_determinism():
    sys = SystemConfig()
    pool = feasible_pool(4)
    clients = pool[:6]
    a = solve(clients, sys, candidates=pool)
    b = solve(clients, sys, candidates=pool)
    assert a == b
    assert len(a.outcomes) == len(pool)
    assert a.selected == {c.id for c in clients}
    assert a.system_latency == max(o.latency for o in a.participants)
    assert recompute_ps_utility(a, sys) == pytest.approx(a.ps_utility, rel=1e-9)
    for o in a.outcomes:
        if not o.participating:
            assert (o.price, o.frequency, o.utility, o.payment) == (0, 0, 0, 0)


def test_modes_dispatch():
    sys = SystemConfig()
    clients = seeded_coalition(6)
    for mode in ("iterative", "refined", "oracle"):
        assert solve(clients, sys, SolverOptions(mode=mode)).diagnostics.solver == mode


def test_verify_passes_on_solver_output():
    sys = SystemConfig()
    pool = feasible_pool(8)
    sol = solve_refined(pool[:5], sys, candidates=pool)
    rep = verify_equilibrium(sol, pool, sys)
    assert rep.ok, str(rep)


def test_verify_catches_halved_price():
    sys = SystemConfig()
    clients = seeded_coalition(9)
    sol = solve_refined(clients, sys)
    cid = clients[0].id
    bad = with_outcome(sol, cid, price=sol.outcome(cid).price / 2)
    rep = verify_equilibrium(bad, clients, sys)
    assert not rep.ok
    assert {f.check for f in rep.failures} & {"client", "constraints"}
    assert any(f.client_id == cid for f in rep.failures)


def test_verify_catches_perturbed_latency():
    sys = SystemConfig()
    for seed in range(20):
        clients = seeded_coalition(seed)
        coal = Coalition(clients, sys)
        sol = solve_refined(clients, sys)
        T = sol.system_latency
        if not (coal.lo < T < coal.hi) or T * 1.1 >= sys.t0:
            continue
        moved = build_solution(coal, T * 1.1)
        forged = type(sol)(**{**sol.__dict__, "outcomes": moved.outcomes,
                              "system_latency": moved.system_latency,
                              "ps_utility": moved.ps_utility})
        rep = verify_equilibrium(forged, clients, sys)
        assert "ps" in {f.check for f in rep.failures}
        return
    pytest.skip("no interior optimum among the seeds")


def test_verify_catches_nonzero_idle():
    sys = SystemConfig()
    pool = feasible_pool(10)
    sol = solve_refined(pool[:4], sys, candidates=pool)
    idle = next(o for o in sol.outcomes if not o.participating)
    bad = with_outcome(sol, idle.client_id, price=0.1)
    assert not verify_equilibrium(bad, pool, sys).ok


def test_iterative_walks_to_floor_under_heavy_time_weight():
    # every step down lowers Q-hat, so the walk only stops at T_lo
    sys = SystemConfig(mu=1e6)
    c = make_client(f_max=4e9)
    lo, hi = feasible_latency_range([c], sys)
    assert solve_iterative([c], sys).system_latency == pytest.approx(lo)
    assert solve_refined([c], sys).system_latency == pytest.approx(lo)


def test_iterative_returns_top_when_objective_rises_downward():
    # negligible time weight: Q-hat rises as T drops, so the first step ends the walk
    sys = SystemConfig(mu=1e-9, kappa=1.0)
    c = make_client(f_max=4e9)
    sol = solve_iterative([c], sys)
    assert sol.diagnostics.iterations == 2
    assert sol.system_latency == feasible_latency_range([c], sys)[1]
