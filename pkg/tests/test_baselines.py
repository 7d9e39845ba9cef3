import itertools

import numpy as np
import pytest

from flmarket.baselines import (
    aca_select,
    ipg_objective_at,
    ipg_price_at,
    ipg_solve,
    random_select,
    tca_select,
)
from flmarket.experiments import designated_coalition
from flmarket.model import DomainError, SystemConfig, recompute_ps_utility
from flmarket.selection import greedy_select
from flmarket.solver import Coalition, solve_refined, verify_equilibrium
from flmarket.strategy import compute_thresholds

from conftest import feasible_pool, make_client


@pytest.fixture(scope="module")
def pool():
    return feasible_pool(0)


def _audit(sol, pool, sys, checks=("client", "constraints")):
    rep = verify_equilibrium(sol, pool, sys, checks=checks)
    assert rep.ok, str(rep)


def test_random_full_set_and_determinism(pool):
    sys = SystemConfig()
    full = random_select(pool, sys, len(pool), seed=1)
    assert full.selected == {c.id for c in pool}
    a = random_select(pool, sys, 10, seed=3)
    assert a == random_select(pool, sys, 10, seed=3)
    b = random_select(pool, sys, 10, seed=4)
    assert a.selected != b.selected
    for s in (a, b):
        assert len(s.selected) == 10
        _audit(s, pool, sys, ("client", "ps", "constraints"))


def test_aca_takes_largest_datasets(pool):
    sys = SystemConfig()
    sol = aca_select(pool, sys, 10)
    sizes = sorted((c.data_size for c in pool), reverse=True)
    assert sol.total_data == sum(sizes[:10])
    # no other 10-subset holds more data, so the accuracy term is minimal
    others = [sum(c.data_size for c in combo) for combo in itertools.islice(itertools.combinations(pool, 10), 2000)]
    assert sol.total_data >= max(others)
    _audit(sol, pool, sys)


def test_tca_takes_fastest(pool):
    sys = SystemConfig()
    sol = tca_select(pool, sys, 10)
    t = sorted(compute_thresholds(c, sys).t_min for c in pool)
    chosen = [c for c in pool if c.id in sol.selected]
    assert Coalition(chosen, sys).lo == t[9]
    one = tca_select(pool, sys, 1)
    fastest = min(pool, key=lambda c: compute_thresholds(c, sys).t_min)
    assert one.selected == {fastest.id}
    _audit(sol, pool, sys)


def test_pdg_beats_aca_and_tca_is_faster(pool):
    sys = SystemConfig()
    pdg = greedy_select(pool, sys)
    aca = aca_select(pool, sys, 10)
    tca = tca_select(pool, sys, 10)
    assert aca.gamma <= pdg.gamma
    assert pdg.ps_utility <= aca.ps_utility
    assert tca.system_latency <= pdg.system_latency


def test_ipg_single_client_matches_pdg():
    sys = SystemConfig()
    c = make_client(f_max=4e9)
    assert ipg_solve([c], sys).ps_utility == pytest.approx(solve_refined([c], sys).ps_utility, rel=1e-6)


@pytest.mark.parametrize("f_max,data", [(4e9, 1000), (2.5e9, 1800), (3e9, 400)])
def test_ipg_homogeneous_matches_pdg(f_max, data):
    sys = SystemConfig()
    group = [make_client(i, f_max=f_max, data=data) for i in range(6)]
    assert ipg_solve(group, sys).ps_utility == pytest.approx(solve_refined(group, sys).ps_utility, rel=1e-6)


def test_ipg_uniform_price_and_audit(pool):
    sys = SystemConfig()
    chosen = pool[:10]
    sol = ipg_solve(chosen, sys, candidates=pool)
    prices = {o.price for o in sol.participants}
    assert len(prices) == 1
    assert recompute_ps_utility(sol, sys) == pytest.approx(sol.ps_utility, rel=1e-9)
    _audit(sol, pool, sys)


def test_ipg_never_beats_pdg_on_greedy_coalition(pool):
    # an arbitrary coalition lets the uniform price shed expensive stragglers,
    # so the comparison is made on the coalition the discriminating game keeps
    sys = SystemConfig()
    chosen = designated_coalition(pool, sys, 10)
    assert len(chosen) == 10
    q_ipg = ipg_solve(chosen, sys).ps_utility
    assert solve_refined(chosen, sys).ps_utility <= q_ipg * (1 + 1e-9)


def test_ipg_curve_dominates_pdg_pointwise(pool):
    sys = SystemConfig()
    chosen = pool[:10]
    coal = Coalition(chosen, sys)
    for T in np.linspace(coal.lo, coal.hi, 25):
        q_ipg = ipg_objective_at(chosen, sys, float(T))
        assert coal.q_hat(T) <= q_ipg + 1e-9 * abs(q_ipg)


def test_ipg_curve_domain_and_tail(pool):
    sys = SystemConfig()
    chosen = pool[:5]
    coal = Coalition(chosen, sys)
    with pytest.raises(DomainError):
        ipg_price_at(chosen, sys, coal.lo * 0.9)
    # beyond every break-even latency both curves grow with slope mu * I_g
    t_far = max(max(th.floor_latency for th in coal.thresholds), coal.hi) + 0.5
    ts = np.array([t_far, t_far + 1.0])
    ipg = np.array([ipg_objective_at(chosen, sys, float(t)) for t in ts])
    pdg = coal.q_hat(ts)
    assert (ipg[1] - ipg[0]) == pytest.approx(sys.mu * sys.global_rounds, rel=1e-6)
    assert (pdg[1] - pdg[0]) == pytest.approx(sys.mu * sys.global_rounds, rel=1e-6)
