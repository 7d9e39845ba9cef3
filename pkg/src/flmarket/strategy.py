"""Client best responses and the per-client latency/price thresholds.

A client facing price ``alpha`` picks its CPU frequency in closed form.  From
the server side it is more convenient to steer a client by the latency it
should hit; :func:`price_for_latency` inverts the best response and
:func:`compute_thresholds` finds the break-even latency beyond which the
client only accepts its zero-utility price.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

from scipy import optimize

from .model import (
    ClientOutcome,
    ClientProfile,
    DomainError,
    InfeasibleError,
    SystemConfig,
    comm_energy,
    comm_time,
    train_energy,
)

BISECT_RTOL = 1e-12


@dataclass(frozen=True)
class ClientThresholds:
    t_min: float
    t_tilde: float
    alpha_at_t_tilde: float
    t_com: float
    forced_min_price: bool

    @property
    def floor_latency(self) -> float:
        """Latency the client settles at once the system latency exceeds ``t_tilde``."""
        return max(self.t_tilde, self.t_min)


def unconstrained_best_response(client: ClientProfile, alpha: float) -> float:
    if not alpha > 0:
        raise DomainError(f"price must be positive, got {alpha!r}")
    return (alpha / (2.0 * client.energy_cost * client.capacitance)) ** (1.0 / 3.0)


def best_response(client: ClientProfile, alpha: float) -> float:
    return min(unconstrained_best_response(client, alpha), client.f_max)


def min_price(client: ClientProfile, sys: SystemConfig, latency: float, f: float) -> float:
    """Lowest price giving the client zero utility at (latency, f)."""
    if latency >= sys.t0:
        raise InfeasibleError(f"latency {latency!r} does not beat T0 = {sys.t0!r}")
    cost = client.energy_cost * (train_energy(client, f) + comm_energy(client, sys))
    return cost / (sys.t0 - latency)


def price_for_latency(client: ClientProfile, sys: SystemConfig, latency: float) -> float:
    """Price whose unconstrained best response finishes the round in ``latency``."""
    slack = latency - comm_time(client, sys)
    if not slack > 0:
        raise DomainError("latency must exceed the upload time")
    f = client.workload / slack
    return 2.0 * client.energy_cost * client.capacitance * f ** 3


def _frequency_for_latency(client: ClientProfile, t_com: float, latency: float) -> float:
    return client.workload / (latency - t_com)


def break_even_gap(client: ClientProfile, sys: SystemConfig, latency: float) -> float:
    """Utility at the natural price for ``latency``, divided by the energy cost.

    Strictly decreasing on (t_com, T0); its root is the break-even latency.
    """
    t_com = comm_time(client, sys)
    f = _frequency_for_latency(client, t_com, latency)
    v, w = client.capacitance, client.workload
    return 2.0 * v * f ** 3 * (sys.t0 - latency) - v * f * f * w - client.tx_power * t_com


@functools.lru_cache(maxsize=65536)
def compute_thresholds(client: ClientProfile, sys: SystemConfig) -> ClientThresholds:
    t_com = comm_time(client, sys)
    t_min = t_com + client.workload / client.f_max
    if t_min >= sys.t0:
        raise InfeasibleError(f"client infeasible: t_min={t_min:.6g} s >= T0={sys.t0:g} s")
    lo, hi = t_com * (1 + 1e-9), sys.t0 * (1 - 1e-9)
    t_tilde = optimize.bisect(
        lambda t: break_even_gap(client, sys, t), lo, hi,
        xtol=1e-15 * sys.t0, rtol=BISECT_RTOL, maxiter=500,
    )
    return ClientThresholds(
        t_min=t_min,
        t_tilde=t_tilde,
        alpha_at_t_tilde=price_for_latency(client, sys, t_tilde),
        t_com=t_com,
        forced_min_price=t_min > t_tilde,
    )


def is_feasible(client: ClientProfile, sys: SystemConfig) -> bool:
    t_min = comm_time(client, sys) + client.workload / client.f_max
    return t_min < sys.t0


def _on_first_branch(th: ClientThresholds, T: float) -> bool:
    if T < th.t_min * (1 - 1e-12):
        raise InfeasibleError(f"system latency {T!r} below client floor {th.t_min!r}")
    return T <= th.t_tilde


def pinned_latency(th: ClientThresholds, T: float) -> float:
    return T if _on_first_branch(th, T) else th.floor_latency


def pinned_price(client: ClientProfile, sys: SystemConfig, th: ClientThresholds, T: float) -> float:
    if _on_first_branch(th, T):
        return price_for_latency(client, sys, T)
    return break_even_price(client, sys, th)


def break_even_price(client: ClientProfile, sys: SystemConfig, th: ClientThresholds) -> float:
    """Smallest price at which the client participates at all."""
    latency = th.floor_latency
    f = min(_frequency_for_latency(client, th.t_com, latency), client.f_max)
    return min_price(client, sys, latency, f)


def payment(client: ClientProfile, sys: SystemConfig, th: ClientThresholds, T: float) -> float:
    return pinned_price(client, sys, th, T) * (sys.t0 - pinned_latency(th, T))


def payment_derivative(client: ClientProfile, sys: SystemConfig, th: ClientThresholds, T: float) -> float:
    if not _on_first_branch(th, T):
        return 0.0
    slack = T - th.t_com
    f = client.workload / slack
    bv = client.energy_cost * client.capacitance
    return -2.0 * bv * f ** 3 * (1.0 + 3.0 * (sys.t0 - T) / slack)


def pinned_outcome(client: ClientProfile, sys: SystemConfig, th: ClientThresholds, T: float) -> ClientOutcome:
    """Outcome of ``client`` when the server targets system latency ``T``."""
    latency = pinned_latency(th, T)
    price = pinned_price(client, sys, th, T)
    f = best_response(client, price)
    util = price * (sys.t0 - latency) - client.energy_cost * (
        train_energy(client, f) + comm_energy(client, sys))
    return ClientOutcome(
        client_id=client.id,
        price=price,
        frequency=f,
        latency=latency,
        utility=util,
        payment=price * (sys.t0 - latency),
        participating=True,
    )
