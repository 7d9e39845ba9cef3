"""Domain types and the physical/economic formulas of the FL service market.

All quantities are SI (Hz, s, J, W, bits); prices and utilities are
dimensionless currency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence


class DomainError(ValueError):
    """An argument lies outside the domain of a formula."""


class InfeasibleError(ValueError):
    """A client or coalition cannot meet the latency threshold."""


class EmptyCoalitionError(InfeasibleError):
    """No participating client, so the accuracy bound is undefined."""

    def __init__(self, msg: str = "empty coalition"):
        super().__init__(msg)


@dataclass(frozen=True)
class ClientProfile:
    """Per-client compute, channel and cost parameters."""

    id: Hashable
    cycles_per_tuple: float
    local_iters: int
    data_size: int
    f_max: float
    capacitance: float
    energy_cost: float
    tx_power: float
    channel_gain: float

    def __post_init__(self):
        for name in ("cycles_per_tuple", "f_max", "capacitance", "energy_cost",
                     "tx_power", "channel_gain"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        for name in ("local_iters", "data_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")

    @property
    def workload(self) -> float:
        """CPU cycles of one round of local training (c * I * |D|)."""
        return self.cycles_per_tuple * self.local_iters * self.data_size


@dataclass(frozen=True)
class SystemConfig:
    bandwidth: float = 1e6
    noise_power: float = 1e-9
    model_bits: float = 6e5
    t0: float = 10.0
    kappa: float = 1e6
    mu: float = 1.0
    global_rounds: int = 100
    n0: int = 10

    def __post_init__(self):
        for name in ("bandwidth", "noise_power", "model_bits", "t0", "kappa", "mu"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        for name in ("global_rounds", "n0"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")


@dataclass(frozen=True)
class ClientOutcome:
    client_id: Hashable
    price: float = 0.0
    frequency: float = 0.0
    latency: float = 0.0
    utility: float = 0.0
    payment: float = 0.0
    participating: bool = False

    @classmethod
    def idle(cls, client_id: Hashable) -> "ClientOutcome":
        return cls(client_id)


@dataclass(frozen=True)
class Diagnostics:
    iterations: int = 0
    path: tuple[tuple[float, float], ...] = ()
    solver: str = ""


@dataclass(frozen=True)
class GameSolution:
    """Outcome of one pricing game over a candidate set.

    ``outcomes`` has one entry per candidate; clients outside ``selected``
    carry zeroed outcomes.
    """

    selected: frozenset
    outcomes: tuple[ClientOutcome, ...]
    system_latency: float
    ps_utility: float
    total_data: int
    gamma: float
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def participants(self) -> list[ClientOutcome]:
        return [o for o in self.outcomes if o.participating]

    @property
    def total_payment(self) -> float:
        return sum(o.payment for o in self.outcomes)

    def outcome(self, client_id: Hashable) -> ClientOutcome:
        for o in self.outcomes:
            if o.client_id == client_id:
                return o
        raise KeyError(client_id)


def uplink_rate(client: ClientProfile, sys: SystemConfig) -> float:
    """Shannon rate B log2(1 + p g / sigma^2) in bits/s."""
    snr = client.tx_power * client.channel_gain / sys.noise_power
    return sys.bandwidth * math.log2(1.0 + snr)


def comm_time(client: ClientProfile, sys: SystemConfig) -> float:
    return sys.model_bits / uplink_rate(client, sys)


def comm_energy(client: ClientProfile, sys: SystemConfig) -> float:
    return client.tx_power * comm_time(client, sys)


def _check_freq(f: float) -> None:
    if not f > 0:
        raise DomainError(f"CPU frequency must be positive, got {f!r}")


def train_time(client: ClientProfile, f: float) -> float:
    _check_freq(f)
    return client.workload / f


def train_energy(client: ClientProfile, f: float) -> float:
    _check_freq(f)
    return client.capacitance * f * f * client.workload


def round_time(client: ClientProfile, sys: SystemConfig, f: float) -> float:
    """Upload time plus local training time at frequency ``f``."""
    return comm_time(client, sys) + train_time(client, f)


def gamma_bound(total_data: float, global_rounds: int) -> float:
    """Loss-gap bound (I_g * sum |D|)^(-1/2) + 1/I_g."""
    if total_data < 1 or global_rounds < 1:
        raise DomainError("total_data and global_rounds must be >= 1")
    return (global_rounds * total_data) ** -0.5 + 1.0 / global_rounds


def client_utility(client: ClientProfile, sys: SystemConfig, price: float, f: float) -> float:
    """Payment for the latency margin minus the energy bill.

    ``f == 0`` is the non-participant convention and requires ``price == 0``.
    """
    if f == 0:
        if price != 0:
            raise DomainError("a non-participant (f = 0) must have zero price")
        return 0.0
    _check_freq(f)
    latency = round_time(client, sys, f)
    energy = train_energy(client, f) + comm_energy(client, sys)
    return price * (sys.t0 - latency) - client.energy_cost * energy


def ps_utility(outcomes: Iterable[ClientOutcome], total_data: float, sys: SystemConfig) -> float:
    """Server cost kappa*Gamma + mu*I_g*T + I_g * sum(alpha (T0 - T_m)); lower is better."""
    parts = [o for o in outcomes if o.participating]
    if not parts:
        raise EmptyCoalitionError()
    latency = max(o.latency for o in parts)
    paid = sum(o.price * (sys.t0 - o.latency) for o in parts)
    return (sys.kappa * gamma_bound(total_data, sys.global_rounds)
            + sys.mu * sys.global_rounds * latency
            + sys.global_rounds * paid)


def recompute_ps_utility(solution: GameSolution, sys: SystemConfig) -> float:
    return ps_utility(solution.outcomes, solution.total_data, sys)


def total_data_of(clients: Sequence[ClientProfile]) -> int:
    return int(sum(c.data_size for c in clients))
