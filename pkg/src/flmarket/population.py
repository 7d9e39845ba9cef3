"""Seeded synthetic client populations (IID and Non-IID data sizes).

Sampling uses numpy's PCG64 bit generator and only its ``random()`` stream;
every uniform is drawn by inverse CDF so a (spec, seed) pair maps to the same
population on every platform.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .model import ClientProfile, SystemConfig

RNG_NAME = "numpy.PCG64/random-inverse-cdf/v1"


@dataclass(frozen=True)
class PopulationSpec:
    n_clients: int = 40
    data_mode: str = "iid"
    f_max_range: tuple[float, float] = (2e9, 4e9)
    tx_power_range: tuple[float, float] = (0.02, 0.1)
    distance_range: tuple[float, float] = (10.0, 100.0)
    cycles_per_tuple: float = 5e5
    capacitance: float = 1e-28
    energy_cost: float = 1.0
    local_iters: int = 1
    gain_constant: float = 1e-3
    gain_exponent: float = 3.0
    iid_data_range: tuple[int, int] = (100, 2000)
    classes_range: tuple[int, int] = (1, 10)
    per_class_range: tuple[int, int] = (10, 400)
    n_classes: int = 10

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if self.data_mode not in ("iid", "non_iid"):
            raise ValueError(f"data_mode must be 'iid' or 'non_iid', got {self.data_mode!r}")
        for f in fields(self):
            if f.name.endswith("_range"):
                lo, hi = getattr(self, f.name)
                if not 0 < lo <= hi:
                    raise ValueError(f"{f.name} must satisfy 0 < low <= high")
        for name in ("cycles_per_tuple", "capacitance", "energy_cost", "gain_constant", "gain_exponent"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.local_iters < 1 or self.n_classes < 1:
            raise ValueError("local_iters and n_classes must be >= 1")
        if self.classes_range[1] > self.n_classes:
            raise ValueError("classes_range exceeds n_classes")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationSpec":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown population fields: {sorted(unknown)}")
        kw = {k: tuple(v) if k.endswith("_range") else v for k, v in d.items()}
        return cls(**kw)


def default_spec() -> PopulationSpec:
    return PopulationSpec()


def default_system() -> SystemConfig:
    return SystemConfig(
        bandwidth=1e6,
        noise_power=1e-9,
        model_bits=0.6e6,
        t0=10.0,
        kappa=1e6,
        mu=1.0,
        global_rounds=100,
        n0=10,
    )


class _Sampler:
    def __init__(self, seed: int):
        if seed is None or int(seed) != seed or seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
        self._rng = np.random.Generator(np.random.PCG64(int(seed)))

    def u(self) -> float:
        return float(self._rng.random())

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.u()

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in ``[lo, hi]`` inclusive."""
        return int(lo + min(math.floor(self.u() * (hi - lo + 1)), hi - lo))


def sample(spec: PopulationSpec, seed: int) -> tuple[list[ClientProfile], list[tuple[int, ...]]]:
    """Population plus, per client, the data classes it holds."""
    s = _Sampler(seed)
    clients, classes = [], []
    for i in range(spec.n_clients):
        f_max = s.uniform(*spec.f_max_range)
        p = s.uniform(*spec.tx_power_range)
        d = s.uniform(*spec.distance_range)
        if spec.data_mode == "iid":
            data = s.integer(*spec.iid_data_range)
            held = tuple(range(spec.n_classes))
        else:
            k = s.integer(*spec.classes_range)
            pool = list(range(spec.n_classes))
            for j in range(k):  # partial Fisher-Yates
                r = s.integer(j, spec.n_classes - 1)
                pool[j], pool[r] = pool[r], pool[j]
            held = tuple(sorted(pool[:k]))
            data = sum(s.integer(*spec.per_class_range) for _ in range(k))
        clients.append(ClientProfile(
            id=i,
            cycles_per_tuple=spec.cycles_per_tuple,
            local_iters=spec.local_iters,
            data_size=data,
            f_max=f_max,
            capacitance=spec.capacitance,
            energy_cost=spec.energy_cost,
            tx_power=p,
            channel_gain=spec.gain_constant / d ** spec.gain_exponent,
        ))
        classes.append(held)
    return clients, classes


def generate(spec: PopulationSpec, seed: int) -> list[ClientProfile]:
    return sample(spec, seed)[0]
