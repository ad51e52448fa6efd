"""Seeded ensembles of demand fluctuations on the external bus.

Two families are provided: a sum of cosine modes with random amplitudes and
phases, and the norm of a few Ornstein-Uhlenbeck processes shifted by a
constant offset. Each scenario draws from its own Philox stream keyed by
``(seed, scenario index[, process index])``, so an ensemble can be rebuilt
bit-for-bit, in any order, from its seed and parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.signal import lfilter


class InvalidParams(ValueError):
    pass


class SeedCollision(ValueError):
    pass


def _stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class RandomModesScenario:
    amplitudes: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=float)
        p = np.asarray(self.phases, dtype=float)
        if a.shape != p.shape or a.ndim != 1:
            raise InvalidParams("amplitudes and phases must be 1-d and equally long")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "phases", p)

    def fluct(self, t):
        """Sum of ``A_n cos(n t + phi_n)`` for n = 1..N_freq."""
        t = np.asarray(t, dtype=float)
        n = np.arange(1, self.amplitudes.size + 1)
        out = np.cos(np.multiply.outer(t, n) + self.phases) @ self.amplitudes
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"amplitudes": self.amplitudes.tolist(), "phases": self.phases.tolist()}


@dataclass(frozen=True, eq=False)
class OuDemandScenario:
    """Norm of ``J`` OU paths sampled every ``dt``, plus the offset ``mu_mb``.

    ``path`` has shape ``(J, n_steps + 1)`` and starts at zero. Between
    samples each process is interpolated linearly; past the end it is held.
    """

    gamma: float
    eps: float
    mu_mb: float
    dt: float
    path: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "path", np.atleast_2d(np.asarray(self.path, dtype=float)))

    @property
    def n_processes(self) -> int:
        return self.path.shape[0]

    def fluct(self, t):
        t = np.asarray(t, dtype=float)
        grid = np.arange(self.path.shape[1]) * self.dt
        x = np.stack([np.interp(t, grid, row) for row in self.path])
        out = np.sqrt(np.sum(x * x, axis=0)) + self.mu_mb
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"path": self.path.tolist()}


@dataclass(frozen=True)
class StepScenario:
    """Constant extra demand ``delta`` switched on at t = 0."""

    delta: float

    def fluct(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.delta)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"delta": self.delta}


Scenario = Union[RandomModesScenario, OuDemandScenario, StepScenario]


@dataclass(frozen=True)
class ScenarioSet:
    seed: int
    kind: str
    params: dict
    scenarios: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if len(self.scenarios) < 1:
            raise InvalidParams("a scenario set needs at least one scenario")

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, k):
        return self.scenarios[k]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "kind": self.kind,
            "params": dict(self.params),
            "scenarios": [s.to_dict() for s in self.scenarios],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSet":
        kind, params = doc["kind"], doc["params"]
        if kind == "modes":
            items = [RandomModesScenario(s["amplitudes"], s["phases"]) for s in doc["scenarios"]]
        elif kind == "demand":
            items = [
                OuDemandScenario(params["gamma"], params["eps"], params["mu_mb"], params["dt"], s["path"])
                for s in doc["scenarios"]
            ]
        elif kind == "step":
            items = [StepScenario(s["delta"]) for s in doc["scenarios"]]
        else:
            raise InvalidParams(f"unknown scenario kind {kind!r}")
        return cls(seed=int(doc["seed"]), kind=kind, params=params, scenarios=tuple(items))

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSet":
        return cls.from_dict(json.loads(text))


def gen_random_modes(seed: int, n: int, n_freq: int = 10, amp_scale: float = 0.05) -> ScenarioSet:
    """Amplitudes uniform in ``[-amp_scale, amp_scale]``, phases uniform in ``[0, 2 pi)``."""
    if n < 1 or n_freq < 1:
        raise InvalidParams("n and n_freq must be at least 1")
    if not amp_scale > 0:
        raise InvalidParams("amp_scale must be positive")
    items = []
    for k in range(n):
        rng = _stream(seed, k)
        amps = rng.uniform(-amp_scale, amp_scale, n_freq)
        phases = rng.uniform(0.0, 2.0 * np.pi, n_freq)
        items.append(RandomModesScenario(amps, phases))
    params = {"n_freq": n_freq, "amp_scale": amp_scale}
    return ScenarioSet(seed=seed, kind="modes", params=params, scenarios=tuple(items))


def ou_path(rng: np.random.Generator, gamma: float, eps: float, dt: float, n_steps: int) -> np.ndarray:
    """Euler-Maruyama path of ``dx = -gamma x dt + eps dW`` from x(0) = 0."""
    noise = rng.standard_normal(n_steps) * (eps * np.sqrt(dt))
    x = np.zeros(n_steps + 1)
    x[1:] = lfilter([1.0], [1.0, -(1.0 - gamma * dt)], noise)
    return x


def gen_ou_demand(
    seed: int,
    n: int,
    gamma: float = 1.0,
    eps: float = 0.1,
    mu_mb: float = 0.05,
    n_processes: int = 3,
    dt: float = 1e-2,
    horizon: float = 50.0,
) -> ScenarioSet:
    if n < 1 or n_processes < 1:
        raise InvalidParams("n and the process count must be at least 1")
    if not gamma > 0:
        raise InvalidParams("gamma must be positive")
    if not eps >= 0:
        raise InvalidParams("eps must be nonnegative")
    if not (dt > 0 and horizon > 0):
        raise InvalidParams("dt and horizon must be positive")
    if dt >= 1.0 / gamma:
        raise InvalidParams("dt must be below 1/gamma for a stable discretization")
    n_steps = int(np.ceil(horizon / dt - 1e-9))
    items = []
    for k in range(n):
        path = np.stack([ou_path(_stream(seed, k, j), gamma, eps, dt, n_steps) for j in range(n_processes)])
        items.append(OuDemandScenario(gamma, eps, mu_mb, dt, path))
    params = {
        "gamma": gamma, "eps": eps, "mu_mb": mu_mb,
        "n_processes": n_processes, "dt": dt, "horizon": horizon,
    }
    return ScenarioSet(seed=seed, kind="demand", params=params, scenarios=tuple(items))


def gen_steps(delta: float, n: int = 1) -> ScenarioSet:
    return ScenarioSet(seed=0, kind="step", params={"delta": delta},
                       scenarios=tuple(StepScenario(delta) for _ in range(n)))


def generate(kind: str, seed: int, n: int, **params) -> ScenarioSet:
    if kind == "modes":
        return gen_random_modes(seed, n, **params)
    if kind == "demand":
        return gen_ou_demand(seed, n, **params)
    raise InvalidParams(f"unknown scenario kind {kind!r}")


def resample(scenarios: ScenarioSet, new_seed: int) -> ScenarioSet:
    """Fresh draws of the same size and distribution under ``new_seed``."""
    if new_seed == scenarios.seed:
        raise SeedCollision(f"resampling needs a new seed, got {new_seed} again")
    return generate(scenarios.kind, new_seed, len(scenarios), **scenarios.params)
