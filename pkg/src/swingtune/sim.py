"""Integration of the system and specification over one scenario.

The default path is fixed-step RK4 in the compiled kernel, sampled on a
uniform grid of ``n_samples`` points ``t_k = k T / n_samples`` (k = 1..n).
The adaptive path goes through ``scipy.integrate.solve_ivp`` and exists to
cross-check the fixed-step results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from swingtune import _kernel
from swingtune.grid import GridModel, SpecModel, find_operating_point, rhs_system


class IntegrationFailure(RuntimeError):
    """The state blew up (or the adaptive solver gave up)."""

    def __init__(self, message: str, scenario_index: Optional[int] = None):
        super().__init__(message)
        self.scenario_index = scenario_index


@dataclass(frozen=True)
class SimConfig:
    T_horizon: float = 50.0
    step: float = 1e-2
    method: str = "rk4_fixed"
    n_samples: int = 5000
    rtol: float = 1e-8
    atol: float = 1e-10

    def __post_init__(self):
        if not self.T_horizon > 0:
            raise ValueError("T_horizon must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.method not in ("rk4_fixed", "rk4_adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "rk4_adaptive" and (self.rtol > 1e-6 or self.atol > 1e-6):
            raise ValueError("adaptive tolerances must be at most 1e-6")

    @property
    def sample_every(self) -> int:
        """Integrator steps per sample interval (the step is shrunk to fit)."""
        ratio = self.T_horizon / self.n_samples / self.step
        return max(1, int(np.ceil(ratio - 1e-9)))

    @property
    def h(self) -> float:
        return self.T_horizon / self.n_samples / self.sample_every

    @property
    def n_steps(self) -> int:
        return self.sample_every * self.n_samples

    def sample_times(self) -> np.ndarray:
        return np.arange(1, self.n_samples + 1) * (self.T_horizon / self.n_samples)

    def stage_times(self) -> np.ndarray:
        """Times at which RK4 evaluates the right-hand side (half-step grid)."""
        return np.arange(2 * self.n_steps + 1) * (0.5 * self.h)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    omega: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "omega"])
            for t, o in zip(self.times, self.omega):
                w.writerow([repr(float(t)), repr(float(o))])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


# Parameters are seeded as derivatives with respect to their logarithm, so a
# lane for p = exp(x) carries dp/dx = p. H and T enter through 1/(2H), 1/T.
_SEEDABLE = ("H", "D", "K", "T", "G")


@dataclass(frozen=True, eq=False)
class KernelArgs:
    x0: np.ndarray
    inv2h: np.ndarray
    damp: np.ndarray
    kgain: np.ndarray
    invt: np.ndarray
    ggain: np.ndarray
    p_net: np.ndarray
    e_from: np.ndarray
    e_to: np.ndarray
    e_b: np.ndarray
    kind: int
    inv_tau: float
    obs: int

    @property
    def width(self) -> int:
        return self.damp.shape[1]

    def param_arrays(self):
        return (self.inv2h, self.damp, self.kgain, self.invt, self.ggain, self.p_net,
                self.e_from, self.e_to, self.e_b, self.kind, self.inv_tau)


def kernel_args(grid: GridModel, seeds: Optional[Mapping] = None, width: int = 1,
                x0: Optional[np.ndarray] = None) -> KernelArgs:
    """Pack ``grid`` for the compiled kernel.

    ``seeds`` maps ``(field, bus index)`` to a tangent lane in ``1..width-1``;
    the lane then holds the derivative with respect to log(field).
    """
    n, m = grid.n_buses, grid.n_internal
    buses = grid.buses
    H = np.array([b.H for b in buses])
    inv2h = np.zeros((n, width))
    inv2h[:, 0] = 0.5 / H
    damp = np.zeros((n, width))
    damp[:, 0] = [b.D for b in buses]
    kgain = np.zeros((m, width))
    invt = np.zeros((m, width))
    ggain = np.zeros((m, width))
    for i, b in enumerate(grid.internal):
        kgain[i, 0] = b.K or 0.0
        invt[i, 0] = 1.0 / b.T if b.T else 0.0
        ggain[i, 0] = b.G or 0.0
    for (name, i), lane in (seeds or {}).items():
        if name not in _SEEDABLE or not 0 < lane < width:
            raise ValueError(f"bad seed {(name, i)} -> {lane}")
        if name == "H":
            inv2h[i, lane] = -inv2h[i, 0]
        elif name == "D":
            damp[i, lane] = damp[i, 0]
        elif name == "K":
            kgain[i, lane] = kgain[i, 0]
        elif name == "T":
            invt[i, lane] = -invt[i, 0]
        else:
            ggain[i, lane] = ggain[i, 0]
    if x0 is None:
        x0 = find_operating_point(grid).as_vector()
    xs = np.zeros((grid.state_size, width))
    xs[:, 0] = x0
    iu, ju = np.nonzero(np.triu(grid.coupling))
    return KernelArgs(
        x0=xs, inv2h=inv2h, damp=damp, kgain=kgain, invt=invt, ggain=ggain,
        p_net=grid.net_injection(),
        e_from=iu.astype(np.int64), e_to=ju.astype(np.int64), e_b=grid.coupling[iu, ju].copy(),
        kind=grid.controller.code, inv_tau=1.0 / grid.tau_act if grid.tau_act > 0 else 0.0,
        obs=grid.pcc_index,
    )


def fluct_grid(scenario, cfg: SimConfig) -> np.ndarray:
    if scenario is None:
        return np.zeros(2 * cfg.n_steps + 1)
    return np.ascontiguousarray(scenario.fluct(cfg.stage_times()), dtype=float)


def integrate_dual(args: KernelArgs, fluct: np.ndarray, cfg: SimConfig,
                   scenario_index: Optional[int] = None) -> np.ndarray:
    """Sampled observed-bus frequency, shape ``(n_samples, width)``."""
    samples, status = _kernel.integrate(
        args.x0, fluct, cfg.h, cfg.sample_every, cfg.n_samples, args.obs, *args.param_arrays()
    )
    if status:
        t = status * cfg.h
        raise IntegrationFailure(f"state blew up at t = {t:.4g} s", scenario_index)
    return samples


def _simulate_grid(grid: GridModel, scenario, cfg: SimConfig) -> Trajectory:
    times = cfg.sample_times()
    if cfg.method == "rk4_fixed":
        omega = integrate_dual(kernel_args(grid), fluct_grid(scenario, cfg), cfg)[:, 0]
        return Trajectory(times, omega)
    return Trajectory(times, _adaptive(grid, scenario, cfg)[grid.n_buses + grid.pcc_index])


def _adaptive(grid: GridModel, scenario, cfg: SimConfig) -> np.ndarray:
    fluct = scenario.fluct if scenario is not None else None

    def f(t, x):
        return rhs_system(grid, grid.unpack(x), t, fluct).as_vector()

    x0 = find_operating_point(grid).as_vector()
    times = cfg.sample_times()
    sol = solve_ivp(f, (0.0, cfg.T_horizon), x0, method="DOP853", t_eval=times,
                    rtol=cfg.rtol, atol=cfg.atol)
    if not sol.success or not np.all(np.isfinite(sol.y)):
        raise IntegrationFailure(f"adaptive solver failed: {sol.message}")
    return sol.y


def simulate_system(model: GridModel, scenario=None, cfg: SimConfig = SimConfig()) -> Trajectory:
    """Frequency of the point-of-common-coupling bus over one scenario."""
    return _simulate_grid(model, scenario, cfg)


def apply_q(spec: SpecModel, q_values: Optional[Sequence[float]]) -> SpecModel:
    """Spec with ``(H, D[, K | T, G])`` replaced by ``q_values`` (natural units)."""
    if q_values is None:
        return spec
    names = spec.controller.spec_params
    if len(q_values) != len(names):
        raise ValueError(f"expected {len(names)} spec values {names}, got {len(q_values)}")
    return replace(spec, **{k: float(v) for k, v in zip(names, q_values)})


def simulate_spec(spec: SpecModel, q_values=None, scenario=None, cfg: SimConfig = SimConfig()) -> Trajectory:
    """Frequency of the specification bus over one scenario."""
    return _simulate_grid(apply_q(spec, q_values).to_grid(), scenario, cfg)


def simulate_states(model, scenario=None, cfg: SimConfig = SimConfig()):
    """Full value-only state history on the integrator grid: ``(times, states)``."""
    grid = model.to_grid() if isinstance(model, SpecModel) else model
    args = kernel_args(grid)
    states, status = _kernel.integrate_states(
        args.x0, fluct_grid(scenario, cfg), cfg.h, cfg.n_steps, *args.param_arrays()
    )
    if status:
        raise IntegrationFailure(f"state blew up at t = {status * cfg.h:.4g} s")
    return np.arange(cfg.n_steps + 1) * cfg.h, states


def write_pair_csv(path, times, omega_pcc, omega_spec) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "omega_pcc", "omega_spec"])
        for row in zip(times, omega_pcc, omega_spec):
            w.writerow([repr(float(v)) for v in row])
