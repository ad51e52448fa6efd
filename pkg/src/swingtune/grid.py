"""Multi-bus swing network and single-bus specification models.

Every bus follows a controlled swing equation with perfect reference
tracking; lines are lossless and couple angles sinusoidally. Buses
``0..M-1`` form the internal region and carry a frequency controller, the
last bus is the external grid. Its load carries the demand fluctuation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from swingtune import _kernel


class NoConvergence(RuntimeError):
    """Newton iteration for the operating point did not converge."""


class InvalidModel(ValueError):
    pass


class ControllerKind(str, enum.Enum):
    P = "p"
    PI = "pi"
    PLI = "pli"

    @property
    def code(self) -> int:
        return {"p": _kernel.KIND_P, "pi": _kernel.KIND_PI, "pli": _kernel.KIND_PLI}[self.value]

    @property
    def has_state(self) -> bool:
        return self is not ControllerKind.P

    @property
    def bus_params(self) -> tuple:
        """Tunable per-bus fields of the system for this controller."""
        return {"p": ("D",), "pi": ("D", "K"), "pli": ("D", "T", "G")}[self.value]

    @property
    def spec_params(self) -> tuple:
        """Tunable fields of the specification: inertia first, then the bus fields."""
        return ("H",) + self.bus_params


@dataclass(frozen=True)
class BusParams:
    """Physical and control parameters of one bus (per-unit, seconds)."""

    H: float
    D: float
    K: Optional[float] = None
    T: Optional[float] = None
    G: Optional[float] = None
    P_fix: float = 0.0
    P_load: float = 0.0

    def validate(self, kind: ControllerKind, controlled: bool = True) -> None:
        if not self.H > 0:
            raise InvalidModel(f"H must be positive, got {self.H}")
        if controlled:
            if not self.D > 0:
                raise InvalidModel(f"D must be positive, got {self.D}")
            if kind is ControllerKind.PI and not (self.K is not None and self.K > 0):
                raise InvalidModel("PI buses need K > 0")
            if kind is ControllerKind.PLI and not (
                self.T is not None and self.T > 0 and self.G is not None and self.G > 0
            ):
                raise InvalidModel("PLI buses need T > 0 and G > 0")
        elif not self.D >= 0:
            raise InvalidModel(f"external bus damping must be nonnegative, got {self.D}")


@dataclass(frozen=True)
class SystemState:
    """Angles, frequencies and controller states of every bus.

    ``ctrl`` is empty for P control. ``lag`` is empty unless the model has an
    actuator lag. ``as_vector`` concatenates ``theta, omega, ctrl, lag``.
    """

    theta: np.ndarray
    omega: np.ndarray
    ctrl: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lag: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.omega, self.ctrl, self.lag])


@dataclass(frozen=True, eq=False)
class GridModel:
    """Internal buses followed by one external bus.

    ``coupling`` is the symmetric susceptance matrix over all buses. The
    external bus must be linked to exactly one internal bus, ``pcc_index``.
    ``tau_act`` > 0 switches on a first-order lag between the reference
    power and the mechanical power of the controlled buses.
    """

    buses: tuple
    coupling: np.ndarray
    controller: ControllerKind
    pcc_index: int = 0
    tau_act: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "controller", ControllerKind(self.controller))
        b = np.array(self.coupling, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "coupling", b)
        n = len(self.buses)
        if n < 2:
            raise InvalidModel("need at least one internal bus and the external bus")
        if b.shape != (n, n):
            raise InvalidModel(f"coupling must be {n}x{n}, got {b.shape}")
        if not np.allclose(b, b.T, rtol=0, atol=0) or np.any(np.diag(b) != 0) or np.any(b < 0):
            raise InvalidModel("coupling must be symmetric, nonnegative, zero diagonal")
        if not 0 <= self.pcc_index < n - 1:
            raise InvalidModel("pcc_index must point at an internal bus")
        links = np.flatnonzero(b[-1, :-1])
        if list(links) != [self.pcc_index]:
            raise InvalidModel("external bus must have a single link, to the pcc bus")
        if self.tau_act < 0:
            raise InvalidModel("tau_act must be nonnegative")
        for bus in self.buses[:-1]:
            bus.validate(self.controller)
        self.buses[-1].validate(self.controller, controlled=False)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_internal(self) -> int:
        return len(self.buses) - 1

    @property
    def internal(self) -> tuple:
        return self.buses[:-1]

    @property
    def external(self) -> BusParams:
        return self.buses[-1]

    @property
    def state_size(self) -> int:
        return _kernel.state_size(self.n_buses, self.n_internal, self.controller.code, self.tau_act > 0)

    def net_injection(self) -> np.ndarray:
        return np.array([b.P_fix - b.P_load for b in self.buses])

    def with_internal(self, buses: Sequence[BusParams]) -> "GridModel":
        return replace(self, buses=tuple(buses) + (self.external,))

    def unpack(self, x: np.ndarray) -> SystemState:
        n, m = self.n_buses, self.n_internal
        c = m if self.controller.has_state else 0
        lag = m if self.tau_act > 0 else 0
        x = np.asarray(x, dtype=float)
        return SystemState(x[:n], x[n:2 * n], x[2 * n:2 * n + c], x[2 * n + c:2 * n + c + lag])


@dataclass(frozen=True)
class SpecModel:
    """One controlled swing bus standing in for the whole internal region.

    The external bus is carried along so that the specification sees the same
    grid and the same fluctuation as the full system.
    """

    H: float
    D: float
    controller: ControllerKind
    K: Optional[float] = None
    T: Optional[float] = None
    G: Optional[float] = None
    P_fix: float = 0.0
    coupling_to_external: float = 1.0
    external: BusParams = BusParams(H=10.0, D=0.0)
    tau_act: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "controller", ControllerKind(self.controller))
        if not self.coupling_to_external > 0:
            raise InvalidModel("coupling_to_external must be positive")
        self.bus.validate(self.controller)

    @property
    def bus(self) -> BusParams:
        return BusParams(H=self.H, D=self.D, K=self.K, T=self.T, G=self.G, P_fix=self.P_fix)

    def to_grid(self) -> GridModel:
        b = self.coupling_to_external
        return GridModel(
            buses=(self.bus, self.external),
            coupling=np.array([[0.0, b], [b, 0.0]]),
            controller=self.controller,
            pcc_index=0,
            tau_act=self.tau_act,
        )

    @classmethod
    def for_grid(cls, model: GridModel, H: float, D: float, K=None, T=None, G=None) -> "SpecModel":
        """Specification attached to the same external bus as ``model``."""
        return cls(
            H=H, D=D, K=K, T=T, G=G,
            controller=model.controller,
            P_fix=sum(b.P_fix - b.P_load for b in model.internal),
            coupling_to_external=float(model.coupling[-1, model.pcc_index]),
            external=model.external,
            tau_act=model.tau_act,
        )


_DEFAULT_H = (3.0, 3.0, 4.0, 5.0, 6.0)
_DEFAULT_DISPATCH = (0.2, -0.1, 0.1, -0.05, 0.15)


def default_grid(
    controller=ControllerKind.P,
    n_internal: int = 5,
    *,
    b_internal: float = 5.0,
    b_pcc: float = 1.0,
    H_ext: float = 10.0,
    D_ext: float = 0.0,
    D: float = 1.0,
    K: float = 0.5,
    T: float = 1.0,
    G: float = 2.0,
    export: float = 0.3,
    tau_act: float = 0.0,
) -> GridModel:
    """All-to-all internal region linked to the external bus through bus 0.

    Inertias cycle through 3, 3, 4, 5, 6 s. The internal dispatch is
    heterogeneous and exports ``export`` p.u. to the external bus, whose
    steady load balances it.
    """
    kind = ControllerKind(controller)
    pattern = np.array([_DEFAULT_DISPATCH[i % 5] for i in range(n_internal)])
    p_fix = pattern - pattern.mean() + export / n_internal
    ctrl = dict(
        K=K if kind is ControllerKind.PI else None,
        T=T if kind is ControllerKind.PLI else None,
        G=G if kind is ControllerKind.PLI else None,
    )
    buses = [BusParams(H=_DEFAULT_H[i % 5], D=D, P_fix=float(p_fix[i]), **ctrl) for i in range(n_internal)]
    buses.append(BusParams(H=H_ext, D=D_ext, P_load=float(p_fix.sum())))
    n = n_internal + 1
    b = np.zeros((n, n))
    b[:n_internal, :n_internal] = b_internal
    np.fill_diagonal(b, 0.0)
    b[0, -1] = b[-1, 0] = b_pcc
    return GridModel(buses=tuple(buses), coupling=b, controller=kind, pcc_index=0, tau_act=tau_act)


def control_input(kind, params: BusParams, omega: float, ctrl_state: float = 0.0) -> float:
    """Power added to the reference by the frequency controller.

    ``ctrl_state`` is the integral of omega for PI and the leaky state for PLI.
    ``omega`` is unused: the proportional part lives in the damping term.
    """
    kind = ControllerKind(kind)
    if kind is ControllerKind.PI:
        return -params.K * ctrl_state
    if kind is ControllerKind.PLI:
        return -ctrl_state
    return 0.0


def electrical_power(model: GridModel, state: SystemState, i: int) -> float:
    """Steady load plus line flows leaving bus ``i`` (fluctuation excluded)."""
    d = state.theta[i] - state.theta
    return model.buses[i].P_load + float(np.sum(model.coupling[i] * np.sin(d)))


def rhs_system(
    model: GridModel,
    state: SystemState,
    t: float = 0.0,
    fluct: Optional[Callable[[float], float]] = None,
) -> SystemState:
    """Time derivative of ``state``, returned with the same layout."""
    n, m = model.n_buses, model.n_internal
    kind = model.controller
    p_fluc = fluct(t) if fluct is not None else 0.0
    H = np.array([b.H for b in model.buses])
    D = np.array([b.D for b in model.buses])
    p_mech = np.array([b.P_fix for b in model.buses])

    u = np.array([
        control_input(kind, b, state.omega[i], state.ctrl[i] if kind.has_state else 0.0)
        for i, b in enumerate(model.internal)
    ])
    if model.tau_act > 0:
        d_lag = (u - state.lag) / model.tau_act
        p_mech[:m] += state.lag
    else:
        d_lag = np.zeros(0)
        p_mech[:m] += u

    p_el = np.array([electrical_power(model, state, i) for i in range(n)])
    p_el[-1] += p_fluc
    d_omega = (p_mech - p_el - D * state.omega) / (2.0 * H)

    if kind is ControllerKind.PI:
        d_ctrl = state.omega[:m].copy()
    elif kind is ControllerKind.PLI:
        T = np.array([b.T for b in model.internal])
        G = np.array([b.G for b in model.internal])
        d_ctrl = (state.omega[:m] - G * state.ctrl) / T
    else:
        d_ctrl = np.zeros(0)
    return SystemState(state.omega.copy(), d_omega, d_ctrl, d_lag)


def rhs_spec(spec: SpecModel, state: SystemState, t: float = 0.0, fluct=None) -> SystemState:
    """Specification dynamics; ``state`` covers the spec bus then the external bus."""
    return rhs_system(spec.to_grid(), state, t, fluct)


def _as_grid(model) -> GridModel:
    return model.to_grid() if isinstance(model, SpecModel) else model


def find_operating_point(model, tol: float = 1e-10, max_iter: int = 50) -> SystemState:
    """Synchronous fixed point with zero frequency and zeroed controllers.

    The external bus angle is the reference (zero). Angles come from Newton
    iteration on the lossless power-flow equations.
    """
    grid = _as_grid(model)
    n = grid.n_buses
    p = grid.net_injection()
    if abs(p.sum()) > 1e-9:
        raise NoConvergence(f"dispatch is not balanced (mismatch {p.sum():.3e})")
    B = grid.coupling
    theta = np.zeros(n)

    def mismatch(th):
        return p - np.sum(B * np.sin(th[:, None] - th[None, :]), axis=1)

    for _ in range(max_iter):
        r = mismatch(theta)
        if np.max(np.abs(r)) <= tol:
            break
        c = B * np.cos(theta[:, None] - theta[None, :])
        jac = np.diag(c.sum(axis=1)) - c
        try:
            step = np.linalg.solve(jac[:-1, :-1], r[:-1])
        except np.linalg.LinAlgError as exc:
            raise NoConvergence("singular power-flow Jacobian") from exc
        theta[:-1] += step
        if not np.all(np.isfinite(theta)):
            raise NoConvergence("power-flow iteration diverged")
    else:
        if np.max(np.abs(mismatch(theta))) > tol:
            raise NoConvergence(f"Newton did not converge in {max_iter} iterations")
    # an angle solution past pi/2 on some line is an unstable equilibrium
    d = theta[:, None] - theta[None, :]
    if np.any((B > 0) & (np.cos(d) <= 0)):
        raise NoConvergence("operating point overloads a line (unstable equilibrium)")
    m = grid.n_internal
    c = m if grid.controller.has_state else 0
    lag = m if grid.tau_act > 0 else 0
    return SystemState(theta, np.zeros(n), np.zeros(c), np.zeros(lag))
