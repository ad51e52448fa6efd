"""Closed-form specification parameters for a homogeneous system.

Summing the swing equations of all buses cancels the line flows, leaving
``sum 2 H_i w_i' = -sum D_i w_i + dP_total + sum u_i``. In a synchronized
asymptotic state this fixes the frequency in terms of the summed damping and
the asymptotic control action, and the specification inherits the summed
quantities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from swingtune.grid import BusParams, ControllerKind, GridModel, SpecModel


class DegenerateDamping(ArithmeticError):
    """The effective droop is not positive, so no stable asymptotic state."""


@dataclass(frozen=True)
class BaselineParams:
    kind: ControllerKind
    H_spec: float
    D_base: float
    K_base: Optional[float] = None
    G_base: Optional[float] = None
    T_spec: Optional[float] = None
    omega_star: float = 0.0

    def as_dict(self) -> dict:
        return {
            "controller": self.kind.value, "H_spec": self.H_spec, "D_base": self.D_base,
            "K_base": self.K_base, "G_base": self.G_base, "T_spec": self.T_spec,
            "omega_star_unit_step": self.omega_star,
        }


def asymptotic_frequency(kind, dp_total: float, m: int, sys: BusParams, d_external: float = 0.0) -> float:
    """Synchronized frequency after a sustained mismatch ``dp_total``.

    ``dp_total`` is generation minus demand, so extra load is negative. With
    ``u = -y`` and ``y -> w/G`` the leaky integrator adds ``1/G`` of droop
    per bus. ``d_external`` is the damping of buses without a controller.
    """
    kind = ControllerKind(kind)
    if kind is ControllerKind.PI:
        return 0.0
    droop = m * sys.D + d_external
    if kind is ControllerKind.PLI:
        droop += m / sys.G
    if droop <= 0:
        raise DegenerateDamping(f"effective damping {droop} is not positive")
    return dp_total / droop


def baseline_params(kind, m: int, sys: BusParams, H_list: Sequence[float]) -> BaselineParams:
    """Specification parameters matching the asymptotic and initial response."""
    kind = ControllerKind(kind)
    if m < 1:
        raise ValueError("need at least one bus")
    H_spec = float(sum(H_list))
    D_base = m * sys.D
    K_base = m * sys.K if kind is ControllerKind.PI else None
    G_base = sys.G / m if kind is ControllerKind.PLI else None
    T_spec = sys.T if kind is ControllerKind.PLI else None
    return BaselineParams(kind, H_spec, D_base, K_base, G_base, T_spec,
                          asymptotic_frequency(kind, 1.0, m, sys))


def baseline_from_grid(model: GridModel) -> BaselineParams:
    """Summed forms for a possibly inhomogeneous system.

    ``D = sum D_i``, ``K = sum K_i`` and ``1/G = sum 1/G_i`` reduce to the
    homogeneous mapping; T is taken as the mean since it has no baseline.
    """
    kind = model.controller
    buses = model.internal
    H_spec = sum(b.H for b in buses)
    D_base = sum(b.D for b in buses)
    K_base = sum(b.K for b in buses) if kind is ControllerKind.PI else None
    G_base = 1.0 / sum(1.0 / b.G for b in buses) if kind is ControllerKind.PLI else None
    T_spec = sum(b.T for b in buses) / len(buses) if kind is ControllerKind.PLI else None
    droop = D_base + model.external.D + (1.0 / G_base if G_base else 0.0)
    omega = 0.0 if kind is ControllerKind.PI else 1.0 / droop
    return BaselineParams(kind, H_spec, D_base, K_base, G_base, T_spec, omega)


def baseline_spec(model: GridModel) -> SpecModel:
    b = baseline_from_grid(model)
    return SpecModel.for_grid(model, H=b.H_spec, D=b.D_base, K=b.K_base, T=b.T_spec, G=b.G_base)


def grid_asymptotic_frequency(model: GridModel, dp_total: float) -> float:
    """Asymptotic frequency of any model (system or 2-bus spec grid) under a step."""
    kind = model.controller
    if kind is ControllerKind.PI:
        return 0.0
    droop = sum(b.D for b in model.buses)
    if kind is ControllerKind.PLI:
        droop += sum(1.0 / b.G for b in model.internal)
    if droop <= 0:
        raise DegenerateDamping(f"effective damping {droop} is not positive")
    return dp_total / droop
