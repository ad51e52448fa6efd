"""Forward-mode derivatives, a finite-difference oracle, and ADAM.

Tunable parameters live in log space so that descent never produces a
nonpositive gain. The heavy losses (see :mod:`swingtune.tuning`) push dual
lanes through the compiled integrator and expose ``value_and_grad``; any
other loss written with ordinary arithmetic is differentiated here with the
:class:`Dual` type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from swingtune.grid import ControllerKind, GridModel, SpecModel
from swingtune.sim import IntegrationFailure


class NonFiniteLoss(FloatingPointError):
    pass


class Dual:
    """Scalar ``val + der . eps`` with a vector of tangent directions."""

    __slots__ = ("val", "der")

    def __init__(self, val, der):
        self.val = float(val)
        self.der = np.asarray(der, dtype=float)

    def _lift(self, other):
        if isinstance(other, Dual):
            return other
        return Dual(other, np.zeros_like(self.der))

    def __add__(self, other):
        o = self._lift(other)
        return Dual(self.val + o.val, self.der + o.der)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Dual(self.val - o.val, self.der - o.der)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __mul__(self, other):
        o = self._lift(other)
        return Dual(self.val * o.val, self.val * o.der + o.val * self.der)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        return Dual(self.val / o.val, (self.der * o.val - self.val * o.der) / (o.val * o.val))

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, k):
        if isinstance(k, Dual):
            return exp(k * log(self))
        return Dual(self.val ** k, k * self.val ** (k - 1) * self.der)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r})"


def _unary(f, df):
    def op(a):
        if isinstance(a, Dual):
            return Dual(f(a.val), df(a.val) * a.der)
        return f(a)

    return op


exp = _unary(math.exp, math.exp)
log = _unary(math.log, lambda v: 1.0 / v)
sin = _unary(math.sin, math.cos)
cos = _unary(math.cos, lambda v: -math.sin(v))
sqrt = _unary(math.sqrt, lambda v: 0.5 / math.sqrt(v))


def seed(x: Sequence[float]) -> list:
    """One dual per coordinate, each carrying its own unit tangent."""
    eye = np.eye(len(x))
    return [Dual(v, eye[i]) for i, v in enumerate(x)]


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Ordered tunable parameters stored as logarithms.

    System vectors are ordered by field then bus (``D0..D{M-1}``, then
    ``K*`` or ``T*``, ``G*``); specification vectors are ``H, D[, K | T, G]``.
    """

    names: tuple
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "x", np.array(self.x, dtype=float))
        if self.x.shape != (len(self.names),):
            raise ValueError("one log-value per name required")

    @classmethod
    def encode(cls, names, values) -> "ParamVector":
        values = np.asarray(values, dtype=float)
        if np.any(values <= 0):
            raise ValueError("tunable parameters must be positive")
        return cls(names, np.log(values))

    def decode(self) -> np.ndarray:
        return np.exp(self.x)

    def with_x(self, x) -> "ParamVector":
        return ParamVector(self.names, x)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.decode().tolist()))

    def __len__(self):
        return len(self.names)


def system_names(kind: ControllerKind, n_internal: int) -> tuple:
    return tuple(f"{f}{i}" for f in ControllerKind(kind).bus_params for i in range(n_internal))


def system_vector(model: GridModel) -> ParamVector:
    kind = model.controller
    values = [getattr(b, f) for f in kind.bus_params for b in model.internal]
    return ParamVector.encode(system_names(kind, model.n_internal), values)


def apply_system(model: GridModel, p: ParamVector) -> GridModel:
    fields = model.controller.bus_params
    m = model.n_internal
    vals = p.decode()
    buses = []
    for i, b in enumerate(model.internal):
        buses.append(replace(b, **{f: float(vals[j * m + i]) for j, f in enumerate(fields)}))
    return model.with_internal(buses)


def system_seeds(model: GridModel) -> dict:
    """Kernel seed map: parameter ``j`` of the system vector goes to lane ``j + 1``."""
    m = model.n_internal
    return {(f, i): j * m + i + 1 for j, f in enumerate(model.controller.bus_params) for i in range(m)}


def spec_vector(spec: SpecModel) -> ParamVector:
    names = spec.controller.spec_params
    return ParamVector.encode(names, [getattr(spec, f) for f in names])


def apply_spec(spec: SpecModel, q: ParamVector) -> SpecModel:
    return replace(spec, **{f: float(v) for f, v in zip(spec.controller.spec_params, q.decode())})


def spec_seeds(spec: SpecModel) -> dict:
    return {(f, 0): j + 1 for j, f in enumerate(spec.controller.spec_params)}


def grad_loss(loss: Callable, at) -> np.ndarray:
    """Gradient of a scalar loss at ``at`` (a ParamVector or a plain array).

    Losses with a ``value_and_grad`` method are trusted to differentiate
    themselves; anything else is evaluated on seeded :class:`Dual` inputs.
    """
    x = at.x if isinstance(at, ParamVector) else np.asarray(at, dtype=float)
    if hasattr(loss, "value_and_grad"):
        val, grad = loss.value_and_grad(x)
    else:
        out = loss(seed(x))
        if not isinstance(out, Dual):
            val, grad = float(out), np.zeros(len(x))
        else:
            val, grad = out.val, out.der
    grad = np.asarray(grad, dtype=float)
    if not (np.isfinite(val) and np.all(np.isfinite(grad))):
        raise NonFiniteLoss(f"loss {val} or its gradient is not finite")
    return grad


def fd_grad(loss: Callable, at, step: float = 1e-6) -> np.ndarray:
    """Central finite differences, the independent check on :func:`grad_loss`."""
    x = at.x if isinstance(at, ParamVector) else np.asarray(at, dtype=float)
    g = np.zeros(len(x))
    for j in range(len(x)):
        e = np.zeros(len(x))
        e[j] = step
        g[j] = (float(loss(x + e)) - float(loss(x - e))) / (2.0 * step)
    return g


@dataclass(frozen=True)
class AdamState:
    x: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def start(cls, x) -> "AdamState":
        x = np.array(x, dtype=float)
        return cls(x, np.zeros_like(x), np.zeros_like(x), 0)


def adam_step(state: AdamState, grad, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.x.shape:
        raise ValueError("gradient shape does not match the parameters")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    x = state.x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(x, m, v, t)


@dataclass(frozen=True)
class DescentResult:
    x: np.ndarray
    value: float
    history: tuple
    iterations: int
    stopped: str


def minimize(value_and_grad: Callable, x0, lr: float = 0.02, iters: int = 300,
             patience: int = 25, rel_tol: float = 1e-6, reduction: float = 0.0,
             beta1: float = 0.9, beta2: float = 0.999, retries: int = 0) -> DescentResult:
    """ADAM descent keeping the best point seen.

    Stops after ``iters`` steps, when the best value improved by less than
    ``rel_tol`` (relative) over the last ``patience`` evaluations, or once the
    best value is at most ``reduction`` times the starting value. A
    non-finite loss or gradient (or one whose square overflows) restarts ADAM
    from the best iterate with half the step size and a fresh patience
    window, at most ``retries`` times; after that descent stops and the best
    finite iterate is returned.
    """
    state = AdamState.start(x0)
    best_x, best_val, best_grad = state.x.copy(), math.inf, None
    history = []
    window = 0
    stopped = "iterations"
    for it in range(iters + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val, grad = value_and_grad(state.x)
                ok = np.isfinite(val) and grad is not None and np.all(np.isfinite(np.square(grad)))
        except (FloatingPointError, IntegrationFailure):
            ok = False
        if not ok:
            if not history:
                raise NonFiniteLoss("loss is not finite at the starting point")
            if retries > 0 and it < iters:
                retries -= 1
                lr *= 0.5
                window = len(history)
                state = adam_step(AdamState.start(best_x), best_grad, lr, beta1, beta2)
                continue
            stopped = "non-finite"
            break
        history.append(float(val))
        if val < best_val:
            best_val, best_x, best_grad = float(val), state.x.copy(), np.asarray(grad, dtype=float)
        if best_val <= reduction * history[0]:
            stopped = "reduced"
            break
        if len(history) - window > patience:
            prior = min(history[window:-patience])
            if prior - best_val <= rel_tol * abs(prior):
                stopped = "converged"
                break
        if it == iters:
            break
        state = adam_step(state, grad, lr, beta1, beta2)
    return DescentResult(best_x, best_val, tuple(history), len(history) - 1, stopped)
