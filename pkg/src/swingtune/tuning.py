"""Output metric, behavioral distance, joint tuning and the tuning pipeline.

The output metric sums squared differences between the PCC frequency of the
system and the frequency of the specification at every sample, and averages
that sum over the scenarios. Its gradient comes from dual lanes carried
through the compiled integrator: one lane per system parameter in the
system run, one per specification parameter in the specification run.
Scenarios are always reduced in index order so results are reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from swingtune import scenarios as scen
from swingtune.baseline import baseline_spec
from swingtune.gradients import (
    NonFiniteLoss, ParamVector, apply_spec, apply_system, minimize, spec_seeds, spec_vector,
    system_seeds, system_vector,
)
from swingtune.grid import ControllerKind, GridModel, SpecModel, default_grid
from swingtune.sim import IntegrationFailure, SimConfig, fluct_grid, integrate_dual, kernel_args

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DistanceReport:
    value: float
    std: float
    per_scenario: np.ndarray

    @classmethod
    def from_losses(cls, losses) -> "DistanceReport":
        losses = np.asarray(losses, dtype=float)
        std = float(np.std(losses, ddof=1)) if losses.size > 1 else 0.0
        return cls(float(np.mean(losses)), std, losses)

    def as_dict(self) -> dict:
        return {"value": self.value, "std": self.std, "per_scenario": self.per_scenario.tolist()}


class OutputMetric:
    """``o(p, q)`` for a fixed system, specification and scenario set.

    ``q`` is shared by all scenarios unless ``per_scenario_q`` is set, in
    which case the specification vector is the concatenation of one block per
    scenario.
    """

    def __init__(self, model: GridModel, spec: SpecModel, scenario_set, cfg: SimConfig = SimConfig(),
                 per_scenario_q: bool = False):
        if len(scenario_set) < 1:
            raise ValueError("need at least one scenario")
        self.model = model
        self.spec = spec
        self.scenarios = scenario_set
        self.cfg = cfg
        self.per_scenario_q = per_scenario_q
        self.fluct = [fluct_grid(s, cfg) for s in scenario_set]
        self._sys_x0 = kernel_args(model).x0[:, 0]
        self._spec_x0 = kernel_args(spec.to_grid()).x0[:, 0]
        self._sys_cache = None

    @property
    def n(self) -> int:
        return len(self.fluct)

    @property
    def nq(self) -> int:
        return len(self.spec.controller.spec_params)

    def p0(self) -> ParamVector:
        return system_vector(self.model)

    def q0(self) -> ParamVector:
        q = spec_vector(self.spec)
        if not self.per_scenario_q:
            return q
        names = tuple(f"{name}@{k}" for k in range(self.n) for name in q.names)
        return ParamVector(names, np.tile(q.x, self.n))

    def _q_block(self, q_x, k):
        if self.per_scenario_q:
            return q_x[k * self.nq:(k + 1) * self.nq]
        return q_x

    def system_runs(self, p_x, grad: bool):
        """Sampled PCC frequency lanes per scenario for system parameters ``p_x``."""
        base = self.p0()
        grid = apply_system(self.model, base.with_x(p_x))
        if not grad:
            key = np.asarray(p_x, dtype=float).tobytes()
            if self._sys_cache is not None and self._sys_cache[0] == key:
                return self._sys_cache[1]
        seeds = system_seeds(grid) if grad else None
        args = kernel_args(grid, seeds, 1 + len(base) if grad else 1, x0=self._sys_x0)
        runs = [integrate_dual(args, f, self.cfg, k) for k, f in enumerate(self.fluct)]
        if not grad:
            self._sys_cache = (key, runs)
        return runs

    def spec_runs(self, q_x, grad: bool):
        names = self.spec.controller.spec_params
        runs = []
        for k, f in enumerate(self.fluct):
            spec = apply_spec(self.spec, ParamVector(names, self._q_block(q_x, k)))
            args = kernel_args(spec.to_grid(), spec_seeds(spec) if grad else None,
                               1 + self.nq if grad else 1, x0=self._spec_x0)
            runs.append(integrate_dual(args, f, self.cfg, k))
        return runs

    def evaluate(self, p_x, q_x, grad_p: bool = False, grad_q: bool = False):
        """Per-scenario losses and the gradients of their mean."""
        sys_runs = self.system_runs(p_x, grad_p)
        spec_runs = self.spec_runs(q_x, grad_q)
        losses = np.empty(self.n)
        gp = np.zeros(len(p_x)) if grad_p else None
        gq = np.zeros(len(q_x)) if grad_q else None
        for k in range(self.n):
            diff = sys_runs[k][:, 0] - spec_runs[k][:, 0]
            losses[k] = float(diff @ diff)
            if grad_p:
                gp += 2.0 * (diff @ sys_runs[k][:, 1:])
            if grad_q:
                g = -2.0 * (diff @ spec_runs[k][:, 1:])
                if self.per_scenario_q:
                    gq[k * self.nq:(k + 1) * self.nq] += g
                else:
                    gq += g
        if grad_p:
            gp /= self.n
        if grad_q:
            gq /= self.n
        return losses, gp, gq

    def report(self, p_x=None, q_x=None) -> DistanceReport:
        p_x = self.p0().x if p_x is None else p_x
        q_x = self.q0().x if q_x is None else q_x
        losses, _, _ = self.evaluate(p_x, q_x)
        return DistanceReport.from_losses(losses)

    # scalar views for grad_loss / fd_grad
    def q_loss(self, p_x):
        metric = self

        class _QLoss:
            def __call__(self, q_x):
                return float(np.mean(metric.evaluate(p_x, q_x)[0]))

            def value_and_grad(self, q_x):
                losses, _, gq = metric.evaluate(p_x, q_x, grad_q=True)
                return float(np.mean(losses)), gq

        return _QLoss()

    def joint_loss(self):
        metric = self
        npar = len(self.p0())

        class _JointLoss:
            def __call__(self, x):
                return float(np.mean(metric.evaluate(x[:npar], x[npar:])[0]))

            def value_and_grad(self, x):
                losses, gp, gq = metric.evaluate(x[:npar], x[npar:], grad_p=True, grad_q=True)
                return float(np.mean(losses)), np.concatenate([gp, gq])

        return _JointLoss()


@dataclass(frozen=True)
class OptConfig:
    lr: float = 0.05
    q_iters: int = 300
    joint_iters: int = 1000
    patience: int = 25
    rel_tol: float = 1e-6
    # stop once the loss has fallen to this fraction of its starting value
    reduction: float = 1e-3
    beta1: float = 0.9
    # a short second-moment memory keeps steps from shrinking as the gradients
    # fade along the narrow valleys of the joint problem
    beta2: float = 0.95
    # restarts from the best point, at half the step, after a non-finite loss
    retries: int = 4


def output_metric(model, spec, p: Optional[ParamVector] = None, q=None, scenario_set=None,
                  cfg: SimConfig = SimConfig(), per_scenario_q: bool = False) -> DistanceReport:
    """Scenario-averaged squared PCC/spec frequency mismatch.

    ``q`` may be one ParamVector shared by every scenario or a list with one
    ParamVector per scenario.
    """
    if isinstance(q, (list, tuple)):
        if len(q) != len(scenario_set):
            raise ValueError("need one specification vector per scenario")
        per_scenario_q = True
        q = ParamVector(sum((qi.names for qi in q), ()), np.concatenate([qi.x for qi in q]))
    metric = OutputMetric(model, spec, scenario_set, cfg, per_scenario_q)
    return metric.report(None if p is None else p.x, None if q is None else q.x)


def _descend(fun, x0, iters, opt: OptConfig):
    res = minimize(fun.value_and_grad, x0, lr=opt.lr, iters=iters, patience=opt.patience, rel_tol=opt.rel_tol,
                   reduction=opt.reduction, beta1=opt.beta1, beta2=opt.beta2,
                   retries=opt.retries)
    log.info("descent: %d iterations, stopped by %s, best %.6g", res.iterations, res.stopped, res.value)
    return res


def behavioral_distance(model, spec, p: Optional[ParamVector], q_init: Optional[ParamVector], scenario_set,
                        opt: OptConfig = OptConfig(), cfg: SimConfig = SimConfig(),
                        per_scenario_q: bool = False, metric: Optional[OutputMetric] = None):
    """Minimum of the output metric over the specification parameters only.

    Returns the report at the best ``q`` seen and that ``q``.
    """
    metric = metric or OutputMetric(model, spec, scenario_set, cfg, per_scenario_q)
    p_x = metric.p0().x if p is None else p.x
    q = metric.q0() if q_init is None else q_init
    res = _descend(metric.q_loss(p_x), q.x, opt.q_iters, opt)
    q_best = q.with_x(res.x)
    return metric.report(p_x, q_best.x), q_best


def joint_tune(model, spec, p_init: Optional[ParamVector], q_init: Optional[ParamVector], scenario_set,
               opt: OptConfig = OptConfig(), cfg: SimConfig = SimConfig(),
               per_scenario_q: bool = False, metric: Optional[OutputMetric] = None):
    """Simultaneous descent on system and specification parameters."""
    metric = metric or OutputMetric(model, spec, scenario_set, cfg, per_scenario_q)
    p = metric.p0() if p_init is None else p_init
    q = metric.q0() if q_init is None else q_init
    res = _descend(metric.joint_loss(), np.concatenate([p.x, q.x]), opt.joint_iters, opt)
    p_opt, q_opt = p.with_x(res.x[:len(p)]), q.with_x(res.x[len(p):])
    return metric.report(p_opt.x, q_opt.x), p_opt, q_opt


@dataclass(frozen=True)
class PipelineConfig:
    controller: str = "p"
    n_internal: int = 5
    grid: dict = field(default_factory=dict)
    model: Optional[GridModel] = None
    scenario: str = "modes"
    scenario_params: dict = field(default_factory=dict)
    seed: int = 42
    resample_seed: Optional[int] = None
    n_samples: int = 20
    sim: SimConfig = SimConfig()
    opt: OptConfig = OptConfig()
    per_scenario_q: bool = False
    reoptimize_resampled: bool = False

    def build_model(self) -> GridModel:
        if self.model is not None:
            return self.model
        return default_grid(ControllerKind(self.controller), self.n_internal, **self.grid)

    def scenario_set(self, seed: int) -> scen.ScenarioSet:
        params = dict(self.scenario_params)
        if self.scenario == "demand":
            params.setdefault("horizon", self.sim.T_horizon)
            params.setdefault("dt", self.sim.h)
        return scen.generate(self.scenario, seed, self.n_samples, **params)

    @property
    def seed_re(self) -> int:
        return self.seed + 1 if self.resample_seed is None else self.resample_seed


class PipelineError(RuntimeError):
    def __init__(self, step: str, cause: Exception, partial: dict):
        super().__init__(f"pipeline step '{step}' failed: {cause}")
        self.step = step
        self.partial = partial


@dataclass(frozen=True, eq=False)
class PipelineResult:
    o_base: DistanceReport
    d_init: DistanceReport
    d_end: DistanceReport
    d_re: DistanceReport
    p_opt: ParamVector
    q_opt: ParamVector
    q_init: ParamVector
    p_base: ParamVector
    q_base: ParamVector
    seeds: dict
    config: dict

    def ratio(self) -> float:
        return self.d_end.value / self.d_init.value if self.d_init.value > 0 else 0.0


def _shared_q(q: ParamVector, nq: int, names) -> ParamVector:
    """Collapse per-scenario blocks to one vector (mean in log space)."""
    return ParamVector(names, q.x.reshape(-1, nq).mean(axis=0))


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Draw, baseline, initial distance, joint tuning, tuned distance, resampled distance."""
    partial: dict = {}
    step = "draw"
    try:
        model = config.build_model()
        train = config.scenario_set(config.seed)

        step = "baseline"
        spec = baseline_spec(model)
        metric = OutputMetric(model, spec, train, config.sim, config.per_scenario_q)
        p_base, q_base = metric.p0(), metric.q0()
        partial["o_base"] = o_base = metric.report(p_base.x, q_base.x)

        step = "initial distance"
        d_init, q_init = behavioral_distance(model, spec, p_base, q_base, train, config.opt,
                                             config.sim, config.per_scenario_q, metric)
        partial["d_init"] = d_init

        step = "tuning"
        _, p_opt, q_opt = joint_tune(model, spec, p_base, q_init, train, config.opt,
                                     config.sim, config.per_scenario_q, metric)

        step = "tuned distance"
        partial["d_end"] = d_end = metric.report(p_opt.x, q_opt.x)

        step = "resampled distance"
        fresh = scen.resample(train, config.seed_re)
        q_shared = q_opt
        if config.per_scenario_q:
            q_shared = _shared_q(q_opt, metric.nq, spec.controller.spec_params)
        tuned_model = apply_system(model, p_opt)
        re_metric = OutputMetric(tuned_model, spec, fresh, config.sim, config.per_scenario_q)
        if config.reoptimize_resampled:
            d_re, _ = behavioral_distance(tuned_model, spec, None, _tile(q_shared, re_metric), fresh,
                                          config.opt, config.sim, config.per_scenario_q, re_metric)
        else:
            d_re = re_metric.report(None, _tile(q_shared, re_metric).x)
    except (IntegrationFailure, NonFiniteLoss, ArithmeticError, ValueError, RuntimeError) as exc:
        raise PipelineError(step, exc, partial) from exc

    return PipelineResult(
        o_base=o_base, d_init=d_init, d_end=d_end, d_re=d_re,
        p_opt=p_opt, q_opt=q_opt, q_init=q_init, p_base=p_base, q_base=q_base,
        seeds={"train": config.seed, "resample": config.seed_re},
        config=config_snapshot(config),
    )


def _tile(q: ParamVector, metric: OutputMetric) -> ParamVector:
    if not metric.per_scenario_q:
        return q
    return ParamVector(metric.q0().names, np.tile(q.x, metric.n))


def config_snapshot(config: PipelineConfig) -> dict:
    from dataclasses import asdict

    snap = {k: v for k, v in asdict(config).items() if k != "model"}
    snap["seed_re"] = config.seed_re
    model = config.build_model()
    snap["model"] = {
        "controller": model.controller.value,
        "pcc_index": model.pcc_index,
        "tau_act": model.tau_act,
        "buses": [asdict(b) for b in model.buses],
        "coupling": np.asarray(model.coupling).tolist(),
    }
    return snap


def result_to_dict(res: PipelineResult) -> dict:
    def vec(p: ParamVector) -> dict:
        return {"names": list(p.names), "log": p.x.tolist(), "natural": p.decode().tolist()}

    return {
        "o_base": res.o_base.as_dict(),
        "d_init": res.d_init.as_dict(),
        "d_end": res.d_end.as_dict(),
        "d_re": res.d_re.as_dict(),
        "p_opt": vec(res.p_opt),
        "q_opt": vec(res.q_opt),
        "p_base": vec(res.p_base),
        "q_base": vec(res.q_base),
        "q_init": vec(res.q_init),
        "seeds": dict(res.seeds),
        "config": res.config,
    }
