import json

import numpy as np
import pytest

from swingtune.baseline import baseline_spec
from swingtune.gradients import ParamVector
from swingtune.grid import SpecModel, default_grid
from swingtune.scenarios import generate
from swingtune.sim import SimConfig
from swingtune.tuning import (
    DistanceReport, OptConfig, OutputMetric, PipelineConfig, PipelineError, behavioral_distance, joint_tune,
    output_metric, result_to_dict, run_pipeline,
)

SHORT = SimConfig(T_horizon=5.0, n_samples=500)
FEW = OptConfig(lr=0.05, q_iters=15, joint_iters=15)


def _constant_runs(metric, values):
    return [np.full((5000, 1), v) for v in values]


@pytest.mark.parametrize("diffs, expected", [((0.01,), 0.5), ((0.0, 0.02), 1.0)])
def test_metric_arithmetic(monkeypatch, diffs, expected):
    g = default_grid("p", n_internal=2)
    sset = generate("modes", 1, len(diffs))
    metric = OutputMetric(g, baseline_spec(g), sset)
    monkeypatch.setattr(metric, "system_runs", lambda p_x, grad: _constant_runs(metric, diffs))
    monkeypatch.setattr(metric, "spec_runs", lambda q_x, grad: _constant_runs(metric, [0.0] * len(diffs)))
    assert metric.report().value == pytest.approx(expected, rel=1e-12)


def test_report_statistics():
    r = DistanceReport.from_losses([1.0, 2.0, 4.0])
    assert r.value == pytest.approx(7 / 3)
    assert r.std == pytest.approx(np.std([1, 2, 4], ddof=1))
    assert DistanceReport.from_losses([3.0]).std == 0.0


def _spec_as_system(kind):
    """A system that is itself a one-bus specification, so the true q is known."""
    spec = baseline_spec(default_grid(kind, n_internal=2))
    return spec.to_grid(), spec


@pytest.mark.parametrize("kind", ["p", "pli"])
def test_identical_models_have_zero_metric(kind):
    g, spec = _spec_as_system(kind)
    sset = generate("modes", 2, 2)
    assert output_metric(g, spec, None, None, sset, SHORT).value <= 1e-20


def test_behavioral_distance_at_truth_stays_zero():
    g, spec = _spec_as_system("pi")
    sset = generate("modes", 2, 2)
    rep, q = behavioral_distance(g, spec, None, None, sset, FEW, SHORT)
    assert rep.value <= 1e-12


def test_behavioral_distance_never_worse_than_start():
    g = default_grid("pli", n_internal=2)
    spec = baseline_spec(g)
    sset = generate("modes", 3, 3)
    metric = OutputMetric(g, spec, sset, SHORT)
    start = metric.report().value
    rep, q = behavioral_distance(g, spec, None, None, sset, FEW, SHORT, metric=metric)
    assert rep.value <= start + 1e-12
    assert rep.value < start


def test_joint_not_worse_than_q_only():
    g = default_grid("pi", n_internal=2)
    spec = baseline_spec(g)
    sset = generate("modes", 4, 3)
    metric = OutputMetric(g, spec, sset, SHORT)
    d, q = behavioral_distance(g, spec, None, None, sset, FEW, SHORT, metric=metric)
    joint, p_opt, q_opt = joint_tune(g, spec, None, q, sset, FEW, SHORT, metric=metric)
    assert joint.value <= d.value + 1e-12


def test_joint_at_optimum_does_not_move():
    g, spec = _spec_as_system("p")
    sset = generate("modes", 5, 2)
    rep, p, q = joint_tune(g, SpecModel.for_grid(g, H=spec.H, D=spec.D), None, None, sset, FEW, SHORT)
    assert rep.value <= 1e-12


def test_per_scenario_q_list():
    g = default_grid("p", n_internal=2)
    spec = baseline_spec(g)
    sset = generate("modes", 6, 2)
    q = OutputMetric(g, spec, sset, SHORT).q0()
    shared = output_metric(g, spec, None, q, sset, SHORT)
    listed = output_metric(g, spec, None, [q, q], sset, SHORT)
    assert listed.value == pytest.approx(shared.value, rel=1e-14)
    bent = output_metric(g, spec, None, [q, q.with_x(q.x + 0.2)], sset, SHORT)
    assert bent.per_scenario[0] == pytest.approx(shared.per_scenario[0], rel=1e-14)
    assert bent.per_scenario[1] != pytest.approx(shared.per_scenario[1])
    with pytest.raises(ValueError):
        output_metric(g, spec, None, [q], sset, SHORT)


def test_per_scenario_descent_moves_blocks_independently():
    g = default_grid("p", n_internal=2)
    spec = baseline_spec(g)
    sset = generate("modes", 7, 2)
    metric = OutputMetric(g, spec, sset, SHORT, per_scenario_q=True)
    start = metric.report().value
    per, q = behavioral_distance(g, spec, None, None, sset, FEW, SHORT, metric=metric)
    assert len(q) == 2 * 2 and q.names[:2] == ("H@0", "D@0")
    assert per.value <= start
    assert not np.allclose(q.x[:2], q.x[2:])


def _small_config(**kw):
    base = dict(controller="pli", n_internal=2, n_samples=3, sim=SHORT, opt=FEW, seed=11)
    base.update(kw)
    return PipelineConfig(**base)


def test_pipeline_contract():
    res = run_pipeline(_small_config())
    doc = result_to_dict(res)
    for key in ("o_base", "d_init", "d_end", "d_re", "p_opt", "q_opt"):
        assert key in doc
    assert res.seeds["train"] != res.seeds["resample"]
    assert res.o_base.value >= res.d_init.value >= res.d_end.value
    assert doc["p_opt"]["natural"] == pytest.approx(np.exp(doc["p_opt"]["log"]).tolist())
    assert doc["config"]["model"]["controller"] == "pli"
    json.dumps(doc)


def test_pipeline_is_reproducible():
    a = result_to_dict(run_pipeline(_small_config(controller="p")))
    b = result_to_dict(run_pipeline(_small_config(controller="p")))
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_pipeline_demand_and_reoptimized_resample():
    res = run_pipeline(_small_config(scenario="demand", reoptimize_resampled=True, per_scenario_q=True))
    assert len(res.q_opt) == 3 * 4 and np.isfinite(res.d_re.value)


def test_pipeline_failure_reports_step():
    # exporting 3 p.u. over a 1 p.u. line has no operating point
    cfg = _small_config(controller="p", grid={"export": 3.0})
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg)
    assert info.value.step == "baseline"
    assert info.value.partial == {}


def test_param_vector_rejects_bad_shape():
    with pytest.raises(ValueError):
        ParamVector(("a", "b"), [0.0])
