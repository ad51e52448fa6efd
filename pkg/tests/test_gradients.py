import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swingtune.baseline import baseline_spec
from swingtune.gradients import (
    AdamState, NonFiniteLoss, ParamVector, adam_step, apply_spec, apply_system, cos, exp, fd_grad,
    grad_loss, log, minimize, seed, sin, spec_vector, sqrt, system_names, system_vector,
)
from swingtune.grid import default_grid
from swingtune.scenarios import generate
from swingtune.sim import SimConfig
from swingtune.tuning import OutputMetric

SHORT = SimConfig(T_horizon=5.0, n_samples=500)


# dual numbers --------------------------------------------------------------

def test_dual_product_rule():
    x, y = seed([2.0, 3.0])
    z = x * y + x / y
    assert z.val == pytest.approx(6 + 2 / 3)
    assert np.allclose(z.der, [3 + 1 / 3, 2 - 2 / 9])


def test_dual_elementary_functions():
    (x,) = seed([0.7])
    for f, df in [(exp, math.exp), (sin, math.cos), (cos, lambda v: -math.sin(v)),
                  (log, lambda v: 1 / v), (sqrt, lambda v: 0.5 / math.sqrt(v))]:
        assert f(x).der[0] == pytest.approx(df(0.7), rel=1e-14)
    assert (x ** 3).der[0] == pytest.approx(3 * 0.49)
    assert (2.0 - x).der[0] == -1.0 and (1.0 / x).der[0] == pytest.approx(-1 / 0.49)


def test_ignored_parameter_has_zero_gradient():
    g = grad_loss(lambda v: v[0] * v[0], np.array([1.5, 4.0]))
    assert np.array_equal(g, [3.0, 0.0])


def test_non_finite_loss_raises():
    with pytest.raises(NonFiniteLoss):
        grad_loss(lambda v: v[0] * math.inf, np.array([1.0]))


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.1, 5), b=st.floats(-3, 3))
def test_dual_matches_finite_difference(a, b):
    f = lambda v: exp(v[0]) * sin(v[1]) + v[0] ** 2 / (1 + v[1] * v[1])
    x = np.array([math.log(a), b])
    assert np.allclose(grad_loss(f, x), fd_grad(lambda z: f(list(z)), x, 1e-6), rtol=1e-6, atol=1e-8)


# parameter vectors ---------------------------------------------------------

def test_param_vector_round_trip():
    p = ParamVector.encode(["a", "b"], [0.5, 20.0])
    assert np.allclose(p.decode(), [0.5, 20.0])
    assert p.as_dict() == pytest.approx({"a": 0.5, "b": 20.0})
    with pytest.raises(ValueError):
        ParamVector.encode(["a"], [-1.0])


def test_system_vector_order():
    g = default_grid("pli", n_internal=3)
    assert system_names("pli", 3) == ("D0", "D1", "D2", "T0", "T1", "T2", "G0", "G1", "G2")
    p = system_vector(g)
    back = apply_system(g, p)
    assert [b.G for b in back.internal] == pytest.approx([b.G for b in g.internal])
    bumped = apply_system(g, p.with_x(p.x + np.log(2.0)))
    assert bumped.internal[1].T == pytest.approx(2 * g.internal[1].T)


def test_spec_vector_names():
    spec = baseline_spec(default_grid("pi"))
    q = spec_vector(spec)
    assert q.names == ("H", "D", "K")
    assert apply_spec(spec, q.with_x(q.x + math.log(3))).K == pytest.approx(3 * spec.K)


# metric gradients against finite differences -------------------------------

def _perturbed(kind):
    g = default_grid(kind, n_internal=2)
    p = system_vector(g)
    rng = np.random.default_rng(1)
    return apply_system(g, p.with_x(p.x + rng.normal(0, 0.3, len(p))))


@pytest.mark.parametrize("kind", ["p", "pi", "pli"])
@pytest.mark.parametrize("scenario", ["modes", "demand"])
def test_joint_gradient_matches_finite_differences(kind, scenario):
    g = _perturbed(kind)
    spec = baseline_spec(g)
    params = {"horizon": SHORT.T_horizon, "dt": SHORT.h} if scenario == "demand" else {"amp_scale": 0.2}
    sset = generate(scenario, 3, 2, **params)
    metric = OutputMetric(g, spec, sset, SHORT)
    loss = metric.joint_loss()
    x = np.concatenate([metric.p0().x, metric.q0().x + 0.1])
    ad = grad_loss(loss, x)
    fd = fd_grad(loss, x, 1e-5)
    scale = np.max(np.abs(fd))
    assert scale > 0
    assert np.allclose(ad, fd, rtol=1e-4, atol=1e-6 * scale)


def test_gradient_is_linear_over_scenarios():
    g = _perturbed("pi")
    spec = baseline_spec(g)
    sset = generate("modes", 5, 3)
    full = OutputMetric(g, spec, sset, SHORT)
    x = np.concatenate([full.p0().x, full.q0().x])
    g_full = grad_loss(full.joint_loss(), x)
    parts = [grad_loss(OutputMetric(g, spec, [s], SHORT).joint_loss(), x) for s in sset]
    assert np.allclose(g_full, np.mean(parts, axis=0), rtol=1e-12, atol=1e-20)


# ADAM ----------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameters():
    s = adam_step(AdamState.start([1.0, -2.0]), np.zeros(2), lr=0.1)
    assert np.array_equal(s.x, [1.0, -2.0])


def test_adam_first_step_is_lr_times_sign():
    s = adam_step(AdamState.start([0.0, 0.0, 0.0]), np.array([3.0, -1e-3, 50.0]), lr=0.01)
    assert np.allclose(s.x, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.start([0.0]), np.zeros(2), lr=0.1)


def test_minimize_bowl():
    x0 = np.array([1.0, -2.0, 0.5])
    res = minimize(lambda x: (float(x @ x), 2 * x), x0, lr=0.05, iters=500, patience=500)
    assert res.value < 1e-6 * float(x0 @ x0)
    assert res.history[0] == pytest.approx(float(x0 @ x0))


def test_minimize_keeps_best_before_blow_up():
    def f(x):
        if x[0] < 0.5:
            return math.nan, np.zeros(1)
        return float(x[0] ** 2), 2 * x
    res = minimize(f, np.array([1.0]), lr=0.1, iters=100)
    assert res.stopped == "non-finite"
    assert res.value == pytest.approx(min(res.history))
    assert res.x[0] >= 0.5


def test_minimize_converges_on_plateau():
    res = minimize(lambda x: (1.0, np.zeros(1)), np.array([0.0]), patience=5)
    assert res.stopped == "converged" and res.iterations == 5


def test_minimize_stops_at_reduction():
    x0 = np.array([1.0, -2.0, 0.5])
    res = minimize(lambda x: (float(x @ x), 2 * x), x0, lr=0.05, iters=500, patience=500, reduction=0.1)
    assert res.stopped == "reduced"
    assert res.value <= 0.1 * res.history[0] < res.history[-2]


def test_minimize_passes_moment_rates():
    f = lambda x: (float(x @ x), 2 * x)
    res = minimize(f, np.array([1.0, -1.0]), lr=0.1, iters=3, patience=100, beta1=0.5, beta2=0.9)
    s = AdamState.start([1.0, -1.0])
    for _ in range(3):
        s = adam_step(s, 2 * s.x, 0.1, 0.5, 0.9)
    assert res.history[-1] == pytest.approx(float(s.x @ s.x))


def test_minimize_retries_from_best_after_blow_up():
    calls = []

    def f(x):
        calls.append(float(x[0]))
        if x[0] < 0.5:
            return math.nan, np.zeros(1)
        return float(x[0] ** 2), 2 * x
    plain = minimize(f, np.array([1.0]), lr=0.1, iters=100)
    calls.clear()
    retried = minimize(f, np.array([1.0]), lr=0.1, iters=100, retries=3)
    assert sum(c < 0.5 for c in calls) == 4
    assert retried.stopped == "non-finite"
    assert 0.5 <= retried.x[0] <= plain.x[0]
