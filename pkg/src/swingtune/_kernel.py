"""Compiled fixed-step RK4 over dual-number states.

Every scalar in the integrator is stored as a row of ``W = 1 + P`` lanes:
lane 0 is the value, lanes 1..P are tangents with respect to the seeded
parameters. Arithmetic below is ordinary dual-number arithmetic written out
lane by lane so numba can compile it. With ``W == 1`` the same code is a
plain value-only integrator.

State layout (rows of the state matrix)::

    [0, n)              rotor angles theta
    [n, 2n)             frequency deviations omega
    [2n, 2n+M)          controller state (PI accumulator or PLI leaky state)
    [.., ..+M)          actuator lag deviation (only when tau_act > 0)

The first ``M`` buses carry controllers; the last bus receives the demand
fluctuation.

All work happens inside one compiled driver: the right-hand side sits in
the RK4 stage loop rather than behind a function call, because passing a
dozen arrays per call costs more than the arithmetic for small grids.
"""

import numpy as np
from numba import njit

KIND_P = 0
KIND_PI = 1
KIND_PLI = 2

MODE_SAMPLES = 0
MODE_STATES = 1
MODE_RHS = 2

# no state of a sane run comes near this; larger magnitudes mean the
# integration has gone unstable even if every number is still finite
BLOW_UP = 1e8

# stage offsets into the half-step fluctuation grid and stage input weights
_FL_OFFSET = np.array([0, 1, 1, 2])
_STAGE_W = np.array([0.0, 0.5, 0.5, 1.0])


def state_size(n, m, kind, lag):
    size = 2 * n
    if kind != KIND_P:
        size += m
    if lag:
        size += m
    return size


@njit(cache=True)
def _drive(x0, fluct, h, n_steps, sample_every, obs, inv2h, damp, kgain, invt, ggain,
           p_net, e_from, e_to, e_b, kind, inv_tau, mode):
    n = inv2h.shape[0]
    m = kgain.shape[0]
    rows, w = x0.shape
    ctrl0 = 2 * n
    lag0 = ctrl0 + (m if kind != KIND_P else 0)
    n_edges = e_from.shape[0]

    x = x0.copy()
    y = x0.copy()
    ks = np.zeros((4, rows, w))
    acc = np.zeros((n, w))
    sn = np.zeros(n)
    cs = np.zeros(n)
    n_samples = n_steps // sample_every if mode == MODE_SAMPLES else 0
    samples = np.zeros((n_samples, w))
    states = np.zeros((n_steps + 1 if mode == MODE_STATES else 0, rows))
    if mode == MODE_STATES:
        for r in range(rows):
            states[0, r] = x[r, 0]
    if mode == MODE_RHS:
        n_steps = 1

    # per-line trig (sin, plus cos for tangents) or per-bus sin/cos with
    # angle-difference identities, whichever needs fewer calls
    per_line = n_edges <= (2 * n if w == 1 else n)

    fl_offset = _FL_OFFSET
    stage_w = _STAGE_W
    sixth = h / 6.0
    for s in range(n_steps):
        for st in range(4):
            # stage input y = x + c_st h k_{st-1}
            if st == 0:
                for r in range(rows):
                    for k in range(w):
                        y[r, k] = x[r, k]
            else:
                c = stage_w[st] * h
                for r in range(rows):
                    for k in range(w):
                        y[r, k] = x[r, k] + c * ks[st - 1, r, k]
            fl = fluct[2 * s + fl_offset[st]]

            # acc holds the power imbalance of each bus before dividing by 2H
            for i in range(n):
                acc[i, 0] = p_net[i]
                for k in range(1, w):
                    acc[i, k] = 0.0
                for k in range(w):
                    ks[st, i, k] = y[n + i, k]
                if not per_line:
                    sn[i] = np.sin(y[i, 0])
                    cs[i] = np.cos(y[i, 0])
            acc[n - 1, 0] -= fl

            for e in range(n_edges):
                i = e_from[e]
                j = e_to[e]
                if per_line:
                    d = y[i, 0] - y[j, 0]
                    sij = e_b[e] * np.sin(d)
                    cij = e_b[e] * np.cos(d) if w > 1 else 0.0
                else:
                    sij = e_b[e] * (sn[i] * cs[j] - cs[i] * sn[j])
                    cij = e_b[e] * (cs[i] * cs[j] + sn[i] * sn[j])
                acc[i, 0] -= sij
                acc[j, 0] += sij
                for k in range(1, w):
                    f = cij * (y[i, k] - y[j, k])
                    acc[i, k] -= f
                    acc[j, k] += f

            for i in range(n):
                wi0 = y[n + i, 0]
                d0 = damp[i, 0]
                acc[i, 0] -= d0 * wi0
                for k in range(1, w):
                    acc[i, k] -= d0 * y[n + i, k] + damp[i, k] * wi0

            if kind != KIND_P or inv_tau > 0.0:
                for i in range(m):
                    r = ctrl0 + i
                    # u = -K z (PI) or u = -y (PLI), routed through the lag when present
                    if inv_tau > 0.0:
                        dl = lag0 + i
                        for k in range(w):
                            if kind == KIND_PI:
                                uk = -kgain[i, 0] * y[r, k]
                                if k > 0:
                                    uk -= kgain[i, k] * y[r, 0]
                            elif kind == KIND_PLI:
                                uk = -y[r, k]
                            else:
                                uk = 0.0
                            ks[st, dl, k] = inv_tau * (uk - y[dl, k])
                            acc[i, k] += y[dl, k]
                    elif kind == KIND_PI:
                        kg = kgain[i, 0]
                        acc[i, 0] -= kg * y[r, 0]
                        for k in range(1, w):
                            acc[i, k] -= kg * y[r, k] + kgain[i, k] * y[r, 0]
                    else:
                        for k in range(w):
                            acc[i, k] -= y[r, k]

                    if kind == KIND_PI:
                        for k in range(w):
                            ks[st, r, k] = y[n + i, k]
                    elif kind == KIND_PLI:
                        # y' = (omega - G y) / T
                        g0 = ggain[i, 0]
                        y0 = y[r, 0]
                        q0 = y[n + i, 0] - g0 * y0
                        t0 = invt[i, 0]
                        ks[st, r, 0] = t0 * q0
                        for k in range(1, w):
                            qk = y[n + i, k] - (g0 * y[r, k] + ggain[i, k] * y0)
                            ks[st, r, k] = t0 * qk + invt[i, k] * q0

            for i in range(n):
                h0 = inv2h[i, 0]
                a0 = acc[i, 0]
                ks[st, n + i, 0] = h0 * a0
                for k in range(1, w):
                    ks[st, n + i, k] = h0 * acc[i, k] + inv2h[i, k] * a0

            if mode == MODE_RHS:
                return samples, states, ks[0].copy(), 0

        # one sum of magnitudes stands in for a per-row check on the value
        # lane; NaN fails the comparison
        chk = 0.0
        for r in range(rows):
            for k in range(w):
                x[r, k] += sixth * (ks[0, r, k] + 2.0 * ks[1, r, k] + 2.0 * ks[2, r, k] + ks[3, r, k])
            chk += abs(x[r, 0])
        if not chk < BLOW_UP:
            return samples, states, ks[0].copy(), s + 1
        if mode == MODE_STATES:
            for r in range(rows):
                states[s + 1, r] = x[r, 0]
        elif (s + 1) % sample_every == 0:
            idx = (s + 1) // sample_every - 1
            for k in range(w):
                samples[idx, k] = x[n + obs, k]
    for r in range(rows):
        for k in range(w):
            if not np.isfinite(x[r, k]):
                return samples, states, ks[0].copy(), n_steps
    return samples, states, ks[0].copy(), 0


def rhs_eval(x, fluct, inv2h, damp, kgain, invt, ggain, p_net, e_from, e_to, e_b, kind, inv_tau):
    """Right-hand side at ``x`` (rows x W) for a scalar fluctuation value."""
    fl = np.full(3, float(fluct))
    return _drive(np.ascontiguousarray(x, dtype=float), fl, 1.0, 1, 1, 0, inv2h, damp, kgain, invt, ggain,
                  p_net, e_from, e_to, e_b, kind, inv_tau, MODE_RHS)[2]


def integrate(x0, fluct, h, sample_every, n_samples, obs, inv2h, damp, kgain, invt, ggain,
              p_net, e_from, e_to, e_b, kind, inv_tau):
    """RK4 from ``x0`` (rows x W); returns sampled ``omega[obs]`` lanes and a status.

    ``fluct`` holds the external-bus fluctuation on the half-step grid, so
    ``fluct[2s]`` is at ``t = s h`` and ``fluct[2s + 1]`` at ``t = (s + 1/2) h``.
    Status is 0 on success, otherwise 1 + the step index at which the state
    stopped being finite or its value lane grew past ``BLOW_UP``.
    """
    samples, _, _, status = _drive(x0, fluct, h, sample_every * n_samples, sample_every, obs, inv2h, damp,
                                   kgain, invt, ggain, p_net, e_from, e_to, e_b, kind, inv_tau, MODE_SAMPLES)
    return samples, status


def integrate_states(x0, fluct, h, n_steps, inv2h, damp, kgain, invt, ggain,
                     p_net, e_from, e_to, e_b, kind, inv_tau):
    """Value-only RK4 that keeps the full state after every step."""
    _, states, _, status = _drive(x0[:, :1].copy(), fluct, h, n_steps, 1, 0, inv2h, damp, kgain, invt, ggain,
                                  p_net, e_from, e_to, e_b, kind, inv_tau, MODE_STATES)
    if status:
        return states[:status + 1], status
    return states, 0
