"""Inner loops that dominate simulation time.

Each kernel is written once and runs either JIT-compiled or as plain numpy
(see :mod:`cafedsim._accel`).  Bodies stick to the numpy subset numba supports
and use explicit loop orders for reductions so both paths produce identical
bits.
"""

from __future__ import annotations

import numpy as np

from ._accel import njit


@njit
def markov_walk(u, p_stay_active, p_stay_inactive, pi_active):
    """Simulate independent two-state chains from pre-drawn uniforms.

    ``u`` has shape (n_rounds, n_clients).  Row 0 is drawn from the stationary
    law (active iff ``u[0, k] < pi_active[k]``); row t >= 1 stays/enters the
    active state iff ``u[t, k]`` falls below the relevant transition
    probability.
    """
    n_rounds, n = u.shape
    out = np.empty((n_rounds, n), dtype=np.bool_)
    if n_rounds == 0:
        return out
    p_enter = 1.0 - p_stay_inactive
    out[0] = u[0] < pi_active
    for t in range(1, n_rounds):
        thr = np.where(out[t - 1], p_stay_active, p_enter)
        out[t] = u[t] < thr
    return out


@njit
def transition_counts(trace):
    """Count observed transitions per client.

    Returns an (n_clients, 2, 2) integer array ``c`` with ``c[k, a, b]`` the
    number of rounds where client k moved from state a to state b
    (1 = active, 0 = inactive).
    """
    n_rounds, n = trace.shape
    counts = np.zeros((n, 2, 2), dtype=np.int64)
    for t in range(1, n_rounds):
        prev = trace[t - 1]
        cur = trace[t]
        for k in range(n):
            counts[k, np.int64(prev[k]), np.int64(cur[k])] += 1
    return counts


@njit
def _proxy(q, alpha, gap, gamma, pi, kappa_bar_sq):
    n = q.shape[0]
    s = 0.0
    for k in range(n):
        s += pi[k] * q[k]
    opt = 0.0
    tv = 0.0
    for k in range(n):
        w = pi[k] * q[k] / s
        opt += gap[k] * w
        tv += abs(alpha[k] - w)
    tv *= 0.5
    return opt + kappa_bar_sq * tv * tv * gamma


@njit
def greedy_exclusion(q, alpha, gap, gamma, pi, order, tau, kappa_bar_sq):
    """Greedy pass of the CA-Fed ``get`` routine.

    Visits clients in ``order`` and zeroes ``q[k]`` whenever doing so lowers
    the error proxy by at least ``tau``.  Exclusions that would leave
    ``sum(pi * q) == 0`` are skipped.  Returns ``(q, proxy_value)``.
    """
    q = q.copy()
    eps = _proxy(q, alpha, gap, gamma, pi, kappa_bar_sq)
    for i in range(order.shape[0]):
        k = order[i]
        if q[k] == 0.0:
            continue
        saved = q[k]
        q[k] = 0.0
        s = 0.0
        for h in range(q.shape[0]):
            s += pi[h] * q[h]
        if s <= 0.0:
            q[k] = saved
            continue
        eps_plus = _proxy(q, alpha, gap, gamma, pi, kappa_bar_sq)
        if eps - eps_plus >= tau:
            eps = eps_plus
        else:
            q[k] = saved
    return q, eps
