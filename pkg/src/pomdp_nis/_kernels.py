"""Compiled inner loops: input-output HMM recursions and episode simulation.

Policy tables are ``pa[x, m, a]`` (action), ``pm[x, m, m']`` (memory) and
``init[m]``. Histories are stacked as int arrays ``obs[i, t]``, ``act[i, t]``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def draw(p, u):
    acc = 0.0
    last = 0
    for k in range(p.shape[0]):
        if p[k] > 0.0:
            last = k
        acc += p[k]
        if u < acc:
            return k
    # u landed in the rounding gap above the cumulative sum
    return last


@njit(cache=True)
def forward(pa, pm, init, obs, act):
    """log A(h_i, pi) for every stacked history, by scaled forward recursion."""
    N, T = obs.shape
    M = init.shape[0]
    out = np.empty(N)
    alpha = np.empty(M)
    nxt = np.empty(M)
    for i in range(N):
        x = obs[i, 0]
        a = act[i, 0]
        s = 0.0
        for m in range(M):
            alpha[m] = init[m] * pa[x, m, a]
            s += alpha[m]
        if s <= 0.0:
            out[i] = -np.inf
            continue
        ll = np.log(s)
        for m in range(M):
            alpha[m] /= s
        for t in range(1, T):
            xp = obs[i, t - 1]
            x = obs[i, t]
            a = act[i, t]
            s = 0.0
            for k in range(M):
                acc = 0.0
                for m in range(M):
                    acc += alpha[m] * pm[xp, m, k]
                nxt[k] = acc * pa[x, k, a]
                s += nxt[k]
            if s <= 0.0:
                ll = -np.inf
                break
            ll += np.log(s)
            for k in range(M):
                alpha[k] = nxt[k] / s
        out[i] = ll
    return out


@njit(cache=True)
def forward_backward(pa, pm, init, obs, act, coef, g_act, g_mem):
    """log A per history; adds ``sum_i coef[i] * dlogA_i/dlogits`` into g_act, g_mem.

    The logit gradients chain the posterior memory marginals through the
    softmax Jacobian of each table row.
    """
    N, T = obs.shape
    M = init.shape[0]
    A = pa.shape[2]
    out = np.empty(N)
    alpha = np.empty((T, M))
    beta = np.empty((T, M))
    scale = np.empty(T)
    for i in range(N):
        ok = True
        x = obs[i, 0]
        a = act[i, 0]
        s = 0.0
        for m in range(M):
            alpha[0, m] = init[m] * pa[x, m, a]
            s += alpha[0, m]
        if s <= 0.0:
            out[i] = -np.inf
            continue
        scale[0] = s
        for m in range(M):
            alpha[0, m] /= s
        for t in range(1, T):
            xp = obs[i, t - 1]
            x = obs[i, t]
            a = act[i, t]
            s = 0.0
            for k in range(M):
                acc = 0.0
                for m in range(M):
                    acc += alpha[t - 1, m] * pm[xp, m, k]
                alpha[t, k] = acc * pa[x, k, a]
                s += alpha[t, k]
            if s <= 0.0:
                ok = False
                break
            scale[t] = s
            for k in range(M):
                alpha[t, k] /= s
        if not ok:
            out[i] = -np.inf
            continue
        ll = 0.0
        for t in range(T):
            ll += np.log(scale[t])
        out[i] = ll
        c = coef[i]
        if c == 0.0:
            continue
        for m in range(M):
            beta[T - 1, m] = 1.0
        for t in range(T - 2, -1, -1):
            x = obs[i, t]
            xn = obs[i, t + 1]
            an = act[i, t + 1]
            for m in range(M):
                acc = 0.0
                for k in range(M):
                    acc += pm[x, m, k] * pa[xn, k, an] * beta[t + 1, k]
                beta[t, m] = acc / scale[t + 1]
        for t in range(T):
            x = obs[i, t]
            a = act[i, t]
            for m in range(M):
                gm = alpha[t, m] * beta[t, m]
                for k in range(A):
                    ind = 1.0 if k == a else 0.0
                    g_act[x, m, k] += c * gm * (ind - pa[x, m, k])
        if M > 1:
            for t in range(T - 1):
                x = obs[i, t]
                xn = obs[i, t + 1]
                an = act[i, t + 1]
                for m in range(M):
                    gm = alpha[t, m] * beta[t, m]
                    for k in range(M):
                        xi = (alpha[t, m] * pm[x, m, k] * pa[xn, k, an]
                              * beta[t + 1, k] / scale[t + 1])
                        g_mem[x, m, k] += c * (xi - gm * pm[x, m, k])
    return out


@njit(cache=True)
def simulate(start, trans, obsm, reward, pa, pm, init, T, u):
    """Roll out ``u.shape[0]`` episodes; ``u`` holds 2 + 4T uniforms per episode."""
    N = u.shape[0]
    obs = np.empty((N, T), dtype=np.int64)
    act = np.empty((N, T), dtype=np.int64)
    rew = np.empty((N, T))
    states = np.empty((N, T + 1), dtype=np.int64)
    for i in range(N):
        s = draw(start, u[i, 0])
        m = draw(init, u[i, 1])
        for t in range(T):
            base = 2 + 4 * t
            states[i, t] = s
            x = draw(obsm[s], u[i, base])
            a = draw(pa[x, m], u[i, base + 1])
            m_next = draw(pm[x, m], u[i, base + 2])
            s_next = draw(trans[s, a], u[i, base + 3])
            obs[i, t] = x
            act[i, t] = a
            rew[i, t] = reward[s, a, s_next]
            s = s_next
            m = m_next
        states[i, T] = s
    return obs, act, rew, states
