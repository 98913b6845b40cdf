"""Independent reference implementations used to freeze expected values.

Everything here is written against the model description directly, in plain
loops with no shared code paths with the package internals, so agreement is
meaningful evidence.
"""

import numpy as np
from scipy.optimize import brentq


def shortest_time_matrix(network):
    """All-pairs free-flow times by plain Bellman-Ford relaxation."""
    n = network.n_nodes
    inf = float("inf")
    dist = np.full((n, n), inf)
    np.fill_diagonal(dist, 0.0)
    edges = [(int(network.tail[a]), int(network.head[a]), float(network.t0[a]))
             for a in range(network.n_links)]
    for _ in range(n):
        changed = False
        for (u, v, w) in edges:
            upd = dist[:, u] + w
            better = upd < dist[:, v]
            if np.any(better):
                dist[better, v] = upd[better]
                changed = True
        if not changed:
            break
    return dist


def shuttle_values(network, demand, env, params):
    """Closed-form value solve for the 2-link shuttle fixture.

    Substituting the single-out-link structure reduces the value system to
    one scalar equation in the empty value of the outbound link.
    """
    t1, t2 = env.t
    m1 = env.m[0]
    chi = demand.fares[1, 0]
    q1, q2 = np.exp(-params.beta * t1), np.exp(-params.beta * t2)
    ta = params.accept_scale
    toll1 = network.toll[0]

    def softplus(v):
        return np.logaddexp(0.0, v)

    def resid(z1):
        z2 = -params.cost_empty * t2 + q2 * z1
        if params.myopic:
            w2 = -params.cost_hired * t2
        else:
            w2 = -params.cost_hired * t2 + q2 * z1
        gain = softplus(ta * (chi + w2 - z2)) / ta
        return -params.cost_empty * t1 - toll1 + q1 * (z2 + m1 * gain) - z1

    lo, hi = -1e6, 1e6
    z1 = brentq(resid, lo, hi, xtol=1e-14, rtol=1e-15)
    z2 = -params.cost_empty * t2 + q2 * z1
    if params.myopic:
        w2 = -params.cost_hired * t2
    else:
        w2 = -params.cost_hired * t2 + q2 * z1
    return z1, z2, w2


def dense_chain(policies, env, demand, network):
    """Naive dense generator for the frozen-policy vehicle chain.

    States: one empty state per link, then hired (link, destination) states
    for every link not leaving that destination, destination-major. Returns
    (Q, labels) with labels[(kind, link, dest_col)] -> state index.
    """
    m = network.n_links
    dests = list(demand.dest_nodes)
    labels = {}
    for a in range(m):
        labels[("e", a, -1)] = a
    s = m
    for k, d in enumerate(dests):
        for a in range(m):
            if network.tail[a] != d:
                labels[("h", a, k)] = s
                s += 1
    Q = np.zeros((s, s))

    xi = policies.xi
    for a_prev in range(m):
        i = int(network.head[a_prev])
        rate = 1.0 / env.t[a_prev]
        out = [a for a in range(m) if network.tail[a] == i]
        # empty vehicle finishing a_prev
        accept = 0.0
        for k, d in enumerate(dests):
            if d == i or demand.probs[i, k] == 0:
                continue
            accept += demand.probs[i, k] * xi[i, k]
        stay = 1.0 - env.m[a_prev] * accept
        row = labels[("e", a_prev, -1)]
        for a in out:
            Q[row, labels[("e", a, -1)]] += stay * policies.p[a] * rate
            for k, d in enumerate(dests):
                if d == i or demand.probs[i, k] == 0:
                    continue
                w = env.m[a_prev] * demand.probs[i, k] * xi[i, k]
                Q[row, labels[("h", a, k)]] += w * policies.q[a, k] * rate
        # hired vehicle finishing a_prev bound for each destination
        for k, d in enumerate(dests):
            if ("h", a_prev, k) not in labels:
                continue
            row = labels[("h", a_prev, k)]
            if d == i:
                for a in out:
                    Q[row, labels[("e", a, -1)]] += policies.p[a] * rate
            else:
                for a in out:
                    Q[row, labels[("h", a, k)]] += policies.q[a, k] * rate
    np.fill_diagonal(Q, Q.diagonal() - Q.sum(axis=1))
    return Q, labels


def dense_stationary(Q):
    """Stationary law of a dense generator by least squares on [Q^T; 1]."""
    s = Q.shape[0]
    A = np.vstack([Q.T, np.ones((1, s))])
    b = np.zeros(s + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def dense_masses(policies, env, demand, network, M):
    """Stationary (x, y) from the dense oracle chain."""
    Q, labels = dense_chain(policies, env, demand, network)
    pi = dense_stationary(Q)
    m = network.n_links
    K = len(demand.dest_nodes)
    x = np.zeros(m)
    y = np.zeros((m, K))
    for (kind, a, k), idx in labels.items():
        if kind == "e":
            x[a] = M * pi[idx]
        else:
            y[a, k] = M * pi[idx]
    return x, y


def cycle_bisection(t0, cbar, M, tol=1e-14):
    """Equilibrium of a linear-time directed cycle by bisection on the flow.

    With t(u) = t0 (1 + u/c), a common traversal flow rho gives
    u(rho) = rho t0 c / (c - rho t0); bisect rho until the masses sum to M.
    """
    t0 = np.asarray(t0, dtype=float)
    cbar = np.asarray(cbar, dtype=float)

    def total(rho):
        u = rho * t0 * cbar / (cbar - rho * t0)
        return u.sum() - M

    hi = 0.999999 * float(np.min(cbar / t0))
    # keep u positive and finite on (0, hi)
    lo = 1e-12 * hi
    while total(hi) < 0:
        hi = hi + 0.9 * (float(np.min(cbar / t0)) - hi)
    rho = brentq(total, lo, hi, xtol=tol, rtol=8.9e-16)
    u = rho * t0 * cbar / (cbar - rho * t0)
    return u, rho
