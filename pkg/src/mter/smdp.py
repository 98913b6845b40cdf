"""Driver decision model: discounted value iteration and choice probabilities.

State values live on nodes, action values on links. An empty vehicle on link a
pays a traversal cost, discounts by exp(-beta*t_a), and at the head node either
continues empty or, with the link's matching probability, draws a passenger
destination and decides whether to accept. A hired vehicle rolls its
destination-specific continuation value forward until drop-off, where it
becomes empty again (the forward-looking boundary; myopic mode zeroes it).

The update operator is a sup-norm contraction with modulus
exp(-beta * min_a t_a), so plain value iteration converges from any start;
warm starts only shorten the path.

Hired quantities are undefined for links leaving their own destination. They
are stored as NaN in the public containers, and the typed accessors raise on
them; internally the iteration keeps zeros in those slots, which never feed
back into any defined quantity (the destination row of the hired state values
is overwritten by the boundary condition before use).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ConvergenceError, DomainError, NumericalError, ValidationError


@dataclass(frozen=True)
class SMDPParams:
    """Scalar parameters of the driver decision model.

    beta: continuous-time discount rate (1/hour). theta: logit scale for link
    choice. theta_accept: logit scale for order acceptance (defaults to
    theta). cost_empty/cost_hired: operating cost per hour of traversal;
    per-link tolls are added on top. myopic: zero the hired continuation
    value at the destination instead of chaining into the empty value.
    """

    beta: float = 0.1
    theta: float = 10.0
    theta_accept: float | None = None
    cost_empty: float = 6.0
    cost_hired: float = 6.0
    myopic: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError(f"discount rate must be positive, got {self.beta}")
        if not self.theta > 0:
            raise ValidationError(f"logit scale must be positive, got {self.theta}")
        if self.theta_accept is not None and not self.theta_accept > 0:
            raise ValidationError("acceptance logit scale must be positive")

    @property
    def accept_scale(self) -> float:
        return self.theta if self.theta_accept is None else self.theta_accept


@dataclass(frozen=True)
class ValueFunctions:
    """Converged or intermediate value functions.

    z: (n_links,) empty action values. w: (n_links, n_destinations) hired
    action values, NaN on links leaving their destination. sigma: (n_nodes,)
    empty state values. tau: (n_nodes, n_destinations) hired state values
    with the boundary row equal to sigma (or 0 in myopic mode).
    """

    z: np.ndarray
    w: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray

    def hired_action_value(self, link: int, dest_col: int) -> float:
        v = self.w[link, dest_col]
        if np.isnan(v):
            raise DomainError(
                f"hired action value undefined: link {link} leaves destination column {dest_col}"
            )
        return float(v)


@dataclass(frozen=True)
class Policies:
    """Choice probabilities induced by value functions.

    p: (n_links,) empty link choice. q: (n_links, n_destinations) hired link
    choice, NaN where undefined (links leaving their destination). xi:
    (n_nodes, n_destinations) order acceptance, NaN on the destination's own
    row.
    """

    p: np.ndarray
    q: np.ndarray
    xi: np.ndarray

    def hired_choice(self, link: int, dest_col: int) -> float:
        v = self.q[link, dest_col]
        if np.isnan(v):
            raise DomainError(
                f"hired choice undefined: link {link} leaves destination column {dest_col}"
            )
        return float(v)

    def acceptance(self, node: int, dest_col: int) -> float:
        v = self.xi[node, dest_col]
        if np.isnan(v):
            raise DomainError(f"acceptance undefined at destination's own node {node}")
        return float(v)


def social_surplus(values, theta: float) -> float:
    """Expected maximum of values plus i.i.d. Gumbel noise at scale theta.

    The log-sum (1/theta) * ln(sum exp(theta*v)), computed with
    max-subtraction. Satisfies G(v + c) = G(v) + c and G(single) = single.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DomainError("social surplus of an empty choice set")
    return float(logsumexp(theta * values) / theta)


class _Workspace:
    """Precomputed index structures for the vectorized Bellman operator."""

    def __init__(self, network, demand):
        if demand.fares is None:
            raise ValidationError("demand model has no fare matrix; compute fares first")
        self.network = network
        self.demand = demand
        self.out_order = network.out_order
        self.starts = network.out_start[:-1]
        self.node_of_sorted = network.tail[network.out_order]
        self.head = network.head
        self.dest = demand.dest_nodes
        # flat (row, col) indices of undefined hired slots: links leaving dest k
        rows, cols = [], []
        for k, d in enumerate(self.dest):
            seg = network.out_order[network.out_slice(int(d))]
            rows.append(seg)
            cols.append(np.full(len(seg), k, dtype=np.int64))
        self.und_rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        self.und_cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)

    def segment_logsumexp(self, vals: np.ndarray, theta: float) -> np.ndarray:
        """Per-tail-node log-sum of link values; vals is (m,) or (m, K)."""
        vs = vals[self.out_order]
        mx = np.maximum.reduceat(vs, self.starts, axis=0)
        shifted = np.exp(theta * (vs - mx[self.node_of_sorted]))
        total = np.add.reduceat(shifted, self.starts, axis=0)
        return mx + np.log(total) / theta

    def segment_softmax(self, vals: np.ndarray, theta: float) -> np.ndarray:
        """Per-tail-node softmax over outgoing links; same shape as vals."""
        vs = vals[self.out_order]
        mx = np.maximum.reduceat(vs, self.starts, axis=0)
        ex = np.exp(theta * (vs - mx[self.node_of_sorted]))
        total = np.add.reduceat(ex, self.starts, axis=0)
        result = np.empty_like(ex)
        result[self.out_order] = ex / total[self.node_of_sorted]
        return result

    def node_values(self, z, w, params):
        """State values from action values, boundary row applied."""
        theta = params.theta
        sigma = self.segment_logsumexp(z, theta)
        tau = self.segment_logsumexp(w, theta)
        tau[self.dest, np.arange(len(self.dest))] = 0.0 if params.myopic else sigma[self.dest]
        return sigma, tau

    def apply(self, z, w, env, params):
        """One Bellman update; returns (z', w', sigma, tau).

        sigma/tau are the node values computed from the input action values,
        i.e. the ones the update consumed.
        """
        sigma, tau = self.node_values(z, w, params)
        th_acc = params.accept_scale
        chi = self.demand.fares
        # expected gain of the accept-or-reject decision over continuing empty:
        # G(chi+tau, sigma) = sigma + softplus(theta*(chi+tau-sigma))/theta
        gain = np.logaddexp(0.0, th_acc * (chi + tau - sigma[:, None])) / th_acc
        accept_gain = np.einsum("jk,jk->j", self.demand.probs, gain)

        q_t = np.exp(-params.beta * env.t)
        toll = self.network.toll
        z_new = (-(params.cost_empty * env.t + toll)
                 + q_t * (sigma[self.head] + env.m * accept_gain[self.head]))
        w_new = -(params.cost_hired * env.t + toll)[:, None] + q_t[:, None] * tau[self.head]
        w_new[self.und_rows, self.und_cols] = 0.0
        return z_new, w_new, sigma, tau


def _filled(w: np.ndarray) -> np.ndarray:
    """Replace NaN (undefined hired slots) with 0 for internal arithmetic."""
    return np.where(np.isnan(w), 0.0, w)


def _poisoned(w: np.ndarray, ws: _Workspace) -> np.ndarray:
    out = np.array(w, dtype=float)
    out[ws.und_rows, ws.und_cols] = np.nan
    return out


def bellman_apply(v: ValueFunctions, env, params: SMDPParams, demand,
                  network) -> ValueFunctions:
    """One application of the expected Bellman operator to v at (t, m)."""
    ws = _Workspace(network, demand)
    z_new, w_new, sigma, tau = ws.apply(v.z, _filled(v.w), env, params)
    return ValueFunctions(z=z_new, w=_poisoned(w_new, ws), sigma=sigma, tau=tau)


def solve_values(env, params: SMDPParams, demand, network, *, tol: float = 1e-8,
                 max_iter: int = 1_000_000, warm_start: ValueFunctions | None = None,
                 workspace: _Workspace | None = None) -> ValueFunctions:
    """Iterate the Bellman operator until the sup-norm residual is <= tol.

    The fixed point is unique, so the result does not depend on the start;
    warm starts only reduce the iteration count. Raises ConvergenceError with
    the last residual if max_iter is hit.
    """
    if not tol > 0:
        raise ValidationError(f"tolerance must be positive, got {tol}")
    ws = workspace if workspace is not None else _Workspace(network, demand)
    m, K = network.n_links, demand.n_destinations
    if warm_start is not None:
        z = np.array(warm_start.z, dtype=float)
        w = _filled(warm_start.w)
    else:
        z = np.zeros(m)
        w = np.zeros((m, K))

    residual = np.inf
    for _ in range(int(max_iter)):
        z_new, w_new, sigma, tau = ws.apply(z, w, env, params)
        residual = max(
            float(np.max(np.abs(z_new - z))),
            float(np.max(np.abs(w_new - w))) if w.size else 0.0,
        )
        z, w = z_new, w_new
        if not np.isfinite(residual):
            raise NumericalError("value iteration diverged (non-finite residual)")
        if residual <= tol:
            # the post-update iterate's own residual is at most the
            # contraction modulus times `residual`, hence also <= tol
            sigma, tau = ws.node_values(z, w, params)
            return ValueFunctions(z=z, w=_poisoned(w, ws), sigma=sigma, tau=tau)
    raise ConvergenceError("value iteration hit max_iter", residual=residual,
                           iterations=int(max_iter))


def choice_probabilities(v: ValueFunctions, params: SMDPParams, demand,
                         network, *, workspace: _Workspace | None = None) -> Policies:
    """Logit choice probabilities from action values (max-subtracted).

    p and q are per-tail-node softmaxes of the empty and hired action values;
    xi is the two-alternative acceptance probability of fare plus hired
    continuation against staying empty.
    """
    ws = workspace if workspace is not None else _Workspace(network, demand)
    z = np.asarray(v.z, dtype=float)
    w = _filled(np.asarray(v.w, dtype=float))
    p = ws.segment_softmax(z, params.theta)
    q = ws.segment_softmax(w, params.theta)
    q[ws.und_rows, ws.und_cols] = np.nan

    sigma, tau = ws.node_values(z, w, params)
    th_acc = params.accept_scale
    xi = expit(th_acc * (demand.fares + tau - sigma[:, None]))
    xi[ws.dest, np.arange(len(ws.dest))] = np.nan
    return Policies(p=p, q=q, xi=xi)
