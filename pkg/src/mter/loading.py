"""Stationary vehicle-mass distribution under frozen policies.

A single vehicle following frozen policies in the frozen environment is a
continuous-time Markov chain whose states are (link, empty) and
(link, hired-to-destination) pairs, with deterministic holding times t_a
entering every rate as 1/t_a. The stationary distribution of that chain,
scaled by the pool size, is the steady-state mass distribution; its
link-flow marginals satisfy the empty/hired flow conservation equations.

Two solver paths cover the size range: a direct sparse factorization of the
rank-completed balance system for chains up to a few hundred thousand states,
and a destination-blocked flow iteration that never materializes the joint
chain (the hired block decomposes by destination, so each sweep does one
sparse solve per destination plus one empty-flow solve).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, eye as speye
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import DomainError, NumericalError, StructuralError, ValidationError
from .network import LinkEnvironment, Network

DIRECT_STATE_LIMIT = 200_000
STATIONARY_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class MassDistribution:
    """Empty and hired vehicle masses per link.

    x: (n_links,) empty mass. y: (n_links, n_destinations) hired mass by
    destination column; rows of links leaving their destination are zero.
    """

    x: np.ndarray
    y: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return self.x + self.y.sum(axis=1)

    @property
    def total(self) -> float:
        return float(self.x.sum() + self.y.sum())

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x, self.y.ravel()])


class StateIndex:
    """Dense index over chain states: empties first, then hired by destination.

    Hired states exist for (link a, destination column k) with
    tail(a) != dest k; each destination block is compressed to skip the
    excluded links.
    """

    def __init__(self, network: Network, dest_nodes):
        self.m = network.n_links
        self.dest_nodes = np.asarray(dest_nodes, dtype=np.int64)
        K = len(self.dest_nodes)
        excl = np.zeros((self.m, K), dtype=bool)
        excl[network.tail[:, None] == self.dest_nodes[None, :]] = True
        valid_counts = self.m - excl.sum(axis=0)
        self.offsets = self.m + np.concatenate(([0], np.cumsum(valid_counts[:-1])))
        rank = np.cumsum(~excl, axis=0) - 1
        self.hired = np.where(excl, -1, self.offsets[None, :] + rank)
        self.n_states = int(self.m + valid_counts.sum())
        self.state_link = np.empty(self.n_states, dtype=np.int64)
        self.state_dest = np.full(self.n_states, -1, dtype=np.int64)
        self.state_link[:self.m] = np.arange(self.m)
        for k in range(K):
            links = np.nonzero(~excl[:, k])[0]
            idx = self.hired[links, k]
            self.state_link[idx] = links
            self.state_dest[idx] = k

    def hired_state(self, link: int, dest_col: int) -> int:
        s = self.hired[link, dest_col]
        if s < 0:
            raise DomainError(f"link {link} leaves destination column {dest_col}")
        return int(s)


@dataclass
class ChainSpec:
    """Off-diagonal transition rates of the vehicle chain in COO form."""

    index: StateIndex
    rows: np.ndarray
    cols: np.ndarray
    rates: np.ndarray
    recurrent: np.ndarray | None = None  # bool mask after pruning

    @property
    def n_states(self) -> int:
        return self.index.n_states

    def outflow(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.rates, minlength=self.n_states)

    def generator_transpose(self) -> csr_matrix:
        """Q^T with the diagonal included (columns of Q sum to zero)."""
        qt = coo_matrix((self.rates, (self.cols, self.rows)),
                        shape=(self.n_states, self.n_states)).tocsr()
        qt.setdiag(qt.diagonal() - self.outflow())
        return qt


def build_chain(policies, env: LinkEnvironment, demand, network: Network) -> ChainSpec:
    """Assemble the single-vehicle chain from frozen policies and environment.

    At the end of link a' (head node i, traversal rate 1/t_a'):
    an empty vehicle stays empty and picks link a with probability
    (1 - m_a' * sum_k n_i^k xi_i^k) * p_a, or becomes hired to destination k
    and picks a with probability m_a' n_i^k xi_i^k q_a^k; a hired vehicle
    bound for k keeps routing by q^k, and at its destination node drops off
    and picks an empty link by p.
    """
    if np.any(env.t <= 0):
        raise DomainError("non-positive travel time in chain construction")
    index = StateIndex(network, demand.dest_nodes)
    dest_of = {int(d): k for k, d in enumerate(demand.dest_nodes)}

    rows_acc, cols_acc, rates_acc = [], [], []

    def emit(r, c, v):
        keep = v > 0
        if np.any(keep):
            rows_acc.append(r[keep])
            cols_acc.append(c[keep])
            rates_acc.append(v[keep])

    for i in range(network.n_nodes):
        a_in = network.in_order[network.in_slice(i)]
        a_out = network.out_order[network.out_slice(i)]
        t_in = env.t[a_in]
        m_in = env.m[a_in]
        p_out = policies.p[a_out]

        live = [k for k in np.nonzero(demand.probs[i] > 0)[0]
                if int(demand.dest_nodes[k]) != i]
        accept_mass = 0.0
        if live:
            xi_i = policies.xi[i, live]
            accept_mass = float(np.dot(demand.probs[i, live], xi_i))

        # empty -> empty
        stay = (1.0 - m_in * accept_mass) / t_in
        emit(np.repeat(a_in, len(a_out)), np.tile(a_out, len(a_in)),
             np.outer(stay, p_out).ravel())

        # empty -> hired(k) and hired(k) -> hired(k)
        for k in live:
            q_out = policies.q[a_out, k]
            h_cols = index.hired[a_out, k]
            coeff = m_in * demand.probs[i, k] * policies.xi[i, k] / t_in
            emit(np.repeat(a_in, len(a_out)), np.tile(h_cols, len(a_in)),
                 np.outer(coeff, q_out).ravel())
        for k in np.nonzero(demand.dest_nodes != i)[0]:
            valid = index.hired[a_in, k] >= 0
            if not np.any(valid):
                continue
            q_out = policies.q[a_out, k]
            h_rows = index.hired[a_in[valid], k]
            h_cols = index.hired[a_out, k]
            emit(np.repeat(h_rows, len(a_out)), np.tile(h_cols, valid.sum()),
                 np.outer(1.0 / t_in[valid], q_out).ravel())

        # hired arriving at own destination -> empty
        k_i = dest_of.get(i)
        if k_i is not None:
            h_rows = index.hired[a_in, k_i]  # all valid: no self-loops
            emit(np.repeat(h_rows, len(a_out)), np.tile(a_out, len(a_in)),
                 np.outer(1.0 / t_in, p_out).ravel())

    if rows_acc:
        rows = np.concatenate(rows_acc)
        cols = np.concatenate(cols_acc)
        rates = np.concatenate(rates_acc)
    else:
        rows = cols = np.empty(0, dtype=np.int64)
        rates = np.empty(0)
    return ChainSpec(index=index, rows=rows, cols=cols, rates=rates)


def prune_transient(chain: ChainSpec) -> ChainSpec:
    """Mark the unique closed communicating class; everything else is transient.

    Generalizes the structural pruning rules (no matching anywhere, matching
    at a single node, unreachable destinations) by computing strongly
    connected components of the positive-rate support graph and keeping the
    one class with no outgoing edges.
    """
    s = chain.n_states
    support = csr_matrix((np.ones(len(chain.rates)), (chain.rows, chain.cols)),
                         shape=(s, s))
    n_comp, labels = connected_components(support, directed=True, connection="strong")
    open_comp = np.zeros(n_comp, dtype=bool)
    cross = labels[chain.rows] != labels[chain.cols]
    open_comp[labels[chain.rows[cross]]] = True
    closed = np.nonzero(~open_comp)[0]
    if len(closed) == 0:
        raise StructuralError("chain has no closed communicating class")
    if len(closed) > 1:
        raise StructuralError(
            f"chain has {len(closed)} closed communicating classes; not unichain"
        )
    recurrent = labels == closed[0]
    if not recurrent.any():
        raise StructuralError("empty recurrent class")
    return ChainSpec(index=chain.index, rows=chain.rows, cols=chain.cols,
                     rates=chain.rates, recurrent=recurrent)


def _masses_from_pi(pi: np.ndarray, index: StateIndex, M: float) -> MassDistribution:
    K = index.hired.shape[1]
    x = M * pi[:index.m]
    y = np.zeros((index.m, K))
    hired_idx = index.hired
    valid = hired_idx >= 0
    y[valid] = M * pi[hired_idx[valid]]
    return MassDistribution(x=x, y=y)


def stationary_masses(chain: ChainSpec, M: float, *, method: str = "direct",
                      warm: np.ndarray | None = None, power_tol: float = 1e-14,
                      power_max_iter: int = 2_000_000) -> MassDistribution:
    """Solve pi Q = 0, sum pi = 1 and scale to the pool size.

    `direct` drops one balance equation of the recurrent-class system and
    appends the mass constraint (requires a pruned chain). `power` iterates
    the uniformized transition matrix on the full state space; transient
    states decay to zero on their own.
    """
    if not M > 0:
        raise ValidationError(f"pool size must be positive, got {M}")
    s = chain.n_states
    if method == "direct":
        if chain.recurrent is None:
            chain = prune_transient(chain)
        rec = chain.recurrent
        idx_map = -np.ones(s, dtype=np.int64)
        idx_map[rec] = np.arange(rec.sum())
        keep = rec[chain.rows]
        if np.any(keep & ~rec[chain.cols]):
            raise StructuralError("recurrent class has an outgoing transition")
        r = idx_map[chain.rows[keep]]
        c = idx_map[chain.cols[keep]]
        v = chain.rates[keep]
        n_r = int(rec.sum())
        outflow = np.bincount(r, weights=v, minlength=n_r)
        # A = Q^T restricted, last balance row replaced by the mass constraint
        entries_r = np.concatenate([c, np.arange(n_r)])
        entries_c = np.concatenate([r, np.arange(n_r)])
        entries_v = np.concatenate([v, -outflow])
        last = entries_r < n_r - 1
        a_rows = np.concatenate([entries_r[last], np.full(n_r, n_r - 1)])
        a_cols = np.concatenate([entries_c[last], np.arange(n_r)])
        a_vals = np.concatenate([entries_v[last], np.ones(n_r)])
        A = coo_matrix((a_vals, (a_rows, a_cols)), shape=(n_r, n_r)).tocsc()
        b = np.zeros(n_r)
        b[-1] = 1.0
        try:
            pi_rec = splu(A).solve(b)
        except RuntimeError as exc:
            raise NumericalError(f"stationary solve failed: {exc}")
        if np.any(pi_rec < -1e-9):
            raise NumericalError(
                f"stationary solve produced negative probability {pi_rec.min():.3e}"
            )
        pi_rec = np.maximum(pi_rec, 0.0)
        pi_rec /= pi_rec.sum()
        pi = np.zeros(s)
        pi[rec] = pi_rec
    elif method == "power":
        qt = chain.generator_transpose()
        theta_u = 1.05 * float(chain.outflow().max())
        if theta_u <= 0:
            raise NumericalError("chain has no transitions")
        pt = speye(s, format="csr") + qt / theta_u
        pi = np.full(s, 1.0 / s) if warm is None else np.asarray(warm, dtype=float).copy()
        pi = np.maximum(pi, 0.0)
        pi /= pi.sum()
        for it in range(power_max_iter):
            pi_new = pt @ pi
            pi_new /= pi_new.sum()
            if it % 8 == 0:
                resid = float(np.max(np.abs(qt @ pi_new)))
                if resid <= power_tol * theta_u:
                    pi = pi_new
                    break
            pi = pi_new
        else:
            resid = float(np.max(np.abs(qt @ pi)))
            raise NumericalError(
                f"power iteration did not reach tolerance (residual {resid:.3e})"
            )
    else:
        raise ValidationError(f"unknown stationary method {method!r}")

    qt = chain.generator_transpose()
    resid = float(np.max(np.abs(qt @ pi)))
    if resid > STATIONARY_RESIDUAL_TOL:
        raise NumericalError(f"stationary residual {resid:.3e} exceeds tolerance")
    return _masses_from_pi(pi, chain.index, M)


def masses_to_env(x, y, network: Network) -> LinkEnvironment:
    """Evaluate the consistency maps at a mass distribution."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = x + (y.sum(axis=1) if y.ndim == 2 else y)
    t = network.travel_times(u)
    f = np.maximum(x, 0.0) / t
    m = network.matching_probabilities(f)
    return LinkEnvironment(u=u, t=t, f=f, m=m)


def _node_structure(policies, env, demand, network):
    """Shared per-link coefficient arrays for the flow formulation."""
    xi = np.where(np.isnan(policies.xi), 0.0, policies.xi)
    accept = np.einsum("jk,jk->j", demand.probs, xi)
    s_stay = 1.0 - env.m * accept[network.head]
    mnxi = env.m[:, None] * demand.probs[network.head] * xi[network.head]
    return s_stay, mnxi


def _propagation_matrix(weights_out, scale_in, network):
    """Sparse F with F[a, a'] = weights_out[a] * scale_in[a'] over head(a') = tail(a)."""
    rows, cols, vals = [], [], []
    for i in range(network.n_nodes):
        a_in = network.in_order[network.in_slice(i)]
        a_out = network.out_order[network.out_slice(i)]
        if len(a_in) == 0 or len(a_out) == 0:
            continue
        rows.append(np.repeat(a_out, len(a_in)))
        cols.append(np.tile(a_in, len(a_out)))
        vals.append(np.outer(weights_out[a_out], scale_in[a_in]).ravel())
    m = network.n_links
    return coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(m, m)).tocsr()


def stationary_flows_blocked(policies, env: LinkEnvironment, demand,
                             network: Network, M: float, *, tol: float = 1e-10,
                             max_sweeps: int = 20_000,
                             warm: MassDistribution | None = None) -> MassDistribution:
    """Destination-blocked stationary solve on flows; never builds the chain.

    Each sweep solves the per-destination hired systems exactly given the
    empty flows, then the empty system exactly given the drop-offs, and
    renormalizes to the pool size. The sweep map is linear and positive with
    spectral radius one on the stationary ray, so the normalized iteration
    converges geometrically.
    """
    m, K = network.n_links, demand.n_destinations
    s_stay, mnxi = _node_structure(policies, env, demand, network)
    q = np.where(np.isnan(policies.q), 0.0, policies.q)

    if float(env.m.max()) == 0.0:
        # no matching anywhere: pure empty routing, f_a = p_a * inflow(tail a)
        n = m
        A = (_propagation_matrix(policies.p, np.ones(m), network)
             - speye(n, format="csr")).tolil()
        A[n - 1, :] = env.t  # mass constraint: sum f*t = M
        b = np.zeros(n)
        b[n - 1] = M
        try:
            f = splu(A.tocsc()).solve(b)
        except RuntimeError as exc:
            raise NumericalError(f"routing-only stationary solve failed: {exc}")
        f = np.maximum(f, 0.0)
        x = f * env.t
        x *= M / x.sum()
        return MassDistribution(x=x, y=np.zeros((m, K)))

    # Link-space systems reduce to node space: hired flow on a link is its
    # routing share of (arrivals + fresh matches) at the tail, so only the
    # per-node arrival totals g satisfy an n x n system, (I - W_k) g = W_k
    # matched, with W_k[i, j] = sum of q^k over links j -> i. Same for the
    # empty flows with weights p * s_stay. This keeps the per-destination
    # LU cache at node dimension.
    n = network.n_nodes
    dest_mask = network.tail[:, None] == demand.dest_nodes[None, :]
    qm = np.where(dest_mask, 0.0, q)
    agg = coo_matrix((np.ones(m), (network.head, np.arange(m))),
                     shape=(n, m)).tocsr()
    hired_w = []
    hired_lu = []
    for k in range(K):
        wk = coo_matrix((qm[:, k], (network.head, network.tail)),
                        shape=(n, n)).tocsr()
        hired_w.append(wk)
        hired_lu.append(splu((speye(n, format="csr") - wk).tocsc()))
    v_empty = coo_matrix((policies.p * s_stay, (network.head, network.tail)),
                         shape=(n, n)).tocsr()
    empty_lu = splu((speye(n, format="csr") - v_empty).tocsc())

    if warm is not None:
        f = np.maximum(warm.x, 1e-300) / env.t
    else:
        f = np.full(m, M / float(env.t.sum()))
    H = np.zeros((m, K))
    dest = demand.dest_nodes

    for _ in range(max_sweeps):
        matched_at = agg @ (f[:, None] * mnxi)
        G = np.empty((n, K))
        for k in range(K):
            G[:, k] = hired_lu[k].solve(hired_w[k] @ matched_at[:, k])
        H_new = qm * (G + matched_at)[network.tail, :]
        dropoff = np.zeros(n)
        dropoff[dest] = G[dest, np.arange(K)]
        e_in = empty_lu.solve(v_empty @ dropoff)
        f_new = policies.p * (e_in + dropoff)[network.tail]
        total = float(f_new @ env.t + (H_new * env.t[:, None]).sum())
        if not total > 0:
            raise NumericalError("blocked loading lost all mass")
        scale = M / total
        f_new *= scale
        H_new *= scale
        delta = max(float(np.max(np.abs(f_new - f))), float(np.max(np.abs(H_new - H))))
        f, H = f_new, H_new
        if delta <= tol * max(1.0, M):
            break
    else:
        raise NumericalError(f"blocked loading did not converge (delta {delta:.3e})")

    x = np.maximum(f, 0.0) * env.t
    y = np.maximum(H, 0.0) * env.t[:, None]
    return MassDistribution(x=x, y=y)


def flow_balance_residual(masses: MassDistribution, policies, env: LinkEnvironment,
                          demand, network: Network) -> float:
    """Max absolute defect of the flow conservation equations at `masses`."""
    f = masses.x / env.t
    H = masses.y / env.t[:, None]
    s_stay, mnxi = _node_structure(policies, env, demand, network)
    q = np.where(np.isnan(policies.q), 0.0, policies.q)

    empty_in = np.zeros(network.n_nodes)
    np.add.at(empty_in, network.head, f * s_stay)
    hired_in = np.zeros((network.n_nodes, demand.n_destinations))
    np.add.at(hired_in, network.head, H)
    matched_at = np.zeros((network.n_nodes, demand.n_destinations))
    np.add.at(matched_at, network.head, f[:, None] * mnxi)

    dest = demand.dest_nodes
    dropoff = np.zeros(network.n_nodes)
    dropoff[dest] = hired_in[dest, np.arange(len(dest))]
    res_empty = f - policies.p * (empty_in + dropoff)[network.tail]

    inflow = hired_in + matched_at
    res_hired = H - q * inflow[network.tail]
    dest_mask = network.tail[:, None] == dest[None, :]
    res_self = H[dest_mask]  # must be exactly zero
    res_hired = np.where(dest_mask, 0.0, res_hired)

    out = float(np.max(np.abs(res_empty)))
    if res_hired.size:
        out = max(out, float(np.max(np.abs(res_hired))))
    if res_self.size:
        out = max(out, float(np.max(np.abs(res_self))))
    return out
