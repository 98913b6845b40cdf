"""Agent-level simulation oracle for the stationary loading.

Simulates a fleet of discrete vehicles, each carrying mass M/N, moving
through the network under frozen travel times, matching probabilities and
policies. Every vehicle alternates deterministic link traversals with
instantaneous decisions at link ends: an empty vehicle is matched with
probability m_a, draws an order destination from the head node's demand
row, accepts with the acceptance probability, and routes by the empty or
hired policy accordingly; a hired vehicle arriving at its destination drops
off and immediately re-enters the empty fleet.

Time-average link occupancy over [warmup, horizon] estimates the stationary
masses; vehicles are independent, so across-vehicle spread gives honest
standard errors.

Vehicles are processed in fixed-size chunks of 64 in lockstep, one event per
vehicle per step, with one Philox stream per chunk and a fixed number of
uniform draws per vehicle per event. Results are therefore bit-identical for
a given seed and vehicle count no matter how chunks are scheduled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .network import LinkEnvironment, Network

CHUNK = 64
DRAWS_PER_EVENT = 4  # match, destination, acceptance, next link


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    warmup: float
    n_vehicles: int
    seed: int
    env: LinkEnvironment
    policies: object
    trajectory_path: str | None = None

    def __post_init__(self):
        if not (self.horizon > self.warmup >= 0):
            raise ValidationError(
                f"need horizon > warmup >= 0, got {self.horizon}, {self.warmup}"
            )
        if self.n_vehicles < 1:
            raise ValidationError("need at least one vehicle")


@dataclass(frozen=True)
class SimResult:
    x: np.ndarray
    y: np.ndarray
    se_x: np.ndarray
    se_y: np.ndarray
    n_vehicles: int
    measured_time: float
    n_events: int


class _ChoiceTables:
    """Padded per-node cumulative choice tables for vectorized sampling."""

    def __init__(self, policies, demand, network: Network):
        n, m = network.n_nodes, network.n_links
        K = demand.n_destinations
        deg = np.diff(network.out_start)
        width = int(deg.max())
        self.links = np.zeros((n, width), dtype=np.int64)
        p_cum = np.full((n, width), 2.0)  # pad above any uniform draw
        q = np.where(np.isnan(policies.q), 0.0, policies.q)
        q_cum = np.full((n, width, K), 2.0)
        for i in range(n):
            out = network.out_order[network.out_slice(i)]
            d = len(out)
            self.links[i, :d] = out
            p_cum[i, :d] = np.cumsum(policies.p[out])
            q_cum[i, :d, :] = np.cumsum(q[out], axis=0)
        self.p_cum = p_cum
        self.q_cum = q_cum
        self.dest_cum = np.cumsum(demand.probs, axis=1)
        self.xi = np.where(np.isnan(policies.xi), 0.0, policies.xi)

    def pick_empty(self, nodes, r):
        idx = (self.p_cum[nodes] < r[:, None]).sum(axis=1)
        return self.links[nodes, np.minimum(idx, self.links.shape[1] - 1)]

    def pick_hired(self, nodes, dests, r):
        idx = (self.q_cum[nodes, :, dests] < r[:, None]).sum(axis=1)
        return self.links[nodes, np.minimum(idx, self.links.shape[1] - 1)]

    def pick_destination(self, nodes, r):
        K = self.dest_cum.shape[1]
        return np.minimum((self.dest_cum[nodes] < r[:, None]).sum(axis=1), K - 1)


def _simulate_chunk(vehicle_ids, stream, config, tables, demand, network, traj):
    """Run one lockstep chunk; returns per-vehicle occupancy and event count."""
    env = config.env
    nv = len(vehicle_ids)
    m = network.n_links
    K = demand.n_destinations
    dest_node = demand.dest_nodes

    link = vehicle_ids % m
    dest = np.full(nv, -1, dtype=np.int64)  # -1 while empty
    t_end = env.t[link].copy()
    active = np.ones(nv, dtype=bool)

    acc_x = np.zeros((nv, m))
    acc_y = np.zeros((nv, m, K))
    events = 0

    while active.any():
        r = stream.random((nv, DRAWS_PER_EVENT))
        av = np.nonzero(active)[0]
        events += len(av)
        lk = link[av]
        te = t_end[av]
        ts = te - env.t[lk]
        overlap = np.minimum(te, config.horizon) - np.maximum(ts, config.warmup)
        overlap = np.maximum(overlap, 0.0)
        empty = dest[av] < 0
        e_idx = av[empty]
        h_idx = av[~empty]
        np.add.at(acc_x, (e_idx, link[e_idx]), overlap[empty])
        np.add.at(acc_y, (h_idx, link[h_idx], dest[h_idx]), overlap[~empty])

        done = te >= config.horizon
        active[av[done]] = False
        av = av[~done]
        if len(av) == 0:
            continue
        ra = r[av]
        lk = link[av]
        heads = network.head[lk]
        cur_dest = dest[av]

        empty = cur_dest < 0
        new_dest = cur_dest.copy()
        # empty vehicles: match, destination, acceptance (moot without demand)
        if K > 0 and empty.any():
            nodes_e = heads[empty]
            matched = ra[empty, 0] < env.m[lk[empty]]
            drawn = tables.pick_destination(nodes_e, ra[empty, 1])
            accepted = matched & (ra[empty, 2] < tables.xi[nodes_e, drawn])
            upd = new_dest[empty]
            upd[accepted] = drawn[accepted]
            new_dest[empty] = upd
        # hired vehicles at their destination drop off
        hired = ~empty
        if hired.any():
            arrived = dest_node[cur_dest[hired]] == heads[hired]
            upd = new_dest[hired]
            upd[arrived] = -1
            new_dest[hired] = upd

        next_link = np.empty(len(av), dtype=np.int64)
        now_empty = new_dest < 0
        if now_empty.any():
            next_link[now_empty] = tables.pick_empty(heads[now_empty], ra[now_empty, 3])
        if (~now_empty).any():
            next_link[~now_empty] = tables.pick_hired(
                heads[~now_empty], new_dest[~now_empty], ra[~now_empty, 3])

        if traj is not None:
            for j, v in enumerate(av):
                traj.append((float(t_end[v]), int(vehicle_ids[v]), int(next_link[j]),
                             "hired" if new_dest[j] >= 0 else "empty",
                             int(dest_node[new_dest[j]]) if new_dest[j] >= 0 else -1))

        dest[av] = new_dest
        link[av] = next_link
        t_end[av] = t_end[av] + env.t[next_link]

    return acc_x, acc_y, events


def simulate(config: SimConfig, demand, network: Network, M: float) -> SimResult:
    """Estimate stationary masses by time-averaging a simulated fleet."""
    if not M > 0:
        raise ValidationError(f"pool size must be positive, got {M}")
    tables = _ChoiceTables(config.policies, demand, network)
    N = config.n_vehicles
    window = config.horizon - config.warmup
    traj = [] if config.trajectory_path else None

    seq = np.random.SeedSequence(config.seed)
    n_chunks = (N + CHUNK - 1) // CHUNK
    children = seq.spawn(n_chunks)

    frac_x = np.empty((N, network.n_links))
    frac_y = np.empty((N, network.n_links, demand.n_destinations))
    total_events = 0
    for c in range(n_chunks):
        ids = np.arange(c * CHUNK, min((c + 1) * CHUNK, N))
        stream = np.random.Generator(np.random.Philox(children[c]))
        acc_x, acc_y, ev = _simulate_chunk(ids, stream, config, tables,
                                           demand, network, traj)
        frac_x[ids] = acc_x / window
        frac_y[ids] = acc_y / window
        total_events += ev

    x = M * frac_x.mean(axis=0)
    y = M * frac_y.mean(axis=0)
    if N > 1:
        se_x = M * frac_x.std(axis=0, ddof=1) / np.sqrt(N)
        se_y = M * frac_y.std(axis=0, ddof=1) / np.sqrt(N)
    else:
        se_x = np.zeros_like(x)
        se_y = np.zeros_like(y)

    if traj is not None:
        with open(config.trajectory_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "vehicle", "link", "status", "destination"])
            w.writerows(sorted(traj))

    return SimResult(x=x, y=y, se_x=se_x, se_y=se_y, n_vehicles=N,
                     measured_time=window, n_events=total_events)
