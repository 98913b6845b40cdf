"""Road network, demand data, and the exogenous response functions.

The network is a directed multigraph stored in flat numpy arrays indexed by
link position. Two CSR-style permutations (links sorted by tail node, links
sorted by head node) give contiguous per-node segments for the vectorized
reductions used throughout the solver. All public types are immutable after
construction; operations that modify attributes return a new object.

UNITS
-----
time: hours | length: km | mass: vehicles | flow and arrival rates: per hour
costs, fares, tolls: dollars
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import DomainError, ParseError, StructuralError, ValidationError

MILES_PER_KM = 1.0 / 1.609344
DEFAULT_SPEED_KMH = 40.0 * 1.609344  # 40 mph


@dataclass(frozen=True)
class Link:
    """One directed link. `tail`/`head` are internal node indices."""

    id: int
    tail: int
    head: int
    t0: float                # free-flow traversal time, hours
    cap: float               # jam capacity, vehicles
    length: float            # km
    lam: float = 0.0         # passenger arrival rate realized at the head node
    gamma: float = 0.8       # matching friction
    toll: float = 0.0
    background: float = 0.0  # exogenous mass added to u before travel time


class Network:
    """Immutable directed network with per-link attributes and adjacency.

    Parameters
    ----------
    links : sequence of Link
        Internal node indices must cover 0..n_nodes-1.
    M : float
        Total vehicle pool size (must be positive).
    n_nodes : int, optional
        Inferred from the links when omitted.
    node_ids : sequence, optional
        External labels (e.g. file node numbers) parallel to internal indices.
    time_fns : sequence of callable or None, optional
        Per-link overrides of the linear travel-time law; entry i is either
        None (use t0*(1+u/cap)) or a callable u -> hours.
    """

    def __init__(self, links, M=1.0, n_nodes=None, node_ids=None, time_fns=None):
        if not links:
            raise ValidationError("network requires at least one link")
        if not M > 0:
            raise ValidationError(f"pool size must be positive, got {M}")
        self.links = tuple(links)
        self.M = float(M)

        self.tail = np.array([l.tail for l in links], dtype=np.int64)
        self.head = np.array([l.head for l in links], dtype=np.int64)
        self.t0 = np.array([l.t0 for l in links], dtype=float)
        self.cap = np.array([l.cap for l in links], dtype=float)
        self.length = np.array([l.length for l in links], dtype=float)
        self.lam = np.array([l.lam for l in links], dtype=float)
        self.gamma = np.array([l.gamma for l in links], dtype=float)
        self.toll = np.array([l.toll for l in links], dtype=float)
        self.background = np.array([l.background for l in links], dtype=float)
        self.link_ids = np.array([l.id for l in links], dtype=np.int64)

        n = int(max(self.tail.max(), self.head.max())) + 1
        if n_nodes is None:
            n_nodes = n
        elif n_nodes < n:
            raise StructuralError(f"link references node index {n - 1} >= n_nodes={n_nodes}")
        self.n_nodes = int(n_nodes)
        self.node_ids = (
            np.arange(self.n_nodes) if node_ids is None else np.asarray(node_ids)
        )
        if len(self.node_ids) != self.n_nodes:
            raise ValidationError("node_ids length does not match node count")

        if np.any(self.tail < 0) or np.any(self.head < 0):
            raise StructuralError("negative node index")
        if np.any(self.tail == self.head):
            bad = int(np.argmax(self.tail == self.head))
            raise ValidationError(f"self-loop on link id {self.links[bad].id}")
        if np.any(self.t0 <= 0):
            bad = int(np.argmax(self.t0 <= 0))
            raise ValidationError(f"non-positive free-flow time on link id {self.links[bad].id}")
        for name, arr in (("jam capacity", self.cap), ("friction", self.gamma)):
            if np.any(arr <= 0):
                bad = int(np.argmax(arr <= 0))
                raise ValidationError(f"non-positive {name} on link id {self.links[bad].id}")
        for name, arr in (("arrival rate", self.lam), ("toll", self.toll),
                          ("background mass", self.background)):
            if np.any(arr < 0):
                bad = int(np.argmax(arr < 0))
                raise ValidationError(f"negative {name} on link id {self.links[bad].id}")

        self.time_fns = None
        if time_fns is not None:
            time_fns = list(time_fns)
            if len(time_fns) != len(links):
                raise ValidationError("time_fns length does not match link count")
            if any(fn is not None for fn in time_fns):
                self.time_fns = tuple(time_fns)

        # CSR adjacency: links grouped by tail (outgoing) and by head (incoming)
        m = len(links)
        self.out_order = np.argsort(self.tail, kind="stable")
        self.outdeg = np.bincount(self.tail, minlength=self.n_nodes)
        self.out_start = np.concatenate(([0], np.cumsum(self.outdeg)))
        self.in_order = np.argsort(self.head, kind="stable")
        self.indeg = np.bincount(self.head, minlength=self.n_nodes)
        self.in_start = np.concatenate(([0], np.cumsum(self.indeg)))

        if np.any(self.outdeg == 0):
            bad = int(np.argmax(self.outdeg == 0))
            raise StructuralError(f"node {self.node_ids[bad]} has no outgoing link")
        if np.any(self.indeg == 0):
            bad = int(np.argmax(self.indeg == 0))
            raise StructuralError(f"node {self.node_ids[bad]} has no incoming link")

        adj = csr_matrix(
            (np.ones(m), (self.tail, self.head)), shape=(self.n_nodes, self.n_nodes)
        )
        ncomp, _ = connected_components(adj, directed=True, connection="strong")
        if ncomp > 1:
            warnings.warn(
                f"network is not strongly connected ({ncomp} components)",
                stacklevel=2,
            )

        for arr in (self.tail, self.head, self.t0, self.cap, self.length, self.lam,
                    self.gamma, self.toll, self.background, self.link_ids,
                    self.out_order, self.out_start, self.in_order, self.in_start):
            arr.setflags(write=False)

    @property
    def n_links(self) -> int:
        return len(self.links)

    def out_slice(self, node: int) -> slice:
        """Positions in out_order holding node's outgoing links."""
        return slice(self.out_start[node], self.out_start[node + 1])

    def in_slice(self, node: int) -> slice:
        return slice(self.in_start[node], self.in_start[node + 1])

    def travel_times(self, u) -> np.ndarray:
        """Per-link travel time at total masses u (vectorized consistency map)."""
        u = np.asarray(u, dtype=float)
        if np.any(u < -1e-12):
            raise DomainError("negative link mass passed to travel_times")
        u = np.maximum(u, 0.0)
        t = self.t0 * (1.0 + (u + self.background) / self.cap)
        if self.time_fns is not None:
            for a, fn in enumerate(self.time_fns):
                if fn is not None:
                    t[a] = fn(u[a] + self.background[a])
        return t

    def matching_probabilities(self, f) -> np.ndarray:
        """Per-link order probability at empty flows f (Pickup competition)."""
        f = np.asarray(f, dtype=float)
        if np.any(f < -1e-12):
            raise DomainError("negative empty flow passed to matching_probabilities")
        f = np.maximum(f, 0.0)
        out = np.zeros(self.n_links)
        pos = self.lam > 0
        out[pos & (f == 0)] = 1.0
        live = pos & (f > 0)
        if np.any(live):
            # f can underflow to denormals during early iterations; the inf
            # ratio is legitimate (m -> 1) so silence the overflow warning
            with np.errstate(over="ignore"):
                r = self.lam[live] / f[live]
                out[live] = np.minimum(r, -np.expm1(-self.gamma[live] * r))
        return out

    def with_links(self, links) -> Network:
        return Network(links, M=self.M, n_nodes=self.n_nodes,
                       node_ids=self.node_ids, time_fns=self.time_fns)

    def with_pool(self, M: float) -> Network:
        return Network(self.links, M=M, n_nodes=self.n_nodes,
                       node_ids=self.node_ids, time_fns=self.time_fns)

    def node_arrival_totals(self) -> np.ndarray:
        """Total passenger arrival rate over each node's incoming links."""
        tot = np.zeros(self.n_nodes)
        np.add.at(tot, self.head, self.lam)
        return tot


class DemandModel:
    """Destination probabilities and fares over the active destination set.

    Stores a dense (n_nodes, K) row-stochastic matrix over the K destination
    nodes that receive positive probability anywhere, plus the fare matrix of
    the same shape. Rows of nodes without incoming demand are filled uniformly
    (they are multiplied by a zero matching probability wherever used).
    """

    def __init__(self, dest_nodes, probs, fares=None, od=None, n_nodes=None):
        self.dest_nodes = np.asarray(dest_nodes, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=float)
        if self.probs.ndim != 2 or self.probs.shape[1] != len(self.dest_nodes):
            raise ValidationError("probs must be (n_nodes, n_destinations)")
        self.n_nodes = self.probs.shape[0] if n_nodes is None else n_nodes
        if np.any(self.probs < 0):
            raise ValidationError("negative destination probability")
        # self-probability must vanish
        for k, d in enumerate(self.dest_nodes):
            if d < self.n_nodes and self.probs[d, k] != 0.0:
                raise ValidationError(f"destination probability to self at node {d}")
        self.fares = None if fares is None else np.asarray(fares, dtype=float)
        if self.fares is not None and self.fares.shape != self.probs.shape:
            raise ValidationError("fares shape does not match probs")
        self.od = od
        self.probs.setflags(write=False)
        if self.fares is not None:
            self.fares.setflags(write=False)

    @property
    def n_destinations(self) -> int:
        return len(self.dest_nodes)

    def dest_column(self, node: int):
        """Column index of destination `node`, or None if it receives no demand."""
        pos = np.searchsorted(self.dest_nodes, node)
        if pos < len(self.dest_nodes) and self.dest_nodes[pos] == node:
            return int(pos)
        return None

    def with_fares(self, fares) -> DemandModel:
        return DemandModel(self.dest_nodes, self.probs, fares=fares, od=self.od,
                           n_nodes=self.n_nodes)


@dataclass(frozen=True)
class LinkEnvironment:
    """Per-link state of the two response functions at a mass distribution."""

    u: np.ndarray  # total mass
    t: np.ndarray  # travel time, hours
    f: np.ndarray  # empty flow, per hour
    m: np.ndarray  # matching probability


@dataclass(frozen=True)
class ParseReport:
    n_nodes: int
    n_links: int
    n_od_pairs: int
    total_demand: float


def travel_time(link: Link, u: float) -> float:
    """Travel time t(u) = t0 * (1 + u / cap) for a single link."""
    if u < 0:
        raise DomainError(f"negative mass u={u}")
    return link.t0 * (1.0 + (u + link.background) / link.cap)


def matching_probability(link: Link, f: float) -> float:
    """Probability an empty vehicle on `link` receives an order by the link end.

    Zero when the link has no passenger arrivals; 1 at zero empty flow;
    otherwise min(lam/f, 1 - exp(-gamma*lam/f)). Matched flow f*m never
    exceeds lam.
    """
    if f < 0:
        raise DomainError(f"negative empty flow f={f}")
    if link.lam == 0:
        return 0.0
    if f == 0:
        return 1.0
    r = link.lam / f
    return min(r, -np.expm1(-link.gamma * r))


def _read_metadata(lines, path):
    """Consume `<KEY> value` header lines up to <END OF METADATA>."""
    meta = {}
    body_at = 0
    for idx, raw in enumerate(lines):
        s = raw.strip()
        if not s:
            continue
        if s.startswith("<"):
            close = s.find(">")
            if close < 0:
                raise ParseError("unterminated metadata tag", path=path, line=idx + 1)
            key = s[1:close].strip().upper()
            if key == "END OF METADATA":
                body_at = idx + 1
                break
            meta[key] = s[close + 1:].strip()
        else:
            # No metadata block at all: treat everything as body.
            body_at = idx
            break
    else:
        body_at = len(lines)
    return meta, body_at


def parse_link_file(path, *, time_unit="hours", length_mode="from_time",
                    capacity_mode="geometry", default_gamma=0.8,
                    speed_kmh=DEFAULT_SPEED_KMH, lanes=2.0, vehicle_length_m=6.0):
    """Parse a transportation-test-problems style link file.

    Rows are `init_node term_node capacity length free_flow_time ...`; the
    header carries `<NUMBER OF NODES>` and `<NUMBER OF LINKS>`. Returns
    (rows, node_label_map, n_nodes) where each row is a Link with internal
    node indices and geometry-derived defaults applied.
    """
    with open(path) as fh:
        lines = fh.readlines()
    meta, body_at = _read_metadata(lines, path)

    raw_rows = []
    for idx in range(body_at, len(lines)):
        s = lines[idx].strip()
        if not s or s.startswith("~") or s.startswith("#"):
            continue
        s = s.rstrip(";").strip()
        if not s:
            continue
        parts = s.split()
        if len(parts) < 5:
            raise ParseError(
                f"link row needs at least 5 columns, got {len(parts)}",
                path=path, line=idx + 1,
            )
        try:
            init, term = int(float(parts[0])), int(float(parts[1]))
            capacity, length, fft = (float(parts[2]), float(parts[3]), float(parts[4]))
        except ValueError as exc:
            raise ParseError(f"non-numeric link field: {exc}", path=path, line=idx + 1)
        raw_rows.append((idx + 1, init, term, capacity, length, fft))

    if not raw_rows:
        raise ParseError("link file contains zero links", path=path)

    declared_links = meta.get("NUMBER OF LINKS")
    if declared_links is not None and int(declared_links) != len(raw_rows):
        raise ParseError(
            f"header declares {declared_links} links, file has {len(raw_rows)}",
            path=path,
        )

    labels = sorted({r[1] for r in raw_rows} | {r[2] for r in raw_rows})
    declared_nodes = meta.get("NUMBER OF NODES")
    if declared_nodes is not None and int(declared_nodes) != len(labels):
        raise ParseError(
            f"header declares {declared_nodes} nodes, file references {len(labels)}",
            path=path,
        )
    label_to_idx = {lab: i for i, lab in enumerate(labels)}

    if time_unit not in ("hours", "minutes"):
        raise ValidationError(f"unknown time unit {time_unit!r}")
    tscale = 1.0 if time_unit == "hours" else 1.0 / 60.0

    links = []
    for line_no, init, term, capacity, length, fft in raw_rows:
        t0 = fft * tscale
        if t0 <= 0:
            raise ValidationError(f"non-positive free-flow time at {path}:{line_no}")
        if length_mode == "from_time":
            ell = t0 * speed_kmh
        elif length_mode == "file":
            ell = length
        else:
            raise ValidationError(f"unknown length_mode {length_mode!r}")
        if capacity_mode == "geometry":
            cap = lanes * (ell * 1000.0 / vehicle_length_m)
        elif capacity_mode == "file":
            cap = capacity
        else:
            raise ValidationError(f"unknown capacity_mode {capacity_mode!r}")
        links.append(Link(
            id=len(links) + 1,
            tail=label_to_idx[init],
            head=label_to_idx[term],
            t0=t0, cap=cap, length=ell, gamma=default_gamma,
        ))
    return links, labels, len(labels)


def parse_trips_file(path, label_to_idx):
    """Parse an OD-matrix trips file into a dense rate matrix (per hour)."""
    n = len(label_to_idx)
    od = np.zeros((n, n))
    with open(path) as fh:
        lines = fh.readlines()
    _, body_at = _read_metadata(lines, path)
    origin = None
    n_pairs = 0
    for idx in range(body_at, len(lines)):
        s = lines[idx].strip()
        if not s or s.startswith("~"):
            continue
        if s.lower().startswith("origin"):
            parts = s.split()
            if len(parts) != 2:
                raise ParseError("malformed Origin line", path=path, line=idx + 1)
            try:
                lab = int(float(parts[1]))
            except ValueError:
                raise ParseError("non-numeric origin id", path=path, line=idx + 1)
            if lab not in label_to_idx:
                raise StructuralError(f"trips origin {lab} not in network ({path}:{idx + 1})")
            origin = label_to_idx[lab]
            continue
        if origin is None:
            raise ParseError("destination entry before any Origin line", path=path, line=idx + 1)
        for chunk in s.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            if ":" not in chunk:
                raise ParseError(f"malformed OD entry {chunk!r}", path=path, line=idx + 1)
            dlab_s, rate_s = chunk.split(":", 1)
            try:
                dlab = int(float(dlab_s))
                rate = float(rate_s)
            except ValueError:
                raise ParseError(f"non-numeric OD entry {chunk!r}", path=path, line=idx + 1)
            if dlab not in label_to_idx:
                raise StructuralError(f"trips destination {dlab} not in network ({path}:{idx + 1})")
            if rate < 0:
                raise ValidationError(f"negative demand entry at {path}:{idx + 1}")
            d = label_to_idx[dlab]
            if d != origin and rate > 0:
                if od[origin, d] == 0:
                    n_pairs += 1
                od[origin, d] += rate
    return od, n_pairs


def derive_demand(od, network: Network):
    """Distribute an OD rate matrix onto the link-arrival demand model.

    Node j's origin total O_j is split uniformly over j's incoming links
    (passengers hail at j and are picked up by vehicles finishing a link
    into j); destination probabilities are the normalized OD rows. Returns
    (network with per-link lam set, DemandModel).
    """
    od = np.asarray(od, dtype=float)
    if od.shape != (network.n_nodes, network.n_nodes):
        raise ValidationError(
            f"od matrix shape {od.shape} does not match node count {network.n_nodes}"
        )
    if np.any(od < 0):
        raise ValidationError("negative demand entry")
    od = od.copy()
    np.fill_diagonal(od, 0.0)

    origin_totals = od.sum(axis=1)
    for j in np.nonzero(origin_totals > 0)[0]:
        if network.indeg[j] == 0:
            raise StructuralError(
                f"node {network.node_ids[j]} has positive origin demand but no incoming links"
            )

    per_in = np.where(network.indeg > 0, origin_totals / np.maximum(network.indeg, 1), 0.0)
    lam = per_in[network.head]

    dest_nodes = np.nonzero(od.sum(axis=0) > 0)[0]
    if len(dest_nodes) == 0:
        raise ValidationError("od matrix has no positive entries")
    probs = np.zeros((network.n_nodes, len(dest_nodes)))
    sub = od[:, dest_nodes]
    rows = origin_totals > 0
    probs[rows] = sub[rows] / origin_totals[rows, None]
    # uniform filler rows: never used (m=0 there) but keeps rows stochastic
    for i in np.nonzero(~rows)[0]:
        valid = dest_nodes != i
        if valid.any():
            probs[i, valid] = 1.0 / valid.sum()

    links = [replace(l, lam=float(lam[a])) for a, l in enumerate(network.links)]
    return network.with_links(links), DemandModel(dest_nodes, probs, od=od,
                                                  n_nodes=network.n_nodes)


def _read_override_csv(path, columns):
    """Read a `link_id,<fields>` CSV, tolerating an optional header row."""
    rows = []
    with open(path, newline="") as fh:
        for idx, rec in enumerate(csv.reader(fh)):
            if not rec or not "".join(rec).strip():
                continue
            first = rec[0].strip().lower()
            if idx == 0 and first in ("link_id", "link", "id"):
                continue
            if len(rec) < 2:
                raise ParseError(f"expected at least 2 columns, got {len(rec)}",
                                 path=path, line=idx + 1)
            try:
                rows.append((int(rec[0]), [float(v) if v.strip() else None
                                           for v in rec[1:1 + columns]]))
            except ValueError as exc:
                raise ParseError(f"bad override row: {exc}", path=path, line=idx + 1)
    return rows


def apply_lambda_override(network: Network, path) -> Network:
    """Set per-link arrival rates (and optionally frictions) from a CSV."""
    by_id = {l.id: a for a, l in enumerate(network.links)}
    links = list(network.links)
    for link_id, vals in _read_override_csv(path, 2):
        if link_id not in by_id:
            raise StructuralError(f"lambda override references unknown link id {link_id}")
        a = by_id[link_id]
        lam = vals[0]
        gamma = vals[1] if len(vals) > 1 and vals[1] is not None else links[a].gamma
        if lam is None or lam < 0:
            raise ValidationError(f"invalid arrival rate for link id {link_id}")
        links[a] = replace(links[a], lam=lam, gamma=gamma)
    return network.with_links(links)


def apply_tolls(network: Network, path) -> Network:
    by_id = {l.id: a for a, l in enumerate(network.links)}
    links = list(network.links)
    for link_id, vals in _read_override_csv(path, 1):
        if link_id not in by_id:
            raise StructuralError(f"toll file references unknown link id {link_id}")
        if vals[0] is None or vals[0] < 0:
            raise ValidationError(f"invalid toll for link id {link_id}")
        links[by_id[link_id]] = replace(links[by_id[link_id]], toll=vals[0])
    return network.with_links(links)


def apply_background(network: Network, path) -> Network:
    by_id = {l.id: a for a, l in enumerate(network.links)}
    links = list(network.links)
    for link_id, vals in _read_override_csv(path, 1):
        if link_id not in by_id:
            raise StructuralError(f"background file references unknown link id {link_id}")
        if vals[0] is None or vals[0] < 0:
            raise ValidationError(f"invalid background mass for link id {link_id}")
        links[by_id[link_id]] = replace(links[by_id[link_id]], background=vals[0])
    return network.with_links(links)


def compute_fares(network: Network, demand: DemandModel, *,
                  free_flow_speed: float = DEFAULT_SPEED_KMH, base: float = 3.0,
                  per_unit: float = 0.70, unit: float = 0.2) -> np.ndarray:
    """Fare matrix chi[j, k] = base + per_unit * (dist_jk / unit).

    dist is the fastest free-flow path time from j to destination k times
    `free_flow_speed` (km/h), converted to miles; `unit` is in miles. Entries
    for j == destination are set to 0 and never queried.
    """
    # CSR sums duplicate (tail, head) entries, so parallel links are collapsed
    # to the fastest one by hand before building the graph
    order = np.lexsort((network.head, network.tail))
    t_sorted = network.t0[order]
    pairs = np.stack([network.tail[order], network.head[order]], axis=1)
    keep = np.ones(len(order), dtype=bool)
    keep[1:] = np.any(pairs[1:] != pairs[:-1], axis=1)
    group = np.cumsum(keep) - 1
    tmin = np.full(group[-1] + 1, np.inf)
    np.minimum.at(tmin, group, t_sorted)
    graph = csr_matrix((tmin, (pairs[keep, 0], pairs[keep, 1])),
                       shape=(network.n_nodes, network.n_nodes))

    dist_time = dijkstra(graph, directed=True, indices=None)
    chi = np.zeros((network.n_nodes, demand.n_destinations))
    for k, d in enumerate(demand.dest_nodes):
        tt = dist_time[:, d]
        bad = ~np.isfinite(tt) & (demand.probs[:, k] > 0)
        if np.any(bad):
            j = int(np.argmax(bad))
            raise StructuralError(
                f"destination {network.node_ids[d]} unreachable from node "
                f"{network.node_ids[j]} with positive demand"
            )
        miles = np.where(np.isfinite(tt), tt, 0.0) * free_flow_speed * MILES_PER_KM
        chi[:, k] = base + per_unit * (miles / unit)
        chi[d, k] = 0.0  # self-pair, never queried
    return chi


def parse_network(link_file, demand_file=None, *, M=1.0, time_unit="hours",
                  length_mode="from_time", capacity_mode="geometry",
                  default_gamma=0.8, speed_kmh=DEFAULT_SPEED_KMH, lanes=2.0,
                  vehicle_length_m=6.0, lambda_file=None, toll_file=None,
                  background_file=None, fare_base=3.0, fare_per_unit=0.70,
                  fare_unit_miles=0.2, compute_fare_matrix=True):
    """Load a network (and optional demand) from the standard text formats.

    Returns (Network, DemandModel or None, ParseReport). When a trips file is
    given, per-link arrival rates and destination probabilities are derived
    from the OD matrix and the fare matrix is computed from free-flow
    shortest-path times unless disabled.
    """
    links, labels, n_nodes = parse_link_file(
        link_file, time_unit=time_unit, length_mode=length_mode,
        capacity_mode=capacity_mode, default_gamma=default_gamma,
        speed_kmh=speed_kmh, lanes=lanes, vehicle_length_m=vehicle_length_m,
    )
    network = Network(links, M=M, n_nodes=n_nodes, node_ids=labels)

    demand = None
    n_pairs = 0
    total = 0.0
    if demand_file is not None:
        label_to_idx = {lab: i for i, lab in enumerate(labels)}
        od, n_pairs = parse_trips_file(demand_file, label_to_idx)
        total = float(od.sum())
        network, demand = derive_demand(od, network)

    if lambda_file is not None:
        network = apply_lambda_override(network, lambda_file)
    if toll_file is not None:
        network = apply_tolls(network, toll_file)
    if background_file is not None:
        network = apply_background(network, background_file)

    if demand is not None and compute_fare_matrix:
        chi = compute_fares(network, demand, free_flow_speed=speed_kmh,
                            base=fare_base, per_unit=fare_per_unit,
                            unit=fare_unit_miles)
        demand = demand.with_fares(chi)

    report = ParseReport(n_nodes=network.n_nodes, n_links=network.n_links,
                         n_od_pairs=n_pairs, total_demand=total)
    return network, demand, report
