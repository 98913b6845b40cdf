"""Hand-built networks shared across the test modules.

Everything here is constructed directly from Link objects so the tests do
not depend on the parsers (the parsers get their own fixtures on disk).
"""

import numpy as np

from mter import DemandModel, Link, Network, compute_fares, derive_demand


def shuttle(lam=30.0, gamma=0.8, M=10.0, t_ab=0.1, t_ba=0.1, fare=5.0,
            cap=1e12, toll_ab=0.0):
    """Two nodes, one link each way; orders appear only at node 1 bound for 0.

    Passengers wait on the outbound link 0->1, so matching happens at node 1
    and every ride occupies the return link. Three chain states in total,
    which keeps every stationary quantity solvable by hand.
    """
    links = [
        Link(id=1, tail=0, head=1, t0=t_ab, cap=cap, length=t_ab * 64.0,
             lam=lam, gamma=gamma, toll=toll_ab),
        Link(id=2, tail=1, head=0, t0=t_ba, cap=cap, length=t_ba * 64.0,
             lam=0.0, gamma=gamma),
    ]
    network = Network(links, M=M)
    probs = np.zeros((2, 1))
    probs[1, 0] = 1.0  # node 1 sends every order to node 0
    fares = np.array([[0.0], [fare]])
    demand = DemandModel(dest_nodes=[0], probs=probs, fares=fares)
    return network, demand


def two_cycle(M=10.0, t=0.25, lam=0.0, gamma=0.8, cap=1e12):
    """Symmetric 2-node cycle; with lam=0 it is a pure routing chain."""
    links = [
        Link(id=1, tail=0, head=1, t0=t, cap=cap, length=t * 64.0, lam=lam,
             gamma=gamma),
        Link(id=2, tail=1, head=0, t0=t, cap=cap, length=t * 64.0, lam=lam,
             gamma=gamma),
    ]
    network = Network(links, M=M)
    if lam > 0:
        probs = np.array([[0.0, 1.0], [1.0, 0.0]])
        fares = np.full((2, 2), 4.0)
        np.fill_diagonal(fares, 0.0)
        demand = DemandModel(dest_nodes=[0, 1], probs=probs, fares=fares)
    else:
        demand = DemandModel(dest_nodes=np.empty(0, dtype=int),
                             probs=np.zeros((2, 0)), fares=np.zeros((2, 0)))
    return network, demand


def continuum_pair(M=1.0):
    """Two nodes, two parallel forward links and one return link.

    Travel times follow t = 1/(1 - 2u) on each forward link and
    t = 1/(1 - u) on the return link, so every split of the forward mass
    with u_fwd = (1 - u_back)/2 per link balances flows identically.
    No passengers: the equilibrium set is a continuum. The hyperbolic time
    law is continued linearly past 90% of its pole so arbitrary feasible
    masses (e.g. random starts) still see finite positive times; the
    candidate curve itself stays well inside the untouched region.
    """
    def hyper(c):
        lim = 0.9 / c
        def fn(u, c=c, lim=lim):
            if u < lim:
                return 1.0 / (1.0 - c * u)
            return 10.0 + 100.0 * c * (u - lim)
        return fn

    links = [
        Link(id=1, tail=0, head=1, t0=1.0, cap=1.0, length=1.0),
        Link(id=2, tail=0, head=1, t0=1.0, cap=1.0, length=1.0),
        Link(id=3, tail=1, head=0, t0=1.0, cap=1.0, length=1.0),
    ]
    time_fns = [hyper(2.0), hyper(2.0), hyper(1.0)]
    network = Network(links, M=M, time_fns=time_fns)
    demand = DemandModel(dest_nodes=np.empty(0, dtype=int),
                         probs=np.zeros((2, 0)), fares=np.zeros((2, 0)))
    return network, demand


def ring_with_demand(n=4, M=40.0, lam=25.0, gamma=0.8, t0=0.08, cap=1e12,
                     chord=True):
    """Small strongly-connected test net: directed ring plus reverse chords.

    Demand originates everywhere and is spread over two destinations so the
    hired blocks are exercised without blowing up the state count.
    """
    links = []
    lid = 1
    for i in range(n):
        links.append(Link(id=lid, tail=i, head=(i + 1) % n,
                          t0=t0 * (1 + 0.2 * i), cap=cap,
                          length=t0 * 64.0, lam=lam, gamma=gamma))
        lid += 1
    if chord:
        for i in range(n):
            links.append(Link(id=lid, tail=(i + 1) % n, head=i,
                              t0=t0 * (1.5 + 0.1 * i), cap=cap,
                              length=t0 * 70.0, lam=lam / 2, gamma=gamma))
            lid += 1
    network = Network(links, M=M)
    dest = [0, n // 2]
    probs = np.zeros((n, 2))
    for i in range(n):
        alive = [k for k, d in enumerate(dest) if d != i]
        for k in alive:
            probs[i, k] = 1.0 / len(alive)
    fares = 3.0 + np.abs(np.subtract.outer(np.arange(n), np.array(dest))) * 1.5
    fares = fares.astype(float)
    for k, d in enumerate(dest):
        fares[d, k] = 0.0
    demand = DemandModel(dest_nodes=dest, probs=probs, fares=fares)
    return network, demand


def random_instance(seed, n_nodes=5, extra_links=4, M=30.0, lam_scale=20.0):
    """Random strongly-connected instance: a ring plus random extra links.

    Used for property tests and the loading-vs-simulation cross checks.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    links = []
    lid = 1
    for i in range(n_nodes):
        links.append(Link(id=lid, tail=i, head=(i + 1) % n_nodes,
                          t0=float(rng.uniform(0.05, 0.2)), cap=1e12,
                          length=float(rng.uniform(2.0, 10.0)),
                          lam=float(rng.uniform(0.0, lam_scale)),
                          gamma=float(rng.uniform(0.5, 1.5))))
        lid += 1
    tries = 0
    while len(links) < n_nodes + extra_links and tries < 100:
        tries += 1
        a, b = rng.integers(0, n_nodes, size=2)
        if a == b:
            continue
        if any(l.tail == a and l.head == b for l in links):
            continue
        links.append(Link(id=lid, tail=int(a), head=int(b),
                          t0=float(rng.uniform(0.05, 0.2)), cap=1e12,
                          length=float(rng.uniform(2.0, 10.0)),
                          lam=float(rng.uniform(0.0, lam_scale)),
                          gamma=float(rng.uniform(0.5, 1.5))))
        lid += 1
    network = Network(links, M=M)

    n_dest = int(rng.integers(1, min(3, n_nodes)) + 1)
    dest = sorted(rng.choice(n_nodes, size=n_dest, replace=False).tolist())
    probs = np.zeros((n_nodes, n_dest))
    for i in range(n_nodes):
        alive = [k for k, d in enumerate(dest) if d != i]
        if not alive:
            continue
        w = rng.uniform(0.2, 1.0, size=len(alive))
        probs[i, alive] = w / w.sum()
    fares = rng.uniform(2.0, 8.0, size=(n_nodes, n_dest))
    for k, d in enumerate(dest):
        fares[d, k] = 0.0
    demand = DemandModel(dest_nodes=dest, probs=probs, fares=fares)
    return network, demand


def downtown_suburb(M=18000.0):
    """Seven nodes: a dense short-link core (0-3) and a sparse periphery.

    Link pairs (0,1) and (0,4) span 15 km at 0.3 hr free flow; all other
    pairs span 5 km at 0.1 hr. Low demand (1,000/hr) on links whose both
    endpoints lie in {0, 4, 5, 6}; high demand (5,000/hr) on the eight links
    touching the core nodes 1-3. Fares are flat so an order's worth does not
    depend on trip length; comparisons on this fixture then isolate where a
    trip strands the driver rather than which fares clear a reservation
    threshold.
    """
    pairs_long = [(0, 1), (0, 4)]
    pairs_short = [(1, 2), (1, 3), (2, 3), (4, 5), (4, 6), (5, 6)]
    low_demand = {0, 4, 5, 6}
    links = []
    lid = 1
    for (a, b) in pairs_long + pairs_short:
        length, t0 = (15.0, 0.3) if (a, b) in pairs_long else (5.0, 0.1)
        lam = 1000.0 if (a in low_demand and b in low_demand) else 5000.0
        for tail, head in ((a, b), (b, a)):
            links.append(Link(id=lid, tail=tail, head=head, t0=t0,
                              cap=2 * length * 1000 / 6, length=length,
                              lam=lam, gamma=0.8))
            lid += 1
    network = Network(links, M=M)

    n = network.n_nodes
    dest_probs = {
        0: {1: 0.5, 4: 0.5},
        1: {0: 0.1, 2: 0.9},
        2: {3: 1.0},
        3: {1: 1.0},
        4: {0: 0.1, 5: 0.9},
        5: {6: 1.0},
        6: {4: 1.0},
    }
    dest_nodes = sorted({d for row in dest_probs.values() for d in row})
    probs = np.zeros((n, len(dest_nodes)))
    col = {d: k for k, d in enumerate(dest_nodes)}
    for i, row in dest_probs.items():
        for d, p in row.items():
            probs[i, col[d]] = p
    fares = np.full((n, len(dest_nodes)), 10.0)
    for k, d in enumerate(dest_nodes):
        fares[d, k] = 0.0
    demand = DemandModel(dest_nodes=dest_nodes, probs=probs, fares=fares)
    return network, demand


def _with_computed_fares(network, demand):
    fares = compute_fares(network, demand)
    return network, DemandModel(dest_nodes=demand.dest_nodes,
                                probs=demand.probs, fares=fares,
                                n_nodes=demand.n_nodes)


def braess(M=2000.0, with_shortcut=False, lam=1000.0):
    """Four-node net where a free shortcut can hurt steady-state outcomes.

    Links: (0,1) short/cheap into the bottleneck, (1,3) and (0,2)+(2,3) the
    two routes, (3,0) the return. The optional shortcut (1,2) has near-zero
    time and effectively infinite capacity. Orders appear only on the return
    link (3,0) and every passenger rides to node 3.
    """
    defs = [
        (0, 1, 0.009, 150.0, 0.0),
        (1, 3, 0.012, 200.0, 0.0),
        (0, 2, 0.012, 200.0, 0.0),
        (2, 3, 0.009, 200.0, 0.0),
        (3, 0, 0.012, 200.0, lam),
    ]
    if with_shortcut:
        defs.append((1, 2, 1e-6, 1e12, 0.0))
    links = [Link(id=i + 1, tail=a, head=b, t0=t0, cap=cap,
                  length=t0 * 64.0, lam=l, gamma=0.8)
             for i, (a, b, t0, cap, l) in enumerate(defs)]
    network = Network(links, M=M)
    probs = np.zeros((4, 1))
    probs[0, 0] = 1.0  # orders arrive at head(3->0) = node 0, destination 3
    demand = DemandModel(dest_nodes=[3], probs=probs)
    return _with_computed_fares(network, demand)
