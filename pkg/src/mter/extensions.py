"""Model variants: endogenous participation, myopic drivers, a
congestion-unaware ablation, and the specialized directed-cycle solver.

Participation makes the circulating mass endogenous: each node holds a
potential pool whose members join with logistic probability in the empty
value at that node, and the loading normalization chases the implied total
every outer iteration. Myopic drivers zero the hired continuation value at
the destination instead of chaining into the empty value. The
congestion-unaware ablation first solves the model with travel times pinned
at free flow, then loads the frozen policies onto the congestible network.
The cycle solver exploits the closed-form fixed point on a single directed
cycle and reports contraction diagnostics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .equilibrium import (EquilibriumResult, MapState, SolverConfig, _env_at,
                          _solution_residuals, _stage, fixed_point_map, gap,
                          solve_equilibrium, step_update)
from .errors import (ConvergenceError, ModelViolationError, ValidationError)
from .loading import MassDistribution
from .metrics import compute_metrics
from .network import Network
from .smdp import SMDPParams

CYCLE_GRID = 1000


@dataclass(frozen=True)
class ParticipationParams:
    """Per-node potential pools and the logistic entry model."""

    pools: np.ndarray
    zeta: float = 0.01
    outside_value: float = 0.0

    def __post_init__(self):
        pools = np.asarray(self.pools, dtype=float)
        object.__setattr__(self, "pools", pools)
        if np.any(pools < 0):
            raise ValidationError("potential pools must be nonnegative")
        if not pools.sum() > 0:
            raise ValidationError("total potential pool must be positive")
        if not self.zeta > 0:
            raise ValidationError(f"dispersion zeta must be positive, got {self.zeta}")

    def shares(self, sigma: np.ndarray) -> np.ndarray:
        """Logistic participation probability per node."""
        return expit(self.zeta * (sigma - self.outside_value))


@dataclass
class ParticipationResult:
    result: EquilibriumResult
    participation: np.ndarray
    participating_mass: float
    rate: float


def solve_participation(network: Network, demand, params: SMDPParams,
                        part: ParticipationParams, config: SolverConfig,
                        **kwargs) -> ParticipationResult:
    """Equilibrium with the pool size driven by node-level entry decisions.

    Identical to the fixed-pool iteration except that the loading stage
    normalizes to sum_i M_i P_i(sigma_i), recomputed from the current empty
    values every outer iteration.
    """
    if len(part.pools) != network.n_nodes:
        raise ValidationError(
            f"need one pool per node, got {len(part.pools)} for {network.n_nodes}"
        )

    def pool_fn(values):
        return float(np.sum(part.pools * part.shares(values.sigma)))

    total = float(part.pools.sum())
    m = network.n_links
    init = MassDistribution(x=np.full(m, 0.5 * total / m),
                            y=np.zeros((m, demand.n_destinations)))
    res = solve_equilibrium(network, demand, params, config, init=init,
                            pool_fn=pool_fn, **kwargs)
    shares = part.shares(res.values.sigma)
    mass = float(np.sum(part.pools * shares))
    return ParticipationResult(result=res, participation=shares,
                               participating_mass=mass, rate=mass / total)


def solve_myopic(network: Network, demand, params: SMDPParams,
                 config: SolverConfig, **kwargs) -> EquilibriumResult:
    """Same pipeline with the hired continuation zeroed at the destination."""
    return solve_equilibrium(network, demand, replace(params, myopic=True),
                             config, **kwargs)


def congestion_unaware_load(network: Network, demand, params: SMDPParams,
                            config: SolverConfig, *, phase2_floor: float = 0.05,
                            trace_sink=None) -> EquilibriumResult:
    """Two-phase ablation: free-flow equilibrium, then loading-only feedback.

    Phase 1 solves the full model with travel times pinned at free flow and
    freezes the resulting policies. Phase 2 iterates masses -> (t, m) ->
    stationary masses under those exact policies with a floored MSA step
    until the mass change is below tolerance. The returned values and
    policies are phase 1's, untouched; masses and environment are phase 2's.
    """
    with _stage("phase1"):
        res1 = solve_equilibrium(network, demand, params,
                                 replace(config, pin_free_flow=True))
    if not res1.converged:
        return res1

    cfg2 = replace(config, step_rule="msa_floor", floor=phase2_floor,
                   pin_free_flow=False)
    policies = res1.policies
    masses = res1.masses
    state = MapState()
    trace = list(res1.trace)
    k = 0
    t0 = time.perf_counter()
    with _stage("phase2"):
        while True:
            env = _env_at(masses, network, False)
            mapped = _load_frozen(policies, env, demand, network, cfg2, state)
            g = gap(masses.x, masses.y, mapped.x, mapped.y)
            step = 0.0 if g <= cfg2.tol else max(1.0 / (k + 1), phase2_floor)
            row = (k, g, step, time.perf_counter() - t0)
            trace.append(row)
            if trace_sink is not None:
                trace_sink(row)
            if g <= cfg2.tol:
                converged = True
                break
            if k >= cfg2.max_iter:
                converged = False
                break
            masses, _, _ = step_update("msa_floor", k, masses, mapped, None,
                                       cfg2, target_mass=network.M)
            k += 1

    residuals = _solution_residuals(masses, mapped, env, res1.values, policies,
                                    demand, network, params)
    return EquilibriumResult(
        masses=masses, env=env, values=res1.values, policies=policies,
        mapped=mapped, gap=g, converged=converged, n_iter=k, trace=trace,
        residuals=residuals, seed=res1.seed, runs=[res1])


def _load_frozen(policies, env, demand, network, config, state):
    """One loading application under frozen policies (phase 2 inner step)."""
    from .loading import (DIRECT_STATE_LIMIT, StateIndex, build_chain,
                          prune_transient, stationary_flows_blocked,
                          stationary_masses)

    if state.index is None:
        state.index = StateIndex(network, demand.dest_nodes)
    method = config.loading
    if method == "auto":
        method = "direct" if state.index.n_states <= DIRECT_STATE_LIMIT else "blocked"
    if method == "blocked":
        mapped = stationary_flows_blocked(policies, env, demand, network,
                                          network.M, tol=config.loading_tol,
                                          warm=state.warm_masses)
    else:
        chain = build_chain(policies, env, demand, network)
        mapped = stationary_masses(prune_transient(chain), network.M,
                                   method="direct")
    state.warm_masses = mapped
    return mapped


class CycleProblem:
    """Total-mass equilibrium on a single directed cycle.

    `time_fns[a]` maps the link's total mass to its travel time. Validation
    samples each u -> u/t(u) on a grid over [0, M] to confirm the strict
    monotonicity the fixed point relies on, and estimates the contraction
    modulus kappa = max u t'(u)/t(u) on the same grid.
    """

    def __init__(self, time_fns, M: float, labels=None):
        if len(time_fns) < 2:
            raise ValidationError("a cycle needs at least two links")
        if not M > 0:
            raise ValidationError(f"total mass must be positive, got {M}")
        self.time_fns = list(time_fns)
        self.M = float(M)
        self.labels = labels or [str(i) for i in range(len(time_fns))]
        self.kappa_hat = self._validate()

    @classmethod
    def linear(cls, t0, cbar, M: float) -> "CycleProblem":
        t0 = np.asarray(t0, dtype=float)
        cbar = np.asarray(cbar, dtype=float)
        fns = [(lambda a, b: (lambda u: a * (1.0 + u / b)))(float(t0[i]), float(cbar[i]))
               for i in range(len(t0))]
        return cls(fns, M)

    def times(self, u: np.ndarray) -> np.ndarray:
        return np.array([fn(ui) for fn, ui in zip(self.time_fns, u)])

    def _validate(self) -> float:
        grid = np.linspace(0.0, self.M, CYCLE_GRID)
        kappa = 0.0
        h = self.M / (CYCLE_GRID * 64.0)
        for idx, fn in enumerate(self.time_fns):
            t = np.array([fn(g) for g in grid])
            if np.any(t <= 0) or not np.all(np.isfinite(t)):
                raise ValidationError(f"link {self.labels[idx]}: invalid travel time")
            ratio = grid[1:] / t[1:]
            if np.any(np.diff(ratio) <= 0) or not ratio[0] > 0:
                raise ModelViolationError(
                    f"link {self.labels[idx]}: u/t(u) is not strictly increasing"
                )
            tp = np.array([(fn(g + h) - fn(max(g - h, 0.0))) /
                           (h + min(g, h)) for g in grid])
            kappa = max(kappa, float(np.max(grid * tp / t)))
        if kappa >= 1.0:
            raise ModelViolationError(
                f"elasticity bound {kappa:.6f} >= 1: times rise faster than mass"
            )
        return kappa


def cycle_map(problem: CycleProblem, u: np.ndarray) -> np.ndarray:
    """One application of u -> M t(u) / sum t(u)."""
    t = problem.times(u)
    return problem.M * t / t.sum()


def spread(u: np.ndarray, v: np.ndarray) -> float:
    """Log-ratio spread between two positive vectors."""
    r = np.asarray(u, dtype=float) / np.asarray(v, dtype=float)
    return float(np.log(r.max() / r.min()))


@dataclass(frozen=True)
class CycleReport:
    u: np.ndarray
    rho: float
    iterations: int
    spread_final: float
    contraction_factor: float
    kappa_hat: float


def solve_cycle(problem: CycleProblem, tol: float = 1e-10,
                max_iter: int = 100_000,
                start: np.ndarray | None = None) -> CycleReport:
    """Iterate the cycle map to its unique positive fixed point.

    Stops when the spread between consecutive iterates drops below `tol`;
    reports the common traversal flow rho = u*/t(u*) and the largest
    observed per-iteration spread ratio.
    """
    n = len(problem.time_fns)
    if start is None:
        u = np.full(n, problem.M / n)
    else:
        u = np.asarray(start, dtype=float).copy()
        if len(u) != n or np.any(u <= 0) or abs(u.sum() - problem.M) > 1e-9 * problem.M:
            raise ValidationError("start must be positive and sum to the total mass")
    worst = 0.0
    d_prev = None
    for k in range(1, max_iter + 1):
        u_next = cycle_map(problem, u)
        d = spread(u_next, u)
        if d_prev is not None and d_prev > 1e-300:
            worst = max(worst, d / d_prev)
        d_prev = d
        u = u_next
        if d <= tol:
            t = problem.times(u)
            return CycleReport(u=u, rho=float(np.mean(u / t)), iterations=k,
                               spread_final=d, contraction_factor=worst,
                               kappa_hat=problem.kappa_hat)
    raise ConvergenceError("cycle iteration did not contract to tolerance",
                           residual=d_prev, iterations=max_iter)


SWEEPABLE = ("pool", "gamma", "beta", "theta", "zeta")


def sweep_parameter(network: Network, demand, params: SMDPParams,
                    config: SolverConfig, name: str, values,
                    part: ParticipationParams | None = None) -> list[dict]:
    """Solve once per parameter value; returns one metrics row per point.

    `pool` scales the fixed pool (or every potential pool when `part` is
    given); `gamma` overrides the matching elasticity on every link; `beta`,
    `theta` adjust driver preferences; `zeta` requires `part`.
    """
    if name not in SWEEPABLE:
        raise ValidationError(f"cannot sweep {name!r}; one of {SWEEPABLE}")
    if name == "zeta" and part is None:
        raise ValidationError("sweeping zeta requires participation parameters")

    rows = []
    for val in values:
        v = float(val)
        net_v, params_v, part_v = network, params, part
        if name == "pool":
            if part is not None:
                scale = v / float(part.pools.sum())
                part_v = replace(part, pools=part.pools * scale)
            else:
                net_v = network.with_pool(v)
        elif name == "gamma":
            net_v = network.with_links([replace(l, gamma=v)
                                        for l in network.links])
        elif name == "beta":
            params_v = replace(params, beta=v)
        elif name == "theta":
            params_v = replace(params, theta=v)
        elif name == "zeta":
            part_v = replace(part, zeta=v)

        if part_v is not None:
            pres = solve_participation(net_v, demand, params_v, part_v, config)
            res = pres.result
            participation = pres.rate
        else:
            res = solve_equilibrium(net_v, demand, params_v, config)
            participation = ""
        metrics = compute_metrics(res.masses, res.env, res.policies, demand,
                                  net_v, cost_empty=params_v.cost_empty,
                                  cost_hired=params_v.cost_hired)
        rows.append({
            "param_value": v,
            "profit": metrics.profit_rate,
            "fulfillment": metrics.fulfillment,
            "vh_ratio": metrics.vacant_hired_ratio,
            "avg_speed": metrics.avg_speed,
            "participation": participation,
            "converged": res.converged,
        })
    return rows
