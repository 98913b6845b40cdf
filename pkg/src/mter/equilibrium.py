"""Relaxed fixed-point iteration for the ride-hailing equilibrium.

One outer iteration composes four stages: masses to environment (travel
times and matching probabilities), environment to optimal values, values to
choice policies, and policies to stationary masses. A step rule relaxes the
update; the loop stops when the Euclidean norm of the stacked mass change
produced by one full composition falls below the configured tolerance.

The reported solution is the current iterate together with the map output
evaluated at it, so the convergence certificate in the result refers to the
returned masses themselves.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvergenceError, DomainError, MterError, ValidationError
from .loading import (DIRECT_STATE_LIMIT, MassDistribution, StateIndex,
                      build_chain, flow_balance_residual, masses_to_env,
                      prune_transient, stationary_flows_blocked,
                      stationary_masses)
from .network import LinkEnvironment, Network
from .smdp import (Policies, SMDPParams, ValueFunctions, _Workspace,
                   bellman_apply, choice_probabilities, solve_values)

STEP_RULES = ("fixed_point", "msa", "msa_floor", "momentum")


@dataclass(frozen=True)
class SolverConfig:
    step_rule: str = "msa_floor"
    floor: float = 0.02
    psi: float = 1.0
    momentum: float = 0.9
    tol: float = 1e-4
    max_iter: int = 3000
    vi_tol: float = 1e-8
    vi_max_iter: int = 1_000_000
    loading: str = "auto"  # auto | direct | power | blocked
    loading_tol: float = 1e-10
    n_starts: int = 1
    seed: int = 0
    pin_free_flow: bool = False

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise ValidationError(f"unknown step rule {self.step_rule!r}")
        if not self.tol > 0:
            raise ValidationError("tolerance must be positive")
        if not (0 < self.floor <= 1):
            raise ValidationError("floor must lie in (0, 1]")
        if not (0 <= self.momentum < 1):
            raise ValidationError("momentum weight must lie in [0, 1)")
        if not (0 < self.psi <= 1):
            raise ValidationError("relaxation psi must lie in (0, 1]")
        if self.max_iter < 1 or self.n_starts < 1:
            raise ValidationError("max_iter and n_starts must be at least 1")


@dataclass
class MapState:
    """Carry between outer iterations: warm starts and last stage outputs."""

    values: ValueFunctions | None = None
    policies: Policies | None = None
    env: LinkEnvironment | None = None
    mapped: MassDistribution | None = None
    warm_masses: MassDistribution | None = None
    workspace: object = None
    index: StateIndex | None = None


@dataclass
class EquilibriumResult:
    masses: MassDistribution
    env: LinkEnvironment
    values: ValueFunctions
    policies: Policies
    mapped: MassDistribution
    gap: float
    converged: bool
    n_iter: int
    trace: list
    residuals: dict
    seed: int | None = None
    metrics: object = None
    runs: list | None = None

    @property
    def x(self) -> np.ndarray:
        return self.masses.x

    @property
    def y(self) -> np.ndarray:
        return self.masses.y


def gap(x, y, x_mapped, y_mapped) -> float:
    """Euclidean norm of the stacked mass change under one map application."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    xm, ym = np.asarray(x_mapped, dtype=float), np.asarray(y_mapped, dtype=float)
    if x.shape != xm.shape or y.shape != ym.shape:
        raise DomainError(
            f"shape mismatch: {x.shape}/{y.shape} vs {xm.shape}/{ym.shape}"
        )
    return float(np.sqrt(np.sum((xm - x) ** 2) + np.sum((ym - y) ** 2)))


def _env_at(masses: MassDistribution, network: Network, pin_free_flow: bool):
    if not pin_free_flow:
        return masses_to_env(masses.x, masses.y, network)
    u = masses.u
    t = network.travel_times(np.zeros_like(u))
    f = np.maximum(masses.x, 0.0) / t
    m = network.matching_probabilities(f)
    return LinkEnvironment(u=u, t=t, f=f, m=m)


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return None

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, MterError):
                exc.stage = name
                if exc.args and isinstance(exc.args[0], str):
                    exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
            return False

    return _Ctx()


def _masses_to_pi(masses: MassDistribution, index: StateIndex, M: float):
    pi = np.zeros(index.n_states)
    pi[:index.m] = masses.x / M
    valid = index.hired >= 0
    pi[index.hired[valid]] = masses.y[valid] / M
    return pi


def fixed_point_map(masses: MassDistribution, demand, network: Network,
                    params: SMDPParams, config: SolverConfig,
                    state: MapState | None = None, pool_fn=None):
    """One full composition of the equilibrium map; returns (mapped, state).

    The returned state carries warm starts for the next application and the
    stage outputs evaluated at the input masses. `pool_fn(values)`, when
    given, supplies the mass the loading stage normalizes to (used by the
    endogenous-participation variant); otherwise the network pool is used.
    """
    if state is None:
        state = MapState()
    if state.workspace is None:
        state.workspace = _Workspace(network, demand)

    with _stage("consistency"):
        env = _env_at(masses, network, config.pin_free_flow)
    with _stage("values"):
        values = solve_values(env, params, demand, network, tol=config.vi_tol,
                              max_iter=config.vi_max_iter,
                              warm_start=state.values, workspace=state.workspace)
    with _stage("policies"):
        policies = choice_probabilities(values, params, demand, network,
                                        workspace=state.workspace)
    with _stage("loading"):
        pool = network.M if pool_fn is None else float(pool_fn(values))
        if not pool > 0:
            raise ValidationError(f"loading pool must be positive, got {pool}")
        if state.index is None:
            state.index = StateIndex(network, demand.dest_nodes)
        method = config.loading
        if method == "auto":
            method = "direct" if state.index.n_states <= DIRECT_STATE_LIMIT else "blocked"
        if method == "blocked":
            mapped = stationary_flows_blocked(
                policies, env, demand, network, pool,
                tol=config.loading_tol, warm=state.warm_masses)
        else:
            chain = build_chain(policies, env, demand, network)
            if method == "power":
                warm = (None if state.warm_masses is None
                        else _masses_to_pi(state.warm_masses, chain.index, pool))
                mapped = stationary_masses(chain, pool, method="power", warm=warm)
            else:
                mapped = stationary_masses(prune_transient(chain), pool,
                                           method="direct")

    state.values = values
    state.policies = policies
    state.env = env
    state.mapped = mapped
    state.warm_masses = mapped
    return mapped, state


def step_update(rule: str, k: int, masses: MassDistribution,
                mapped: MassDistribution, carry, config: SolverConfig,
                target_mass: float | None = None):
    """Relaxed update toward the mapped point; returns (next, carry, step).

    All rules project back onto the feasible set: clip at zero, rescale the
    total to `target_mass` (the linear step's own total when None, which is
    the pool size whenever current and mapped masses share it).
    """
    cur = masses.stacked()
    tgt = mapped.stacked()
    if rule == "fixed_point":
        step = config.psi
        nxt = cur + step * (tgt - cur)
    elif rule == "msa":
        step = 1.0 / (k + 1)
        nxt = cur + step * (tgt - cur)
    elif rule == "msa_floor":
        step = max(1.0 / (k + 1), config.floor)
        nxt = cur + step * (tgt - cur)
    elif rule == "momentum":
        omega = np.zeros_like(cur) if carry is None else carry
        omega = config.momentum * omega + (1.0 - config.momentum) * (tgt - cur)
        step = config.psi
        nxt = cur + step * omega
        carry = omega
    else:
        raise ValidationError(f"unknown step rule {rule!r}")

    if target_mass is None:
        target_mass = float(nxt.sum())
    nxt = np.maximum(nxt, 0.0)
    total = nxt.sum()
    if not total > 0:
        raise ConvergenceError("step update lost all mass", residual=float("nan"),
                               iterations=k)
    nxt *= target_mass / total
    m = len(masses.x)
    K = masses.y.shape[1]
    out = MassDistribution(x=nxt[:m], y=nxt[m:].reshape(m, K))
    return out, carry, step


def _default_init(network: Network, demand) -> MassDistribution:
    m = network.n_links
    K = demand.n_destinations
    x = np.full(m, network.M / m)
    return MassDistribution(x=x, y=np.zeros((m, K)))


def dirichlet_init(network: Network, demand, rng) -> MassDistribution:
    """Symmetric Dirichlet(1) over all feasible (link, status) slots."""
    m = network.n_links
    dest = demand.dest_nodes
    valid = network.tail[:, None] != dest[None, :]
    n_slots = m + int(valid.sum())
    g = rng.standard_exponential(n_slots)
    g /= g.sum()
    x = network.M * g[:m]
    y = np.zeros((m, len(dest)))
    y[valid] = network.M * g[m:]
    return MassDistribution(x=x, y=y)


def _solution_residuals(result_masses, mapped, env, values, policies, demand,
                        network, params):
    bell = bellman_apply(values, env, params, demand, network)
    z_res = float(np.max(np.abs(bell.z - values.z)))
    w_res = 0.0
    if values.w.size:
        diff = np.abs(np.where(np.isnan(bell.w), 0.0, bell.w)
                      - np.where(np.isnan(values.w), 0.0, values.w))
        w_res = float(diff.max())
    flow = flow_balance_residual(mapped, policies, env, demand, network)
    u = result_masses.u
    t_res = float(np.max(np.abs(env.t - network.travel_times(u)))) \
        if not np.any(np.isnan(env.t)) else float("nan")
    f = np.maximum(result_masses.x, 0.0) / env.t
    m_res = float(np.max(np.abs(env.m - network.matching_probabilities(f))))
    return {
        "bellman_sup": max(z_res, w_res),
        "flow_balance": flow,
        "consistency_t": t_res,
        "consistency_m": m_res,
    }


def solve_equilibrium(network: Network, demand, params: SMDPParams,
                      config: SolverConfig, *, init: MassDistribution | None = None,
                      seed: int | None = None, trace_sink=None,
                      pool_fn=None) -> EquilibriumResult:
    """Run the relaxed fixed-point iteration to the configured tolerance.

    Returns a result in both the converged and exhausted cases; `converged`
    and the trace tell them apart. `trace_sink`, when given, receives one
    `(iteration, gap, step, seconds)` tuple per outer iteration as it runs.
    `pool_fn` makes the circulating mass endogenous (see fixed_point_map);
    the update then renormalizes to the linear step's own total instead of
    the fixed pool.
    """
    masses = _default_init(network, demand) if init is None else init
    if np.any(masses.x < 0) or np.any(masses.y < 0):
        raise ValidationError("initial masses must be nonnegative")
    if pool_fn is None and abs(masses.total - network.M) > 1e-8 * network.M:
        raise ValidationError(
            f"initial masses sum to {masses.total}, expected {network.M}"
        )

    state = MapState()
    carry = None
    t0 = time.perf_counter()
    trace = []
    k = 0
    while True:
        mapped, state = fixed_point_map(masses, demand, network, params,
                                        config, state, pool_fn=pool_fn)
        g = gap(masses.x, masses.y, mapped.x, mapped.y)
        row = (k, g, 0.0 if g <= config.tol else _peek_step(config, k),
               time.perf_counter() - t0)
        trace.append(row)
        if trace_sink is not None:
            trace_sink(row)
        if g <= config.tol:
            converged = True
            break
        if k >= config.max_iter:
            converged = False
            break
        masses, carry, _ = step_update(
            config.step_rule, k, masses, mapped, carry, config,
            target_mass=network.M if pool_fn is None else None)
        k += 1

    residuals = _solution_residuals(masses, mapped, state.env, state.values,
                                    state.policies, demand, network, params)
    return EquilibriumResult(
        masses=masses, env=state.env, values=state.values,
        policies=state.policies, mapped=mapped, gap=g, converged=converged,
        n_iter=k, trace=trace, residuals=residuals, seed=seed)


def _peek_step(config: SolverConfig, k: int) -> float:
    if config.step_rule == "msa":
        return 1.0 / (k + 1)
    if config.step_rule == "msa_floor":
        return max(1.0 / (k + 1), config.floor)
    return config.psi


def multi_start(network: Network, demand, params: SMDPParams,
                config: SolverConfig, n_starts: int | None = None,
                metrics_fn=None) -> EquilibriumResult:
    """Solve from several random feasible starts; keep the most profitable.

    Selection uses the steady-state profit rate; non-converged runs are
    retained in `runs` but never selected unless every start fails, which
    raises instead.
    """
    from .metrics import compute_metrics

    n = config.n_starts if n_starts is None else n_starts
    if n < 1:
        raise ValidationError("need at least one start")
    seq = np.random.SeedSequence(config.seed)
    runs = []
    for child in seq.spawn(n):
        if n == 1:
            init = None  # single start: deterministic default, as in solve_equilibrium
        else:
            rng = np.random.Generator(np.random.Philox(child))
            init = dirichlet_init(network, demand, rng)
        res = solve_equilibrium(network, demand, params, config, init=init,
                                seed=int(child.generate_state(1)[0]))
        if res.converged:
            res.metrics = compute_metrics(res.masses, res.env, res.policies,
                                          demand, network,
                                          cost_empty=params.cost_empty,
                                          cost_hired=params.cost_hired)
        runs.append(res)

    converged = [r for r in runs if r.converged]
    if not converged:
        raise ConvergenceError(
            f"all {n} starts exhausted {config.max_iter} iterations",
            residual=min(r.gap for r in runs), iterations=config.max_iter)
    best = max(converged, key=lambda r: r.metrics.profit_rate)
    best.runs = runs
    return best
