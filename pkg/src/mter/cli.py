"""Command-line surface: configuration, scenario orchestration, artifacts.

Grammar: `mter <mode> --config <file> [--set key=value]... --out <dir>` with
modes solve, participation, myopic, congestion-unaware, cycle,
microsim-validate and sweep, plus `mter compare <result_a> <result_b> --out
<dir>` for per-link and aggregate deltas between two finished runs.

Every run writes `result.json` (config echo, masses, environment, metrics,
residual certificates, seed) and `trace.csv`; sweep and compare write their
tables as CSV. Exit status 0 on success, 2 when the solver exhausted its
iteration budget (artifacts are still written), 1 on validation or parse
errors (nothing is written).

Heavy numeric imports happen inside functions so the MTER_MAX_THREADS cap
set in main() lands before any linear-algebra backend spins up its pool.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

MODES = ("solve", "participation", "myopic", "congestion-unaware", "cycle",
         "microsim-validate", "sweep")
THREAD_ENV = "MTER_MAX_THREADS"


@dataclass
class RunConfig:
    mode: str = "solve"
    # input paths
    network: str = ""
    trips: str = ""
    lambda_override: str = ""
    tolls: str = ""
    background: str = ""
    pools_file: str = ""
    # parsing
    time_unit: str = "hours"
    length_mode: str = "from_time"
    capacity_mode: str = "geometry"
    # model scalars
    M: float = 1000.0
    beta: float = 0.1
    gamma: float = 0.8
    theta: float = 10.0
    theta_accept: float = -1.0  # <= 0 means: use theta
    zeta: float = 0.01
    outside_value: float = 0.0
    pool_total: float = -1.0  # participation; <= 0 means: use M
    cost_empty: float = 6.0
    cost_hired: float = 6.0
    fare_base: float = 3.0
    fare_per_unit: float = 0.70
    fare_unit: float = 0.2
    # solver
    step_rule: str = "msa_floor"
    floor: float = 0.02
    psi: float = 1.0
    momentum: float = 0.9
    tol: float = 1e-4
    max_iter: int = 3000
    vi_tol: float = 1e-8
    vi_max_iter: int = 1_000_000
    loading: str = "auto"
    loading_tol: float = 1e-10
    n_starts: int = 1
    seed: int = 0
    # mode extras
    sweep_param: str = ""
    sweep_values: str = ""
    cycle_t0: str = ""
    cycle_cbar: str = ""
    cycle_M: float = 0.0
    sim_horizon: float = 2000.0
    sim_warmup: float = 100.0
    sim_vehicles: int = 512
    sim_seed: int = 7

    def echo(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config(path: str | None, overrides: list[str], mode: str) -> RunConfig:
    from .errors import ParseError, ValidationError

    cfg = RunConfig(mode=mode)
    if path:
        if not os.path.isfile(path):
            raise ValidationError(f"config file not found: {path}")
        with open(path) as fh:
            for ln, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise ParseError("expected key = value", path=path, line=ln)
                key, _, raw = text.partition("=")
                key = key.strip()
                if key == "mode":
                    continue  # the mode comes from the command line
                if key not in _FIELD_TYPES:
                    raise ParseError(f"unknown config key {key!r}", path=path, line=ln)
                try:
                    setattr(cfg, key, _coerce(key, raw))
                except ValueError as exc:
                    raise ParseError(f"bad value for {key}: {exc}", path=path, line=ln)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValidationError(f"unknown config key {key!r}")
        try:
            setattr(cfg, key, _coerce(key, raw))
        except ValueError as exc:
            raise ValidationError(f"bad value for {key}: {exc}")
    return cfg


def _float_17g(value: float) -> str:
    import math

    if math.isnan(value) or math.isinf(value):
        return "null"
    return format(value, ".17g")


def _write_json(obj, out) -> None:
    """Serialize with floats at 17 significant digits; non-finite -> null."""
    import numpy as np

    if obj is None:
        out.write("null")
    elif obj is True or obj is False:
        out.write("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.write(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.write(_float_17g(float(obj)))
    elif isinstance(obj, str):
        out.write(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _write_json(obj.tolist(), out)
    elif isinstance(obj, dict):
        out.write("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.write(",")
            out.write(json.dumps(str(k)))
            out.write(":")
            _write_json(v, out)
        out.write("}")
    elif isinstance(obj, (list, tuple)):
        out.write("[")
        for i, v in enumerate(obj):
            if i:
                out.write(",")
            _write_json(v, out)
        out.write("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    import io

    buf = io.StringIO()
    _write_json(obj, buf)
    return buf.getvalue()


def _build_model(cfg: RunConfig):
    """Parse inputs and assemble (network, demand, report, params)."""
    from . import network as net
    from .errors import ValidationError
    from .smdp import SMDPParams

    if not cfg.network:
        raise ValidationError("config key 'network' is required for this mode")
    for key in ("network", "trips", "lambda_override", "tolls", "background",
                "pools_file"):
        path = getattr(cfg, key)
        if path and not os.path.isfile(path):
            raise ValidationError(f"{key} file not found: {path}")

    nw, demand, report = net.parse_network(
        cfg.network, cfg.trips or None,
        lambda_file=cfg.lambda_override or None,
        toll_file=cfg.tolls or None,
        background_file=cfg.background or None,
        M=cfg.M, time_unit=cfg.time_unit, length_mode=cfg.length_mode,
        capacity_mode=cfg.capacity_mode, default_gamma=cfg.gamma,
        fare_base=cfg.fare_base, fare_per_unit=cfg.fare_per_unit,
        fare_unit_miles=cfg.fare_unit)
    if demand is None:
        import numpy as np

        # no trips file: run the pure-routing model with zero demand
        demand = net.DemandModel(dest_nodes=np.empty(0, dtype=int),
                                 probs=np.zeros((nw.n_nodes, 0)),
                                 fares=np.zeros((nw.n_nodes, 0)))
    params = SMDPParams(
        beta=cfg.beta, theta=cfg.theta,
        theta_accept=cfg.theta_accept if cfg.theta_accept > 0 else None,
        cost_empty=cfg.cost_empty, cost_hired=cfg.cost_hired)
    return nw, demand, report, params


def _solver_config(cfg: RunConfig, **extra):
    from .equilibrium import SolverConfig

    kw = dict(step_rule=cfg.step_rule, floor=cfg.floor, psi=cfg.psi,
              momentum=cfg.momentum, tol=cfg.tol, max_iter=cfg.max_iter,
              vi_tol=cfg.vi_tol, vi_max_iter=cfg.vi_max_iter,
              loading=cfg.loading, loading_tol=cfg.loading_tol,
              n_starts=cfg.n_starts, seed=cfg.seed)
    kw.update(extra)
    return SolverConfig(**kw)


def _result_payload(cfg, nw, demand, report, res, metrics, extra=None) -> dict:
    payload = {
        "mode": cfg.mode,
        "config": cfg.echo(),
        "parse": {
            "n_nodes": report.n_nodes, "n_links": report.n_links,
            "n_od_pairs": report.n_od_pairs, "total_demand": report.total_demand,
        } if report is not None else None,
        "links": {
            "id": nw.link_ids, "tail": nw.tail, "head": nw.head,
        },
        "converged": bool(res.converged),
        "gap": res.gap,
        "iterations": res.n_iter,
        "seed": res.seed if res.seed is not None else cfg.seed,
        "masses": {"x": res.masses.x, "y": res.masses.y},
        "env": {"u": res.env.u, "t": res.env.t, "f": res.env.f, "m": res.env.m},
        "policies": {
            "p": res.policies.p,
            "xi_node_mean": _nanmean_rows(res.policies.xi),
        },
        "residuals": res.residuals,
        "metrics": metrics.to_dict() if metrics is not None else None,
    }
    if extra:
        payload.update(extra)
    return payload


def _nanmean_rows(arr):
    import numpy as np

    if arr.size == 0:
        return np.zeros(arr.shape[0])
    with np.errstate(invalid="ignore"):
        out = np.nanmean(arr, axis=1)
    return np.where(np.isfinite(out), out, 0.0)


def _write_artifacts(out_dir: str, payload: dict, trace_rows) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        _write_json(payload, fh)
        fh.write("\n")
    if trace_rows is not None:
        with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "gap", "step", "seconds"])
            for row in trace_rows:
                w.writerow([row[0], format(row[1], ".17g"),
                            format(row[2], ".17g"), format(row[3], ".6f")])


def _compute_bundle(cfg, res, demand, nw):
    from .metrics import compute_metrics

    return compute_metrics(res.masses, res.env, res.policies, demand, nw,
                           cost_empty=cfg.cost_empty, cost_hired=cfg.cost_hired)


def _run_network_mode(cfg: RunConfig, out_dir: str) -> int:
    from .equilibrium import multi_start, solve_equilibrium
    from .extensions import (congestion_unaware_load, solve_myopic,
                             solve_participation)

    nw, demand, report, params = _build_model(cfg)
    solver = _solver_config(cfg)
    extra = None
    part_result = None

    if cfg.mode == "solve":
        if cfg.n_starts > 1:
            res = multi_start(nw, demand, params, solver)
        else:
            res = solve_equilibrium(nw, demand, params, solver)
    elif cfg.mode == "myopic":
        res = solve_myopic(nw, demand, params, solver)
    elif cfg.mode == "congestion-unaware":
        res = congestion_unaware_load(nw, demand, params, solver)
    elif cfg.mode == "participation":
        part = _participation_params(cfg, nw)
        part_result = solve_participation(nw, demand, params, part, solver)
        res = part_result.result
        extra = {
            "participation": {
                "per_node": part_result.participation,
                "participating_mass": part_result.participating_mass,
                "rate": part_result.rate,
            }
        }
    elif cfg.mode == "sweep":
        return _run_sweep(cfg, out_dir, nw, demand, report, params, solver)
    elif cfg.mode == "microsim-validate":
        return _run_microsim(cfg, out_dir, nw, demand, report, params, solver)
    else:
        raise AssertionError(cfg.mode)

    metrics = _compute_bundle(cfg, res, demand, nw)
    payload = _result_payload(cfg, nw, demand, report, res, metrics, extra)
    _write_artifacts(out_dir, payload, res.trace)
    return 0 if res.converged else 2


def _participation_params(cfg: RunConfig, nw):
    import numpy as np

    from .errors import ParseError
    from .extensions import ParticipationParams

    total = cfg.pool_total if cfg.pool_total > 0 else cfg.M
    pools = np.full(nw.n_nodes, total / nw.n_nodes)
    if cfg.pools_file:
        label_to_idx = {str(lab): i for i, lab in enumerate(nw.node_ids)}
        pools = np.zeros(nw.n_nodes)
        with open(cfg.pools_file) as fh:
            for ln, line in enumerate(fh, start=1):
                text = line.strip()
                if not text or text.lower().startswith("node"):
                    continue
                parts = text.split(",")
                if len(parts) != 2:
                    raise ParseError("expected node,pool", path=cfg.pools_file, line=ln)
                node, pool = parts
                node = node.strip()
                if node not in label_to_idx:
                    raise ParseError(f"unknown node {node!r}", path=cfg.pools_file,
                                     line=ln)
                pools[label_to_idx[node]] = float(pool)
    return ParticipationParams(pools=pools, zeta=cfg.zeta,
                               outside_value=cfg.outside_value)


def _run_sweep(cfg, out_dir, nw, demand, report, params, solver) -> int:
    from .errors import ValidationError
    from .extensions import sweep_parameter

    if not cfg.sweep_param or not cfg.sweep_values:
        raise ValidationError("sweep mode needs sweep_param and sweep_values")
    values = [float(v) for v in cfg.sweep_values.split(",") if v.strip()]
    part = None
    if cfg.sweep_param == "zeta" or cfg.pool_total > 0:
        part = _participation_params(cfg, nw)
    rows = sweep_parameter(nw, demand, params, solver, cfg.sweep_param, values,
                           part=part)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param_value", "profit", "fulfillment", "vh_ratio",
                    "avg_speed", "participation"])
        for r in rows:
            w.writerow([_csv_num(r["param_value"]), _csv_num(r["profit"]),
                        _csv_num(r["fulfillment"]), _csv_num(r["vh_ratio"]),
                        _csv_num(r["avg_speed"]),
                        _csv_num(r["participation"]) if r["participation"] != "" else ""])
    payload = {"mode": cfg.mode, "config": cfg.echo(), "rows": rows,
               "parse": {"n_nodes": report.n_nodes, "n_links": report.n_links}}
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        _write_json(payload, fh)
        fh.write("\n")
    return 0 if all(r["converged"] for r in rows) else 2


def _csv_num(v) -> str:
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _run_microsim(cfg, out_dir, nw, demand, report, params, solver) -> int:
    import numpy as np

    from .equilibrium import solve_equilibrium
    from .microsim import SimConfig, simulate

    res = solve_equilibrium(nw, demand, params, solver)
    sim = simulate(SimConfig(horizon=cfg.sim_horizon, warmup=cfg.sim_warmup,
                             n_vehicles=cfg.sim_vehicles, seed=cfg.sim_seed,
                             env=res.env, policies=res.policies),
                   demand, nw, nw.M)
    se_floor = 1e-12
    z_x = np.abs(res.masses.x - sim.x) / np.maximum(sim.se_x, se_floor)
    metrics = _compute_bundle(cfg, res, demand, nw)
    extra = {
        "microsim": {
            "x_sim": sim.x, "se_x": sim.se_x,
            "y_sim_total": sim.y.sum(axis=1),
            "max_z_empty": float(z_x.max()),
            "n_vehicles": sim.n_vehicles,
            "measured_time": sim.measured_time,
            "events": sim.n_events,
        }
    }
    payload = _result_payload(cfg, nw, demand, report, res, metrics, extra)
    _write_artifacts(out_dir, payload, res.trace)
    with open(os.path.join(out_dir, "microsim.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_id", "x_solver", "x_sim", "se_x"])
        for i in range(nw.n_links):
            w.writerow([nw.link_ids[i], _csv_num(res.masses.x[i]),
                        _csv_num(sim.x[i]), _csv_num(sim.se_x[i])])
    return 0 if res.converged else 2


def _run_cycle(cfg: RunConfig, out_dir: str) -> int:
    from .errors import ValidationError
    from .extensions import CycleProblem, solve_cycle

    if not cfg.cycle_t0 or not cfg.cycle_cbar or not cfg.cycle_M > 0:
        raise ValidationError("cycle mode needs cycle_t0, cycle_cbar, cycle_M")
    t0 = [float(v) for v in cfg.cycle_t0.split(",") if v.strip()]
    cbar = [float(v) for v in cfg.cycle_cbar.split(",") if v.strip()]
    if len(t0) != len(cbar):
        raise ValidationError("cycle_t0 and cycle_cbar must have equal length")
    problem = CycleProblem.linear(t0, cbar, cfg.cycle_M)
    report = solve_cycle(problem, tol=min(cfg.tol, 1e-10))
    payload = {
        "mode": "cycle", "config": cfg.echo(),
        "u": report.u, "rho": report.rho,
        "iterations": report.iterations,
        "spread_final": report.spread_final,
        "contraction_factor": report.contraction_factor,
        "kappa_hat": report.kappa_hat,
        "converged": True,
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        _write_json(payload, fh)
        fh.write("\n")
    return 0


def compare(path_a: str, path_b: str, out_dir: str) -> int:
    """Per-link and aggregate deltas between two result.json files (a - b)."""
    from .errors import ValidationError

    with open(path_a) as fh:
        a = json.load(fh)
    with open(path_b) as fh:
        b = json.load(fh)
    for res, path in ((a, path_a), (b, path_b)):
        if "links" not in res or "masses" not in res:
            raise ValidationError(f"{path} is not a solve result")
    ids_a, ids_b = a["links"]["id"], b["links"]["id"]
    if ids_a != ids_b or a["links"]["tail"] != b["links"]["tail"] \
            or a["links"]["head"] != b["links"]["head"]:
        diff = [i for i, (p, q) in enumerate(zip(ids_a, ids_b)) if p != q]
        raise ValidationError(
            f"results cover different networks (first differing rows: {diff[:5]}, "
            f"sizes {len(ids_a)} vs {len(ids_b)})")

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "deltas.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_id", "tail", "head", "delta_x", "delta_y", "delta_u",
                    "delta_t"])
        for i, lid in enumerate(ids_a):
            dx = a["masses"]["x"][i] - b["masses"]["x"][i]
            dy = sum(a["masses"]["y"][i]) - sum(b["masses"]["y"][i])
            du = a["env"]["u"][i] - b["env"]["u"][i]
            dt = a["env"]["t"][i] - b["env"]["t"][i]
            w.writerow([lid, a["links"]["tail"][i], a["links"]["head"][i],
                        _csv_num(dx), _csv_num(dy), _csv_num(du), _csv_num(dt)])

    agg = {}
    ma, mb = a.get("metrics") or {}, b.get("metrics") or {}
    for key in sorted(set(ma) | set(mb)):
        va, vb = ma.get(key), mb.get(key)
        if isinstance(va, (int, float)) and isinstance(vb, (int, float)) \
                and not isinstance(va, bool) and not isinstance(vb, bool):
            agg[f"delta_{key}"] = va - vb
    tr_a, tr_b = ma.get("toll_revenue_rate"), mb.get("toll_revenue_rate")
    if tr_a is not None and tr_b not in (None, 0):
        agg["toll_revenue_ratio"] = tr_a / tr_b
    with open(os.path.join(out_dir, "compare.json"), "w") as fh:
        _write_json({"a": path_a, "b": path_b, "aggregate": agg}, fh)
        fh.write("\n")
    return 0


def run(cfg: RunConfig, out_dir: str) -> int:
    """Execute one mode; returns the process exit status."""
    if cfg.mode == "cycle":
        return _run_cycle(cfg, out_dir)
    return _run_network_mode(cfg, out_dir)


def _apply_thread_cap() -> None:
    cap = os.environ.get(THREAD_ENV)
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def main(argv=None) -> int:
    _apply_thread_cap()

    parser = argparse.ArgumentParser(
        prog="mter",
        description="Markovian traffic equilibrium solver for ride-hailing")
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode, help=f"run the {mode} scenario")
        sp.add_argument("--config", default=None, help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key")
        sp.add_argument("--out", required=True, help="output directory")
    cp = sub.add_parser("compare", help="diff two result.json files (a - b)")
    cp.add_argument("result_a")
    cp.add_argument("result_b")
    cp.add_argument("--out", required=True)

    args = parser.parse_args(argv)

    from .errors import ConvergenceError, MterError, NumericalError

    try:
        if args.command == "compare":
            return compare(args.result_a, args.result_b, args.out)
        cfg = load_config(args.config, args.set, args.command)
        return run(cfg, args.out)
    except (ConvergenceError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
