"""Experiment runner CLI.

Subcommands:
  run        execute a JSON scenario config, writing CSV traces, a summary
             metrics file, and (by default) PNG figures
  bench      per-step cost of the standard filter vs the gradient filter
             across state dimensions
  graph-gen  write a random geometric sensor graph to an edge-list file

Everything data-bearing is CSV. Trace files share the long-format header
``step,time,series,component,value``; floats are written with repr() so the
files parse back exactly and reruns of the same config are byte-identical.
Output files are written to a temp name and renamed into place.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .analysis import disagreement, steady_state_error
from .errors import ConfigurationError, NumericalError
from .filters import FilterOpts, gdkf_step, init_gradcov, init_kalman, kf_step
from .model import (DiffusionSpec, LinearSystem, SelectorOutputMap,
                    build_diffusion, gaussian_bumps_initial, simulate)
from .network import (NodeSensor, SensorNetwork, dkcf_step, init_node_states,
                      generate_geometric_graph, patch_sensor_cover,
                      read_graph, simulate_network, write_graph)

SEED_ENV = "GRADKF_SEED"

FILTER_NAMES = ("standard", "gradient", "accelerated", "accelerated+adaptive")

TRACE_HEADER = ("step", "time", "series", "component", "value")


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows) -> Path:
    """Write rows atomically (temp file + rename) with full-precision floats."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario description. See load_config for the JSON schema."""

    name: str
    kind: str                       # "explicit" or "diffusion"
    plant: dict
    filter_name: str
    opts: Optional[FilterOpts]      # None for the standard filter
    steps: int
    dt: float
    noise: dict
    seeds: Tuple[int, ...]
    window: Tuple[float, float]
    initial_covariance: object      # positive float, or "R" to track the sweep point
    network: Optional[dict]
    report: Optional[dict]
    output: Optional[str]
    source: str                     # config file path, for error messages


def _filter_opts(name: str, raw: dict, fail) -> Optional[FilterOpts]:
    known = {"fixed_mu", "nesterov_plus"}
    extra = set(raw) - known
    if extra:
        fail(f"filter_opts has unknown keys {sorted(extra)}; expected a subset of {sorted(known)}")
    fixed_mu = raw.get("fixed_mu", 1e-2)
    if not (isinstance(fixed_mu, (int, float)) and fixed_mu > 0):
        fail("filter_opts.fixed_mu must be a positive number")
    nesterov_plus = raw.get("nesterov_plus", False)
    if not isinstance(nesterov_plus, bool):
        fail("filter_opts.nesterov_plus must be a boolean")
    if name == "standard":
        return None
    accelerated = name in ("accelerated", "accelerated+adaptive")
    adaptive = name == "accelerated+adaptive"
    return FilterOpts(accelerated=accelerated, adaptive=adaptive,
                      fixed_mu=float(fixed_mu), nesterov_plus=nesterov_plus)


def _require(obj: dict, key: str, kind, where: str, fail):
    if key not in obj:
        fail(f"{where}.{key} is required")
    v = obj[key]
    if kind is float:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            fail(f"{where}.{key} must be a number")
        return float(v)
    if kind is int:
        if not isinstance(v, int) or isinstance(v, bool):
            fail(f"{where}.{key} must be an integer")
        return v
    if not isinstance(v, kind):
        fail(f"{where}.{key} must be a {kind.__name__}")
    return v


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario JSON file (schema version 1)."""
    path = str(path)

    def fail(msg):
        raise ConfigurationError(f"{path}: {msg}")

    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        fail("no such file")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        fail("top level must be a JSON object")
    if raw.get("version") != 1:
        fail('"version" must be 1')

    name = _require(raw, "name", str, "config", fail)
    if not name or not all(c.isalnum() or c in "_-" for c in name):
        fail('"name" must be non-empty and use only letters, digits, "_", "-"')

    plant = _require(raw, "plant", dict, "config", fail)
    has_matrices = "A" in plant
    has_diffusion = "diffusion" in plant
    if has_matrices == has_diffusion:
        fail('plant must contain exactly one of "A" (explicit matrices) or "diffusion"')
    kind = "explicit" if has_matrices else "diffusion"

    filter_name = _require(raw, "filter", str, "config", fail)
    if filter_name not in FILTER_NAMES:
        fail(f'"filter" must be one of {list(FILTER_NAMES)}')
    opts = _filter_opts(filter_name, raw.get("filter_opts", {}), fail)

    horizon = _require(raw, "horizon", dict, "config", fail)
    steps = _require(horizon, "steps", int, "horizon", fail)
    dt = _require(horizon, "dt", float, "horizon", fail)
    if steps < 1 or dt <= 0:
        fail("horizon needs steps >= 1 and dt > 0")

    noise = _require(raw, "noise", dict, "config", fail)
    if "q" not in noise:
        fail("noise.q (process noise variance) is required")

    seeds = _require(raw, "seeds", list, "config", fail)
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        fail("seeds must be a non-empty list of integers")

    window = _require(raw, "window", list, "config", fail)
    if (len(window) != 2
            or not all(isinstance(w, (int, float)) for w in window)):
        fail("window must be [t_a, t_b]")
    t_a, t_b = float(window[0]), float(window[1])
    if not (0.0 <= t_a < t_b <= steps * dt + 1e-9):
        fail(f"window [{t_a}, {t_b}] must satisfy 0 <= t_a < t_b <= horizon ({steps * dt})")

    p0 = raw.get("initial_covariance", 1.0)
    if p0 == "R":
        pass
    elif isinstance(p0, (int, float)) and not isinstance(p0, bool) and p0 > 0:
        p0 = float(p0)
    else:
        fail('initial_covariance must be a positive number or "R"')

    network = raw.get("network")
    report = raw.get("report")

    cfg = ScenarioConfig(
        name=name, kind=kind, plant=plant, filter_name=filter_name, opts=opts,
        steps=steps, dt=dt, noise=noise, seeds=tuple(seeds), window=(t_a, t_b),
        initial_covariance=p0, network=network, report=report,
        output=raw.get("output"), source=path,
    )
    if kind == "explicit":
        _validate_sweep_config(cfg, fail)
    else:
        _validate_network_config(cfg, fail)
    return cfg


def _validate_sweep_config(cfg: ScenarioConfig, fail):
    plant = cfg.plant
    try:
        A = np.asarray(plant.get("A"), dtype=float)
    except ValueError:
        fail("plant.A must be a numeric matrix")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        fail("plant.A must be a square matrix")
    n = A.shape[0]
    x0 = np.asarray(_require(plant, "x0", list, "plant", fail), dtype=float)
    if x0.shape != (n,):
        fail(f"plant.x0 must have length {n}")
    C = plant.get("C", "identity")
    if C != "identity":
        try:
            SelectorOutputMap.from_matrix(np.asarray(C, dtype=float))
        except (ConfigurationError, ValueError) as e:
            fail(f"plant.C: {e}")
    if cfg.network is not None:
        fail("explicit-matrix scenarios do not take a network block")
    noise = cfg.noise
    if "r_sweep" in noise:
        sweep = noise["r_sweep"]
        if (not isinstance(sweep, list) or not sweep
                or not all(isinstance(a, (int, float)) and a > 0 for a in sweep)):
            fail("noise.r_sweep must be a non-empty list of positive numbers")
        r_trace = noise.get("r_trace", sweep[0])
    elif "r" in noise:
        r_trace = noise["r"]
    else:
        fail("noise needs r_sweep (with optional r_trace) or a single r")
    if not (isinstance(r_trace, (int, float)) and r_trace > 0):
        fail("the trace noise level must be a positive number")


def _validate_network_config(cfg: ScenarioConfig, fail):
    d = cfg.plant["diffusion"]
    for key, kind in (("grid_n", int), ("alpha", float), ("beta", float),
                      ("dx", float), ("taylor_order", int)):
        _require(d, key, kind, "plant.diffusion", fail)
    bumps = _require(d, "bumps", list, "plant.diffusion", fail)
    for b in bumps:
        if not (isinstance(b, list) and len(b) == 4):
            fail("plant.diffusion.bumps entries must be [center_r, center_c, amplitude, width]")
    if cfg.filter_name == "standard":
        fail("the standard filter has no distributed variant; pick a gradient-family filter")
    if cfg.network is None:
        fail("diffusion scenarios need a network block")
    if cfg.report is None:
        fail("diffusion scenarios need a report block")
    net, rep = cfg.network, cfg.report
    side = _require(net, "patch_side", int, "network", fail)
    if not (1 <= side <= d["grid_n"]):
        fail("network.patch_side must lie in [1, grid_n]")
    adjacency = net.get("adjacency", "grid")
    if not (adjacency == "grid" or (isinstance(adjacency, dict) and "file" in adjacency)):
        fail('network.adjacency must be "grid" or {"file": <edge-list path>}')
    eps = net.get("epsilon")
    if eps is not None and not (isinstance(eps, (int, float)) and eps > 0):
        fail("network.epsilon must be null (use dt) or a positive number")
    if "r" not in cfg.noise or not (isinstance(cfg.noise["r"], (int, float)) and cfg.noise["r"] > 0):
        fail("noise.r (per-sensor measurement variance) must be positive")
    snap = _require(rep, "snapshot_time", float, "report", fail)
    k = round(snap / cfg.dt)
    if not (0 <= k < cfg.steps) or abs(k * cfg.dt - snap) > 1e-9:
        fail(f"report.snapshot_time must land on a simulated step (multiple of dt={cfg.dt} below {cfg.steps * cfg.dt})")
    dis = _require(rep, "disagreement_steps", list, "report", fail)
    if (len(dis) != 2 or not all(isinstance(s, int) for s in dis)
            or not (0 <= dis[0] < dis[1] < cfg.steps)):
        fail("report.disagreement_steps must be [early, late] step indices inside the horizon")
    _require(rep, "node", int, "report", fail)
    if cfg.initial_covariance == "R":
        fail('initial_covariance "R" only applies to noise-sweep scenarios')


# ---------------------------------------------------------------------------
# Explicit-plant scenario: noise sweep + per-step trace
# ---------------------------------------------------------------------------

def _sweep_levels(cfg: ScenarioConfig) -> Tuple[List[float], float]:
    noise = cfg.noise
    if "r_sweep" in noise:
        sweep = [float(a) for a in noise["r_sweep"]]
        r_trace = float(noise.get("r_trace", sweep[0]))
    else:
        sweep = [float(noise["r"])]
        r_trace = sweep[0]
    return sweep, r_trace


def _explicit_system(cfg: ScenarioConfig, alpha: float) -> Tuple[LinearSystem, np.ndarray]:
    plant = cfg.plant
    A = np.asarray(plant["A"], dtype=float)
    n = A.shape[0]
    C = plant.get("C", "identity")
    sel = (SelectorOutputMap(gains=np.ones(n), n=n) if C == "identity"
           else SelectorOutputMap.from_matrix(np.asarray(C, dtype=float)))
    B = plant.get("B")
    system = LinearSystem(
        A=A, C=sel, Q=float(cfg.noise["q"]),
        R=np.full(sel.p, alpha), B=None if B is None else np.asarray(B, dtype=float),
    )
    return system, np.asarray(plant["x0"], dtype=float)


def _run_sweep_point(cfg: ScenarioConfig, alpha: float, seed: int,
                     want_trace: bool) -> dict:
    """Simulate one (noise level, seed) pair and filter the trace.

    The raw measurement series is scored on the measured components only;
    filters are scored on the full state.
    """
    system, x0 = _explicit_system(cfg, alpha)
    trace = simulate(system, x0, steps=cfg.steps, seed=seed, dt=cfg.dt)
    truth = trace.states[:-1]
    ys = trace.measurements
    sel = system.C
    p = sel.p

    p0 = alpha if cfg.initial_covariance == "R" else cfg.initial_covariance
    kal = init_kalman(x0, p0 * np.eye(system.n))
    gd = None if cfg.opts is None else init_gradcov(system, x0, p0)

    kal_post = np.empty_like(truth)
    gd_post = np.empty_like(truth) if gd is not None else None
    for t in range(cfg.steps):
        kal = kf_step(system, kal, ys[t])
        kal_post[t] = kal.x_post
        if gd is not None:
            gd = gdkf_step(system, gd, ys[t], opts=cfg.opts)
            gd_post[t] = gd.x_post

    # raw data read as a state estimate on the measured components
    data_est = truth.copy()
    data_est[:, :p] = ys / sel.gains

    errors = {"data": steady_state_error(data_est, truth, cfg.window, cfg.dt),
              "kalman": steady_state_error(kal_post, truth, cfg.window, cfg.dt)}
    if gd_post is not None:
        errors[cfg.filter_name] = steady_state_error(gd_post, truth, cfg.window, cfg.dt)

    out = {"alpha": alpha, "seed": seed, "errors": errors}
    if want_trace:
        series = {"truth": truth, "data": data_est, "kalman": kal_post}
        if gd_post is not None:
            series[cfg.filter_name] = gd_post
        out["series"] = series
    return out


def _series_order(cfg: ScenarioConfig) -> List[str]:
    order = ["data"]
    if cfg.opts is not None:
        order.append(cfg.filter_name)
    order.append("kalman")
    return order


def _run_explicit(cfg: ScenarioConfig, outdir: Path, threads: int,
                  no_plots: bool) -> List[Path]:
    sweep, r_trace = _sweep_levels(cfg)
    levels = sorted(set(sweep) | {r_trace})
    jobs = [(alpha, seed, alpha == r_trace and seed == cfg.seeds[0])
            for alpha in levels for seed in cfg.seeds]

    def run(job):
        return _run_sweep_point(cfg, job[0], job[1], job[2])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    by_key = {(r["alpha"], r["seed"]): r for r in results}
    order = _series_order(cfg)

    seed_rows = []
    sweep_rows = []
    for alpha in sweep:
        per_series = {s: [] for s in order}
        for seed in cfg.seeds:
            errs = by_key[(alpha, seed)]["errors"]
            for s in order:
                seed_rows.append((alpha, s, seed, errs[s]))
                per_series[s].append(errs[s])
        for s in order:
            sweep_rows.append((alpha, s, float(np.median(per_series[s]))))

    traced = by_key[(r_trace, cfg.seeds[0])]
    truth = traced["series"]["truth"]
    trace_rows = []
    for t in range(cfg.steps):
        tm = t * cfg.dt
        for s in ["truth"] + order:
            values = traced["series"][s]
            for i in range(values.shape[1]):
                trace_rows.append((t, tm, s, f"x{i}", values[t, i]))
            if s != "truth":
                trace_rows.append((t, tm, s, "error",
                                   float(np.linalg.norm(values[t] - truth[t]))))

    written = [
        write_csv(outdir / f"{cfg.name}_trace.csv", TRACE_HEADER, trace_rows),
        write_csv(outdir / f"{cfg.name}_sweep.csv",
                  ("alpha", "series", "value"), sweep_rows),
        write_csv(outdir / f"{cfg.name}_sweep_seeds.csv",
                  ("alpha", "series", "seed", "value"), seed_rows),
    ]
    if not no_plots:
        from . import plots
        times = np.arange(cfg.steps) * cfg.dt
        err_by_series = {
            s: np.linalg.norm(traced["series"][s] - truth, axis=1) for s in order}
        curves = {s: [r[2] for r in sweep_rows if r[1] == s] for s in order}
        p1 = outdir / f"{cfg.name}_error.png"
        plots.save_error_traces(p1, times, err_by_series)
        p2 = outdir / f"{cfg.name}_sweep.png"
        plots.save_sweep(p2, sweep, curves)
        written += [p1, p2]
    return written


# ---------------------------------------------------------------------------
# Diffusion scenario: distributed filtering on a patch-sensor network
# ---------------------------------------------------------------------------

def _patch_grid_edges(patch_axis: int) -> List[Tuple[int, int]]:
    """4-neighbor adjacency between patches laid out row-major on an axis^2 grid."""
    edges = []
    for r in range(patch_axis):
        for c in range(patch_axis):
            j = r * patch_axis + c
            if c + 1 < patch_axis:
                edges.append((j, j + 1))
            if r + 1 < patch_axis:
                edges.append((j, j + patch_axis))
    return edges


def _diffusion_setup(cfg: ScenarioConfig, full_scale: bool):
    d = dict(cfg.plant["diffusion"])
    report = dict(cfg.report)
    if full_scale:
        override = d.get("full_scale")
        if not isinstance(override, dict):
            raise ConfigurationError(
                f"{cfg.source}: --full-scale needs a plant.diffusion.full_scale block")
        if "report_node" in override:
            report["node"] = override["report_node"]
        d.update({k: v for k, v in override.items() if k != "report_node"})

    spec = DiffusionSpec(grid_n=int(d["grid_n"]), alpha=float(d["alpha"]),
                         beta=float(d["beta"]), dx=float(d["dx"]), dt=cfg.dt,
                         periodic=bool(d.get("periodic", False)),
                         taylor_order=int(d["taylor_order"]))
    base = build_diffusion(spec)
    A = base.A
    n = base.n
    if spec.grid_n >= 32:
        import scipy.sparse as sp
        A = sp.csr_array(np.where(np.abs(A) < 1e-14, 0.0, A))
    system = LinearSystem(A=A, C=base.C, Q=float(cfg.noise["q"]), R=np.ones(n))

    r = float(cfg.noise["r"])
    patches = patch_sensor_cover(spec.grid_n, int(cfg.network["patch_side"]))
    sensors = [NodeSensor.from_patch(p, spec.grid_n, r) for p in patches]
    adjacency = cfg.network.get("adjacency", "grid")
    if adjacency == "grid":
        axis = int(round(len(patches) ** 0.5))
        edges = _patch_grid_edges(axis)
        net = SensorNetwork(node_count=len(patches), edges=edges, sensors=sensors)
    else:
        loaded = read_graph(adjacency["file"])
        if loaded.node_count != len(patches):
            raise ConfigurationError(
                f"{cfg.source}: graph file has {loaded.node_count} nodes but the patch cover needs {len(patches)}")
        net = SensorNetwork(node_count=loaded.node_count, edges=loaded.edges,
                            sensors=sensors, positions=loaded.positions)

    node = report["node"]
    if not (0 <= node < net.node_count):
        raise ConfigurationError(
            f"{cfg.source}: report.node {node} out of range for {net.node_count} nodes")
    x0 = gaussian_bumps_initial(spec.grid_n, d["bumps"])
    eps = cfg.network.get("epsilon")
    eps = cfg.dt if eps is None else float(eps)
    return spec, system, net, x0, eps, report


def _run_network_once(cfg: ScenarioConfig, system, net, x0, eps, report,
                      seed: int, want_trace: bool) -> dict:
    xs, meas = simulate_network(net, system, x0, cfg.steps, seed)
    nodes = init_node_states(net, system, cfg.initial_covariance)
    snap_idx = round(float(report["snapshot_time"]) / cfg.dt)
    d0, d1 = report["disagreement_steps"]
    rnode = report["node"]

    dis = np.empty(cfg.steps)
    node_err = np.empty((cfg.steps, net.node_count)) if want_trace else None
    rnode_post = np.empty((cfg.steps, system.n))
    snap_posts = None
    for t in range(cfg.steps):
        nodes = dkcf_step(net, system, nodes,
                          [m[t] for m in meas], epsilon=eps, opts=cfg.opts)
        posts = [nd.grad_cov.x_post for nd in nodes]
        dis[t] = disagreement(posts)
        rnode_post[t] = posts[rnode]
        if want_trace:
            node_err[t] = [float(np.linalg.norm(p - xs[t])) for p in posts]
        if t == snap_idx:
            snap_posts = [p.copy() for p in posts]

    # coverage-weighted raw-measurement field at the snapshot step
    num = np.zeros(system.n)
    den = np.zeros(system.n)
    for l, s in enumerate(net.sensors):
        num[s.indices] += s.gains * meas[l][snap_idx]
        den[s.indices] += s.gains * s.gains
    covered = den > 0
    field = np.full(system.n, np.nan)
    field[covered] = num[covered] / den[covered]

    truth_snap = xs[snap_idx]
    mse = {f"node{j}": float(np.mean((snap_posts[j] - truth_snap) ** 2))
           for j in range(net.node_count)}
    mse["measurement"] = float(np.mean((field[covered] - truth_snap[covered]) ** 2))
    ratio = float(dis[d1] / dis[d0]) if dis[d0] > 0 else float("nan")
    window_err = steady_state_error(rnode_post, xs[:-1], cfg.window, cfg.dt)

    out = {"seed": seed, "mse": mse, "ratio": ratio, "window_error": window_err}
    if want_trace:
        out["trace"] = {"dis": dis, "node_err": node_err,
                        "truth_snap": truth_snap, "field": field,
                        "estimate_snap": snap_posts[rnode], "snap_idx": snap_idx}
    return out


def _run_network(cfg: ScenarioConfig, outdir: Path, threads: int,
                 no_plots: bool, full_scale: bool) -> List[Path]:
    spec, system, net, x0, eps, report = _diffusion_setup(cfg, full_scale)

    def run(seed):
        return _run_network_once(cfg, system, net, x0, eps, report, seed,
                                 want_trace=seed == cfg.seeds[0])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, cfg.seeds))
    else:
        results = [run(s) for s in cfg.seeds]
    by_seed = {r["seed"]: r for r in results}

    mse_keys = [f"node{j}" for j in range(net.node_count)] + ["measurement"]
    seed_rows = []
    for seed in cfg.seeds:
        r = by_seed[seed]
        for key in mse_keys:
            seed_rows.append(("snapshot_mse", key, seed, r["mse"][key]))
        seed_rows.append(("disagreement_ratio", "network", seed, r["ratio"]))
        seed_rows.append(("window_error", f"node{report['node']}", seed,
                          r["window_error"]))

    summary_rows = []
    for key in mse_keys:
        med = float(np.median([by_seed[s]["mse"][key] for s in cfg.seeds]))
        summary_rows.append(("snapshot_mse", key, med))
    summary_rows.append(("disagreement_ratio", "network",
                         float(np.median([by_seed[s]["ratio"] for s in cfg.seeds]))))
    summary_rows.append(("window_error", f"node{report['node']}",
                         float(np.median([by_seed[s]["window_error"] for s in cfg.seeds]))))

    traced = by_seed[cfg.seeds[0]]["trace"]
    snap_idx = traced["snap_idx"]
    snap_time = snap_idx * cfg.dt
    snapshot_rows = []
    for label, values in (("truth", traced["truth_snap"]),
                          ("measurement", traced["field"]),
                          ("estimate", traced["estimate_snap"])):
        for i in range(system.n):
            snapshot_rows.append((snap_idx, snap_time, label, f"s{i}", values[i]))

    trace_rows = []
    for t in range(cfg.steps):
        tm = t * cfg.dt
        for j in range(net.node_count):
            trace_rows.append((t, tm, f"node{j}", "error", traced["node_err"][t, j]))
        trace_rows.append((t, tm, "network", "disagreement", traced["dis"][t]))

    written = [
        write_csv(outdir / f"{cfg.name}_snapshot.csv", TRACE_HEADER, snapshot_rows),
        write_csv(outdir / f"{cfg.name}_trace.csv", TRACE_HEADER, trace_rows),
        write_csv(outdir / f"{cfg.name}_summary.csv",
                  ("metric", "component", "value"), summary_rows),
        write_csv(outdir / f"{cfg.name}_summary_seeds.csv",
                  ("metric", "component", "seed", "value"), seed_rows),
    ]
    if not no_plots:
        from . import plots
        p1 = outdir / f"{cfg.name}_field.png"
        plots.save_field_triptych(p1, spec.grid_n, traced["truth_snap"],
                                  traced["field"], traced["estimate_snap"],
                                  snap_time)
        p2 = outdir / f"{cfg.name}_disagreement.png"
        plots.save_disagreement(p2, np.arange(cfg.steps), traced["dis"])
        written += [p1, p2]
    return written


def run_scenario(cfg: ScenarioConfig, output_dir=None, threads: int = 1,
                 full_scale: bool = False, no_plots: bool = False) -> List[Path]:
    """Execute a scenario and return the files written."""
    out = Path(output_dir if output_dir is not None else (cfg.output or "out"))
    out.mkdir(parents=True, exist_ok=True)
    if threads < 1:
        raise ConfigurationError("--threads must be >= 1")
    if cfg.kind == "explicit":
        if full_scale:
            raise ConfigurationError("--full-scale only applies to diffusion scenarios")
        return _run_explicit(cfg, out, threads, no_plots)
    return _run_network(cfg, out, threads, no_plots, full_scale)


# ---------------------------------------------------------------------------
# Step-cost benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchResult:
    dims: Tuple[int, ...]
    kalman_seconds: Tuple[float, ...]
    gradient_seconds: Tuple[float, ...]
    kalman_exponent: float
    gradient_exponent: float


def _bench_system(n: int) -> LinearSystem:
    """Sparse stable plant with a half-state selector output."""
    import scipy.sparse as sp
    main = np.full(n, 0.9)
    off = np.full(n - 1, 0.04)
    A = sp.diags_array([off, main, off], offsets=(-1, 0, 1), format="csr")
    p = n // 2
    sel = SelectorOutputMap(gains=np.ones(p), n=n)
    return LinearSystem(A=A, C=sel, Q=0.01, R=np.full(p, 0.1))


def bench_step_cost(dims: Sequence[int], trials: int) -> BenchResult:
    """Median per-step wall time of each filter across state dimensions.

    Uses the same sparse plant for both filters so the measured gap comes
    from the algorithms, not the matrix storage. Exponents are least-squares
    slopes of log(time) against log(n); NaN when only one dimension is given.
    """
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    dims = [int(d) for d in dims]
    if not dims or any(b <= a for a, b in zip(dims, dims[1:])):
        raise ConfigurationError("dims must be a non-empty ascending list")
    if min(dims) < 2:
        raise ConfigurationError("dims entries must be >= 2")

    kal_med, grad_med = [], []
    for n in dims:
        system = _bench_system(n)
        rng = np.random.Generator(np.random.PCG64(n))
        ys = rng.standard_normal((trials + 2, system.p))
        x0 = np.zeros(n)

        kal = init_kalman(x0, np.eye(n))
        gd = init_gradcov(system, x0, 1.0)
        kal_times, grad_times = [], []
        for t in range(trials + 2):
            t0 = time.perf_counter()
            kal = kf_step(system, kal, ys[t])
            t1 = time.perf_counter()
            gd = gdkf_step(system, gd, ys[t])
            t2 = time.perf_counter()
            if t >= 2:  # first iterations pay page-fault/cache warmup
                kal_times.append(t1 - t0)
                grad_times.append(t2 - t1)
        kal_med.append(float(np.median(kal_times)))
        grad_med.append(float(np.median(grad_times)))

    if len(dims) > 1:
        logn = np.log(np.asarray(dims, dtype=float))
        k_exp = float(np.polyfit(logn, np.log(kal_med), 1)[0])
        g_exp = float(np.polyfit(logn, np.log(grad_med), 1)[0])
    else:
        k_exp = g_exp = float("nan")
    return BenchResult(dims=tuple(dims), kalman_seconds=tuple(kal_med),
                       gradient_seconds=tuple(grad_med),
                       kalman_exponent=k_exp, gradient_exponent=g_exp)


def _write_bench(result: BenchResult, outdir: Path) -> List[Path]:
    rows = [("kalman", n, s) for n, s in zip(result.dims, result.kalman_seconds)]
    rows += [("gradient", n, s) for n, s in zip(result.dims, result.gradient_seconds)]
    exps = [("kalman", result.kalman_exponent),
            ("gradient", result.gradient_exponent)]
    return [
        write_csv(outdir / "bench.csv", ("series", "n", "median_step_seconds"), rows),
        write_csv(outdir / "bench_exponents.csv", ("series", "exponent"), exps),
    ]


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradkf",
        description="Gradient-descent covariance Kalman filtering experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario config")
    p_run.add_argument("config", help="path to a scenario JSON file")
    p_run.add_argument("--output-dir", default=None,
                       help="directory for CSVs and figures (default: config's output, else ./out)")
    p_run.add_argument("--threads", type=int, default=1,
                       help="worker threads across seeds and sweep points")
    p_run.add_argument("--full-scale", action="store_true",
                       help="use the scenario's full_scale plant override")
    p_run.add_argument("--no-plots", action="store_true",
                       help="skip PNG figures, write CSVs only")

    p_bench = sub.add_parser("bench", help="per-step filter cost across dimensions")
    p_bench.add_argument("--dims", default="50,100,200,400,800",
                         help="comma-separated ascending state dimensions")
    p_bench.add_argument("--trials", type=int, default=20,
                         help="timed steps per dimension")
    p_bench.add_argument("--output-dir", default="out")

    p_graph = sub.add_parser("graph-gen", help="random geometric sensor graph")
    p_graph.add_argument("--nodes", type=int, required=True)
    p_graph.add_argument("--radius", type=float, required=True)
    p_graph.add_argument("--seed", type=int, default=0)
    p_graph.add_argument("-o", "--output", required=True, help="edge-list file to write")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed:
        try:
            cfg = replace(cfg, seeds=(int(env_seed),))
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env_seed!r}")
    files = run_scenario(cfg, output_dir=args.output_dir, threads=args.threads,
                         full_scale=args.full_scale, no_plots=args.no_plots)
    for f in files:
        print(f)
    return 0


def _cmd_bench(args) -> int:
    try:
        dims = [int(d) for d in args.dims.split(",") if d.strip()]
    except ValueError:
        raise ConfigurationError(f"--dims must be comma-separated integers, got {args.dims!r}")
    result = bench_step_cost(dims, args.trials)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for f in _write_bench(result, outdir):
        print(f)
    print(f"kalman exponent {result.kalman_exponent:.3f}, "
          f"gradient exponent {result.gradient_exponent:.3f}")
    return 0


def _cmd_graph_gen(args) -> int:
    net = generate_geometric_graph(args.nodes, args.radius, args.seed)
    out = Path(args.output)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    write_graph(out, net)
    print(f"{out} ({net.node_count} nodes, {len(net.edges)} edges)")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "bench":
            return _cmd_bench(args)
        return _cmd_graph_gen(args)
    except ConfigurationError as e:
        print(f"gradkf: configuration error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"gradkf: numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
