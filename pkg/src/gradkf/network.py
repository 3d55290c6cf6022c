"""Sensor networks and the distributed Kalman-consensus filter.

Each node runs the gradient-covariance filter on its own sensor and blends
its estimate toward its neighbors'. A round is Jacobi-style: every node reads
only round-k values, so node evaluation order cannot affect the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, NumericalError
from .filters import FilterOpts, ACCELERATED_ADAPTIVE, GradCovState, _grad_cov_core
from .model import LinearSystem, SelectorOutputMap, _psd_factor

__all__ = [
    "PatchSensor", "NodeSensor", "SensorNetwork", "NodeState",
    "aggregate", "dkcf_step", "init_node_states", "simulate_network",
    "patch_sensor_cover", "generate_geometric_graph",
    "read_graph", "write_graph",
]


@dataclass(frozen=True)
class PatchSensor:
    """An n_l x n_l square patch of a square grid, anchored at (row, col)."""

    origin: Tuple[int, int]
    side: int

    def state_indices(self, grid_n: int) -> np.ndarray:
        r0, c0 = self.origin
        if self.side < 1 or r0 < 0 or c0 < 0 or r0 + self.side > grid_n or c0 + self.side > grid_n:
            raise ConfigurationError(f"patch {self.origin} side {self.side} falls outside the grid")
        rows = np.arange(r0, r0 + self.side)
        cols = np.arange(c0, c0 + self.side)
        # column-major state order: index = row + col*grid_n
        return np.sort((rows[:, None] + cols[None, :] * grid_n).ravel())


@dataclass(frozen=True)
class NodeSensor:
    """Per-node measurement model: y = gains * x[indices] + noise(r_diag)."""

    indices: np.ndarray
    gains: np.ndarray
    r_diag: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        gains = np.asarray(self.gains, dtype=float)
        r = np.asarray(self.r_diag, dtype=float)
        if idx.ndim != 1 or idx.size == 0 or np.any(np.diff(idx) <= 0):
            raise ConfigurationError("sensor indices must be strictly increasing and non-empty")
        if gains.shape != idx.shape or r.shape != idx.shape:
            raise ConfigurationError("sensor gains/r_diag must match the index count")
        if np.any(gains == 0) or np.any(r <= 0):
            raise ConfigurationError("sensor gains must be nonzero and noise variances positive")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "r_diag", r)

    @property
    def p(self) -> int:
        return self.indices.size

    @classmethod
    def from_selector(cls, sel: SelectorOutputMap, r_diag) -> "NodeSensor":
        return cls(indices=np.arange(sel.p), gains=sel.gains.copy(),
                   r_diag=np.asarray(r_diag, dtype=float))

    @classmethod
    def from_patch(cls, patch: PatchSensor, grid_n: int, r: float = 1.0) -> "NodeSensor":
        idx = patch.state_indices(grid_n)
        return cls(indices=idx, gains=np.ones(idx.size), r_diag=np.full(idx.size, float(r)))

    def measure(self, x: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return self.gains * x[self.indices] + noise


@dataclass(frozen=True)
class SensorNetwork:
    """Undirected graph plus optional per-node sensors and positions."""

    node_count: int
    edges: Tuple[Tuple[int, int], ...]
    sensors: Optional[Tuple[NodeSensor, ...]] = None
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.node_count < 1:
            raise ConfigurationError("network needs at least one node")
        seen = set()
        canon = []
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ConfigurationError(f"self-loop on node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ConfigurationError(f"edge ({i},{j}) references a missing node")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ConfigurationError(f"duplicate edge {key}")
            seen.add(key)
            canon.append(key)
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        if self.sensors is not None:
            if len(self.sensors) != self.node_count:
                raise ConfigurationError("need one sensor per node")
            object.__setattr__(self, "sensors", tuple(self.sensors))

    def neighbor_lists(self) -> List[List[int]]:
        nbrs: List[List[int]] = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [sorted(v) for v in nbrs]


@dataclass(frozen=True)
class NodeState:
    node_id: int
    grad_cov: GradCovState


def init_node_states(net: SensorNetwork, sys: LinearSystem, P0,
                     x0s: Optional[Sequence] = None) -> List[NodeState]:
    """All-zero initial estimates unless x0s supplies one per node.

    Every node carries a full-length beta = ln(diag P0); coordinates a node
    never measures keep their initial value for the whole run.
    """
    if net.sensors is None:
        raise ConfigurationError("network has no sensors attached")
    n = sys.n
    P0 = np.asarray(P0, dtype=float)
    if P0.ndim == 2:
        P0 = np.diagonal(P0).copy()
    elif P0.ndim == 0:
        P0 = np.full(n, float(P0))
    if P0.shape != (n,) or np.any(P0 <= 0):
        raise ConfigurationError("P0 must have a strictly positive diagonal")
    beta0 = np.log(P0)
    states = []
    for j in range(net.node_count):
        x0 = np.zeros(n) if x0s is None else np.asarray(x0s[j], dtype=float)
        if x0.shape != (n,):
            raise ConfigurationError(f"node {j} initial estimate must have shape ({n},)")
        st = GradCovState(
            x_hat=x0.copy(), beta=beta0.copy(), beta_prev=beta0.copy(),
            alpha_prev=beta0.copy(), h=np.zeros(n), mu=1e-2,
            grad_prev=np.zeros(n), k=1, x_post=x0.copy(),
        )
        states.append(NodeState(node_id=j, grad_cov=st))
    return states


def aggregate(net: SensorNetwork, j: int, measurements: Sequence,
              n: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Inclusive neighborhood average of sensor normal equations.

    Over J = N_j + {j}: s_diag = mean of C_l^T C_l (diagonal, returned as a
    vector - the matrix never has off-diagonal mass for index sensors) and
    y_agg = mean of C_l^T y_l. Entries of states no member measures are zero.
    n defaults to the smallest state count the attached sensors imply.
    """
    if net.sensors is None:
        raise ConfigurationError("network has no sensors attached")
    if n is None:
        n = int(max(s.indices.max() for s in net.sensors)) + 1
    s_diag = np.zeros(n)
    y_agg = np.zeros(n)
    members = sorted(net.neighbor_lists()[j] + [j])
    for l in members:
        sensor = net.sensors[l]
        y = measurements[l]
        if y is None or np.shape(y) != sensor.indices.shape:
            raise ConfigurationError(f"measurement for node {l} is missing or misshapen")
        s_diag[sensor.indices] += sensor.gains * sensor.gains
        y_agg[sensor.indices] += sensor.gains * np.asarray(y, dtype=float)
    count = float(len(members))
    return s_diag / count, y_agg / count


def _node_plan(net: SensorNetwork, n: int):
    """Precomputed per-node index structures for dkcf_step."""
    nbrs = net.neighbor_lists()
    plans = []
    for j in range(net.node_count):
        sensor = net.sensors[j]
        unmeasured = np.ones(n, dtype=bool)
        unmeasured[sensor.indices] = False
        plans.append((sensor, nbrs[j], unmeasured))
    return plans


def dkcf_step(net: SensorNetwork, sys: LinearSystem, states: Sequence[NodeState],
              measurements: Sequence, u=None, epsilon: float = None,
              opts: FilterOpts = ACCELERATED_ADAPTIVE) -> List[NodeState]:
    """One synchronous round of the distributed consensus filter.

    Per node j: aggregate (s_diag, y_agg) over the inclusive neighborhood,
    run the shared gradient-covariance block on the node's own innovation,
    then correct the estimate with

        x+ = x + M [ y_agg - s_diag * x + epsilon * sum_l (x_l - x_j) ]

    where M is diagonal: exp(beta_i)/(exp(beta_i) c_i^2 + r_i) on states the
    node measures, and a unit gain on the consensus term alone (zero on the
    innovation term) on states it does not. All reads use round-k values.
    """
    if epsilon is None or not (epsilon > 0):
        raise ConfigurationError("epsilon must be a positive consensus step")
    if net.sensors is None:
        raise ConfigurationError("network has no sensors attached")
    n = sys.n
    old_x = [st.grad_cov.x_hat for st in states]
    plans = _node_plan(net, n)

    pairs = [aggregate(net, j, measurements, n) for j in range(net.node_count)]
    s_diags = [p[0] for p in pairs]
    y_aggs = [p[1] for p in pairs]

    new_states: List[NodeState] = []
    for j in range(net.node_count):
        sensor, nbr, unmeasured = plans[j]
        st = states[j].grad_cov
        idx = sensor.indices
        x = st.x_hat
        y_own = np.asarray(measurements[j], dtype=float)
        delta = y_own - sensor.gains * x[idx]

        K, g, base, beta_new, h_new, mu_new = _grad_cov_core(
            st.beta, st.beta_prev, st.alpha_prev, st.h, st.mu, st.grad_prev, st.k,
            idx, sensor.gains, sensor.r_diag, delta, opts)

        pdiag = np.exp(st.beta)
        M = pdiag[idx] / (sensor.r_diag + pdiag[idx] * (sensor.gains * sensor.gains))

        x_post = x.copy()
        if nbr:
            cons = np.zeros(n)
            for l in nbr:
                cons += old_x[l] - x
            bracket = y_aggs[j][idx] - s_diags[j][idx] * x[idx] + epsilon * cons[idx]
            x_post[unmeasured] += epsilon * cons[unmeasured]
        else:
            bracket = y_aggs[j][idx] - s_diags[j][idx] * x[idx]
        x_post[idx] = x[idx] + M * bracket

        x_next = sys.A @ x_post
        if u is not None:
            x_next = x_next + sys.B @ np.asarray(u, dtype=float)

        if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(beta_new))):
            raise NumericalError(f"consensus filter diverged at node {j}, step {st.k}")

        new_states.append(NodeState(node_id=j, grad_cov=GradCovState(
            x_hat=x_next, beta=beta_new, beta_prev=st.beta, alpha_prev=base,
            h=h_new, mu=mu_new, grad_prev=g, k=st.k + 1, x_post=x_post)))
    return new_states


def simulate_network(net: SensorNetwork, sys: LinearSystem, x0, steps: int,
                     seed: int) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Truth trajectory plus one noisy measurement stream per node.

    Sensors overlapping the same state draw independent noise. All noise is
    drawn vectorized up front from PCG64(seed) - process noise first, then
    each node's measurement noise in node order - so identical arguments give
    bit-identical streams.
    """
    if net.sensors is None:
        raise ConfigurationError("network has no sensors attached")
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    n = sys.n
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ConfigurationError(f"x0 must have shape ({n},), got {x0.shape}")

    rng = np.random.Generator(np.random.PCG64(seed))
    q = sys.Q.shape[0]
    qdiag = np.diagonal(sys.Q)
    if np.any(sys.Q != np.diag(qdiag)):
        W = rng.standard_normal((steps, q)) @ _psd_factor(sys.Q).T
    else:
        W = rng.standard_normal((steps, q)) * np.sqrt(qdiag)
    noises = [rng.standard_normal((steps, s.p)) * np.sqrt(s.r_diag)
              for s in net.sensors]

    U = sys.Upsilon
    if not (U.shape == (n, q) and n == q and not (U - np.eye(n)).any()):
        W = W @ U.T
    xs = np.empty((steps + 1, n))
    xs[0] = x0
    for k in range(steps):
        xs[k + 1] = sys.A @ xs[k] + W[k]

    measurements = [xs[:-1, s.indices] * s.gains + noises[l]
                    for l, s in enumerate(net.sensors)]
    return xs, measurements


# ---------------------------------------------------------------------------
# Network construction helpers
# ---------------------------------------------------------------------------

def patch_sensor_cover(grid_n: int, n_l: int) -> List[PatchSensor]:
    """ceil(grid_n/n_l)^2 patches covering every grid point at least once.

    The last row/column of patches is shifted back inside the grid, so
    patches overlap when n_l does not divide grid_n.
    """
    if not (1 <= n_l <= grid_n):
        raise ConfigurationError(f"patch side {n_l} must lie in [1, {grid_n}]")
    tiles = -(-grid_n // n_l)
    origins = [min(i * n_l, grid_n - n_l) for i in range(tiles)]
    return [PatchSensor(origin=(r, c), side=n_l) for r in origins for c in origins]


def generate_geometric_graph(node_count: int, radius: float, seed: int) -> SensorNetwork:
    """Random geometric graph: uniform points in the unit square, edge iff
    distance <= radius. Deterministic per seed."""
    if node_count < 1:
        raise ConfigurationError("node_count must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = rng.uniform(0.0, 1.0, size=(node_count, 2))
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    ii, jj = np.nonzero(np.triu(d2 <= radius * radius, k=1))
    edges = tuple((int(a), int(b)) for a, b in zip(ii, jj))
    return SensorNetwork(node_count=node_count, edges=edges, positions=pts)


def write_graph(path, net: SensorNetwork):
    """Edge-list file: 'nodes N' then one '<i> <j>' line per edge (i < j)."""
    lines = [f"nodes {net.node_count}"]
    lines += [f"{i} {j}" for i, j in net.edges]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_graph(path) -> SensorNetwork:
    """Parse a graph file; '#' starts a comment, blank lines are skipped."""
    node_count = None
    edges = []
    with open(path, encoding="utf-8") as f:
        for ln, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if node_count is None:
                if parts[0] != "nodes" or len(parts) != 2:
                    raise ConfigurationError(f"{path}:{ln}: expected 'nodes <N>'")
                try:
                    node_count = int(parts[1])
                except ValueError:
                    raise ConfigurationError(f"{path}:{ln}: node count must be an integer") from None
                continue
            if len(parts) != 2:
                raise ConfigurationError(f"{path}:{ln}: expected '<i> <j>'")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise ConfigurationError(f"{path}:{ln}: edge endpoints must be integers") from None
            if not i < j:
                raise ConfigurationError(f"{path}:{ln}: edges must be written with i < j")
            edges.append((i, j))
    if node_count is None:
        raise ConfigurationError(f"{path}: missing 'nodes <N>' header")
    return SensorNetwork(node_count=node_count, edges=tuple(edges))
