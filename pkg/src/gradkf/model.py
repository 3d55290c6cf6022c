"""Discrete-time LTI plant representation and simulation.

State-space convention:

    x[k+1] = A x[k] + B u[k] + Upsilon w[k],   w ~ N(0, Q)
    y[k]   = C x[k] + v[k],                    v ~ N(0, R), R diagonal

All randomness comes from ``numpy.random.Generator(numpy.random.PCG64(seed))``
so traces are reproducible bit-for-bit across platforms for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError


def _as_float_array(x, name: str) -> np.ndarray:
    try:
        a = np.asarray(x, dtype=float)
    except (ValueError, TypeError) as e:
        raise ConfigurationError(f"{name} is not a numeric array: {e}") from None
    if not np.all(np.isfinite(a)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SelectorOutputMap:
    """Output map measuring the first p states individually.

    Represents C = [diag(gains) | 0], i.e. row i has the single nonzero
    ``gains[i]`` in column i. This structure keeps C P C^T diagonal whenever
    P is diagonal, so the innovation covariance can be inverted with p scalar
    divisions.
    """

    gains: np.ndarray
    n: int

    def __post_init__(self):
        g = _as_float_array(self.gains, "gains")
        if g.ndim != 1 or g.size == 0:
            raise ConfigurationError("selector gains must be a non-empty vector")
        if g.size > self.n:
            raise ConfigurationError(f"selector has p={g.size} rows but only n={self.n} states")
        if np.any(g == 0.0):
            raise ConfigurationError("selector gains must be nonzero")
        object.__setattr__(self, "gains", g)

    @property
    def p(self) -> int:
        return self.gains.size

    def matrix(self) -> np.ndarray:
        C = np.zeros((self.p, self.n))
        C[np.arange(self.p), np.arange(self.p)] = self.gains
        return C

    @classmethod
    def from_matrix(cls, C) -> "SelectorOutputMap":
        """Build from a dense p-by-n matrix; rejects anything that is not a selector."""
        if isinstance(C, SelectorOutputMap):
            return C
        M = _as_float_array(C, "C")
        if M.ndim != 2:
            raise ConfigurationError("C must be a 2-D matrix")
        p, n = M.shape
        if p > n:
            raise ConfigurationError(f"selector output map needs p <= n, got {p}x{n}")
        expected = np.zeros_like(M)
        diag = np.diagonal(M).copy()
        expected[np.arange(p), np.arange(p)] = diag
        if np.any(diag == 0.0) or not np.array_equal(M, expected):
            raise ConfigurationError(
                "C is not a selector output map (one nonzero per row, on the leading diagonal)"
            )
        return cls(gains=diag, n=n)


def _check_psd(Q: np.ndarray, name: str):
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise ConfigurationError(f"{name} must be symmetric")
    if Q.size and np.linalg.eigvalsh(Q).min() < -1e-10:
        raise ConfigurationError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class LinearSystem:
    """Plant matrices. C may be a dense matrix or a SelectorOutputMap.

    A may be a scipy sparse array for large structured plants; everything else
    is dense. R must be diagonal with non-negative entries (zero entries model
    noise-free channels; the filters themselves additionally require R > 0).
    """

    A: object
    C: object
    Q: np.ndarray
    R: np.ndarray
    B: Optional[np.ndarray] = None
    Upsilon: Optional[np.ndarray] = None

    def __post_init__(self):
        A = self.A
        if sp.issparse(A):
            A = A.tocsr()
        else:
            A = _as_float_array(A, "A")
            if A.ndim != 2:
                raise ConfigurationError("A must be 2-D")
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"A must be square, got {A.shape}")
        n = A.shape[0]

        C = self.C
        if not isinstance(C, SelectorOutputMap):
            C = _as_float_array(C, "C")
            if C.ndim != 2 or C.shape[1] != n:
                raise ConfigurationError(f"C must be p x {n}, got {getattr(C, 'shape', None)}")
            p = C.shape[0]
        else:
            if C.n != n:
                raise ConfigurationError(f"selector is over {C.n} states but A is {n}x{n}")
            p = C.p

        R = _as_float_array(self.R, "R")
        if R.ndim == 0:
            R = R * np.eye(p)
        elif R.ndim == 1:
            R = np.diag(R)
        if R.shape != (p, p):
            raise ConfigurationError(f"R must be {p}x{p}, got {R.shape}")
        if np.any(R != np.diag(np.diagonal(R))):
            raise ConfigurationError("R must be diagonal")
        if np.any(np.diagonal(R) < 0):
            raise ConfigurationError("R diagonal entries must be non-negative")

        Q = _as_float_array(self.Q, "Q")
        if Q.ndim == 0:
            Q = Q * np.eye(n)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ConfigurationError("Q must be square")
        _check_psd(Q, "Q")
        q = Q.shape[0]

        B = self.B
        if B is not None:
            B = _as_float_array(B, "B")
            if B.ndim == 1:
                B = B[:, None]
            if B.shape[0] != n:
                raise ConfigurationError(f"B must have {n} rows, got {B.shape}")

        U = self.Upsilon
        if U is None:
            if q != n:
                raise ConfigurationError(f"Q is {q}x{q} but Upsilon is missing for n={n}")
            U = np.eye(n)
        else:
            U = _as_float_array(U, "Upsilon")
            if U.shape != (n, q):
                raise ConfigurationError(f"Upsilon must be {n}x{q}, got {U.shape}")

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Upsilon", U)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.C.p if isinstance(self.C, SelectorOutputMap) else self.C.shape[0]

    @property
    def m(self) -> int:
        return 0 if self.B is None else self.B.shape[1]

    @property
    def r_diag(self) -> np.ndarray:
        return np.diagonal(self.R)


def output_matrix(sys: LinearSystem) -> np.ndarray:
    """Dense p-by-n output matrix."""
    return sys.C.matrix() if isinstance(sys.C, SelectorOutputMap) else sys.C


def selector_of(sys: LinearSystem) -> SelectorOutputMap:
    """The system's output map as a selector; raises if C has any other shape."""
    return SelectorOutputMap.from_matrix(sys.C)


def measure(sys: LinearSystem, x: np.ndarray) -> np.ndarray:
    """Noise-free output C x."""
    if isinstance(sys.C, SelectorOutputMap):
        return sys.C.gains * x[: sys.C.p]
    return sys.C @ x


@dataclass(frozen=True)
class SimTrace:
    states: np.ndarray        # (steps+1, n), states[0] = x0
    measurements: np.ndarray  # (steps, p), measurements[k] = C states[k] + v[k]
    inputs: Optional[np.ndarray]
    dt: float
    seed: int


def _psd_factor(Q: np.ndarray) -> np.ndarray:
    """L with L L^T = Q for symmetric PSD Q (handles singular Q)."""
    if not Q.any():
        return np.zeros_like(Q)
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(Q)
        return V * np.sqrt(np.clip(w, 0.0, None))


def simulate(sys: LinearSystem, x0, inputs: Optional[Sequence] = None,
             steps: int = 1, seed: int = 0, dt: float = 1.0) -> SimTrace:
    """Simulate the plant for ``steps`` steps.

    Noise is drawn vectorized up front (process noise first, then measurement
    noise) from PCG64(seed), which pins the exact stream layout; identical
    arguments give bit-identical traces.
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    x0 = _as_float_array(x0, "x0")
    n, p, q = sys.n, sys.p, sys.Q.shape[0]
    if x0.shape != (n,):
        raise ConfigurationError(f"x0 must have shape ({n},), got {x0.shape}")

    u = None
    if inputs is not None:
        u = _as_float_array(inputs, "inputs")
        if u.ndim == 1:
            u = u[:, None]
        if sys.B is None:
            raise ConfigurationError("inputs supplied but the system has no B")
        if u.shape != (steps, sys.m):
            raise ConfigurationError(f"inputs must have shape ({steps}, {sys.m}), got {u.shape}")

    rng = np.random.Generator(np.random.PCG64(seed))
    W = rng.standard_normal((steps, q)) @ _psd_factor(sys.Q).T
    V = rng.standard_normal((steps, p)) * np.sqrt(sys.r_diag)

    xs = np.empty((steps + 1, n))
    xs[0] = x0
    A, B, U = sys.A, sys.B, sys.Upsilon
    # skip the disturbance map when it is the identity; saves an n^2 product per step
    dist = W if (U.shape == (n, q) and n == q and not (U - np.eye(n)).any()) else W @ U.T
    for k in range(steps):
        x_next = A @ xs[k] + dist[k]
        if u is not None:
            x_next = x_next + B @ u[k]
        xs[k + 1] = x_next

    if isinstance(sys.C, SelectorOutputMap):
        ys = xs[:-1, : sys.C.p] * sys.C.gains + V
    else:
        ys = xs[:-1] @ sys.C.T + V
    return SimTrace(states=xs, measurements=ys, inputs=u, dt=dt, seed=seed)


# ---------------------------------------------------------------------------
# 2D diffusion plant
# ---------------------------------------------------------------------------

def build_tridiagonal(n: int, periodic: bool = False) -> np.ndarray:
    """Second-difference stencil: -2 on the diagonal, 1 on the off-diagonals.

    ``periodic=True`` sets the (0, n-1) corners to 1 as well.
    """
    if n < 2:
        raise ConfigurationError("tridiagonal stencil needs n >= 2")
    D = np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    if periodic:
        D[0, n - 1] = 1.0
        D[n - 1, 0] = 1.0
    return D


@dataclass(frozen=True)
class DiffusionSpec:
    grid_n: int
    alpha: float
    beta: float
    dx: float
    dt: float
    periodic: bool = False
    taylor_order: int = 10

    def __post_init__(self):
        if self.grid_n < 2:
            raise ConfigurationError("diffusion grid needs grid_n >= 2")
        if self.dx <= 0 or self.dt < 0:
            raise ConfigurationError("diffusion spec needs dx > 0 and dt >= 0")
        if self.taylor_order < 1:
            raise ConfigurationError("taylor_order must be >= 1")


def diffusion_operator(spec: DiffusionSpec) -> np.ndarray:
    """Continuous-time generator on the grid_n**2 states.

        A_ct = (2/dx^2) [ I (x) (alpha D)  +  (beta D) (x) I ]

    State vectors use column-major grid order: the field value at grid point
    (r, c) lives at index r + c*grid_n, so the first Kronecker term acts along
    the first grid axis and the second along the other.
    """
    D = build_tridiagonal(spec.grid_n, spec.periodic)
    I = np.eye(spec.grid_n)
    return (2.0 / spec.dx ** 2) * (np.kron(I, spec.alpha * D) + np.kron(spec.beta * D, I))


def _taylor_matrix_exp(M: np.ndarray, order: int) -> np.ndarray:
    A = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for j in range(1, order + 1):
        term = term @ M / j
        A = A + term
    return A


def build_diffusion(spec: DiffusionSpec) -> LinearSystem:
    """Discrete-time diffusion plant.

    A = sum_{j<=taylor_order} (A_ct dt)^j / j!. C, Q, R are placeholders
    (identity selector, zero process noise, unit measurement noise) meant to
    be replaced by the scenario that attaches sensors.
    """
    n = spec.grid_n ** 2
    A = _taylor_matrix_exp(diffusion_operator(spec) * spec.dt, spec.taylor_order)
    return LinearSystem(
        A=A,
        C=SelectorOutputMap(gains=np.ones(n), n=n),
        Q=np.zeros((n, n)),
        R=np.eye(n),
    )


def gaussian_bumps_initial(grid_n: int, bumps: Sequence) -> np.ndarray:
    """Sum of 2D Gaussians sampled on the grid, as a length grid_n**2 vector.

    Each bump is (center_r, center_c, amplitude, width); vectorization is
    column-major, matching diffusion_operator.
    """
    F = np.zeros((grid_n, grid_n))
    coords = np.arange(grid_n, dtype=float)
    RR, CC = np.meshgrid(coords, coords, indexing="ij")
    for bump in bumps:
        cr, cc, amp, width = (float(v) for v in bump)
        if not (0 <= cr <= grid_n - 1 and 0 <= cc <= grid_n - 1):
            raise ConfigurationError(f"bump center ({cr}, {cc}) outside the grid")
        if width <= 0:
            raise ConfigurationError("bump width must be positive")
        F += amp * np.exp(-((RR - cr) ** 2 + (CC - cc) ** 2) / (2.0 * width * width))
    return F.ravel(order="F")
