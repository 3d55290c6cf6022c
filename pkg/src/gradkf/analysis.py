"""Stability checks and experiment metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError
from .model import SelectorOutputMap


@dataclass(frozen=True)
class StabilityReport:
    rho_A: float
    rho_closed: float
    N_diag: np.ndarray
    stable: bool


def closed_loop_check(A, C: SelectorOutputMap, R, beta) -> StabilityReport:
    """Spectral radii of A and of the estimation error loop A (I - N).

    N is diagonal with N[i] = exp(beta_i) c_i^2 / (exp(beta_i) c_i^2 + r_i)
    on measured states and 0 elsewhere; every entry lies in [0, 1) for finite
    beta and positive R. ``stable`` is a strict rho(A(I-N)) < 1 at 1e-12.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigurationError("A must be square")
    if C.n != n:
        raise ConfigurationError(f"selector covers {C.n} states, A has {n}")
    beta = np.asarray(beta, dtype=float)
    r = np.asarray(R, dtype=float)
    if r.ndim == 2:
        r = np.diagonal(r)
    if np.any(r <= 0):
        raise ConfigurationError("R must have a strictly positive diagonal")

    N = np.zeros(n)
    e = np.exp(beta[: C.p]) * C.gains ** 2
    N[: C.p] = e / (e + r)
    if np.any(N < 0) or np.any(N >= 1):
        raise NumericalError("closed-loop attenuation left [0, 1)")

    closed = A * (1.0 - N)[None, :]
    rho_A = float(np.max(np.abs(np.linalg.eigvals(A))))
    rho_closed = float(np.max(np.abs(np.linalg.eigvals(closed))))
    return StabilityReport(rho_A=rho_A, rho_closed=rho_closed, N_diag=N,
                           stable=rho_closed < 1.0 - 1e-12)


def steady_state_error(estimates, truth, window, dt: float) -> float:
    """Mean Euclidean error over the window [t_a, t_b].

    Sample k has time k*dt; both endpoints are inclusive. Raises when no
    sample falls inside the window.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ConfigurationError(f"estimate shape {est.shape} != truth shape {tru.shape}")
    t_a, t_b = float(window[0]), float(window[1])
    if not (dt > 0) or t_b < t_a:
        raise ConfigurationError("window must be ordered and dt positive")
    times = np.arange(est.shape[0]) * dt
    mask = (times >= t_a - 1e-12) & (times <= t_b + 1e-12)
    if not mask.any():
        raise ConfigurationError(f"window [{t_a}, {t_b}] contains no samples at dt={dt}")
    return float(np.linalg.norm(est[mask] - tru[mask], axis=1).mean())


def disagreement(states) -> float:
    """Largest pairwise Euclidean distance among node estimates.

    Zero for a single node. Uses the Gram-matrix identity so no m^2 x n
    intermediate is formed.
    """
    X = np.asarray(states, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ConfigurationError("need a (nodes, n) array with at least one node")
    if X.shape[0] == 1:
        return 0.0
    G = X @ X.T
    sq = np.diagonal(G)
    d2 = sq[:, None] + sq[None, :] - 2.0 * G
    return float(np.sqrt(max(float(d2.max()), 0.0)))
