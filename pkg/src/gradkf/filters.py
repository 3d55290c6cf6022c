"""Kalman filters: the standard Riccati baseline and the gradient-descent
diagonal-covariance family.

The gradient family keeps the error covariance as P = diag(exp(beta)) and
descends the squared innovation with respect to beta, optionally with
Nesterov momentum and a Barzilai-Borwein adaptive learning rate. With a
selector output map the innovation covariance is diagonal, so one step costs
O(n + p) scalar work plus the A x product; no matrix is ever inverted.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, NumericalError
from .model import LinearSystem, SelectorOutputMap, selector_of, output_matrix

# Numerical guards. beta is clamped so exp(beta) stays finite in double
# precision; the BB rate is clamped to a sane positive interval.
BETA_CLAMP = 30.0
MU_MIN = 1e-8
MU_MAX = 1e2
# condition-number ceiling for the standard filter's innovation solve
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class FilterOpts:
    """Variant switches for the gradient-covariance filter.

    accelerated: evaluate the gradient step at the Nesterov look-ahead point.
    adaptive: Barzilai-Borwein learning rate (fixed_mu is ignored then).
    nesterov_plus: use the (k+1)/(k+2) momentum coefficient instead of the
        standard (k-1)/(k+2) sequence. Kept for A/B comparisons.
    """

    accelerated: bool = True
    adaptive: bool = True
    fixed_mu: float = 1e-2
    nesterov_plus: bool = False

    def __post_init__(self):
        if not self.adaptive and not (self.fixed_mu > 0):
            raise ConfigurationError("fixed_mu must be positive for the non-adaptive variant")


PLAIN = FilterOpts(accelerated=False, adaptive=False)
ACCELERATED = FilterOpts(accelerated=True, adaptive=False)
ACCELERATED_ADAPTIVE = FilterOpts(accelerated=True, adaptive=True)


@dataclass(frozen=True)
class KalmanState:
    x_hat: np.ndarray          # prior estimate for step k
    P: np.ndarray              # prior error covariance
    k: int
    x_post: Optional[np.ndarray] = None  # posterior from the previous step


@dataclass(frozen=True)
class GradCovState:
    x_hat: np.ndarray          # prior estimate for step k
    beta: np.ndarray           # log-variances, P = diag(exp(beta))
    beta_prev: np.ndarray      # beta at step k-1 (momentum)
    alpha_prev: np.ndarray     # gradient evaluation point of step k-1 (BB delta-beta)
    h: np.ndarray              # sensitivity approximations d x_hat / d beta
    mu: float                  # current learning rate
    grad_prev: np.ndarray      # gradient from step k-1 (BB delta-g)
    k: int
    x_post: Optional[np.ndarray] = None


def init_kalman(x0, P0, k: int = 1) -> KalmanState:
    x0 = np.asarray(x0, dtype=float)
    P0 = np.asarray(P0, dtype=float)
    if P0.ndim == 0:
        P0 = float(P0) * np.eye(x0.size)
    elif P0.ndim == 1:
        P0 = np.diag(P0)
    if not np.allclose(P0, P0.T, atol=1e-10):
        raise ConfigurationError("P0 must be symmetric")
    if np.linalg.eigvalsh(P0).min() <= 0:
        raise ConfigurationError("P0 must be positive definite")
    return KalmanState(x_hat=x0, P=P0, k=k, x_post=x0.copy())


def init_gradcov(sys: LinearSystem, x0, P0) -> GradCovState:
    """Initial filter state: beta = ln(diag P0), zero sensitivities.

    Raises ConfigurationError when the system's C is not a selector output
    map or when R is not strictly positive definite.
    """
    selector_of(sys)  # rejects general output maps up front
    if np.any(sys.r_diag <= 0):
        raise ConfigurationError("gradient-covariance filter requires R with positive diagonal")
    x0 = np.asarray(x0, dtype=float)
    n = sys.n
    if x0.shape != (n,):
        raise ConfigurationError(f"x0 must have shape ({n},)")
    P0 = np.asarray(P0, dtype=float)
    if P0.ndim == 2:
        P0 = np.diagonal(P0).copy()
    elif P0.ndim == 0:
        P0 = np.full(n, float(P0))
    if P0.shape != (n,) or np.any(P0 <= 0):
        raise ConfigurationError("P0 must have a strictly positive diagonal")
    beta0 = np.log(P0)
    if np.any(np.abs(beta0) > BETA_CLAMP):
        raise ConfigurationError(f"ln(diag P0) must lie within +/-{BETA_CLAMP}")
    zeros = np.zeros(n)
    return GradCovState(
        x_hat=x0.copy(), beta=beta0, beta_prev=beta0.copy(), alpha_prev=beta0.copy(),
        h=zeros.copy(), mu=1e-2, grad_prev=zeros.copy(), k=1, x_post=x0.copy(),
    )


# ---------------------------------------------------------------------------
# Standard Kalman filter (baseline)
# ---------------------------------------------------------------------------

def kf_step(sys: LinearSystem, st: KalmanState, y, u=None) -> KalmanState:
    """One predict-correct cycle of the standard filter.

    K = P C^T (C P C^T + R)^-1
    x+ = A (x + K (y - C x)) + B u
    P+ = A (I - K C) P A^T + Upsilon Q Upsilon^T   (symmetrized)
    """
    C = output_matrix(sys)
    P, x = st.P, st.x_hat
    S = C @ P @ C.T + sys.R
    if np.linalg.cond(S) > _COND_LIMIT:
        raise NumericalError(f"innovation matrix C P C^T + R is singular at step {st.k}")
    # K = P C^T S^-1 via a symmetric solve; no explicit inverse
    K = np.linalg.solve(S, C @ P).T
    x_post = x + K @ (np.asarray(y, dtype=float) - C @ x)
    x_next = sys.A @ x_post
    if u is not None:
        x_next = x_next + sys.B @ np.asarray(u, dtype=float)
    P_next = sys.A @ ((np.eye(sys.n) - K @ C) @ P) @ sys.A.T + sys.Upsilon @ sys.Q @ sys.Upsilon.T
    P_next = 0.5 * (P_next + P_next.T)
    if not np.all(np.isfinite(x_next)):
        raise NumericalError(f"standard filter produced a non-finite estimate at step {st.k}")
    return KalmanState(x_hat=x_next, P=P_next, k=st.k + 1, x_post=x_post)


# ---------------------------------------------------------------------------
# Gradient-descent covariance pieces
# ---------------------------------------------------------------------------

def grad_of_objective(delta: np.ndarray, C: SelectorOutputMap, h: np.ndarray) -> np.ndarray:
    """Gradient of the squared innovation with respect to beta.

    g[i] = -2 delta[i] C[i,i] h[i] for measured states, 0 for the rest, so
    that the descent update beta - mu/2 g matches the covariance recursion.
    """
    g = np.zeros_like(h)
    p = C.p
    g[:p] = -2.0 * np.asarray(delta, dtype=float) * C.gains * h[:p]
    return g


def h_update(h: np.ndarray, kappa: np.ndarray, C: SelectorOutputMap,
             delta: np.ndarray) -> np.ndarray:
    """Sensitivity recursion.

    kappa holds the single nonzero entry of each gain column k^(i) (the
    selector structure makes k^(i) = kappa[i] e_i). The decay factor
    (1 - kappa[i] C[i,i]) is clamped at zero from below.
    """
    p = C.p
    nfac = kappa * C.gains
    out = h.copy()
    out[:p] = h[:p] * np.maximum(1.0 - nfac, 0.0) + kappa * (1.0 - nfac) * delta
    return out


def bb_rate(delta_beta: np.ndarray, delta_grad: np.ndarray, mu_prev: float) -> float:
    """Barzilai-Borwein learning rate 2 (dg . db) / (dg . dg).

    Total by design: a non-finite or non-positive candidate falls back to
    mu_prev; otherwise the value is clamped to [MU_MIN, MU_MAX].
    """
    dg = np.asarray(delta_grad, dtype=float)
    den = float(dg @ dg)
    if den == 0.0 or not np.isfinite(den):
        return mu_prev
    cand = 2.0 * float(dg @ np.asarray(delta_beta, dtype=float)) / den
    if not np.isfinite(cand) or cand <= 0.0:
        return mu_prev
    return min(max(cand, MU_MIN), MU_MAX)


def nesterov_alpha(beta: np.ndarray, beta_prev: np.ndarray, k: int) -> np.ndarray:
    """Momentum look-ahead alpha = beta + (k-1)/(k+2) (beta - beta_prev)."""
    if k < 1:
        raise ConfigurationError("momentum step index must be >= 1")
    return beta + ((k - 1.0) / (k + 2.0)) * (beta - beta_prev)


def covariance_estimate(st: GradCovState) -> np.ndarray:
    """diag(exp(beta)); positive definite by construction."""
    return np.diag(np.exp(st.beta))


def _grad_cov_core(beta, beta_prev, alpha_prev, h, mu, grad_prev, k,
                   idx, gains, r_diag, delta, opts: FilterOpts):
    """Shared beta/h/mu block for the centralized and per-node filters.

    idx are the measured state indices; gains/r_diag/delta are aligned with
    idx. Returns the state gain K (per measured state) along with the updated
    beta, h, mu, the raw gradient, and the evaluation point used.
    """
    pdiag = np.exp(beta)
    D = r_diag + pdiag[idx] * (gains * gains)
    if opts.accelerated:
        shift = 1.0 if opts.nesterov_plus else -1.0
        base = beta + ((k + shift) / (k + 2.0)) * (beta - beta_prev)
    else:
        base = beta
    kappa = np.exp(base[idx]) * gains / D

    g = np.zeros_like(beta)
    g[idx] = -2.0 * delta * gains * h[idx]

    if opts.adaptive:
        mu_new = bb_rate(beta - alpha_prev, g - grad_prev, mu) if k >= 2 else mu
    else:
        mu_new = opts.fixed_mu

    beta_new = np.clip(base - 0.5 * mu_new * g, -BETA_CLAMP, BETA_CLAMP)

    nfac = kappa * gains
    h_new = h.copy()
    h_new[idx] = h[idx] * np.maximum(1.0 - nfac, 0.0) + kappa * (1.0 - nfac) * delta

    K = pdiag[idx] * gains / D
    return K, g, base, beta_new, h_new, mu_new


def gdkf_step(sys: LinearSystem, st: GradCovState, y, u=None,
              opts: FilterOpts = ACCELERATED_ADAPTIVE) -> GradCovState:
    """One iteration of the gradient-covariance filter.

    Innovation delta = y - C x; D = R + C P C^T is diagonal and inverted by
    p scalar divisions. The state gain uses exp(beta); the sensitivity gain
    kappa uses the gradient evaluation point (the momentum look-ahead when
    accelerated). beta moves by -mu/2 times the gradient, clamped to
    +/-BETA_CLAMP.
    """
    sel = sys.C if isinstance(sys.C, SelectorOutputMap) else selector_of(sys)
    p = sel.p
    idx = np.arange(p)
    y = np.asarray(y, dtype=float)
    delta = y - sel.gains * st.x_hat[:p]

    K, g, base, beta_new, h_new, mu_new = _grad_cov_core(
        st.beta, st.beta_prev, st.alpha_prev, st.h, st.mu, st.grad_prev, st.k,
        idx, sel.gains, sys.r_diag, delta, opts)

    x_post = st.x_hat.copy()
    x_post[idx] = st.x_hat[idx] + K * delta
    x_next = sys.A @ x_post
    if u is not None:
        x_next = x_next + sys.B @ np.asarray(u, dtype=float)

    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(beta_new))
            and np.all(np.isfinite(h_new))):
        raise NumericalError(f"gradient-covariance filter diverged at step {st.k}")

    return GradCovState(
        x_hat=x_next, beta=beta_new, beta_prev=st.beta, alpha_prev=base,
        h=h_new, mu=mu_new, grad_prev=g, k=st.k + 1, x_post=x_post,
    )
