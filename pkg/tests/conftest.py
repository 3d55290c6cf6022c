"""Shared builders for the test suite."""

import numpy as np
from scipy.linalg import block_diag

from gradkf import LinearSystem, SelectorOutputMap


def make_two_state(r=0.115, q=0.001):
    """The 2-state demo plant used across the experiment tests."""
    A = np.array([[1.001, 0.011], [-0.0301, 0.98]])
    B = np.array([[5e-5], [1e-2]])
    return LinearSystem(A=A, B=B, C=SelectorOutputMap(gains=np.ones(2), n=2),
                        Q=q, R=np.full(2, r))


def normal_stable(rng, n, rho_max=0.98):
    """Random normal matrix (A A^T = A^T A) with spectral radius < rho_max.

    Built as Q L Q^T with Q orthogonal and L block-diagonal over scaled
    rotations and real scalars, so the 2-norm equals the spectral radius and
    multiplying by any diagonal contraction cannot grow the spectral radius.
    """
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    blocks = []
    i = 0
    while i < n:
        if i + 1 < n and rng.random() < 0.5:
            s = rng.uniform(0.05, rho_max)
            th = rng.uniform(0.0, 2.0 * np.pi)
            blocks.append(s * np.array([[np.cos(th), -np.sin(th)],
                                        [np.sin(th), np.cos(th)]]))
            i += 2
        else:
            blocks.append(np.array([[rng.uniform(-rho_max, rho_max)]]))
            i += 1
    return Qm @ block_diag(*blocks) @ Qm.T


def golden_min(f, lo, hi, tol=1e-12):
    """Golden-section minimizer of a unimodal f on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def argmin_1d(f, lo, hi):
    """Golden-section search plus one parabolic vertex refinement.

    Plain golden section stalls around sqrt(machine eps) on flat quadratic
    minima; the three-point vertex step recovers the extra digits.
    """
    x = golden_min(f, lo, hi, tol=1e-6)
    d = 1e-3
    f_lo, f_mid, f_hi = f(x - d), f(x), f(x + d)
    denom = f_hi - 2.0 * f_mid + f_lo
    if denom > 0:
        x = x - d * (f_hi - f_lo) / (2.0 * denom)
    return x
