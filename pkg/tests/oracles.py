"""Independent numerical oracles used by the tests.

These deliberately avoid the library's own code paths (and LAPACK where the
library uses LAPACK) so that agreement between the two routes is evidence,
not tautology.
"""

from __future__ import annotations

import numpy as np


def jacobi_singular_values(a: np.ndarray, sweeps: int = 60, tol: float = 1e-14) -> np.ndarray:
    """Singular values by one-sided Jacobi rotations on the columns."""
    b = np.array(a, dtype=np.float64, copy=True)
    if b.shape[0] < b.shape[1]:
        b = b.T.copy()
    n = b.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = float(b[:, p] @ b[:, p])
                aqq = float(b[:, q] @ b[:, q])
                apq = float(b[:, p] @ b[:, q])
                if abs(apq) <= tol * np.sqrt(app * aqq) or apq == 0.0:
                    continue
                off = max(off, abs(apq))
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0.0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                bp = c * b[:, p] - s * b[:, q]
                bq = s * b[:, p] + c * b[:, q]
                b[:, p], b[:, q] = bp, bq
        if off == 0.0:
            break
    sv = np.sqrt(np.sum(b * b, axis=0))
    return np.sort(sv)[::-1]


def finite_difference_grad(oracle, x, xi: int, step: float = 1e-6):
    """Central-difference gradient via an explicit entry loop.

    Written independently of the library's CGE (no shared helpers) so it can
    serve as the oracle for gradient checks.
    """
    grads = []
    for a in x.layers:
        g = np.zeros_like(a)
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                orig = a[i, j]
                a[i, j] = orig + step
                fp = oracle.evaluate(x, xi)
                a[i, j] = orig - step
                fm = oracle.evaluate(x, xi)
                a[i, j] = orig
                g[i, j] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def lstsq_projection(n_factor: np.ndarray, v_old: np.ndarray, v_new: np.ndarray) -> np.ndarray:
    """Brute-force argmin_N ||N_old V_old^T - N V_new^T||_F row by row via lstsq."""
    target = v_old @ n_factor.T  # column i is V_old N[i]^T
    sol, *_ = np.linalg.lstsq(v_new, target, rcond=None)
    return sol.T


def gram_rank(a: np.ndarray, rel_tol: float = 1e-10) -> int:
    """Rank via eigenvalues of the Gram matrix; independent of any SVD.

    The threshold applies on the eigenvalue (squared singular value) scale:
    forming A^T A squares the noise floor, so this route resolves ranks whose
    spectral gap exceeds sqrt(rel_tol), which is all the tests need.
    """
    g = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    ev = np.clip(np.linalg.eigvalsh(g), 0.0, None)
    if ev.size == 0 or ev[-1] == 0.0:
        return 0
    return int(np.count_nonzero(ev > rel_tol * ev[-1]))


def ema_momentum(cs, us, beta: float) -> np.ndarray:
    """Direct recomputation of N^t = sum_s (1-beta) beta^(t-s) c_s U_s."""
    t = len(cs) - 1
    acc = np.zeros_like(us[0])
    for s, (c, u) in enumerate(zip(cs, us)):
        acc += (1.0 - beta) * beta ** (t - s) * c * u
    return acc
