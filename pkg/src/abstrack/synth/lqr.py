"""LQR seeding: Riccati solution refined by Kleinman-Newton, then a Lyapunov function."""
from __future__ import annotations

import numpy as np
import scipy.linalg as la

from ..polyalg import Polynomial


class StabilizabilityError(ValueError):
    pass


def care_residual(A: np.ndarray, B: np.ndarray, P: np.ndarray, Q=None, R=None) -> float:
    n, m = B.shape
    Q = np.eye(n) if Q is None else Q
    R = np.eye(m) if R is None else R
    res = A.T @ P + P @ A - P @ B @ la.solve(R, B.T @ P) + Q
    return float(np.abs(res).max())


def is_stabilizable(A: np.ndarray, B: np.ndarray, tol: float = 1e-9) -> bool:
    """PBH test on the closed right half-plane eigenvalues of A."""
    n = A.shape[0]
    for lam in la.eigvals(A):
        if lam.real >= -tol:
            M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
            if np.linalg.matrix_rank(M, tol=1e-8 * max(1.0, la.norm(M))) < n:
                return False
    return True


def kleinman_newton(A: np.ndarray, B: np.ndarray, K0: np.ndarray, Q=None, R=None,
                    tol: float = 1e-10, max_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Newton iteration for the CARE from a stabilizing gain ``K0``."""
    n, m = B.shape
    Q = np.eye(n) if Q is None else Q
    R = np.eye(m) if R is None else R
    K = K0
    P = np.zeros((n, n))
    for _ in range(max_iter):
        Ak = A - B @ K
        P = la.solve_continuous_lyapunov(Ak.T, -(Q + K.T @ R @ K))
        P = 0.5 * (P + P.T)
        K_new = la.solve(R, B.T @ P)
        if np.abs(K_new - K).max() <= tol * max(1.0, np.abs(K).max()):
            K = K_new
            break
        K = K_new
    return K, P


def lqr(A: np.ndarray, B: np.ndarray, Q=None, R=None) -> tuple[np.ndarray, np.ndarray]:
    """Gain K and Riccati solution P with residual refined to <= 1e-8."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    Q = np.eye(n) if Q is None else np.asarray(Q, float)
    R = np.eye(m) if R is None else np.asarray(R, float)
    if not is_stabilizable(A, B):
        raise StabilizabilityError("linearized error dynamics are not stabilizable")
    if m == 0 or not B.any():
        K0 = np.zeros((m, n))
    else:
        P0 = la.solve_continuous_are(A, B, Q, R)
        K0 = la.solve(R, B.T @ P0)
    K, P = kleinman_newton(A, B, K0, Q, R)
    if care_residual(A, B, P, Q, R) > 1e-8 * max(1.0, np.abs(P).max()):
        raise StabilizabilityError("Riccati iteration did not reach the residual target")
    return K, P


def lyapunov_seed(A: np.ndarray, B: np.ndarray, K: np.ndarray) -> np.ndarray:
    """S with (A - BK)' S + S (A - BK) = -I."""
    Ak = A - B @ K
    S = la.solve_continuous_lyapunov(Ak.T, -np.eye(A.shape[0]))
    return 0.5 * (S + S.T)


def quadratic_form(S: np.ndarray, names) -> Polynomial:
    e = [Polynomial.var(v) for v in names]
    out = Polynomial.zero()
    n = len(e)
    for i in range(n):
        for j in range(i, n):
            c = S[i, i] if i == j else 2.0 * S[i, j]
            if c != 0.0:
                out = out + c * e[i] * e[j]
    return out.with_vars(names)


def gram_of_quadratic(V: Polynomial, names) -> np.ndarray:
    """Symmetric Q with V = e' Q e for a quadratic form V."""
    n = len(names)
    Q = np.zeros((n, n))
    idx = {v: i for i, v in enumerate(names)}
    for m, c in V.terms.items():
        if sum(k for _, k in m) != 2:
            raise ValueError("not a quadratic form")
        if len(m) == 1:
            i = idx[m[0][0]]
            Q[i, i] += c
        else:
            i, j = idx[m[0][0]], idx[m[1][0]]
            Q[i, j] += 0.5 * c
            Q[j, i] += 0.5 * c
    return Q
