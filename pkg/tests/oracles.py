"""Brute-force reference solutions used to check the solvers and the set engine."""
import itertools

import numpy as np
from scipy.optimize import linprog


def enumerate_qp(H, f, G, g, tol=1e-9):
    """Minimum of 0.5 x'Hx + f'x over Gx <= g by trying every active set (H positive definite)."""
    d = len(f)
    best = None
    for k in range(0, min(d, len(g)) + 1):
        for S in itertools.combinations(range(len(g)), k):
            S = list(S)
            GS = G[S]
            K = np.block([[H, GS.T], [GS, np.zeros((k, k))]])
            rhs = np.concatenate([-f, g[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.linalg.cond(K) > 1e12:
                continue
            x, mu = sol[:d], sol[d:]
            if np.all(G @ x <= g + tol) and np.all(mu >= -tol):
                v = 0.5 * x @ H @ x + f @ x
                if best is None or v < best[1]:
                    best = (x, v)
    return best


def enumerate_lp(c, G, g, tol=1e-9):
    """Minimum of c'x over a bounded polyhedron Gx <= g by enumerating its vertices."""
    d = len(c)
    best = None
    for S in itertools.combinations(range(len(g)), d):
        GS = G[list(S)]
        if abs(np.linalg.det(GS)) < 1e-10:
            continue
        x = np.linalg.solve(GS, g[list(S)])
        if np.all(G @ x <= g + tol):
            v = c @ x
            if best is None or v < best[1]:
                best = (x, v)
    return best


def in_minkowski_sum(y, P, Q):
    """``y in P + Q`` decided by an independent LP feasibility problem over ``p``."""
    n = P.dim
    A = np.vstack([P.G, -Q.G])
    b = np.concatenate([P.g, Q.g - Q.G @ y])
    res = linprog(np.zeros(n), A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
    return res.status == 0


def in_image(y, M, P):
    """``y in M P`` for square invertible ``M``."""
    return bool(np.all(P.G @ np.linalg.solve(M, y) <= P.g + 1e-9))
