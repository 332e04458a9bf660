"""Dense linear algebra kernels and small LP/QP solvers.

Everything here is sized for desk-scale control problems (tens of
variables, a few hundred constraints at most).  The QP solver is a
primal active-set method working on the null space of the active
constraints; LPs are solved by the same routine with a zero Hessian.
Bland-style lowest-index rules are used both when adding and dropping
constraints so that degenerate vertices cannot cycle.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by every module of the package."""

    feasibility: float = 1e-9
    kkt: float = 1e-8
    lyapunov_residual: float = 1e-10
    riccati_residual: float = 1e-9
    dare_tol: float = 1e-12
    dare_max_iter: int = 10_000
    stability_margin: float = 1e-9
    max_condition: float = 1e12
    containment: float = 1e-9
    gilbert_tan_cap: int = 500
    mrpi_eps: float = 1e-3


DEFAULT_TOL = Tolerances()


class NumkitError(ValueError):
    """Base class for errors raised by the numerical kernels."""


class UnstableMatrixError(NumkitError):
    pass


class SingularMatrixError(NumkitError):
    pass


class ConvergenceError(NumkitError):
    pass


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SolveStatus:
    tag: Status
    iterations: int = 0
    kkt_residual: float = 0.0
    # for Infeasible: nonnegative multipliers on G rows (and free ones on E
    # rows) with G^T y + E^T z = 0 and g^T y + e^T z < 0
    certificate: Optional[tuple] = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.tag is Status.OPTIMAL


@dataclass
class LpProblem:
    """minimize c^T x subject to G x <= g."""

    c: np.ndarray
    G: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        if self.G.shape != (self.g.size, self.c.size):
            raise ValueError(
                f"inconsistent LP dimensions: c {self.c.shape}, G {self.G.shape}, g {self.g.shape}"
            )


@dataclass
class QpProblem:
    """minimize 1/2 x^T Hq x + f^T x subject to G x <= g, E x = e."""

    Hq: np.ndarray
    f: np.ndarray
    G: np.ndarray
    g: np.ndarray
    E: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Hq = np.atleast_2d(np.asarray(self.Hq, dtype=float))
        self.f = np.asarray(self.f, dtype=float).ravel()
        d = self.f.size
        self.G = np.asarray(self.G, dtype=float).reshape(-1, d)
        self.g = np.asarray(self.g, dtype=float).ravel()
        if self.E is None:
            self.E = np.zeros((0, d))
            self.e = np.zeros(0)
        self.E = np.asarray(self.E, dtype=float).reshape(-1, d)
        self.e = np.asarray(self.e, dtype=float).ravel()
        if self.Hq.shape != (d, d):
            raise ValueError(f"Hq must be {d}x{d}, got {self.Hq.shape}")
        if self.G.shape[0] != self.g.size or self.E.shape[0] != self.e.size:
            raise ValueError("constraint matrix and bound vector lengths differ")
        if np.max(np.abs(self.Hq - self.Hq.T), initial=0.0) > 1e-10 * max(1.0, np.abs(self.Hq).max()):
            raise ValueError("Hq is not symmetric")
        self.Hq = 0.5 * (self.Hq + self.Hq.T)

    @property
    def dim(self) -> int:
        return self.f.size


@dataclass
class QpResult:
    x: Optional[np.ndarray]
    value: float
    status: SolveStatus
    multipliers: Optional[np.ndarray] = None  # on G rows
    eq_multipliers: Optional[np.ndarray] = None
    active: tuple = field(default_factory=tuple)

    def __iter__(self):
        # allows ``x, value, status = solve_qp(p)``
        return iter((self.x, self.value, self.status))


# ---------------------------------------------------------------------------
# active-set core
# ---------------------------------------------------------------------------

def _null_space(M: np.ndarray, d: int, tol: float = 1e-11) -> np.ndarray:
    if M.shape[0] == 0:
        return np.eye(d)
    _, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    return vt[rank:].T


def _active_set(H, f, G, g, E, x, work, max_iter, tol, psd_hint):
    """Primal active-set iterations from the feasible point ``x``.

    ``work`` is a list of inequality indices treated as equalities.  Rows of
    ``G`` are assumed to be unit norm.  Returns (x, work, mu, nu, tag, iters).
    """
    d = x.size
    work = list(work)
    zero_hessian = not np.any(H)
    hscale = max(1.0, np.abs(H).max()) if not zero_hessian else 1.0
    q = G.shape[0]
    for it in range(1, max_iter + 1):
        A_w = np.vstack([E, G[work]]) if work else E
        Z = _null_space(A_w, d)
        grad = H @ x + f
        p = np.zeros(d)
        ray = False
        if Z.shape[1] > 0:
            gr = Z.T @ grad
            if zero_hessian:
                if np.linalg.norm(gr) > tol * max(1.0, np.linalg.norm(grad)):
                    p = -Z @ gr
                    ray = True
            else:
                Hr = Z.T @ H @ Z
                lam, V = np.linalg.eigh(Hr)
                pos = lam > 1e-11 * hscale
                if not np.all(pos) and not psd_hint:
                    gn = V[:, ~pos].T @ gr
                    if np.linalg.norm(gn) > tol * max(1.0, np.linalg.norm(grad)):
                        p = -Z @ (V[:, ~pos] @ gn)
                        ray = True
                if not ray:
                    Vp = V[:, pos]
                    p = -Z @ (Vp @ ((Vp.T @ gr) / lam[pos]))
        pnorm = np.linalg.norm(p)
        if pnorm > 1e-12 * max(1.0, np.linalg.norm(x)):
            # ratio test over inactive rows; lowest index wins ties
            Gp = G @ p
            slack = np.maximum(g - G @ x, 0.0)
            step = np.inf if ray else 1.0
            block = -1
            inwork = np.zeros(q, dtype=bool)
            inwork[work] = True
            cand = np.nonzero((Gp > 1e-12 * pnorm) & ~inwork)[0]
            if cand.size:
                ratios = slack[cand] / Gp[cand]
                rmin = ratios.min()
                if rmin < step:
                    step = rmin
                    ties = cand[ratios <= rmin + 1e-14 * max(1.0, abs(rmin))]
                    block = int(ties.min())
            if not np.isfinite(step):
                return x, work, None, None, Status.UNBOUNDED, it
            x = x + step * p
            if block >= 0:
                work.append(block)
            continue
        # stationary on the working set: check multiplier signs
        if A_w.shape[0] == 0:
            return x, work, np.zeros(0), np.zeros(0), Status.OPTIMAL, it
        lm, *_ = np.linalg.lstsq(A_w.T, -grad, rcond=None)
        ne = E.shape[0]
        nu, mu = lm[:ne], lm[ne:]
        neg = [(work[i], mu[i]) for i in range(len(work)) if mu[i] < -tol * max(1.0, np.abs(mu).max())]
        if not neg:
            return x, work, mu, nu, Status.OPTIMAL, it
        drop = min(idx for idx, _ in neg)
        work.remove(drop)
    return x, work, None, None, Status.NUMERICAL_FAILURE, max_iter


def _reduce_equalities(E, e, tol):
    """Independent rows of E x = e, a particular solution and a consistency flag."""
    d = E.shape[1]
    if E.shape[0] == 0:
        return E, e, np.zeros(d), True
    x0, *_ = np.linalg.lstsq(E, e, rcond=None)
    consistent = np.max(np.abs(E @ x0 - e)) <= tol * max(1.0, np.abs(e).max())
    _, r, piv = scipy.linalg.qr(E.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > 1e-10 * max(1.0, diag.max(initial=0.0))))
    keep = np.sort(piv[:rank])
    return E[keep], e[keep], x0, consistent


def solve_qp(p: QpProblem, max_iter: Optional[int] = None, tol: Tolerances = DEFAULT_TOL) -> QpResult:
    """Solve a convex QP with a dense primal active-set method.

    Returns a :class:`QpResult` that also unpacks as ``(x, value, status)``.
    ``status.kkt_residual`` is the largest of the stationarity, primal
    feasibility, dual feasibility and complementarity residuals.
    """
    H, f, G, g, E, e = p.Hq, p.f, p.G, p.g, p.E, p.e
    d = p.dim
    q = G.shape[0]
    if max_iter is None:
        max_iter = 10 * (d + q + E.shape[0]) + 20
    lam_min = np.linalg.eigvalsh(H).min() if np.any(H) else 0.0
    if lam_min < -1e-9 * max(1.0, np.abs(H).max()):
        raise ValueError(f"Hq is not positive semidefinite (min eigenvalue {lam_min:.3e})")

    # unit-normalize rows; zero rows are either vacuous or certify infeasibility
    norms = np.linalg.norm(G, axis=1)
    zero = norms <= 1e-14
    bad = np.nonzero(zero & (g < -tol.feasibility))[0]
    if bad.size:
        y = np.zeros(q)
        y[bad[0]] = 1.0
        st = SolveStatus(Status.INFEASIBLE, 0, 0.0, (y, np.zeros(E.shape[0])),
                         f"constraint row {bad[0]} reads 0 <= {g[bad[0]]:.3g}")
        return QpResult(None, np.nan, st)
    rows = np.nonzero(~zero)[0]
    Gn = G[rows] / norms[rows, None]
    gn = g[rows] / norms[rows]

    Er, er, x0, consistent = _reduce_equalities(E, e, tol.feasibility)
    if not consistent:
        st = SolveStatus(Status.INFEASIBLE, 0, 0.0, None, "equality constraints are inconsistent")
        return QpResult(None, np.nan, st)

    # phase 1: min t s.t. G x - t <= g, -t <= 0, E x = e
    iters = 0
    viol = np.max(Gn @ x0 - gn, initial=0.0)
    x = x0
    if viol > tol.feasibility:
        G1 = np.vstack([np.hstack([Gn, -np.ones((Gn.shape[0], 1))]), np.r_[np.zeros(d), -1.0]])
        n1 = np.linalg.norm(G1, axis=1)
        G1 = G1 / n1[:, None]
        g1 = np.r_[gn, 0.0] / n1
        E1 = np.hstack([Er, np.zeros((Er.shape[0], 1))])
        c1 = np.r_[np.zeros(d), 1.0]
        z, work1, mu1, nu1, tag1, it1 = _active_set(
            np.zeros((d + 1, d + 1)), c1, G1, g1, E1, np.r_[x0, viol], [], 4 * max_iter, tol.feasibility, True)
        iters += it1
        if tag1 is not Status.OPTIMAL:
            return QpResult(None, np.nan, SolveStatus(Status.NUMERICAL_FAILURE, iters, np.inf, None,
                                                      "phase 1 did not converge"))
        if z[-1] > tol.feasibility:
            y = np.zeros(Gn.shape[0] + 1)
            for idx, m in zip(work1, mu1):
                y[idx] = m / n1[idx]
            yG = np.zeros(q)
            yG[rows] = y[:-1] / norms[rows]
            cert_ok = _check_farkas(G, g, yG, Er, er, nu1)
            tag = Status.INFEASIBLE if cert_ok else Status.NUMERICAL_FAILURE
            st = SolveStatus(tag, iters, 0.0, (yG, nu1), "" if cert_ok else "Farkas certificate failed")
            return QpResult(None, np.nan, st)
        x = z[:-1]

    x, work, mu, nu, tag, it2 = _active_set(H, f, Gn, gn, Er, x, [], max_iter, tol.feasibility, lam_min > 0)
    iters += it2
    if tag is not Status.OPTIMAL:
        return QpResult(None, np.nan, SolveStatus(tag, iters, np.inf))

    mu_full = np.zeros(q)
    for idx, m in zip(work, mu):
        mu_full[rows[idx]] = max(m, 0.0) / norms[rows[idx]]
    nu_full = np.zeros(E.shape[0])
    if Er.shape[0]:
        # re-solve multipliers against the original equality rows
        lm, *_ = np.linalg.lstsq(E.T, -(H @ x + f + G.T @ mu_full), rcond=None)
        nu_full = lm
    res = kkt_residual(p, x, mu_full, nu_full)
    value = float(0.5 * x @ H @ x + f @ x)
    scale = max(1.0, np.abs(f).max(initial=0.0), np.abs(H).max(initial=0.0) * max(1.0, np.abs(x).max()))
    tag = Status.OPTIMAL if res <= tol.kkt * scale else Status.NUMERICAL_FAILURE
    st = SolveStatus(tag, iters, res)
    active = tuple(sorted(int(rows[i]) for i in work))
    return QpResult(x, value, st, mu_full, nu_full, active)


def _check_farkas(G, g, y, E, e, z, tol=1e-7):
    if np.any(y < -1e-12) or y.sum() <= 0:
        return False
    lhs = G.T @ y + (E.T @ z if E.shape[0] else 0.0)
    rhs = g @ y + (e @ z if E.shape[0] else 0.0)
    scale = max(1.0, np.abs(y).sum())
    return np.linalg.norm(lhs) <= tol * scale and rhs < -1e-10 * scale


def kkt_residual(p: QpProblem, x, mu, nu=None) -> float:
    """Largest KKT violation of ``(x, mu, nu)`` for the QP ``p``."""
    nu = np.zeros(p.E.shape[0]) if nu is None else nu
    stat = p.Hq @ x + p.f + p.G.T @ mu + (p.E.T @ nu if p.E.shape[0] else 0.0)
    slack = p.g - p.G @ x
    parts = [
        np.abs(stat).max(initial=0.0),
        np.max(-slack, initial=0.0),
        np.abs(p.E @ x - p.e).max(initial=0.0),
        np.max(-mu, initial=0.0),
        np.abs(mu * slack).max(initial=0.0),
    ]
    return float(max(parts))


def solve_lp(p: LpProblem, max_iter: Optional[int] = None, tol: Tolerances = DEFAULT_TOL) -> QpResult:
    """Solve ``min c^T x s.t. G x <= g`` as a zero-Hessian QP.

    The default iteration cap is ``10 (d + q)``.
    """
    d = p.c.size
    qp = QpProblem(np.zeros((d, d)), p.c, p.G, p.g)
    if max_iter is None:
        max_iter = 10 * (d + p.g.size)
    return solve_qp(qp, max_iter=max_iter, tol=tol)


# ---------------------------------------------------------------------------
# matrix equations
# ---------------------------------------------------------------------------

def spectral_radius(F) -> float:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[0] != F.shape[1]:
        raise ValueError("spectral radius needs a square matrix")
    return float(np.max(np.abs(np.linalg.eigvals(F))))


def inverse(F, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[0] != F.shape[1]:
        raise ValueError("inverse needs a square matrix")
    cond = np.linalg.cond(F)
    if not np.isfinite(cond) or cond >= tol.max_condition:
        raise SingularMatrixError(f"matrix is singular to working precision (condition {cond:.3e})")
    Finv = np.linalg.solve(F, np.eye(F.shape[0]))
    return Finv


def solve_discrete_lyapunov(F, Qbar, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Solve ``F^T P F - P + Qbar = 0`` by Kronecker vectorization."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Qbar = np.atleast_2d(np.asarray(Qbar, dtype=float))
    n = F.shape[0]
    rho = spectral_radius(F)
    if rho >= 1.0 - tol.stability_margin:
        raise UnstableMatrixError(f"F is not Schur stable (spectral radius {rho:.6g})")
    # vec(F^T P F) = (F^T kron F^T) vec(P) in column-major order
    M = np.kron(F.T, F.T) - np.eye(n * n)
    vecP = np.linalg.solve(M, -Qbar.reshape(-1, order="F"))
    P = vecP.reshape((n, n), order="F")
    return 0.5 * (P + P.T)


def riccati_residual(A, B, Q, S, P) -> float:
    BtP = B.T @ P
    R = A.T @ P @ A - P + Q - A.T @ P @ B @ np.linalg.solve(S + BtP @ B, BtP @ A)
    return float(np.abs(R).max())


def solve_dare(A, B, Q, S, tol: Tolerances = DEFAULT_TOL):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Uses the structure-preserving doubling iteration.  Returns
    ``(P, K)`` with ``K = (S + B^T P B)^{-1} B^T P A``, so the optimal
    feedback is ``u = -K x`` and ``A - B K`` is Schur stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = A.shape[0]
    Ak = A.copy()
    Gk = B @ np.linalg.solve(S, B.T)
    Hk = Q.copy()
    I = np.eye(n)
    for it in range(tol.dare_max_iter):
        W = I + Gk @ Hk
        try:
            WiA = np.linalg.solve(W, Ak)
            WiG = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("doubling iteration broke down") from exc
        H_next = Hk + Ak.T @ Hk @ WiA
        G_next = Gk + Ak @ WiG @ Ak.T
        A_next = Ak @ WiA
        delta = np.abs(H_next - Hk).max() / max(1.0, np.abs(H_next).max())
        Ak, Gk, Hk = A_next, 0.5 * (G_next + G_next.T), 0.5 * (H_next + H_next.T)
        if delta <= tol.dare_tol:
            break
    else:
        raise ConvergenceError(f"DARE did not converge in {tol.dare_max_iter} iterations")
    P = Hk
    K = np.linalg.solve(S + B.T @ P @ B, B.T @ P @ A)
    res = riccati_residual(A, B, Q, S, P)
    if res > tol.riccati_residual * max(1.0, np.abs(P).max()):
        raise ConvergenceError(f"Riccati residual {res:.3e} too large")
    if spectral_radius(A - B @ K) >= 1.0:
        raise ConvergenceError("DARE solution is not stabilizing")
    return P, K
