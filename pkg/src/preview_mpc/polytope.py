"""Half-space represented polyhedra and the set operations used by the controller.

A set is stored as ``{x : G x <= g}``.  All operations are exact up to LP
tolerances; projections (Minkowski sums, linear images) are done by
Fourier-Motzkin elimination on a lifted system, pruning redundant rows
after every eliminated variable.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .numkit import DEFAULT_TOL, LpProblem, QpProblem, Status, solve_lp, solve_qp, spectral_radius

_ROW_EPS = 1e-12


class EmptySetError(ValueError):
    pass


class NotFinitelyDeterminedError(RuntimeError):
    """Raised when the invariant-set iteration hits its cap.

    ``partial`` holds the last iterate, which is *not* known to be invariant.
    """

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class SetFlags:
    is_pc_set: bool
    is_c_set: bool


class HPolytope:
    """Convex polyhedron ``{x : G x <= g}``.

    Instances are treated as immutable; every operation returns a new set.
    An empty set carries ``empty=True`` together with the row ``0 x <= -1``.
    A set with no rows is the whole space.
    """

    __slots__ = ("_G", "_g", "empty", "canonical")

    def __init__(self, G, g, empty: bool = False, canonical: bool = False):
        g = np.asarray(g, dtype=float).ravel()
        G = np.asarray(G, dtype=float)
        if G.ndim == 1 and g.size:
            G = G.reshape(g.size, -1)
        if G.ndim != 2 or G.shape[0] != g.size:
            raise ValueError(f"G {G.shape} and g {g.shape} are inconsistent")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(g))):
            raise ValueError("polytope data must be finite")
        G = G.copy()
        g = g.copy()
        G.setflags(write=False)
        g.setflags(write=False)
        self._G = G
        self._g = g
        self.empty = bool(empty)
        self.canonical = bool(canonical)

    # construction helpers -------------------------------------------------

    @classmethod
    def from_box(cls, lb, ub) -> "HPolytope":
        lb = np.asarray(lb, dtype=float).ravel()
        ub = np.asarray(ub, dtype=float).ravel()
        d = lb.size
        return cls(np.vstack([np.eye(d), -np.eye(d)]), np.r_[ub, -lb])

    @classmethod
    def norm_ball_inf(cls, dim: int, radius: float) -> "HPolytope":
        return cls.from_box(-radius * np.ones(dim), radius * np.ones(dim))

    @classmethod
    def empty_set(cls, dim: int) -> "HPolytope":
        return cls(np.zeros((1, dim)), [-1.0], empty=True, canonical=True)

    @classmethod
    def full_space(cls, dim: int) -> "HPolytope":
        return cls(np.zeros((0, dim)), np.zeros(0), canonical=True)

    @classmethod
    def singleton(cls, point) -> "HPolytope":
        p = np.asarray(point, dtype=float).ravel()
        return cls.from_box(p, p)

    @classmethod
    def from_dict(cls, data: dict) -> "HPolytope":
        if "box" in data:
            lb, ub = data["box"]
            return cls.from_box(lb, ub)
        G = np.asarray(data["G"], dtype=float)
        g = np.asarray(data["g"], dtype=float)
        return cls(G.reshape(g.size, -1), g, empty=bool(data.get("empty", False)))

    def to_dict(self) -> dict:
        out = {"G": self._G.tolist(), "g": self._g.tolist()}
        if self.empty:
            out["empty"] = True
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "HPolytope":
        return cls.from_dict(json.loads(text))

    # basic properties -------------------------------------------------------

    @property
    def G(self) -> np.ndarray:
        return self._G

    @property
    def g(self) -> np.ndarray:
        return self._g

    @property
    def dim(self) -> int:
        return self._G.shape[1]

    @property
    def n_constraints(self) -> int:
        return self._g.size

    def __repr__(self):
        tag = " empty" if self.empty else ""
        return f"HPolytope(dim={self.dim}, rows={self.n_constraints}{tag})"

    def contains(self, x, tol: float = 1e-9):
        """Membership test; ``x`` may be a single point or an array of points (rows)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if self.empty:
            out = np.zeros(X.shape[0], dtype=bool)
        elif self.n_constraints == 0:
            out = np.ones(X.shape[0], dtype=bool)
        else:
            out = np.all(X @ self._G.T <= self._g + tol, axis=1)
        return bool(out[0]) if single else out

    def is_empty(self) -> bool:
        if self.empty:
            return True
        if self.n_constraints == 0:
            return False
        r = solve_lp(LpProblem(np.zeros(self.dim), self._G, self._g))
        return r.status.tag is Status.INFEASIBLE

    def is_bounded(self) -> bool:
        if self.empty:
            return True
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            if not np.isfinite(support(self, e)) or not np.isfinite(support(self, -e)):
                return False
        return True

    def flags(self) -> SetFlags:
        if self.empty or not self.is_bounded():
            return SetFlags(False, False)
        P = canonicalize(self)
        if P.empty:
            return SetFlags(False, False)
        c_set = bool(np.all(P.g >= -DEFAULT_TOL.containment))
        pc_set = bool(np.all(P.g > DEFAULT_TOL.containment)) and P.n_constraints > 0
        return SetFlags(pc_set, c_set)

    # operator sugar
    def __and__(self, other: "HPolytope") -> "HPolytope":
        return intersect(self, other)

    def __add__(self, other):
        if isinstance(other, HPolytope):
            return minkowski_sum(self, other)
        return translate(self, other)

    def __rmul__(self, s: float) -> "HPolytope":
        return scale(self, s)


# ---------------------------------------------------------------------------
# canonical form
# ---------------------------------------------------------------------------

def _normalize_rows(G, g):
    norms = np.linalg.norm(G, axis=1)
    zero = norms < _ROW_EPS
    if np.any(zero & (g < -DEFAULT_TOL.containment)):
        return None, None
    keep = ~zero
    return G[keep] / norms[keep, None], g[keep] / norms[keep]


def _dedupe(G, g):
    order = np.lexsort(np.round(G, 10).T[::-1])
    kept_G, kept_g = [], []
    for i in order:
        row = G[i]
        for k, other in enumerate(kept_G):
            if np.abs(other - row).max() < 1e-10:
                kept_g[k] = min(kept_g[k], g[i])
                break
        else:
            kept_G.append(row)
            kept_g.append(g[i])
    if not kept_G:
        return np.zeros((0, G.shape[1])), np.zeros(0)
    # restore original row order for determinism independent of rounding
    G2, g2 = np.array(kept_G), np.array(kept_g)
    idx = np.lexsort(np.round(G2, 10).T[::-1])
    return G2[idx], g2[idx]


def canonicalize(P: HPolytope, tol: float = DEFAULT_TOL.containment) -> HPolytope:
    """Unit-normalize rows and remove every redundant half-space.

    Empty sets come back with the explicit ``empty`` flag.
    """
    if P.canonical:
        return P
    if P.empty:
        return HPolytope.empty_set(P.dim)
    d = P.dim
    if P.n_constraints == 0:
        return HPolytope.full_space(d)
    G, g = _normalize_rows(P.G, P.g)
    if G is None:
        return HPolytope.empty_set(d)
    if G.shape[0] == 0:
        return HPolytope.full_space(d)
    G, g = _dedupe(G, g)
    feas = solve_lp(LpProblem(np.zeros(d), G, g))
    if feas.status.tag is Status.INFEASIBLE:
        return HPolytope.empty_set(d)
    keep = np.ones(g.size, dtype=bool)
    for i in range(g.size):
        keep[i] = False
        Gi = np.vstack([G[keep], G[i]])
        gi = np.r_[g[keep], g[i] + 1.0]
        r = solve_lp(LpProblem(-G[i], Gi, gi))
        if r.status.tag is Status.OPTIMAL and -r.value <= g[i] + tol:
            continue
        keep[i] = True
    return HPolytope(G[keep], g[keep], canonical=True)


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def _check_dims(P: HPolytope, Q: HPolytope):
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")


def intersect(P: HPolytope, Q: HPolytope) -> HPolytope:
    _check_dims(P, Q)
    if P.empty or Q.empty:
        return HPolytope.empty_set(P.dim)
    return canonicalize(HPolytope(np.vstack([P.G, Q.G]), np.r_[P.g, Q.g]))


def affine_preimage(M, P: HPolytope, reduce: bool = True) -> HPolytope:
    """``{x : M x in P}``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != P.dim:
        raise ValueError(f"M maps into R^{M.shape[0]} but P lives in R^{P.dim}")
    if P.empty:
        return HPolytope.empty_set(M.shape[1])
    out = HPolytope(P.G @ M, P.g)
    return canonicalize(out) if reduce else out


def translate(P: HPolytope, t) -> HPolytope:
    """``P + {t}``."""
    t = np.asarray(t, dtype=float).ravel()
    if t.size != P.dim:
        raise ValueError("translation vector has the wrong dimension")
    if P.empty:
        return P
    return HPolytope(P.G, P.g + P.G @ t, canonical=P.canonical)


def scale(P: HPolytope, s: float) -> HPolytope:
    """``s P = {x : G x <= s g}``; meaningful for sets containing the origin."""
    if s < 0:
        raise ValueError("scale factor must be nonnegative")
    if P.empty:
        return P
    return HPolytope(P.G, s * P.g, canonical=P.canonical and s > 0)


def support(P: HPolytope, d) -> float:
    """``max d^T x`` over ``P`` (``inf`` if unbounded in that direction)."""
    d = np.asarray(d, dtype=float).ravel()
    if P.empty:
        raise EmptySetError("support function of an empty set")
    if not np.any(d):
        return 0.0
    if P.n_constraints == 0:
        return np.inf
    r = solve_lp(LpProblem(-d, P.G, P.g))
    if r.status.tag is Status.OPTIMAL:
        return float(-r.value)
    if r.status.tag is Status.UNBOUNDED:
        return np.inf
    if r.status.tag is Status.INFEASIBLE:
        raise EmptySetError("support function of an empty set")
    raise RuntimeError(f"support LP failed: {r.status}")


def contains_set(P: HPolytope, Q: HPolytope, tol: float = DEFAULT_TOL.containment) -> bool:
    """True iff ``Q`` is a subset of ``P`` (checked facet by facet)."""
    _check_dims(P, Q)
    if Q.empty or Q.is_empty():
        return True
    if P.empty:
        return False
    return all(support(Q, P.G[i]) <= P.g[i] + tol for i in range(P.n_constraints))


def min_scale_containment(Q: HPolytope, P: HPolytope) -> float:
    """Smallest ``a >= 0`` with ``Q`` inside ``a P``, for ``P`` with ``g > 0``."""
    _check_dims(P, Q)
    if np.any(P.g <= 0):
        raise ValueError("P must contain the origin in its interior")
    if Q.empty:
        return 0.0
    ratios = [support(Q, P.G[i]) / P.g[i] for i in range(P.n_constraints)]
    return max(0.0, max(ratios))


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def _fm_eliminate(M: np.ndarray, b: np.ndarray, j: int):
    col = M[:, j]
    pos = np.nonzero(col > _ROW_EPS)[0]
    neg = np.nonzero(col < -_ROW_EPS)[0]
    zer = np.nonzero(np.abs(col) <= _ROW_EPS)[0]
    rows = [M[zer]]
    rhs = [b[zer]]
    if pos.size and neg.size:
        Pm = M[pos] / col[pos, None]
        Pb = b[pos] / col[pos]
        Nm = M[neg] / -col[neg, None]
        Nb = b[neg] / -col[neg]
        rows.append((Pm[:, None, :] + Nm[None, :, :]).reshape(-1, M.shape[1]))
        rhs.append((Pb[:, None] + Nb[None, :]).ravel())
    out = np.delete(np.vstack(rows), j, axis=1)
    return out, np.concatenate(rhs)


def project(P: HPolytope, keep: int) -> HPolytope:
    """Projection onto the first ``keep`` coordinates by Fourier-Motzkin."""
    if P.empty:
        return HPolytope.empty_set(keep)
    cur = canonicalize(P)
    while cur.dim > keep:
        if cur.empty:
            return HPolytope.empty_set(keep)
        M, b = _fm_eliminate(cur.G, cur.g, cur.dim - 1)
        cur = canonicalize(HPolytope(M, b)) if b.size else HPolytope.full_space(cur.dim - 1)
    return cur


def _hull(points: np.ndarray) -> Optional[HPolytope]:
    """H-representation of conv(points), or None if the hull is not full-dimensional."""
    d = points.shape[1]
    if points.shape[0] <= d:
        return None
    centered = points - points.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, np.abs(points).max())) < d:
        return None
    if d == 1:
        return HPolytope.from_box([points.min()], [points.max()])
    try:
        hull = ConvexHull(points)
    except QhullError:
        return None
    return canonicalize(HPolytope(hull.equations[:, :-1], -hull.equations[:, -1]))


def minkowski_sum(P: HPolytope, Q: HPolytope, method: str = "fm") -> HPolytope:
    """``P + Q`` for bounded operands.

    ``method="fm"`` projects ``{(x, y) : y in Q, x - y in P}`` onto ``x`` by
    Fourier-Motzkin.  ``method="hull"`` takes the convex hull of pairwise
    vertex sums, which is much faster for long chains of sums; it falls back
    on elimination when the result is not full-dimensional.
    """
    _check_dims(P, Q)
    d = P.dim
    if P.empty or Q.empty:
        return HPolytope.empty_set(d)
    for S in (P, Q):
        if not S.is_bounded():
            raise ValueError("Minkowski sum requires bounded operands")
    if method == "hull":
        VP, VQ = vertices(P), vertices(Q)
        hull = _hull((VP[:, None, :] + VQ[None, :, :]).reshape(-1, d))
        if hull is not None:
            return hull
    elif method != "fm":
        raise ValueError(f"unknown method {method!r}")
    M = np.vstack([
        np.hstack([np.zeros((Q.n_constraints, d)), Q.G]),
        np.hstack([P.G, -P.G]),
    ])
    b = np.r_[Q.g, P.g]
    return project(HPolytope(M, b), d)


def affine_image(M, P: HPolytope, method: str = "fm") -> HPolytope:
    """``{M x : x in P}`` for bounded ``P``.

    Invertible maps go through the preimage under ``M^{-1}``; otherwise the
    image is projected out of a lifted system (or hulled, see ``minkowski_sum``).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    k, d = M.shape
    if d != P.dim:
        raise ValueError("image map has the wrong input dimension")
    if P.empty:
        return HPolytope.empty_set(k)
    if k == d and np.linalg.cond(M) < 1e8:
        return affine_preimage(np.linalg.inv(M), P)
    if method == "hull" and P.is_bounded():
        hull = _hull(vertices(P) @ M.T)
        if hull is not None:
            return hull
    # lifted system in (y, x): y = M x, x in P
    lift = np.vstack([
        np.hstack([np.zeros((P.n_constraints, k)), P.G]),
        np.hstack([np.eye(k), -M]),
        np.hstack([-np.eye(k), M]),
    ])
    b = np.r_[P.g, np.zeros(2 * k)]
    return project(HPolytope(lift, b), k)


def vertices(P: HPolytope, tol: float = 1e-9) -> np.ndarray:
    """Vertex list by brute-force row combinations (small dimensions only)."""
    if P.empty:
        return np.zeros((0, P.dim))
    C = canonicalize(P)
    d = C.dim
    out = []
    for combo in itertools.combinations(range(C.n_constraints), d):
        A = C.G[list(combo)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        v = np.linalg.solve(A, C.g[list(combo)])
        if C.contains(v, tol) and not any(np.abs(v - u).max() < 1e-8 for u in out):
            out.append(v)
    # degenerate (lower-dimensional) sets: fall back on supports in the combos
    if not out and d > 0:
        for j in range(d):
            for sgn in (1.0, -1.0):
                e = np.zeros(d)
                e[j] = sgn
                r = solve_lp(LpProblem(-e, C.G, C.g))
                if r.status.ok and not any(np.abs(r.x - u).max() < 1e-8 for u in out):
                    out.append(r.x)
    return np.array(out).reshape(-1, d)


def vertices_2d(P: HPolytope) -> np.ndarray:
    """Vertices of a planar set in counter-clockwise order."""
    if P.dim != 2:
        raise ValueError("vertices_2d needs a planar set")
    V = vertices(P)
    if V.shape[0] <= 2:
        return V
    c = V.mean(axis=0)
    ang = np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0])
    return V[np.argsort(ang)]


# ---------------------------------------------------------------------------
# invariant sets
# ---------------------------------------------------------------------------

class InvariantSet(NamedTuple):
    set: HPolytope
    index: int


def max_admissible_invariant(F, C: HPolytope, cap: int = DEFAULT_TOL.gilbert_tan_cap) -> InvariantSet:
    """Maximal positively invariant subset of ``C`` for ``x+ = F x``.

    Intersects ``C`` with ``F^{-t}(C)`` for ``t = 1, 2, ...`` until the next
    preimage is redundant, and returns the set with its determination index.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if spectral_radius(F) >= 1.0:
        raise ValueError("F must be Schur stable")
    C = canonicalize(C)
    if not C.flags().is_pc_set:
        raise ValueError("constraint set must be compact with the origin in its interior")
    omega = C
    Ft = np.eye(F.shape[0])
    for t in range(cap + 1):
        Ft = F @ Ft
        J = C.G @ Ft
        violated = [i for i in range(C.n_constraints) if support(omega, J[i]) > C.g[i] + DEFAULT_TOL.containment]
        if not violated:
            return InvariantSet(omega, t)
        omega = intersect(omega, HPolytope(J[violated], C.g[violated]))
    raise NotFinitelyDeterminedError(f"no finite determination within {cap} steps", omega)


def _scale_in(Q_support, W: HPolytope, tol=1e-10) -> float:
    """Smallest ``a`` with ``{set with support Q_support}`` inside ``a W``; inf if none."""
    a = 0.0
    for i in range(W.n_constraints):
        h = Q_support(W.G[i])
        if W.g[i] > tol:
            a = max(a, h / W.g[i])
        elif h > tol:
            return np.inf
    return a


def mrpi_outer_approx(F, W: HPolytope, eps: float = DEFAULT_TOL.mrpi_eps, cap: int = 200) -> HPolytope:
    """Outer approximation of the minimal robust positively invariant set.

    Finds ``k`` with ``F^k W`` inside ``theta W``, ``theta <= eps``, and returns
    ``(1 - theta)^{-1} (W + F W + ... + F^{k-1} W)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if spectral_radius(F) >= 1.0:
        raise ValueError("F must be Schur stable")
    W = canonicalize(W)
    Fk = np.eye(F.shape[0])
    for k in range(1, cap + 1):
        Fk = F @ Fk
        theta = _scale_in(lambda d: support(W, Fk.T @ d), W)
        if theta <= eps:
            break
    else:
        raise NotFinitelyDeterminedError("mRPI truncation did not reach the requested accuracy", None)
    R = W
    Fi = np.eye(F.shape[0])
    for _ in range(1, k):
        Fi = F @ Fi
        R = minkowski_sum(R, affine_image(Fi, W, method="hull"), method="hull")
    if theta > 0:
        R = canonicalize(scale(R, 1.0 / (1.0 - theta)))
    return R


def project_point(P: HPolytope, y) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``P``."""
    y = np.asarray(y, dtype=float).ravel()
    if P.contains(y, 0.0):
        return y.copy()
    r = solve_qp(QpProblem(np.eye(P.dim), -y, P.G, P.g))
    if not r.status.ok:
        raise EmptySetError("cannot project onto an empty set")
    return r.x


def bounding_box(P: HPolytope):
    lo = np.array([-support(P, -e) for e in np.eye(P.dim)])
    hi = np.array([support(P, e) for e in np.eye(P.dim)])
    return lo, hi
