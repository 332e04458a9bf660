"""Finite-horizon optimal control with a disturbance preview.

Given the state ``x`` and a preview ``w = (w(0), ..., w(N-1))`` the controller
solves

    min  sum_i l(x(i), u(i); w_f) + V_f(x(N); w_f)
    s.t. x(i+1) = A x(i) + B u(i) + w(i),  x(i) in X,  u(i) in U,
         x(N) in X_f(w_f),

with ``w_f = w(N-1)``.  States are eliminated so the QP is over the stacked
inputs only.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional

import numpy as np

from . import polytope as pt
from .numkit import LpProblem, QpProblem, SolveStatus, Status, solve_lp, solve_qp
from .polytope import HPolytope
from .terminal import ConstraintSpec, PlantModel, TerminalIngredients, equilibrium


class InfeasibleError(RuntimeError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class DisturbanceSequence:
    """Preview ``w(0), ..., w(N-1)`` stored as an ``(N, n)`` array."""

    entries: np.ndarray

    def __post_init__(self):
        E = np.asarray(self.entries, dtype=float)
        if E.ndim == 1:
            E = E.reshape(-1, 1)
        if E.ndim != 2 or E.shape[0] < 1:
            raise ValueError("a disturbance sequence needs at least one entry")
        E = E.copy()
        E.setflags(write=False)
        object.__setattr__(self, "entries", E)

    @classmethod
    def constant(cls, w, N: int) -> "DisturbanceSequence":
        return cls(np.tile(np.asarray(w, dtype=float).ravel(), (N, 1)))

    @classmethod
    def zeros(cls, n: int, N: int) -> "DisturbanceSequence":
        return cls(np.zeros((N, n)))

    @classmethod
    def from_scalars(cls, values, direction) -> "DisturbanceSequence":
        """Entries ``s * direction`` for each scalar ``s``."""
        d = np.asarray(direction, dtype=float).ravel()
        return cls(np.outer(np.asarray(values, dtype=float), d))

    @property
    def N(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def head(self) -> np.ndarray:
        return self.entries[0]

    @property
    def w_f(self) -> np.ndarray:
        return self.entries[-1]

    def tail(self) -> "DisturbanceSequence":
        return DisturbanceSequence(np.vstack([self.entries[1:], self.entries[-1:]]))

    def stacked(self) -> np.ndarray:
        return self.entries.ravel()

    def is_admissible(self, sets: ConstraintSpec, tol: float = 1e-9) -> bool:
        head_ok = all(sets.W.contains(w, tol) for w in self.entries[:-1])
        return head_ok and sets.W_f.contains(self.w_f, tol)

    def __eq__(self, other):
        return isinstance(other, DisturbanceSequence) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())


def tail(w: DisturbanceSequence) -> DisturbanceSequence:
    return w.tail()


@dataclass(frozen=True)
class HorizonConfig:
    """Everything needed to pose the optimal control problem.

    ``ignore_preview`` makes the controller use ``w = 0`` in its model, which
    is the conventional nominal design.
    """

    N: int
    plant: PlantModel
    sets: ConstraintSpec
    ingredients: TerminalIngredients
    ignore_preview: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        self.sets.check_plant(self.plant)
        if self.ingredients.K_f.shape != (self.plant.m, self.plant.n):
            raise ValueError("ingredients do not match the plant")

    @cached_property
    def _pred(self):
        """Prediction matrices: stacked states ``= Ax x + Gu u + Gw w``."""
        A, B = self.plant.A, self.plant.B
        n, m, N = self.plant.n, self.plant.m, self.N
        Ax = np.zeros(((N + 1) * n, n))
        Gu = np.zeros(((N + 1) * n, N * m))
        Gw = np.zeros(((N + 1) * n, N * n))
        powers = [np.eye(n)]
        for _ in range(N):
            powers.append(A @ powers[-1])
        for i in range(N + 1):
            Ax[i * n:(i + 1) * n] = powers[i]
            for j in range(i):
                Gu[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - 1 - j] @ B
                Gw[i * n:(i + 1) * n, j * n:(j + 1) * n] = powers[i - 1 - j]
        W = self.ingredients.weights
        Qbar = np.zeros(((N + 1) * n, (N + 1) * n))
        for i in range(N):
            Qbar[i * n:(i + 1) * n, i * n:(i + 1) * n] = W.Q
        Qbar[N * n:, N * n:] = W.P
        Sbar = np.kron(np.eye(N), W.S)
        H = 2.0 * (Gu.T @ Qbar @ Gu + Sbar)
        X, U, Xf = self.sets.X, self.sets.U, self.ingredients.Xf_bar
        # rows: x(0..N-1) in X, u(0..N-1) in U, x(N) in X_f
        qx, qu, qf = X.n_constraints, U.n_constraints, Xf.n_constraints
        G = np.zeros((N * (qx + qu) + qf, N * m))
        for i in range(N):
            G[i * qx:(i + 1) * qx] = X.G @ Gu[i * n:(i + 1) * n]
        off = N * qx
        for i in range(N):
            G[off + i * qu:off + (i + 1) * qu, i * m:(i + 1) * m] = U.G
        G[off + N * qu:] = Xf.G @ Gu[N * n:]
        return dict(Ax=Ax, Gu=Gu, Gw=Gw, Qbar=Qbar, Sbar=Sbar, H=0.5 * (H + H.T), G=G)


@dataclass
class OcpSolution:
    u_seq: Optional[np.ndarray]
    x_seq: Optional[np.ndarray]
    value: float
    status: SolveStatus
    w: Optional[DisturbanceSequence] = None

    @property
    def feasible(self) -> bool:
        return self.status.tag is Status.OPTIMAL


def _model_sequence(w: DisturbanceSequence, cfg: HorizonConfig) -> DisturbanceSequence:
    if w.N != cfg.N or w.n != cfg.plant.n:
        raise ValueError(f"preview has shape {w.entries.shape}, expected ({cfg.N}, {cfg.plant.n})")
    if cfg.ignore_preview:
        return DisturbanceSequence.zeros(cfg.plant.n, cfg.N)
    return w


def _free_response(x, w: DisturbanceSequence, cfg: HorizonConfig) -> np.ndarray:
    P = cfg._pred
    return P["Ax"] @ x + P["Gw"] @ w.stacked()


def build_ocp(x, w: DisturbanceSequence, cfg: HorizonConfig) -> QpProblem:
    """Condensed QP over the stacked inputs for state ``x`` and preview ``w``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != cfg.plant.n:
        raise ValueError("state has the wrong dimension")
    w = _model_sequence(w, cfg)
    n, N = cfg.plant.n, cfg.N
    eq = equilibrium(cfg.ingredients, w.w_f, check=False)
    P = cfg._pred
    c = _free_response(x, w, cfg) - np.tile(eq.x_f, N + 1)
    uf = np.tile(eq.u_f, N)
    f = 2.0 * (P["Gu"].T @ P["Qbar"] @ c - P["Sbar"] @ uf)
    free = _free_response(x, w, cfg)
    X, U, Xf = cfg.sets.X, cfg.sets.U, cfg.ingredients.Xf_bar
    g = np.concatenate(
        [X.g - X.G @ free[i * n:(i + 1) * n] for i in range(N)]
        + [np.tile(U.g, N), Xf.g + Xf.G @ eq.x_f - Xf.G @ free[N * n:]]
    )
    return QpProblem(P["H"], f, P["G"], g)


def predict(x, u_seq, w: DisturbanceSequence, plant: PlantModel) -> np.ndarray:
    xs = [np.asarray(x, dtype=float).ravel()]
    for i in range(len(u_seq)):
        xs.append(plant.step(xs[-1], u_seq[i], w.entries[i]))
    return np.array(xs)


def trajectory_cost(x_seq, u_seq, w_f, ing: TerminalIngredients) -> float:
    eq = equilibrium(ing, w_f, check=False)
    W = ing.weights
    dx = x_seq - eq.x_f
    du = np.asarray(u_seq).reshape(len(u_seq), -1) - eq.u_f
    stage = np.einsum("ij,jk,ik->", dx[:-1], W.Q, dx[:-1]) + np.einsum("ij,jk,ik->", du, W.S, du)
    return float(stage + dx[-1] @ W.P @ dx[-1])


def solve_ocp(x, w: DisturbanceSequence, cfg: HorizonConfig) -> OcpSolution:
    qp = build_ocp(x, w, cfg)
    res = solve_qp(qp)
    if res.status.tag is not Status.OPTIMAL:
        return OcpSolution(None, None, math.inf, res.status, w)
    wm = _model_sequence(w, cfg)
    U = res.x.reshape(cfg.N, cfg.plant.m)
    xs = predict(x, U, wm, cfg.plant)
    return OcpSolution(U, xs, trajectory_cost(xs, U, wm.w_f, cfg.ingredients), res.status, w)


def control(x, w: DisturbanceSequence, cfg: HorizonConfig) -> np.ndarray:
    """First optimal input; raises ``InfeasibleError`` if there is none."""
    sol = solve_ocp(x, w, cfg)
    if not sol.feasible:
        raise InfeasibleError(f"optimal control problem not solved: {sol.status.tag.value}", sol.status)
    return sol.u_seq[0]


def value(x, w: DisturbanceSequence, cfg: HorizonConfig) -> float:
    """Optimal cost, or ``math.inf`` when ``x`` is outside the feasible set."""
    sol = solve_ocp(x, w, cfg)
    if sol.status.tag is Status.NUMERICAL_FAILURE:
        raise ArithmeticError(f"solver failure: {sol.status.message}")
    return sol.value


def is_feasible(x, w: DisturbanceSequence, cfg: HorizonConfig) -> bool:
    return math.isfinite(value(x, w, cfg))


def controllability_sets(w: DisturbanceSequence, cfg: HorizonConfig,
                         X0: Optional[HPolytope] = None) -> List[HPolytope]:
    """Sets ``X_0, ..., X_N`` of states steerable into the terminal set.

    ``X_{i+1} = X  ∩  A^{-1}(X_i + (-B U) + {-w(N-1-i)})`` starting from
    ``X_0 = X_f(w_f)`` unless ``X0`` is given.  Empty iterates carry the
    ``empty`` flag.
    """
    wm = _model_sequence(w, cfg)
    A, B = cfg.plant.A, cfg.plant.B
    X = cfg.sets.X
    cur = X0 if X0 is not None else pt.translate(cfg.ingredients.Xf_bar, equilibrium(cfg.ingredients, wm.w_f, check=False).x_f)
    cur = pt.canonicalize(cur)
    negBU = pt.affine_image(-B, cfg.sets.U)
    out = [cur]
    for i in range(cfg.N):
        if cur.empty:
            out.append(HPolytope.empty_set(X.dim))
            continue
        grown = pt.translate(pt.minkowski_sum(cur, negBU), -wm.entries[cfg.N - 1 - i])
        cur = pt.intersect(X, pt.affine_preimage(A, grown, reduce=False))
        out.append(cur)
    return out


def baseline_nominal(cfg: HorizonConfig) -> HorizonConfig:
    """Preview-free controller with the largest admissible nominal terminal set."""
    ing = cfg.ingredients
    C = pt.intersect(cfg.sets.X, pt.affine_preimage(ing.K_f, cfg.sets.U))
    inv = pt.max_admissible_invariant(ing.Phi, C)
    zero = HPolytope.singleton(np.zeros(cfg.plant.n))
    sets = dataclasses.replace(cfg.sets, W_f=zero)
    nominal = dataclasses.replace(
        ing, Xf_bar=inv.set, alpha_x=0.0, alpha_u=0.0, beta_x=1.0, beta_u=1.0,
        determination_index=inv.index, sets=sets,
    )
    return dataclasses.replace(cfg, ingredients=nominal, ignore_preview=True)


def constraint_labels(cfg: HorizonConfig) -> List[str]:
    """Human-readable name of every row of the condensed QP."""
    N = cfg.N
    qx, qu = cfg.sets.X.n_constraints, cfg.sets.U.n_constraints
    labels = [f"state x({i}) row {j}" for i in range(N) for j in range(qx)]
    labels += [f"input u({i}) row {j}" for i in range(N) for j in range(qu)]
    labels += [f"terminal x({N}) row {j}" for j in range(cfg.ingredients.Xf_bar.n_constraints)]
    return labels


def infeasibility_report(x, w: DisturbanceSequence, cfg: HorizonConfig) -> dict:
    """Smallest uniform relaxation that makes the problem feasible and the rows it binds.

    Solves ``min t`` subject to ``G u <= g + t``; ``t <= 0`` means ``x`` is feasible.
    """
    qp = build_ocp(x, w, cfg)
    d = qp.dim
    G = np.hstack([qp.G, -np.ones((qp.G.shape[0], 1))])
    c = np.zeros(d + 1)
    c[-1] = 1.0
    res = solve_lp(LpProblem(c, G, qp.g))
    if not res.status.ok:
        return {"feasible": False, "relaxation": math.inf, "rows": []}
    t = float(res.x[-1])
    slack = qp.G @ res.x[:d] - qp.g
    labels = constraint_labels(cfg)
    rows = [labels[i] for i in np.nonzero(slack >= t - 1e-9 * max(1.0, abs(t)))[0]] if t > 1e-9 else []
    return {"feasible": t <= 1e-9, "relaxation": t, "rows": rows}
