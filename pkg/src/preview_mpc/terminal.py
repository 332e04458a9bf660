"""Terminal ingredients: nominal design and its translation to a disturbance equilibrium.

For a constant disturbance ``w_f`` the plant ``x+ = A x + B u + w_f`` under
``u = K_f (x - x_f) + u_f`` has the equilibrium ``x_f = Psi w_f`` with
``Psi = (I - Phi)^{-1}``, ``Phi = A + B K_f`` and ``u_f = K_f x_f``.  The
nominal terminal set, cost and law are shifted to that point.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.stats import qmc

from . import polytope as pt
from .numkit import (
    DEFAULT_TOL,
    inverse,
    solve_dare,
    solve_discrete_lyapunov,
    spectral_radius,
)
from .polytope import HPolytope


class SynthesisError(ValueError):
    pass


class TerminalSetWarning(UserWarning):
    pass


def _mat(M, name, ndim=2) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if ndim == 2:
        M = np.atleast_2d(M)
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True)
class PlantModel:
    """Linear plant ``x+ = A x + B u + w``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, "A")
        B = _mat(self.B, "B")
        if B.shape[0] != A.shape[0] and B.ndim == 2 and B.shape[0] == 1:
            B = B.T
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"A {A.shape} and B {B.shape} are inconsistent")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def controllability_matrix(self) -> np.ndarray:
        blocks = [self.B]
        for _ in range(self.n - 1):
            blocks.append(self.A @ blocks[-1])
        return np.hstack(blocks)

    def is_reachable(self) -> bool:
        return np.linalg.matrix_rank(self.controllability_matrix()) == self.n

    def step(self, x, u, w):
        return self.A @ x + self.B @ np.atleast_1d(u) + w


@dataclass(frozen=True)
class ConstraintSpec:
    """State, input and disturbance sets; ``W_f`` defaults to ``W``."""

    X: HPolytope
    U: HPolytope
    W: HPolytope
    W_f: Optional[HPolytope] = None

    def __post_init__(self):
        if self.W_f is None:
            object.__setattr__(self, "W_f", self.W)
        if self.W.dim != self.X.dim or self.W_f.dim != self.X.dim:
            raise ValueError("disturbance sets must live in the state space")

    def check_plant(self, plant: PlantModel):
        if self.X.dim != plant.n or self.U.dim != plant.m:
            raise ValueError("constraint sets do not match the plant dimensions")


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    S: np.ndarray
    P: np.ndarray
    a: int = 2

    @property
    def c1(self) -> float:
        return float(np.linalg.eigvalsh(self.Q).min())

    @property
    def c2(self) -> float:
        return float(np.linalg.eigvalsh(self.P).max())


@dataclass(frozen=True)
class TerminalIngredients:
    K_f: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    beta_x: float
    beta_u: float
    alpha_x: float
    alpha_u: float
    Xf_bar: HPolytope
    weights: CostWeights
    plant: PlantModel
    sets: ConstraintSpec
    determination_index: int = 0
    gain_label: str = "user"

    @property
    def Pi(self) -> np.ndarray:
        return self.K_f


@dataclass(frozen=True)
class Equilibrium:
    x_f: np.ndarray
    u_f: np.ndarray
    w_f: np.ndarray


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def deadbeat_gain(plant: PlantModel) -> np.ndarray:
    """Ackermann gain placing every closed-loop pole at 0 (single input only)."""
    if plant.m != 1:
        raise SynthesisError("deadbeat design is implemented for single-input plants")
    C = plant.controllability_matrix()
    if np.linalg.matrix_rank(C) < plant.n:
        raise SynthesisError("(A, B) is not reachable")
    e_last = np.zeros(plant.n)
    e_last[-1] = 1.0
    row = np.linalg.solve(C.T, e_last)
    return -(row @ np.linalg.matrix_power(plant.A, plant.n)).reshape(1, -1)


def lqr_gain(plant: PlantModel, Q, S) -> np.ndarray:
    _, K = solve_dare(plant.A, plant.B, Q, S)
    return -K


def containment_scale(M, Wf: HPolytope, P: HPolytope) -> float:
    """Smallest ``a`` with ``M Wf`` inside ``a P``, from supports of ``Wf``."""
    M = np.atleast_2d(M)
    if Wf.empty or Wf.is_empty():
        return 0.0
    if np.any(P.g <= 0):
        raise ValueError("P must contain the origin in its interior")
    return max(0.0, max(pt.support(Wf, M.T @ P.G[i]) / P.g[i] for i in range(P.n_constraints)))


def _complement(a: float) -> float:
    """``1 - a`` rounded so that ``a + (1 - a) <= 1`` holds in floating point."""
    b = 1.0 - a
    while a + b > 1.0:
        b = np.nextafter(b, 0.0)
    return float(b)


def _resolve_gain(plant, Q, S, gain_choice):
    if gain_choice is None or (isinstance(gain_choice, str) and gain_choice == "lqr"):
        return lqr_gain(plant, Q, S), "lqr"
    if isinstance(gain_choice, str):
        if gain_choice == "deadbeat":
            return deadbeat_gain(plant), "deadbeat"
        raise SynthesisError(f"unknown gain choice {gain_choice!r}")
    K = np.atleast_2d(np.asarray(gain_choice, dtype=float))
    if K.shape != (plant.m, plant.n):
        raise SynthesisError(f"gain must have shape {(plant.m, plant.n)}, got {K.shape}")
    return K, "user"


def synth_nominal(
    plant: PlantModel,
    sets: ConstraintSpec,
    Q,
    S,
    gain_choice: Union[None, str, np.ndarray] = None,
    beta_x: Optional[float] = None,
    beta_u: Optional[float] = None,
) -> TerminalIngredients:
    """Design the nominal terminal ingredients and the scaling factors.

    ``gain_choice`` is a gain matrix (``u = K_f x``), ``"lqr"`` or ``"deadbeat"``;
    ``None`` means LQR.  The betas default to ``1 - alpha``.
    """
    sets.check_plant(plant)
    if not plant.is_reachable():
        raise SynthesisError("(A, B) is not reachable")
    Q = _mat(Q, "Q")
    S = _mat(S, "S")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-12:
        raise SynthesisError("Q must be positive semidefinite")
    if np.linalg.eigvalsh(0.5 * (S + S.T)).min() <= 0:
        raise SynthesisError("S must be positive definite")

    K, label = _resolve_gain(plant, Q, S, gain_choice)
    Phi = plant.A + plant.B @ K
    if spectral_radius(Phi) >= 1.0 - DEFAULT_TOL.stability_margin:
        raise SynthesisError(f"gain is not stabilizing (spectral radius {spectral_radius(Phi):.6g})")
    Psi = inverse(np.eye(plant.n) - Phi)
    P = solve_discrete_lyapunov(Phi, Q + K.T @ S @ K)

    alpha_x = containment_scale(Psi, sets.W_f, sets.X)
    alpha_u = containment_scale(K @ Psi, sets.W_f, sets.U)
    if alpha_x >= 1.0 or alpha_u >= 1.0:
        raise SynthesisError(
            f"disturbance equilibria do not fit the constraints (alpha_x={alpha_x:.4g}, alpha_u={alpha_u:.4g})"
        )
    bx = _complement(alpha_x) if beta_x is None else float(beta_x)
    bu = _complement(alpha_u) if beta_u is None else float(beta_u)
    if bx <= 0 or bu <= 0:
        raise SynthesisError("beta factors must be positive")
    if alpha_x + bx > 1.0 + 1e-12 or alpha_u + bu > 1.0 + 1e-12:
        raise SynthesisError("beta overrides violate alpha + beta <= 1")

    C = pt.intersect(pt.scale(sets.X, bx), pt.affine_preimage(K, pt.scale(sets.U, bu)))
    try:
        inv = pt.max_admissible_invariant(Phi, C)
    except pt.NotFinitelyDeterminedError as exc:
        raise SynthesisError(str(exc)) from exc
    ing = TerminalIngredients(
        K_f=K, Phi=Phi, Psi=Psi, beta_x=bx, beta_u=bu, alpha_x=alpha_x, alpha_u=alpha_u,
        Xf_bar=inv.set, weights=CostWeights(Q, S, P), plant=plant, sets=sets,
        determination_index=inv.index, gain_label=label,
    )
    problems = check_ingredients(ing)
    if problems:
        raise SynthesisError("; ".join(problems))
    return ing


def check_ingredients(ing: TerminalIngredients) -> list:
    """List of violated ingredient invariants (empty when all hold)."""
    out = []
    if spectral_radius(ing.Phi) >= 1.0:
        out.append("Phi is not Schur stable")
    if ing.alpha_x + ing.beta_x > 1.0 + 1e-12:
        out.append("alpha_x + beta_x > 1")
    if ing.alpha_u + ing.beta_u > 1.0 + 1e-12:
        out.append("alpha_u + beta_u > 1")
    if not pt.contains_set(pt.scale(ing.sets.X, ing.beta_x), ing.Xf_bar):
        out.append("terminal set leaves beta_x X")
    if containment_scale(ing.K_f, ing.Xf_bar, ing.sets.U) > ing.beta_u + 1e-9:
        out.append("terminal law leaves beta_u U")
    if not pt.contains_set(pt.affine_preimage(ing.Phi, ing.Xf_bar), ing.Xf_bar):
        out.append("terminal set is not invariant")
    W = ing.weights
    res = ing.Phi.T @ W.P @ ing.Phi - W.P + W.Q + ing.K_f.T @ W.S @ ing.K_f
    if np.abs(res).max() > 1e-9 * max(1.0, np.abs(W.P).max()):
        out.append("Lyapunov residual too large")
    return out


# ---------------------------------------------------------------------------
# translated ingredients
# ---------------------------------------------------------------------------

def equilibrium(ing: TerminalIngredients, w_f, check: bool = True) -> Equilibrium:
    w_f = np.asarray(w_f, dtype=float).ravel()
    if check and not ing.sets.W_f.contains(w_f, 1e-9):
        raise ValueError(f"w_f = {w_f} is outside the terminal disturbance set")
    x_f = ing.Psi @ w_f
    u_f = ing.K_f @ x_f
    res = np.abs(x_f - ing.Phi @ x_f - w_f).max()
    if res > 1e-10 * max(1.0, np.abs(x_f).max()):
        raise ArithmeticError(f"equilibrium residual {res:.3g}")
    return Equilibrium(x_f, u_f, w_f)


def translated_terminal_set(ing: TerminalIngredients, w_f) -> HPolytope:
    return pt.translate(ing.Xf_bar, equilibrium(ing, w_f).x_f)


def stage_cost(x, u, w_f, ing: TerminalIngredients) -> float:
    eq = equilibrium(ing, w_f, check=False)
    dx = np.asarray(x, dtype=float) - eq.x_f
    du = np.atleast_1d(np.asarray(u, dtype=float)) - eq.u_f
    return float(dx @ ing.weights.Q @ dx + du @ ing.weights.S @ du)


def terminal_cost(x, w_f, ing: TerminalIngredients) -> float:
    dx = np.asarray(x, dtype=float) - equilibrium(ing, w_f, check=False).x_f
    return float(dx @ ing.weights.P @ dx)


def terminal_law(x, w_f, ing: TerminalIngredients) -> np.ndarray:
    """``K_f (x - x_f) + u_f``; warns if ``x`` is outside the translated terminal set."""
    eq = equilibrium(ing, w_f, check=False)
    x = np.asarray(x, dtype=float)
    if not ing.Xf_bar.contains(x - eq.x_f, 1e-9):
        warnings.warn("state outside the translated terminal set", TerminalSetWarning, stacklevel=2)
    return ing.K_f @ (x - eq.x_f) + eq.u_f


# ---------------------------------------------------------------------------
# executable check of the terminal conditions
# ---------------------------------------------------------------------------

@dataclass
class Prop1Report:
    invariance: bool
    descent: bool
    admissibility: bool
    convergence: bool
    n_points: int
    margins: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.invariance and self.descent and self.admissibility and self.convergence

    def to_dict(self) -> dict:
        return {
            "invariance": self.invariance, "descent": self.descent,
            "admissibility": self.admissibility, "convergence": self.convergence,
            "passed": self.passed, "n_points": self.n_points, "margins": self.margins,
        }


def _facet_midpoints(P: HPolytope, V: np.ndarray) -> np.ndarray:
    pts = []
    for i in range(P.n_constraints):
        on = V[np.abs(V @ P.G[i] - P.g[i]) <= 1e-8]
        if on.shape[0]:
            pts.append(on.mean(axis=0))
    return np.array(pts).reshape(-1, P.dim)


def sample_set(P: HPolytope, n: int, seed: int = 0) -> np.ndarray:
    """Halton points of the bounding box kept if inside ``P``, plus vertices and facet midpoints."""
    lo, hi = pt.bounding_box(P)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    sampler = qmc.Halton(d=P.dim, scramble=True, seed=seed)
    pts = []
    count = 0
    for _ in range(200):
        cand = lo + sampler.random(max(n, 64)) * span
        keep = cand[P.contains(cand, 0.0)]
        pts.append(keep)
        count += keep.shape[0]
        if count >= n:
            break
    inner = np.vstack(pts)[:n] if pts else np.zeros((0, P.dim))
    V = pt.vertices(P)
    return np.vstack([inner, V, _facet_midpoints(P, V)])


def verify_proposition1(ing: TerminalIngredients, w_f, n_samples: int = 1000, seed: int = 0,
                        tol: float = 1e-8, horizon: int = 60) -> Prop1Report:
    """Check invariance, descent, admissibility and convergence of the translated terminal loop."""
    eq = equilibrium(ing, w_f, check=False)
    Xf = pt.translate(ing.Xf_bar, eq.x_f)
    pts = sample_set(Xf, n_samples, seed)
    A, B = ing.plant.A, ing.plant.B
    W = ing.weights
    U = (pts - eq.x_f) @ ing.K_f.T + eq.u_f
    nxt = pts @ A.T + U @ B.T + eq.w_f

    inv_gap = float(np.max(nxt @ Xf.G.T - Xf.g)) if pts.size else -np.inf

    dz = pts - eq.x_f
    dz1 = nxt - eq.x_f
    du = U - eq.u_f
    Vf = np.einsum("ij,jk,ik->i", dz, W.P, dz)
    Vf1 = np.einsum("ij,jk,ik->i", dz1, W.P, dz1)
    ell = np.einsum("ij,jk,ik->i", dz, W.Q, dz) + np.einsum("ij,jk,ik->i", du, W.S, du)
    descent_gap = float(np.max(Vf1 - Vf + ell))

    X, Uset = ing.sets.X, ing.sets.U
    set_ok = pt.contains_set(X, Xf)
    law_gap = max(
        pt.support(ing.Xf_bar, ing.K_f.T @ Uset.G[i]) + Uset.G[i] @ eq.u_f - Uset.g[i]
        for i in range(Uset.n_constraints)
    )
    sample_ok = bool(np.all(X.contains(pts, tol))) and bool(np.all(Uset.contains(U, tol)))
    admissible = set_ok and law_gap <= tol and sample_ok

    # V_f decays at least like (1 - lambda_min(Q + K'SK) / lambda_max(P))^t
    Qk = W.Q + ing.K_f.T @ W.S @ ing.K_f
    rate = 1.0 - np.linalg.eigvalsh(Qk).min() / np.linalg.eigvalsh(W.P).max()
    z = dz.copy()
    V0 = Vf.copy()
    conv_gap = -np.inf
    for t in range(1, horizon + 1):
        z = z @ ing.Phi.T
        Vt = np.einsum("ij,jk,ik->i", z, W.P, z)
        conv_gap = max(conv_gap, float(np.max(Vt - rate ** t * V0 - tol * np.maximum(1.0, V0))))
    converged = rate < 1.0 and conv_gap <= 0.0

    return Prop1Report(
        invariance=inv_gap <= tol,
        descent=descent_gap <= tol,
        admissibility=admissible,
        convergence=converged,
        n_points=int(pts.shape[0]),
        margins={
            "invariance_gap": inv_gap, "descent_gap": descent_gap,
            "input_support_gap": float(law_gap), "state_set_contained": set_ok,
            "decay_rate": float(rate), "decay_gap": conv_gap,
        },
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def ingredients_to_dict(ing: TerminalIngredients) -> dict:
    return {
        "gain_label": ing.gain_label,
        "K_f": ing.K_f.tolist(),
        "Phi": ing.Phi.tolist(),
        "Psi": ing.Psi.tolist(),
        "P": ing.weights.P.tolist(),
        "Q": ing.weights.Q.tolist(),
        "S": ing.weights.S.tolist(),
        "alpha_x": ing.alpha_x,
        "alpha_u": ing.alpha_u,
        "beta_x": ing.beta_x,
        "beta_u": ing.beta_u,
        "determination_index": ing.determination_index,
        "Xf_bar": ing.Xf_bar.to_dict(),
    }
