"""Closed-loop simulation, robustness constants, level sets and stability monitors."""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.stats import qmc
from skimage import measure

from . import polytope as pt
from .mpc import DisturbanceSequence, HorizonConfig, solve_ocp, value
from .polytope import HPolytope
from .terminal import ConstraintSpec, equilibrium

NORMS = {"2": 2, "inf": np.inf, "1": 1}


def seq_norm(v, norm=2) -> float:
    return float(np.linalg.norm(np.ravel(v), ord=norm))


# ---------------------------------------------------------------------------
# disturbance schedules
# ---------------------------------------------------------------------------

def random_sequence(sets: ConstraintSpec, N: int, rng: np.random.Generator) -> DisturbanceSequence:
    """Admissible preview with entries drawn as random convex combinations of vertices."""
    VW = pt.vertices(sets.W)
    VF = pt.vertices(sets.W_f)
    rows = [rng.dirichlet(np.ones(len(VW))) @ VW for _ in range(N - 1)]
    rows.append(rng.dirichlet(np.ones(len(VF))) @ VF)
    return DisturbanceSequence(np.array(rows))


def project_sequence(w: np.ndarray, sets: ConstraintSpec) -> DisturbanceSequence:
    """Entry-wise projection of an ``(N, n)`` array onto ``W^{N-1} x W_f``."""
    rows = [pt.project_point(sets.W, r) for r in w[:-1]]
    rows.append(pt.project_point(sets.W_f, w[-1]))
    return DisturbanceSequence(np.array(rows))


@dataclass
class Schedule:
    """How the preview evolves between samples.

    ``mode`` is ``"tail"`` (shift and repeat the last entry), ``"scripted"``
    (cycle through ``sequences``) or ``"random-delta"`` (tail plus a random
    increment from ``delta_set`` applied entry-wise, projected back into the
    admissible set).
    """

    mode: str
    initial: DisturbanceSequence
    sequences: Sequence[DisturbanceSequence] = ()
    delta_set: Optional[HPolytope] = None
    sets: Optional[ConstraintSpec] = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("tail", "scripted", "random-delta"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "scripted" and not self.sequences:
            raise ValueError("scripted schedule needs at least one sequence")
        if self.mode == "random-delta" and (self.delta_set is None or self.sets is None):
            raise ValueError("random-delta schedule needs delta_set and sets")

    @classmethod
    def tail_update(cls, w0: DisturbanceSequence) -> "Schedule":
        return cls("tail", w0)

    @classmethod
    def scripted(cls, sequences: Sequence[DisturbanceSequence]) -> "Schedule":
        return cls("scripted", sequences[0], sequences=list(sequences))

    @classmethod
    def random_delta(cls, w0, delta_set, sets, seed=0) -> "Schedule":
        return cls("random-delta", w0, delta_set=delta_set, sets=sets, seed=seed)

    def generate(self, K: int) -> List[DisturbanceSequence]:
        """Previews ``w(0), ..., w(K)``."""
        if self.mode == "scripted":
            return [self.sequences[k % len(self.sequences)] for k in range(K + 1)]
        out = [self.initial]
        if self.mode == "tail":
            for _ in range(K):
                out.append(out[-1].tail())
            return out
        rng = np.random.default_rng(self.seed)
        V = pt.vertices(self.delta_set)
        for _ in range(K):
            prev = out[-1].tail().entries
            dw = np.array([rng.dirichlet(np.ones(len(V))) @ V for _ in range(prev.shape[0])])
            out.append(project_sequence(prev + dw, self.sets))
        return out

    def reachable(self, K: Optional[int] = None) -> List[DisturbanceSequence]:
        """Distinct previews the schedule visits (finite for tail and scripted modes)."""
        if self.mode == "scripted":
            seqs = list(self.sequences)
        elif self.mode == "tail":
            seqs = self.generate(self.initial.N if K is None else K)
        else:
            seqs = self.generate(50 if K is None else K)
        uniq = []
        for s in seqs:
            if s not in uniq:
                uniq.append(s)
        return uniq


def jump_sizes(sequences: Sequence[DisturbanceSequence], cyclic: bool = False, norm=2) -> np.ndarray:
    """``|w(k+1) - tail(w(k))|`` for consecutive previews."""
    pairs = list(zip(sequences[:-1], sequences[1:]))
    if cyclic and len(sequences) > 1:
        pairs.append((sequences[-1], sequences[0]))
    return np.array([seq_norm(b.entries - a.tail().entries, norm) for a, b in pairs])


def lambda_report(sequences, cyclic=False) -> dict:
    """Largest preview jump under the 2-, inf- and 1-norms of the stacked sequence."""
    return {k: float(jump_sizes(sequences, cyclic, v).max(initial=0.0)) for k, v in NORMS.items()}


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryLog:
    x: np.ndarray              # (K+1, n)
    u: np.ndarray              # (K, m)
    w_applied: np.ndarray      # (K, n)
    previews: List[DisturbanceSequence]
    V: np.ndarray              # (K,) optimal cost, inf when infeasible
    feasible: np.ndarray       # (K,) bool
    beta: float = math.inf
    notes: List[str] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.u.shape[0]

    @property
    def in_level_set(self) -> np.ndarray:
        return self.V <= self.beta * (1.0 + 1e-4)

    def columns(self) -> List[str]:
        n, m = self.x.shape[1], self.u.shape[1]
        N = self.previews[0].N if self.previews else 0
        cols = ["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
        cols += [f"w{i + 1}" for i in range(n)] + ["V", "feasible", "in_level_set"]
        cols += [f"p{j}_{i + 1}" for j in range(N) for i in range(n)]
        return cols

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns())
        lvl = self.in_level_set
        for k in range(self.K):
            row = [k] + [_fmt(v) for v in self.x[k]] + [_fmt(v) for v in self.u[k]]
            row += [_fmt(v) for v in self.w_applied[k]] + [_fmt(self.V[k]), int(self.feasible[k]), int(lvl[k])]
            row += [_fmt(v) for v in self.previews[k].stacked()]
            wr.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _fmt(v) -> str:
    v = float(v)
    return "inf" if math.isinf(v) else repr(round(v, 12))


def run_closed_loop(x0, schedule: Schedule, cfg: HorizonConfig, K: int = 50,
                    beta: float = math.inf) -> TrajectoryLog:
    """Receding-horizon loop; the plant always receives the head of the current preview.

    Infeasible steps are logged and the next input of the previous plan (or
    the terminal law projected onto U) is applied instead.
    """
    plant = cfg.plant
    previews = schedule.generate(K)
    xs = [np.asarray(x0, dtype=float).ravel()]
    us, ws, Vs, feas, notes = [], [], [], [], []
    plan, plan_age = None, 0
    for k in range(K):
        w = previews[k]
        x = xs[-1]
        sol = solve_ocp(x, w, cfg)
        if sol.feasible:
            u = sol.u_seq[0]
            plan, plan_age = sol.u_seq, 0
        else:
            notes.append(f"step {k}: {sol.status.tag.value}")
            plan_age += 1
            if plan is not None and plan_age < len(plan):
                u = plan[plan_age]
            else:
                eq = equilibrium(cfg.ingredients, w.w_f, check=False)
                u = pt.project_point(cfg.sets.U, cfg.ingredients.K_f @ (x - eq.x_f) + eq.u_f)
        us.append(np.atleast_1d(u))
        ws.append(w.head.copy())
        Vs.append(sol.value)
        feas.append(sol.feasible)
        xs.append(plant.step(x, u, w.head))
    return TrajectoryLog(
        x=np.array(xs), u=np.array(us).reshape(K, plant.m), w_applied=np.array(ws).reshape(K, plant.n),
        previews=previews[:K], V=np.array(Vs), feasible=np.array(feas, dtype=bool), beta=beta, notes=notes,
    )


# ---------------------------------------------------------------------------
# grid evaluation
# ---------------------------------------------------------------------------

def worker_count() -> int:
    env = os.environ.get("PREVIEW_MPC_THREADS")
    n = os.cpu_count() or 1
    if env:
        try:
            n = max(1, min(n, int(env)))
        except ValueError:
            pass
    return n


def _values_chunk(args):
    points, w, cfg = args
    return np.array([value(p, w, cfg) for p in points])


def grid_values(points: np.ndarray, w: DisturbanceSequence, cfg: HorizonConfig,
                workers: Optional[int] = None) -> np.ndarray:
    """Optimal cost at each row of ``points`` (inf where infeasible)."""
    points = np.asarray(points, dtype=float)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(points) < 200:
        return _values_chunk((points, w, cfg))
    chunks = np.array_split(points, workers * 4)
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_values_chunk, [(c, w, cfg) for c in chunks]))
    return np.concatenate(parts)


@dataclass(frozen=True)
class GridSpec:
    lo: np.ndarray
    hi: np.ndarray
    nx: int = 101
    ny: int = 101

    @classmethod
    def around(cls, P: HPolytope, inflate: float = 0.05, nx: int = 101, ny: int = 101) -> "GridSpec":
        lo, hi = pt.bounding_box(P)
        pad = inflate * (hi - lo) / 2.0
        return cls(lo - pad, hi + pad, nx, ny)

    @property
    def axes(self):
        return np.linspace(self.lo[0], self.hi[0], self.nx), np.linspace(self.lo[1], self.hi[1], self.ny)

    def points(self) -> np.ndarray:
        xs, ys = self.axes
        XX, YY = np.meshgrid(xs, ys, indexing="xy")
        return np.column_stack([XX.ravel(), YY.ravel()])

    @property
    def cell_area(self) -> float:
        xs, ys = self.axes
        return float((xs[1] - xs[0]) * (ys[1] - ys[0]))


INSIDE, ABOVE, INFEASIBLE = 0, 1, 2


@dataclass
class LevelSet:
    grid: GridSpec
    values: np.ndarray      # (ny, nx)
    mask: np.ndarray        # (ny, nx) codes INSIDE / ABOVE / INFEASIBLE
    beta: float
    boundary: List[np.ndarray]

    @property
    def inside(self) -> np.ndarray:
        return self.mask == INSIDE

    @property
    def area(self) -> float:
        return float(self.inside.sum()) * self.grid.cell_area

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "lo": self.grid.lo.tolist(), "hi": self.grid.hi.tolist(),
            "nx": self.grid.nx, "ny": self.grid.ny,
            "mask": self.mask.tolist(),
            "area": self.area,
            "boundary": [np.round(b, 10).tolist() for b in self.boundary],
        }


def _contours(values: np.ndarray, level: float, grid: GridSpec) -> List[np.ndarray]:
    finite = np.where(np.isfinite(values), values, 10.0 * level + 1.0)
    if finite.min() > level or finite.max() < level:
        return []
    xs, ys = grid.axes
    out = []
    for c in measure.find_contours(finite, level):
        r, col = c[:, 0], c[:, 1]
        out.append(np.column_stack([np.interp(col, np.arange(len(xs)), xs), np.interp(r, np.arange(len(ys)), ys)]))
    return out


def level_set(w: DisturbanceSequence, beta: float, grid: GridSpec, cfg: HorizonConfig,
              workers: Optional[int] = None) -> LevelSet:
    """Grid evaluation of ``{x : V(x; w) <= beta}`` with a marching-squares boundary."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    V = grid_values(grid.points(), w, cfg, workers).reshape(grid.ny, grid.nx)
    mask = np.full(V.shape, ABOVE, dtype=np.int8)
    mask[V <= beta] = INSIDE
    mask[~np.isfinite(V)] = INFEASIBLE
    return LevelSet(grid, V, mask, beta, _contours(V, beta, grid))


def roa_union(schedule: Schedule, beta: float, grid: GridSpec, cfg: HorizonConfig,
              workers: Optional[int] = None, K: Optional[int] = None):
    """Union of level sets over the previews the schedule visits.

    Returns ``(union_mask, level_sets)``.
    """
    sets = [level_set(w, beta, grid, cfg, workers) for w in schedule.reachable(K)]
    union = np.zeros((grid.ny, grid.nx), dtype=bool)
    for s in sets:
        union |= s.inside
    return union, sets


# ---------------------------------------------------------------------------
# robustness constants
# ---------------------------------------------------------------------------

@dataclass
class SigmaEnvelope:
    """Piecewise-linear upper envelope ``sigma(r) = max_j dv_j min(1, r / d_j)``."""

    d: np.ndarray
    dv: np.ndarray

    def __call__(self, r) -> float:
        if r <= 0 or self.d.size == 0:
            return 0.0
        return float(np.max(self.dv * np.minimum(1.0, r / self.d)))

    def inverse(self, y: float) -> float:
        """Largest ``r`` with ``sigma(r) <= y``."""
        if y < 0:
            return 0.0
        big = self.dv > y
        if not np.any(big):
            return math.inf
        return float(np.min(y * self.d[big] / self.dv[big]))

    def table(self, n: int = 20) -> list:
        if self.d.size == 0:
            return []
        rs = np.linspace(0.0, float(self.d.max()), n)
        return [[float(r), self(r)] for r in rs]


@dataclass
class RobustnessConstants:
    c1: float
    c2: float
    c3: float
    gamma: float
    rho: float
    alpha: float
    lambda_: dict
    sigma_hat: SigmaEnvelope
    norm: str = "2"
    n_feasible: int = 0

    @property
    def c(self) -> float:
        return math.sqrt(self.c3 / self.c1)

    @property
    def delta(self) -> float:
        return math.sqrt(self.gamma)

    def lambda_bound(self) -> float:
        """``sigma^{-1}((rho - gamma) alpha)``, the admissible preview jump."""
        return self.sigma_hat.inverse((self.rho - self.gamma) * self.alpha)

    def to_dict(self) -> dict:
        return {
            "c1": self.c1, "c2": self.c2, "c3": self.c3, "gamma": self.gamma, "rho": self.rho,
            "alpha": self.alpha, "c": self.c, "delta": self.delta,
            "lambda": self.lambda_, "lambda_bound": self.lambda_bound(), "norm": self.norm,
            "sigma_hat": self.sigma_hat.table(), "n_feasible": self.n_feasible,
        }


def certified_level(cfg: HorizonConfig, sequences: Sequence[DisturbanceSequence], grid: GridSpec,
                    margin: float = 0.1, workers: Optional[int] = None) -> float:
    """Level whose sublevel sets stay off the grid boundary of the feasible set.

    For each preview, the smallest cost at a feasible grid point that has an
    infeasible neighbour bounds the admissible level; the minimum over
    previews is shrunk by ``1 + margin``.
    """
    best = math.inf
    for w in sequences:
        V = grid_values(grid.points(), w, cfg, workers).reshape(grid.ny, grid.nx)
        feas = np.isfinite(V)
        edge = np.zeros_like(feas)
        pad = np.pad(feas, 1, constant_values=False)
        for dy, dx in ((0, 1), (2, 1), (1, 0), (1, 2)):
            edge |= ~pad[dy:dy + grid.ny, dx:dx + grid.nx]
        edge &= feas
        if np.any(edge):
            best = min(best, float(V[edge].min()))
    if not math.isfinite(best):
        raise ValueError("no feasible boundary points found on the grid")
    return best / (1.0 + margin)


def sigma_envelope(cfg: HorizonConfig, n_pairs: int, rng: np.random.Generator,
                   scales=(0.02, 0.05, 0.1, 0.2, 0.5, 1.0), norm=2, X_sampler=None) -> SigmaEnvelope:
    """Sampled pairs ``(x, w)``, ``(x, w')`` with both feasible, and their cost gaps."""
    d, dv = [], []
    sets, N = cfg.sets, cfg.N
    lo, hi = pt.bounding_box(sets.X)
    tries = 0
    while len(d) < n_pairs and tries < 50 * n_pairs:
        tries += 1
        w = random_sequence(sets, N, rng)
        x = lo + rng.random(lo.size) * (hi - lo) if X_sampler is None else X_sampler(rng)
        v1 = value(x, w, cfg)
        if not math.isfinite(v1):
            continue
        s = scales[len(d) % len(scales)]
        w2 = project_sequence(w.entries + s * (random_sequence(sets, N, rng).entries - w.entries), sets)
        v2 = value(x, w2, cfg)
        dist = seq_norm(w2.entries - w.entries, norm)
        if not math.isfinite(v2) or dist <= 0:
            continue
        d.append(dist)
        dv.append(abs(v2 - v1))
    return SigmaEnvelope(np.array(d), np.array(dv))


def compute_constants(cfg: HorizonConfig, sequences: Sequence[DisturbanceSequence] = (),
                      n_samples: int = 400, seed: int = 0, margin: float = 0.1,
                      rho: Optional[float] = None, grid: Optional[GridSpec] = None,
                      schedule: Optional[Sequence[DisturbanceSequence]] = None, cyclic: bool = True,
                      n_pairs: int = 200, norm: str = "2", workers: Optional[int] = None,
                      alpha: Optional[float] = None) -> RobustnessConstants:
    """Estimate the constants of the rate condition on preview changes.

    ``c3`` is the sampled maximum of ``V / |x - x_f|^2`` over Halton states
    and the given previews (plus random admissible ones), inflated by
    ``margin``.  ``alpha`` is grid certified unless given.
    """
    ing = cfg.ingredients
    c1 = float(np.linalg.eigvalsh(ing.weights.Q).min())
    c2 = float(np.linalg.eigvalsh(ing.weights.P).max())
    if c1 <= 0:
        raise ValueError("c1 must be positive (Q positive definite)")
    rng = np.random.default_rng(seed)
    pool = list(sequences) + [random_sequence(cfg.sets, cfg.N, rng) for _ in range(8)]
    lo, hi = pt.bounding_box(cfg.sets.X)
    pts = lo + qmc.Halton(d=lo.size, scramble=True, seed=seed).random(n_samples) * (hi - lo)
    ratio, n_feas = 0.0, 0
    for j, x in enumerate(pts):
        w = pool[j % len(pool)]
        V = value(x, w, cfg)
        if not math.isfinite(V):
            continue
        n_feas += 1
        xf = equilibrium(ing, w.w_f, check=False).x_f
        r2 = float(np.sum((x - xf) ** 2))
        if r2 > 1e-12:
            ratio = max(ratio, V / r2)
    if n_feas == 0:
        raise ValueError("no feasible samples; cannot estimate constants")
    c3 = max((1.0 + margin) * ratio, c2, c1 * (1.0 + margin))
    gamma = 1.0 - c1 / c3
    rho = 0.5 * (gamma + 1.0) if rho is None else float(rho)
    if not gamma < rho < 1.0:
        raise ValueError("rho must lie in (gamma, 1)")
    if alpha is None:
        g = grid or GridSpec.around(cfg.sets.X, 0.05, 31, 31)
        alpha = certified_level(cfg, pool[:6], g, margin, workers)
    sig = sigma_envelope(cfg, n_pairs, rng, norm=NORMS[norm])
    lam = lambda_report(schedule, cyclic) if schedule else {k: 0.0 for k in NORMS}
    return RobustnessConstants(c1, c2, c3, gamma, rho, float(alpha), lam, sig, norm, n_feas)


# ---------------------------------------------------------------------------
# monitors
# ---------------------------------------------------------------------------

@dataclass
class Theorem1Report:
    precondition: bool
    invariance: bool
    entered: bool
    entry_time: Optional[int]
    entry_bound: int
    persistence: bool
    max_jump: float
    lambda_bound: float
    violations: List[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.precondition and self.invariance and self.entered and self.persistence

    @property
    def verdict(self) -> str:
        if not self.precondition:
            return "precondition-failure"
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict, "precondition": self.precondition, "invariance": self.invariance,
            "entered": self.entered, "entry_time": self.entry_time, "entry_bound": self.entry_bound,
            "persistence": self.persistence, "max_jump": self.max_jump, "lambda_bound": self.lambda_bound,
            "violations": self.violations,
        }


def entry_bound(beta: float, alpha: float, rho: float, slack: int = 5) -> int:
    if beta <= alpha:
        return slack
    return int(math.ceil(math.log(alpha / beta) / math.log(rho))) + slack


def verify_theorem1(log: TrajectoryLog, constants: RobustnessConstants, beta: float) -> Theorem1Report:
    """Check level-set invariance, finite entry into level alpha, and persistence."""
    norm = NORMS[constants.norm]
    jumps = jump_sizes(log.previews, norm=norm) if len(log.previews) > 1 else np.zeros(0)
    max_jump = float(jumps.max(initial=0.0))
    lam_bound = constants.lambda_bound()
    tol = 1e-6 * beta
    alpha, rho = constants.alpha, constants.rho
    pre = max_jump <= lam_bound + 1e-12 and bool(log.V[0] <= beta + tol) and beta >= alpha
    V = log.V
    viol = [k for k in range(len(V) - 1)
            if not (V[k + 1] <= max(rho * V[k], alpha) + tol and V[k + 1] <= beta + tol)]
    inside = np.nonzero(V <= alpha + tol)[0]
    entry = int(inside[0]) if inside.size else None
    bound = entry_bound(beta, alpha, rho)
    entered = entry is not None and entry <= bound
    persist = entry is not None and bool(np.all(V[entry:] <= alpha + tol))
    return Theorem1Report(pre, not viol, entered, entry, bound, persist, max_jump, lam_bound, viol)


# ---------------------------------------------------------------------------
# two coupled subsystems
# ---------------------------------------------------------------------------

@dataclass
class SubsystemSpec:
    """Subsystem ``x_i+ = A_ii x_i + B_i u_i + A_ij x_j``; ``cfg`` holds ``A_ii``, ``B_i``."""

    cfg: HorizonConfig
    coupling: np.ndarray
    x0: np.ndarray


def run_distributed_demo(sub1: SubsystemSpec, sub2: SubsystemSpec, K: int = 30):
    """Sequential protocol: controller 1 plans with a zero preview and publishes its
    predicted states; controller 2 uses ``A_21`` times those states as its preview.

    Returns the two logs; ``log2.notes`` holds the preview change per step.
    """
    c1, c2 = sub1.cfg, sub2.cfg
    N = c1.N
    if c2.N != N:
        raise ValueError("both controllers need the same horizon")
    x1, x2 = np.asarray(sub1.x0, float), np.asarray(sub2.x0, float)
    rec = {1: dict(x=[x1], u=[], w=[], p=[], V=[], f=[]), 2: dict(x=[x2], u=[], w=[], p=[], V=[], f=[])}
    prev2 = None
    jumps = []
    for k in range(K):
        w1 = DisturbanceSequence.zeros(c1.plant.n, N)
        s1 = solve_ocp(x1, w1, c1)
        if s1.feasible:
            u1, pred1 = s1.u_seq[0], s1.x_seq[:N]
        else:
            u1 = np.zeros(c1.plant.m)
            pred1 = np.tile(x1, (N, 1))
        raw = pred1 @ sub2.coupling.T
        w2 = project_sequence(raw, c2.sets) if not DisturbanceSequence(raw).is_admissible(c2.sets) else DisturbanceSequence(raw)
        if prev2 is not None:
            jumps.append(seq_norm(w2.entries - prev2.tail().entries))
        prev2 = w2
        s2 = solve_ocp(x2, w2, c2)
        u2 = s2.u_seq[0] if s2.feasible else np.zeros(c2.plant.m)
        d1 = sub1.coupling @ x2
        d2 = sub2.coupling @ x1
        x1n = c1.plant.step(x1, u1, d1)
        x2n = c2.plant.step(x2, u2, d2)
        for i, (u, d, p, s, xn) in ((1, (u1, d1, w1, s1, x1n)), (2, (u2, d2, w2, s2, x2n))):
            rec[i]["u"].append(np.atleast_1d(u))
            rec[i]["w"].append(d)
            rec[i]["p"].append(p)
            rec[i]["V"].append(s.value)
            rec[i]["f"].append(s.feasible)
            rec[i]["x"].append(xn)
        x1, x2 = x1n, x2n
    logs = []
    for i, c in ((1, c1), (2, c2)):
        r = rec[i]
        logs.append(TrajectoryLog(
            x=np.array(r["x"]), u=np.array(r["u"]).reshape(K, c.plant.m), w_applied=np.array(r["w"]).reshape(K, c.plant.n),
            previews=r["p"], V=np.array(r["V"]), feasible=np.array(r["f"], dtype=bool),
        ))
    logs[1].notes = [f"preview change {j:.6g}" for j in jumps]
    return logs[0], logs[1]
