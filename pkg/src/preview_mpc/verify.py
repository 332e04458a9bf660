"""Executable checks of the stability results, shared by the CLI and the test-suite."""
from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

import numpy as np

from . import polytope as pt
from .mpc import DisturbanceSequence, HorizonConfig, is_feasible, solve_ocp, value
from .sim import (
    GridSpec,
    RobustnessConstants,
    Schedule,
    entry_bound,
    jump_sizes,
    random_sequence,
    run_closed_loop,
    verify_theorem1,
    NORMS,
)
from .terminal import TerminalIngredients, equilibrium, stage_cost, verify_proposition1


def prop1_suite(ing: TerminalIngredients, n_samples: int = 1000, seed: int = 0) -> dict:
    """Terminal conditions at every vertex of ``W_f`` (and at 0 when it belongs to ``W_f``)."""
    points = [v for v in pt.vertices(ing.sets.W_f)]
    zero = np.zeros(ing.plant.n)
    if ing.sets.W_f.contains(zero) and not any(np.allclose(v, zero) for v in points):
        points.append(zero)
    checks = []
    for w_f in points:
        r = verify_proposition1(ing, w_f, n_samples, seed)
        checks.append({"w_f": np.round(w_f, 12).tolist(), **r.to_dict()})
    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def _random_feasible(cfg: HorizonConfig, rng, max_tries: int = 10000):
    lo, hi = pt.bounding_box(cfg.sets.X)
    for _ in range(max_tries):
        w = random_sequence(cfg.sets, cfg.N, rng)
        x = lo + rng.random(lo.size) * (hi - lo)
        if is_feasible(x, w, cfg):
            return x, w
    raise RuntimeError("could not find a feasible sample")


def recursive_feasibility(cfg: HorizonConfig, trials: int = 500, seed: int = 0) -> dict:
    """Successor feasibility and cost descent under tail updates from random feasible pairs."""
    rng = np.random.default_rng(seed)
    fails, descent_fails, worst = 0, 0, -math.inf
    for _ in range(trials):
        x, w = _random_feasible(cfg, rng)
        sol = solve_ocp(x, w, cfg)
        u = sol.u_seq[0]
        xn = cfg.plant.step(x, u, w.head)
        Vn = value(xn, w.tail(), cfg)
        if not math.isfinite(Vn):
            fails += 1
            continue
        gap = Vn - sol.value + stage_cost(x, u, w.w_f, cfg.ingredients)
        worst = max(worst, gap)
        if gap > 1e-6:
            descent_fails += 1
    return {
        "trials": trials, "feasibility_failures": fails, "descent_failures": descent_fails,
        "worst_descent_gap": worst, "passed": fails == 0 and descent_fails == 0,
    }


def _shorter(cfg: HorizonConfig) -> HorizonConfig:
    return dataclasses.replace(cfg, N=cfg.N - 1)


def union_masks(cfg: HorizonConfig, w0: DisturbanceSequence, grid: GridSpec, steps: int,
                drop: int = 0) -> np.ndarray:
    """Grid mask of the union over ``k <= steps`` of feasible sets along the tail orbit of ``w0``.

    ``drop`` removes that many leading entries (and horizon steps), giving the
    unions of the shorter-horizon sets.
    """
    c = cfg
    for _ in range(drop):
        c = _shorter(c)
    pts = grid.points()
    mask = np.zeros(len(pts), dtype=bool)
    w = w0
    for _ in range(steps + 1):
        wk = DisturbanceSequence(w.entries[drop:])
        todo = np.nonzero(~mask)[0]
        for i in todo:
            if is_feasible(pts[i], wk, c):
                mask[i] = True
        w = w.tail()
    return mask


def nesting_checks(cfg: HorizonConfig, previews: Sequence[DisturbanceSequence], grid: GridSpec) -> dict:
    """Union nesting (horizon N-1 inside N) and finite determination (k <= N vs k <= N+3)."""
    out = []
    N = cfg.N
    for w0 in previews:
        full = union_masks(cfg, w0, grid, N)
        longer = union_masks(cfg, w0, grid, N + 3)
        short = union_masks(cfg, w0, grid, N, drop=1) if N > 1 else full
        out.append({
            "nested": bool(np.all(~short | full)),
            "finitely_determined": bool(np.array_equal(full, longer)),
            "union_points": int(full.sum()), "shorter_union_points": int(short.sum()),
        })
    return {"passed": all(c["nested"] and c["finitely_determined"] for c in out), "previews": out}


def prop3_suite(cfg: HorizonConfig, constants: RobustnessConstants, runs: int = 20, steps: int = 30,
                seed: int = 0) -> dict:
    """Exponential envelopes for tail-update runs from random feasible starts."""
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(runs):
        x0, w0 = _random_feasible(cfg, rng)
        log = run_closed_loop(x0, Schedule.tail_update(w0), cfg, steps)
        xf = equilibrium(cfg.ingredients, w0.w_f, check=False).x_f
        k = np.arange(steps)
        v_gap = float(np.max(log.V - constants.gamma ** k * log.V[0]))
        e = np.linalg.norm(log.x[:steps] - xf, axis=1)
        x_gap = float(np.max(e - constants.c * constants.delta ** k * e[0]))
        results.append({
            "x0": x0.round(12).tolist(), "all_feasible": bool(log.feasible.all()),
            "value_gap": v_gap, "state_gap": x_gap,
            "passed": bool(log.feasible.all()) and v_gap <= 1e-6 and x_gap <= 1e-6,
        })
    return {"passed": all(r["passed"] for r in results), "runs": results}


def theorem1_suite(cfg: HorizonConfig, constants: RobustnessConstants, beta: Optional[float] = None,
                   alpha_fraction: float = 0.25, runs: int = 20, seed: int = 0,
                   max_halvings: int = 40) -> dict:
    """Random preview changes shrunk until their jumps respect the rate bound.

    ``beta`` defaults to the certified level in ``constants``; the target level
    is ``alpha_fraction * beta``.  Starts are random pairs with cost at most
    ``beta``.
    """
    beta = constants.alpha if beta is None else float(beta)
    c = dataclasses.replace(constants, alpha=alpha_fraction * beta)
    bound = c.lambda_bound()
    K = entry_bound(beta, c.alpha, c.rho) + 10
    rng = np.random.default_rng(seed)
    starts = []
    while len(starts) < runs:
        x, w = _random_feasible(cfg, rng)
        if value(x, w, cfg) <= beta:
            starts.append((x, w))
    norm = NORMS[c.norm]
    scale = 1.0
    # preview jumps do not depend on the state, so shrink using the schedules alone
    for _ in range(max_halvings):
        delta = pt.scale(cfg.sets.W, scale)
        scheds = [Schedule.random_delta(w, delta, cfg.sets, seed + i) for i, (_, w) in enumerate(starts)]
        jump = max(float(jump_sizes(s.generate(K), norm=norm).max(initial=0.0)) for s in scheds)
        if jump <= bound:
            break
        scale *= 0.5
    logs = [run_closed_loop(x, sch, cfg, K, beta) for (x, _), sch in zip(starts, scheds)]
    reports = [verify_theorem1(lg, c, beta) for lg in logs]
    return {
        "beta": beta, "alpha": c.alpha, "rho": c.rho, "gamma": c.gamma, "lambda_bound": bound,
        "delta_scale": scale, "max_jump": jump, "steps": K,
        "verdict": _verdict(reports), "passed": all(r.passed for r in reports),
        "runs": [r.to_dict() for r in reports],
    }


def _verdict(reports) -> str:
    if not all(r.precondition for r in reports):
        return "precondition-failure"
    return "pass" if all(r.passed for r in reports) else "fail"


def theorem1_monitor(cfg: HorizonConfig, constants: RobustnessConstants, schedule: Schedule,
                     x0s, beta: float, steps: int, alpha_fraction: float = 0.25) -> dict:
    """Monitor the invariance and entry claims along a given schedule.

    Runs whose preview jumps exceed the rate bound get a precondition-failure
    verdict rather than a theorem failure.
    """
    c = dataclasses.replace(constants, alpha=alpha_fraction * beta)
    reports = [verify_theorem1(run_closed_loop(x0, schedule, cfg, steps, beta), c, beta) for x0 in x0s]
    verdict = _verdict(reports)
    return {
        "beta": beta, "alpha": c.alpha, "lambda_bound": c.lambda_bound(), "verdict": verdict,
        "passed": verdict == "pass", "runs": [r.to_dict() for r in reports],
    }
