"""Command-line interface: ``preview-mpc <synth|simulate|sets|verify> --config FILE``.

Exit codes: 0 success, 1 parse/usage error, 2 synthesis failure,
3 infeasible initial state, 4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import polytope as pt
from .mpc import controllability_sets, infeasibility_report, is_feasible
from .scenario import ScenarioConfig, ScenarioError, load_scenario
from .sim import compute_constants, lambda_report, level_set, roa_union, run_closed_loop
from .svg import PALETTE, Figure
from .terminal import SynthesisError, equilibrium, ingredients_to_dict, translated_terminal_set
from . import verify as vf

EXIT_OK, EXIT_PARSE, EXIT_SYNTH, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3, 4

LAMBDA_NOTE = (
    "the reference value does not state its norm or pairing; the maxima above are over "
    "consecutive scripted pairs (cyclic) of |w(k+1) - tail(w(k))| on the stacked preview"
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def _dump(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def _finite(v):
    return v if math.isfinite(v) else None


def _indices(spec: Optional[str], count: int) -> List[int]:
    if spec is None:
        return list(range(count))
    out = []
    for part in spec.split(","):
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    bad = [i for i in out if not 0 <= i < count]
    if bad:
        raise ScenarioError(f"preview index out of range: {bad}")
    return out


def _outdir(args, sc: ScenarioConfig) -> Path:
    return Path(args.out or sc.output_dir)


def _figure(sc: ScenarioConfig, title: str) -> Figure:
    g = sc.grid()
    return Figure(g.lo, g.hi, title)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args, sc: ScenarioConfig) -> int:
    ing = sc.ingredients
    out = _outdir(args, sc)
    p1 = vf.prop1_suite(ing, args.samples, args.seed)
    ref = sc.reference
    computed = {"alpha_x": ing.alpha_x, "alpha_u": ing.alpha_u, "beta_x": ing.beta_x, "beta_u": ing.beta_u}
    report = {
        "gain": ing.gain_label,
        "K_f": ing.K_f.tolist(),
        "constants": computed,
        "reference": {k: ref.get(k) for k in computed},
        "sums": {"alpha_x+beta_x": ing.alpha_x + ing.beta_x, "alpha_u+beta_u": ing.alpha_u + ing.beta_u},
        "determination_index": ing.determination_index,
        "terminal_set_rows": ing.Xf_bar.n_constraints,
        "prop1": {"passed": p1["passed"], "checks": [
            {k: c[k] for k in ("w_f", "invariance", "descent", "admissibility", "convergence")} for c in p1["checks"]]},
    }
    if sc.sequences:
        report["lambda"] = lambda_report(sc.sequences, cyclic=sc.schedule_mode == "scripted")
        report["lambda_reference"] = ref.get("lambda")
        report["lambda_note"] = LAMBDA_NOTE
    _dump(ingredients_to_dict(ing), out / "ingredients.json")
    _dump(report, out / "synth_report.json")
    print(f"gain ({ing.gain_label}): K_f = {np.array2string(ing.K_f.ravel(), precision=6)}")
    print(f"{'constant':<10}{'computed':>12}{'reference':>12}")
    for k, v in computed.items():
        r = ref.get(k)
        print(f"{k:<10}{v:>12.6f}{'' if r is None else format(r, '>12.4f')}")
    print(f"alpha_x + beta_x = {ing.alpha_x + ing.beta_x:.12g}, alpha_u + beta_u = {ing.alpha_u + ing.beta_u:.12g}")
    print(f"terminal set: {ing.Xf_bar.n_constraints} facets, determined at index {ing.determination_index}")
    if "lambda" in report:
        lam = report["lambda"]
        print("lambda: " + ", ".join(f"{k}-norm {v:.4f}" for k, v in lam.items())
              + (f" (reference {ref['lambda']})" if "lambda" in ref else ""))
        print(f"  note: {LAMBDA_NOTE}")
    print(f"terminal conditions at {len(p1['checks'])} disturbance points: {'pass' if p1['passed'] else 'FAIL'}")
    print(f"wrote {out / 'ingredients.json'} and {out / 'synth_report.json'}")
    return EXIT_OK


def _parse_x0(text: str, n: int) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise ScenarioError(f"--x0 must be comma-separated numbers: {exc}") from exc
    if v.size != n:
        raise ScenarioError(f"--x0 needs {n} entries")
    return v


def cmd_simulate(args, sc: ScenarioConfig) -> int:
    cfg = sc.horizon_config
    mode = args.mode or sc.schedule_mode
    sched_mode = "scripted" if mode == "nominal-baseline" else mode
    if mode == "nominal-baseline":
        cfg = sc.baseline_config
    schedule = sc.schedule(sched_mode, args.seed)
    x0s = [_parse_x0(args.x0, sc.plant.n)] if args.x0 else (sc.x0 or [np.zeros(sc.plant.n)])
    steps = args.steps or sc.steps
    out = _outdir(args, sc)
    w0 = schedule.generate(0)[0]
    for i, x0 in enumerate(x0s):
        if not is_feasible(x0, w0, cfg):
            rep = infeasibility_report(x0, w0, cfg)
            print(f"initial state {x0.tolist()} is infeasible: violated {', '.join(rep['rows']) or 'constraints'} "
                  f"(relaxation needed {rep['relaxation']:.6g})", file=sys.stderr)
            return EXIT_INFEASIBLE
    logs = []
    out.mkdir(parents=True, exist_ok=True)
    for i, x0 in enumerate(x0s):
        log = run_closed_loop(x0, schedule, cfg, steps, sc.beta)
        log.to_csv(out / f"trajectory_{i}.csv")
        logs.append(log)
        print(f"run {i}: x0 = {x0.tolist()}, {int(log.feasible.sum())}/{log.K} feasible, "
              f"max V = {np.max(log.V[np.isfinite(log.V)], initial=0.0):.6g}, "
              f"final x = {np.round(log.x[-1], 6).tolist()}")
    if sc.plant.n == 2:
        fig = _figure(sc, f"closed-loop trajectories ({mode})")
        fig.polygon(pt.vertices_2d(sc.sets.X), "#999999", "X", 0.03)
        if args.levelsets:
            lv = {}
            for j, w in enumerate(sc.schedule("scripted").reachable()):
                ls = level_set(w, sc.beta, sc.grid(), cfg)
                lv[str(j)] = ls.to_dict()
                for b in ls.boundary:
                    fig.polyline(b, PALETTE[j % len(PALETTE)], f"level set, preview {j}", 1.0)
            _dump(lv, out / "levelsets.json")
        for i, log in enumerate(logs):
            fig.polyline(log.x, "#000000", "trajectory", 1.2)
            fig.points(log.x[:1], "#000000")
        fig.save(out / "trajectories.svg")
    print(f"wrote {len(logs)} trajectory CSV file(s) to {out}")
    return EXIT_OK


def cmd_sets(args, sc: ScenarioConfig) -> int:
    cfg = sc.horizon_config
    out = _outdir(args, sc)
    beta = sc.beta if args.beta is None else args.beta
    seqs = sc.sequences or [sc.schedule().initial]
    idx = _indices(args.w_index, len(seqs))
    fig = _figure(sc, f"{args.which} sets") if sc.plant.n == 2 else None
    data = {"which": args.which}
    if args.which == "terminal":
        ing = sc.ingredients
        data["Xf_bar"] = ing.Xf_bar.to_dict()
        data["translated"] = {}
        for i in idx:
            w_f = seqs[i].w_f
            S = translated_terminal_set(ing, w_f)
            data["translated"][str(i)] = {"w_f": w_f.tolist(), "x_f": equilibrium(ing, w_f).x_f.tolist(), "set": S.to_dict()}
            if fig:
                fig.polygon(pt.vertices_2d(S), PALETTE[i % len(PALETTE)], f"terminal set, preview {i}")
        if fig:
            fig.polygon(pt.vertices_2d(ing.Xf_bar), "#000000", "nominal terminal set", 0.05)
    elif args.which == "controllability":
        data["sets"] = {}
        for i in idx:
            cs = controllability_sets(seqs[i], cfg)
            data["sets"][str(i)] = [s.to_dict() for s in cs]
            if fig and not cs[-1].empty:
                fig.polygon(pt.vertices_2d(cs[-1]), PALETTE[i % len(PALETTE)], f"feasible set, preview {i}")
    elif args.which == "levelset":
        data["beta"] = beta
        data["levelsets"] = {}
        for i in idx:
            ls = level_set(seqs[i], beta, sc.grid(), cfg)
            data["levelsets"][str(i)] = ls.to_dict()
            if fig:
                for b in ls.boundary:
                    fig.polyline(b, PALETTE[i % len(PALETTE)], f"level set, preview {i}")
    elif args.which == "roa":
        grid = sc.grid()
        union, parts = roa_union(sc.schedule("scripted"), beta, grid, cfg)
        base = level_set(seqs[0], beta, grid, sc.baseline_config)
        data.update({
            "beta": beta, "union_mask": union.astype(int).tolist(),
            "union_area": float(union.sum()) * grid.cell_area, "baseline_area": base.area,
            "union_cells": int(union.sum()), "baseline_cells": int(base.inside.sum()),
            "baseline": base.to_dict(),
        })
        print(f"union of level sets: {int(union.sum())} cells (area {data['union_area']:.4g}); "
              f"conventional controller: {int(base.inside.sum())} cells (area {base.area:.4g})")
        if fig:
            for j, ls in enumerate(parts):
                for b in ls.boundary:
                    fig.polyline(b, PALETTE[j % len(PALETTE)], f"level set, preview {j}", 1.0)
            for b in base.boundary:
                fig.polyline(b, "#000000", "conventional MPC", 2.0)
    _dump(data, out / f"sets_{args.which}.json")
    if fig:
        fig.save(out / f"sets_{args.which}.svg")
    print(f"wrote {out / f'sets_{args.which}.json'}")
    return EXIT_OK


def cmd_verify(args, sc: ScenarioConfig) -> int:
    cfg = sc.horizon_config
    suites = ["prop1", "prop2", "prop3", "thm1"] if args.suite == "all" else [args.suite]
    result = {}
    constants = None
    if any(s in ("prop3", "thm1") for s in suites):
        constants = compute_constants(cfg, sc.sequences, seed=args.seed, schedule=sc.sequences or None)
        result["constants"] = constants.to_dict()
    for s in suites:
        if s == "prop1":
            result[s] = vf.prop1_suite(sc.ingredients, args.samples, args.seed)
        elif s == "prop2":
            rf = vf.recursive_feasibility(cfg, args.trials, args.seed)
            grid = vf.GridSpec.around(sc.sets.X, sc.grid_inflate, 31, 31)
            nest = vf.nesting_checks(cfg, (sc.sequences or [sc.schedule().initial])[:2], grid)
            result[s] = {"recursive_feasibility": rf, "nesting": nest, "passed": rf["passed"] and nest["passed"]}
        elif s == "prop3":
            result[s] = vf.prop3_suite(cfg, constants, args.runs, seed=args.seed)
        elif s == "thm1":
            if args.schedule == "scenario":
                result[s] = vf.theorem1_monitor(cfg, constants, sc.schedule(), sc.x0, sc.beta, sc.steps)
            else:
                result[s] = vf.theorem1_suite(cfg, constants, runs=args.runs, seed=args.seed)
    passed = all(result[s]["passed"] for s in suites)
    result["passed"] = passed
    out = _outdir(args, sc)
    _dump(result, out / f"verify_{args.suite}.json")
    for s in suites:
        verdict = result[s].get("verdict") or ("pass" if result[s]["passed"] else "fail")
        print(f"{s}: {verdict}")
    print(f"wrote {out / f'verify_{args.suite}.json'}")
    return EXIT_OK if passed else EXIT_VERIFY


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="preview-mpc", description="MPC with disturbance preview: synthesis, simulation, sets, verification")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="scenario JSON file (default: shipped example)")
        sp.add_argument("--out", help="output directory (default: scenario output_dir)")
        sp.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("synth", help="terminal ingredients and constants report")
    common(s)
    s.add_argument("--samples", type=int, default=1000)

    s = sub.add_parser("simulate", help="closed-loop simulation")
    common(s)
    s.add_argument("--x0", help="initial state, comma separated")
    s.add_argument("--steps", type=int)
    s.add_argument("--mode", choices=["scripted", "tail", "random-delta", "nominal-baseline"])
    s.add_argument("--levelsets", action="store_true", help="overlay level-set boundaries")

    s = sub.add_parser("sets", help="export sets")
    common(s)
    s.add_argument("--which", required=True, choices=["controllability", "terminal", "roa", "levelset"])
    s.add_argument("--beta", type=float)
    s.add_argument("--w-index", dest="w_index", help="preview indices, e.g. 0..4 or 0,2")

    s = sub.add_parser("verify", help="executable stability checks")
    common(s)
    s.add_argument("--suite", choices=["prop1", "prop2", "prop3", "thm1", "all"], default="all")
    s.add_argument("--trials", type=int, default=500)
    s.add_argument("--runs", type=int, default=20)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--schedule", choices=["random-delta", "scenario"], default="random-delta",
                   help="preview changes monitored by the thm1 suite")
    return p


COMMANDS = {"synth": cmd_synth, "simulate": cmd_simulate, "sets": cmd_sets, "verify": cmd_verify}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.config)
        return COMMANDS[args.command](args, sc)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SynthesisError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_SYNTH


if __name__ == "__main__":
    sys.exit(main())
