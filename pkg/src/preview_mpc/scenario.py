"""JSON scenario files: parsing, validation and construction of the model objects.

Schema (all keys except ``plant``, ``sets``, ``weights`` optional)::

    {
      "plant":   {"A": [[...]], "B": [[...]]},
      "sets":    {"X": SET, "U": SET, "W": SET, "W_f": SET},
      "weights": {"Q": [[...]], "S": [[...]]},
      "horizon": 3,
      "gain": "deadbeat" | "lqr" | [[...]],          # u = K_f x
      "beta_x": 0.65, "beta_u": 0.33,                # default 1 - alpha
      "schedule": {"mode": "scripted" | "tail" | "random-delta",
                   "direction": [1, 1],              # scalar entries s mean s * direction
                   "sequences": [[...], ...],        # scripted cycle, or first item = initial preview
                   "delta_scale": 0.1, "seed": 0},
      "steps": 50, "beta": 100, "x0": [[...], ...],
      "grid": {"nx": 101, "ny": 101, "inflate": 0.05},
      "seed": 0, "output_dir": "out",
      "reference": {...}                             # constants to print alongside computed ones
    }

``SET`` is ``{"box": [lb, ub]}`` or ``{"G": [[...]], "g": [...]}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import polytope as pt
from .mpc import DisturbanceSequence, HorizonConfig, baseline_nominal
from .polytope import HPolytope
from .sim import GridSpec, Schedule
from .terminal import ConstraintSpec, PlantModel, TerminalIngredients, synth_nominal


class ScenarioError(ValueError):
    pass


DEFAULT_SCENARIO = "example_v.json"


def default_scenario_path() -> Path:
    return Path(str(resources.files("preview_mpc") / "scenarios" / DEFAULT_SCENARIO))


def _parse_set(spec, name) -> HPolytope:
    if not isinstance(spec, dict):
        raise ScenarioError(f"set {name} must be an object")
    try:
        return HPolytope.from_dict(spec)
    except (KeyError, ValueError, TypeError) as exc:
        raise ScenarioError(f"set {name}: {exc}") from exc


def _matrix(v, name) -> np.ndarray:
    try:
        M = np.atleast_2d(np.asarray(v, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{name} is not a numeric matrix") from exc
    if not np.all(np.isfinite(M)):
        raise ScenarioError(f"{name} has non-finite entries")
    return M


def _sequence(item, direction, n, N, name) -> DisturbanceSequence:
    arr = np.asarray(item, dtype=float)
    if arr.ndim == 1:
        if direction is None:
            if n != 1:
                raise ScenarioError(f"{name}: scalar entries need a 'direction'")
            direction = [1.0]
        seq = DisturbanceSequence.from_scalars(arr, direction)
    else:
        seq = DisturbanceSequence(arr)
    if seq.N != N or seq.n != n:
        raise ScenarioError(f"{name}: expected {N} entries of size {n}, got {seq.entries.shape}")
    return seq


@dataclass
class ScenarioConfig:
    plant: PlantModel
    sets: ConstraintSpec
    N: int
    Q: np.ndarray
    S: np.ndarray
    gain: object = "lqr"
    beta_x: Optional[float] = None
    beta_u: Optional[float] = None
    schedule_mode: str = "scripted"
    sequences: List[DisturbanceSequence] = field(default_factory=list)
    delta_scale: float = 0.1
    steps: int = 50
    beta: float = 100.0
    x0: List[np.ndarray] = field(default_factory=list)
    grid_n: tuple = (101, 101)
    grid_inflate: float = 0.05
    seed: int = 0
    output_dir: str = "out"
    reference: dict = field(default_factory=dict)
    name: str = "scenario"

    @cached_property
    def ingredients(self) -> TerminalIngredients:
        return synth_nominal(self.plant, self.sets, self.Q, self.S, self.gain, self.beta_x, self.beta_u)

    @cached_property
    def horizon_config(self) -> HorizonConfig:
        return HorizonConfig(self.N, self.plant, self.sets, self.ingredients)

    @cached_property
    def baseline_config(self) -> HorizonConfig:
        return baseline_nominal(self.horizon_config)

    def schedule(self, mode: Optional[str] = None, seed: Optional[int] = None) -> Schedule:
        mode = mode or self.schedule_mode
        w0 = self.sequences[0] if self.sequences else DisturbanceSequence.zeros(self.plant.n, self.N)
        if mode == "scripted":
            return Schedule.scripted(self.sequences or [w0])
        if mode == "tail":
            return Schedule.tail_update(w0)
        if mode == "random-delta":
            delta = pt.scale(self.sets.W, self.delta_scale)
            return Schedule.random_delta(w0, delta, self.sets, self.seed if seed is None else seed)
        raise ScenarioError(f"unknown schedule mode {mode!r}")

    def grid(self) -> GridSpec:
        return GridSpec.around(self.sets.X, self.grid_inflate, *self.grid_n)


def parse_scenario(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    for key in ("plant", "sets", "weights"):
        if key not in data:
            raise ScenarioError(f"missing required key {key!r}")
    try:
        plant = PlantModel(_matrix(data["plant"]["A"], "A"), _matrix(data["plant"]["B"], "B"))
    except (KeyError, ValueError) as exc:
        raise ScenarioError(f"plant: {exc}") from exc
    s = data["sets"]
    for key in ("X", "U", "W"):
        if key not in s:
            raise ScenarioError(f"sets: missing {key}")
    X, U, W = (_parse_set(s[k], k) for k in ("X", "U", "W"))
    Wf = _parse_set(s["W_f"], "W_f") if "W_f" in s else None
    try:
        sets = ConstraintSpec(X, U, W, Wf)
        sets.check_plant(plant)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    n, m = plant.n, plant.m
    Q = _matrix(data["weights"].get("Q", np.eye(n)), "Q")
    S = _matrix(data["weights"].get("S", np.eye(m)), "S")
    if Q.shape != (n, n) or S.shape != (m, m):
        raise ScenarioError(f"weights must be {n}x{n} and {m}x{m}")
    N = int(data.get("horizon", 3))
    if N < 1:
        raise ScenarioError("horizon must be at least 1")
    gain = data.get("gain", "lqr")
    if not isinstance(gain, str):
        gain = _matrix(gain, "gain")
        if gain.shape != (m, n):
            raise ScenarioError(f"gain must be {m}x{n}")
    sch = data.get("schedule", {})
    direction = sch.get("direction")
    seqs = [_sequence(it, direction, n, N, f"schedule.sequences[{i}]") for i, it in enumerate(sch.get("sequences", []))]
    for i, q in enumerate(seqs):
        if not q.is_admissible(sets):
            raise ScenarioError(f"schedule.sequences[{i}] is not admissible")
    x0 = [np.asarray(v, dtype=float).ravel() for v in data.get("x0", [])]
    if any(v.size != n for v in x0):
        raise ScenarioError(f"initial states must have {n} entries")
    grid = data.get("grid", {})
    return ScenarioConfig(
        plant=plant, sets=sets, N=N, Q=Q, S=S, gain=gain,
        beta_x=data.get("beta_x"), beta_u=data.get("beta_u"),
        schedule_mode=sch.get("mode", "scripted"), sequences=seqs,
        delta_scale=float(sch.get("delta_scale", 0.1)),
        steps=int(data.get("steps", 50)), beta=float(data.get("beta", 100.0)), x0=x0,
        grid_n=(int(grid.get("nx", 101)), int(grid.get("ny", 101))),
        grid_inflate=float(grid.get("inflate", 0.05)), seed=int(data.get("seed", 0)),
        output_dir=str(data.get("output_dir", "out")), reference=dict(data.get("reference", {})),
        name=str(data.get("name", "scenario")),
    )


def load_scenario(path=None) -> ScenarioConfig:
    """Read a scenario file; ``None`` loads the shipped example."""
    path = default_scenario_path() if path is None else Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(data)
