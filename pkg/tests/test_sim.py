import dataclasses
import math

import numpy as np
import pytest

from preview_mpc.mpc import DisturbanceSequence, HorizonConfig
from preview_mpc.polytope import HPolytope
from preview_mpc.sim import (
    INFEASIBLE,
    INSIDE,
    GridSpec,
    Schedule,
    SigmaEnvelope,
    SubsystemSpec,
    certified_level,
    entry_bound,
    jump_sizes,
    lambda_report,
    level_set,
    project_sequence,
    random_sequence,
    run_closed_loop,
    run_distributed_demo,
    sigma_envelope,
    verify_theorem1,
)
from preview_mpc.terminal import ConstraintSpec, PlantModel, synth_nominal


def test_tail_schedule(scenario):
    w0 = scenario.sequences[0]
    seqs = Schedule.tail_update(w0).generate(4)
    assert len(seqs) == 5
    assert seqs[1] == w0.tail() and seqs[4] == DisturbanceSequence.constant(w0.w_f, 3)
    assert np.all(jump_sizes(seqs) == 0.0)


def test_scripted_schedule_cycles(scenario):
    seqs = Schedule.scripted(scenario.sequences).generate(11)
    assert seqs[5] == seqs[0] and seqs[11] == seqs[1]
    assert len(Schedule.scripted(scenario.sequences).reachable()) == 5


def test_scripted_lambda_by_hand(scenario):
    # largest jump: tail(.9,-.9,-.9) = (-.9,-.9,-.9) against (.9,.9,.9), i.e. six
    # stacked components of size 1.8
    lam = lambda_report(scenario.sequences, cyclic=True)
    assert lam["inf"] == pytest.approx(1.8)
    jumps = jump_sizes(scenario.sequences, cyclic=True, norm=2)
    assert len(jumps) == 5
    assert lam["2"] == pytest.approx(max(jumps))
    assert lam["2"] == pytest.approx(math.sqrt(6) * 1.8)
    assert lam["1"] == pytest.approx(6 * 1.8)


def test_random_delta_stays_admissible(scenario):
    sched = Schedule.random_delta(scenario.sequences[0], 0.2 * scenario.sets.W, scenario.sets, seed=4)
    seqs = sched.generate(30)
    assert all(s.is_admissible(scenario.sets) for s in seqs)
    assert sched.generate(30) == seqs


def test_random_and_projected_sequences(scenario):
    rng = np.random.default_rng(0)
    assert random_sequence(scenario.sets, 3, rng).is_admissible(scenario.sets)
    p = project_sequence(np.array([[3.0, 3.0], [1.0, -1.0], [0.0, 0.0]]), scenario.sets)
    assert np.allclose(p.entries, [[2, 2], [0, 0], [0, 0]])


def test_schedule_validation(scenario):
    with pytest.raises(ValueError):
        Schedule("scripted", scenario.sequences[0])
    with pytest.raises(ValueError):
        Schedule("random-delta", scenario.sequences[0])
    with pytest.raises(ValueError):
        Schedule("bogus", scenario.sequences[0])


def test_closed_loop_applies_preview_head(scenario, cfg):
    log = run_closed_loop([1.0, 1.0], Schedule.scripted(scenario.sequences), cfg, 12, 100.0)
    assert log.K == 12 and log.x.shape == (13, 2)
    for k in range(12):
        assert np.allclose(log.x[k + 1], cfg.plant.step(log.x[k], log.u[k], log.previews[k].head))
    assert log.feasible.all() and np.all(np.abs(log.u) <= 3 + 1e-9)


def test_infeasible_steps_are_logged(scenario, cfg):
    log = run_closed_loop([9.8, 9.8], Schedule.tail_update(scenario.sequences[0]), cfg, 3)
    assert not log.feasible[0] and math.isinf(log.V[0])
    assert log.notes and "Infeasible" in log.notes[0]


def test_csv_columns(scenario, cfg, tmp_path):
    log = run_closed_loop([1.9, 2.5], Schedule.scripted(scenario.sequences), cfg, 3, 100.0)
    text = log.to_csv(tmp_path / "t.csv")
    header = text.splitlines()[0].split(",")
    assert header == ["k", "x1", "x2", "u1", "w1", "w2", "V", "feasible", "in_level_set",
                      "p0_1", "p0_2", "p1_1", "p1_2", "p2_1", "p2_2"]
    assert len(text.splitlines()) == 4
    assert (tmp_path / "t.csv").read_text() == text


def test_level_set_mask(scenario, cfg):
    grid = GridSpec.around(scenario.sets.X, 0.05, 15, 15)
    ls = level_set(scenario.sequences[0], 100.0, grid, cfg, workers=1)
    assert ls.mask.shape == (15, 15)
    assert np.all(ls.values[ls.mask == INSIDE] <= 100.0)
    assert np.all(np.isinf(ls.values[ls.mask == INFEASIBLE]))
    assert ls.area == pytest.approx(ls.inside.sum() * grid.cell_area)
    with pytest.raises(ValueError):
        level_set(scenario.sequences[0], 0.0, grid, cfg)


def test_parallel_grid_matches_serial(scenario, cfg):
    grid = GridSpec.around(scenario.sets.X, 0.05, 15, 15)
    a = level_set(scenario.sequences[1], 50.0, grid, cfg, workers=1)
    b = level_set(scenario.sequences[1], 50.0, grid, cfg, workers=2)
    assert np.array_equal(a.values, b.values)


def test_sigma_envelope_is_monotone():
    s = SigmaEnvelope(np.array([0.1, 0.5, 1.0]), np.array([1.0, 2.0, 6.0]))
    rs = np.linspace(0, 2, 50)
    vals = [s(r) for r in rs]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))
    y = 1.5
    assert s(s.inverse(y)) <= y + 1e-12
    assert s.inverse(100.0) == math.inf


def test_sampled_envelope_bounds_its_own_samples(cfg):
    env = sigma_envelope(cfg, 30, np.random.default_rng(0))
    assert env.d.size == 30
    assert all(env(d) >= dv - 1e-12 for d, dv in zip(env.d, env.dv))


def test_constants_are_consistent(constants):
    assert constants.c1 <= constants.c2 <= constants.c3
    assert 0 < constants.gamma < constants.rho < 1
    assert constants.delta == pytest.approx(math.sqrt(constants.gamma))
    assert constants.lambda_bound() > 0
    assert constants.lambda_["inf"] == pytest.approx(1.8)


def test_certified_level_below_boundary_costs(scenario, cfg):
    grid = GridSpec.around(scenario.sets.X, 0.05, 15, 15)
    lvl = certified_level(cfg, scenario.sequences[:2], grid, margin=0.1, workers=1)
    assert 0 < lvl < math.inf


def test_entry_bound():
    assert entry_bound(10.0, 1.0, 0.5) == math.ceil(math.log(0.1) / math.log(0.5)) + 5
    assert entry_bound(1.0, 1.0, 0.5) == 5


def test_theorem_monitor_flags_large_jumps(scenario, cfg, constants):
    beta = constants.alpha
    c = dataclasses.replace(constants, alpha=0.25 * beta)
    log = run_closed_loop([1.0, 1.0], Schedule.scripted(scenario.sequences), cfg, 10, beta)
    assert verify_theorem1(log, c, beta).verdict == "precondition-failure"
    # tail updates never jump, so the claims must hold outright
    log = run_closed_loop([0.5, 0.5], Schedule.tail_update(scenario.sequences[1]), cfg, 40, beta)
    assert verify_theorem1(log, c, beta).verdict == "pass"


def test_distributed_demo_runs():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.5], [1.0]])
    plant = PlantModel(A, B)
    W = HPolytope.norm_ball_inf(2, 0.3)
    sets = ConstraintSpec(HPolytope.norm_ball_inf(2, 10.0), HPolytope.from_box([-3], [3]), W)
    ing = synth_nominal(plant, sets, np.eye(2), np.eye(1), "deadbeat")
    cfg = HorizonConfig(3, plant, sets, ing)
    coupling = 0.02 * np.eye(2)
    log1, log2 = run_distributed_demo(SubsystemSpec(cfg, coupling, np.array([2.0, 0.0])),
                                      SubsystemSpec(cfg, coupling, np.array([-2.0, 1.0])), K=20)
    assert log1.feasible.all() and log2.feasible.all()
    assert np.linalg.norm(log1.x[-1]) < 0.1 and np.linalg.norm(log2.x[-1]) < 0.1
    assert len(log2.notes) == 19
