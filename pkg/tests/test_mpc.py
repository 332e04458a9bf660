import dataclasses
import math

import numpy as np
import pytest

from preview_mpc import polytope as pt
from preview_mpc.mpc import (
    DisturbanceSequence,
    HorizonConfig,
    InfeasibleError,
    build_ocp,
    constraint_labels,
    control,
    controllability_sets,
    infeasibility_report,
    is_feasible,
    predict,
    solve_ocp,
    tail,
    trajectory_cost,
    value,
)
from preview_mpc.terminal import equilibrium


def test_sequence_semantics():
    w = DisturbanceSequence.from_scalars([0.9, -0.9, 0.3], [1, 1])
    assert w.N == 3 and w.n == 2
    assert np.allclose(w.head, [0.9, 0.9])
    assert np.allclose(tail(w).entries, [[-0.9, -0.9], [0.3, 0.3], [0.3, 0.3]])
    assert tail(w) == w.tail()
    assert hash(w) == hash(DisturbanceSequence(w.entries.copy()))
    with pytest.raises(ValueError):
        DisturbanceSequence(np.zeros((0, 2)))


def test_admissibility(scenario):
    assert all(s.is_admissible(scenario.sets) for s in scenario.sequences)
    assert not DisturbanceSequence.constant([1.0, -1.0], 3).is_admissible(scenario.sets)


def test_row_count(cfg):
    qp = build_ocp(np.zeros(2), DisturbanceSequence.zeros(2, 3), cfg)
    nf = cfg.ingredients.Xf_bar.n_constraints
    assert qp.G.shape == (3 * (4 + 2) + nf, 3)
    assert len(constraint_labels(cfg)) == qp.G.shape[0]


def test_horizon_one_matches_closed_form(scenario, ing):
    cfg = HorizonConfig(1, scenario.plant, scenario.sets, ing)
    w = DisturbanceSequence.constant([0.9, 0.9], 1)
    eq = equilibrium(ing, w.w_f)
    A, B = ing.plant.A, ing.plant.B
    Q, S, P = ing.weights.Q, ing.weights.S, ing.weights.P
    x = eq.x_f + np.array([0.05, -0.03])
    # unconstrained minimiser of l(x, u) + V_f(A x + B u + w)
    r = A @ x + w.head - eq.x_f
    u = -np.linalg.solve(S + B.T @ P @ B, B.T @ P @ r - S @ eq.u_f)
    assert ing.Xf_bar.contains(A @ x + B @ u + w.head - eq.x_f)
    sol = solve_ocp(x, w, cfg)
    assert np.allclose(sol.u_seq[0], u, atol=1e-9)
    dx, du = x - eq.x_f, u - eq.u_f
    x1 = A @ x + B @ u + w.head - eq.x_f
    V = dx @ Q @ dx + du @ S @ du + x1 @ P @ x1
    assert sol.value == pytest.approx(V, rel=1e-10)


def test_solution_is_locally_optimal(cfg, scenario):
    rng = np.random.default_rng(0)
    w = scenario.sequences[0]
    x = np.array([1.9, 2.5])
    sol = solve_ocp(x, w, cfg)
    qp = build_ocp(x, w, cfg)
    for _ in range(300):
        u = sol.u_seq.ravel() + 0.05 * rng.normal(size=3)
        if np.all(qp.G @ u <= qp.g):
            xs = predict(x, u.reshape(3, 1), w, cfg.plant)
            assert trajectory_cost(xs, u.reshape(3, 1), w.w_f, cfg.ingredients) >= sol.value - 1e-9


def test_determinism(cfg, scenario):
    w = scenario.sequences[3]
    a, b = solve_ocp([-3.0, 2.0], w, cfg), solve_ocp([-3.0, 2.0], w, cfg)
    assert np.array_equal(a.u_seq, b.u_seq) and a.value == b.value


def test_infeasible_state(cfg, scenario):
    w = scenario.sequences[0]
    x = np.array([9.5, 9.5])
    assert value(x, w, cfg) == math.inf
    assert not is_feasible(x, w, cfg)
    with pytest.raises(InfeasibleError):
        control(x, w, cfg)
    rep = infeasibility_report(x, w, cfg)
    assert not rep["feasible"] and rep["relaxation"] > 0 and rep["rows"]
    assert infeasibility_report(np.zeros(2), w, cfg)["feasible"]


def test_wrong_state_dimension(cfg):
    with pytest.raises(ValueError):
        build_ocp(np.zeros(3), DisturbanceSequence.zeros(2, 3), cfg)


def test_feasible_set_matches_controllability_set(cfg, scenario):
    rng = np.random.default_rng(1)
    for w in scenario.sequences[:3]:
        XN = controllability_sets(w, cfg)[-1]
        pts = rng.uniform(-10, 10, size=(400, 2))
        inside = XN.contains(pts, 1e-9)
        # skip points too close to the boundary to decide reliably
        margin = np.min(XN.g - pts @ XN.G.T, axis=1)
        ok = np.abs(margin) > 1e-6
        feas = np.array([is_feasible(p, w, cfg) for p in pts[ok]])
        assert np.array_equal(feas, inside[ok])


def test_controllability_sets_need_not_be_nested(cfg, scenario):
    # with a time-varying preview X_i need not lie inside X_{i+1}
    S = controllability_sets(scenario.sequences[0], cfg)
    i = next(i for i in range(len(S) - 1) if not pt.contains_set(S[i + 1], S[i]))
    witness = [v for v in pt.vertices(S[i]) if not S[i + 1].contains(v, 1e-9)]
    assert witness


def test_ignore_preview_uses_zero_model(cfg, scenario):
    blind = dataclasses.replace(cfg, ignore_preview=True)
    x = np.array([1.0, 1.0])
    a = solve_ocp(x, scenario.sequences[0], blind)
    b = solve_ocp(x, DisturbanceSequence.zeros(2, 3), blind)
    assert np.allclose(a.u_seq, b.u_seq)


def test_baseline_terminal_set(scenario):
    base = scenario.baseline_config
    assert base.ignore_preview
    ing = base.ingredients
    assert ing.beta_x == 1.0 and ing.alpha_x == 0.0
    # deadbeat closed loop: terminal set is C ∩ Phi^{-1} C with C = X ∩ {K x in U}
    C = pt.intersect(scenario.sets.X, pt.affine_preimage(ing.K_f, scenario.sets.U))
    ref = pt.intersect(C, pt.affine_preimage(ing.Phi, C))
    assert pt.contains_set(ref, ing.Xf_bar) and pt.contains_set(ing.Xf_bar, ref)
