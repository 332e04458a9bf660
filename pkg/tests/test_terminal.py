import dataclasses
import warnings

import numpy as np
import pytest

from preview_mpc import polytope as pt
from preview_mpc.polytope import HPolytope
from preview_mpc.terminal import (
    ConstraintSpec,
    PlantModel,
    SynthesisError,
    TerminalSetWarning,
    check_ingredients,
    deadbeat_gain,
    equilibrium,
    ingredients_to_dict,
    sample_set,
    stage_cost,
    synth_nominal,
    terminal_cost,
    terminal_law,
    verify_proposition1,
)

PLANT = PlantModel(np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([[0.5], [1.0]]))
W = HPolytope([[1, 0], [-1, 0], [1, -1], [-1, 1]], [2, 2, 0, 0])
SETS = ConstraintSpec(HPolytope.norm_ball_inf(2, 10.0), HPolytope.from_box([-3], [3]), W)


@pytest.fixture(scope="module")
def deadbeat():
    return synth_nominal(PLANT, SETS, np.eye(2), np.eye(1), "deadbeat")


def test_plant_validation():
    assert PLANT.is_reachable()
    assert not PlantModel(np.eye(2), np.array([[1.0], [0.0]])).is_reachable()
    with pytest.raises(ValueError):
        PlantModel(np.eye(2), np.ones((3, 1)))
    assert np.allclose(PLANT.step(np.array([1.0, 1.0]), 2.0, np.array([0.1, 0.0])), [3.1, 3.0])


def test_deadbeat_gain_closed_form():
    # trace(A + BK) = 0 and det(A + BK) = 0 give k1 = -1, k2 = -1.5
    assert np.allclose(deadbeat_gain(PLANT), [[-1.0, -1.5]])


def test_deadbeat_ingredients_closed_forms(deadbeat):
    ing = deadbeat
    Phi = np.array([[0.5, 0.25], [-1.0, -0.5]])
    assert np.allclose(ing.Phi, Phi)
    assert np.allclose(ing.Psi, np.eye(2) + Phi)
    # Psi (s, s) = (1.75 s, -0.5 s) and K Psi (s, s) = -s with |s| <= 2
    assert ing.alpha_x == pytest.approx(0.35)
    assert ing.alpha_u == pytest.approx(2.0 / 3.0)
    assert ing.alpha_x + ing.beta_x <= 1.0
    assert ing.alpha_u + ing.beta_u <= 1.0
    assert check_ingredients(ing) == []
    assert np.allclose(ing.Pi, ing.K_f)


def test_equilibrium_for_constant_disturbance(deadbeat):
    eq = equilibrium(deadbeat, [0.9, 0.9])
    assert np.allclose(eq.x_f, [1.575, -0.45])
    assert np.allclose(eq.u_f, [-0.9])
    # the equilibrium is a fixed point of the plant
    assert np.allclose(PLANT.step(eq.x_f, eq.u_f, eq.w_f), eq.x_f)
    with pytest.raises(ValueError):
        equilibrium(deadbeat, [1.0, -1.0])


def test_translated_costs_vanish_at_equilibrium(deadbeat):
    eq = equilibrium(deadbeat, [-0.9, -0.9])
    assert stage_cost(eq.x_f, eq.u_f, eq.w_f, deadbeat) == pytest.approx(0.0, abs=1e-14)
    assert terminal_cost(eq.x_f, eq.w_f, deadbeat) == pytest.approx(0.0, abs=1e-14)
    assert stage_cost(eq.x_f + [1, 0], eq.u_f, eq.w_f, deadbeat) == pytest.approx(1.0)


def test_terminal_law_warns_outside(deadbeat):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        terminal_law(np.zeros(2), np.zeros(2), deadbeat)
    with pytest.warns(TerminalSetWarning):
        terminal_law(np.array([9.0, 9.0]), np.zeros(2), deadbeat)


@pytest.mark.parametrize("gain", ["deadbeat", "lqr"])
def test_proposition_checks_pass(gain):
    ing = synth_nominal(PLANT, SETS, np.eye(2), np.eye(1), gain)
    for w in list(pt.vertices(W)) + [np.zeros(2)]:
        rep = verify_proposition1(ing, w, n_samples=300)
        assert rep.passed, rep.margins


def test_proposition_checks_catch_a_bad_terminal_weight(deadbeat):
    weak = dataclasses.replace(deadbeat, weights=dataclasses.replace(deadbeat.weights, P=0.5 * deadbeat.weights.P))
    rep = verify_proposition1(weak, np.zeros(2), n_samples=200)
    assert not rep.descent


def test_lqr_gain_is_minus_dare_gain():
    ing = synth_nominal(PLANT, SETS, np.eye(2), np.eye(1))
    assert ing.gain_label == "lqr"
    assert np.allclose(ing.K_f, [[-0.4345, -1.0285]], atol=5e-4)


def test_synthesis_errors():
    with pytest.raises(SynthesisError):
        synth_nominal(PLANT, SETS, np.eye(2), np.eye(1), np.array([[1.0, 1.0]]))
    with pytest.raises(SynthesisError):
        synth_nominal(PlantModel(np.eye(2), np.array([[1.0], [0.0]])), SETS, np.eye(2), np.eye(1))
    big = ConstraintSpec(SETS.X, SETS.U, 3.0 * W)
    with pytest.raises(SynthesisError):
        synth_nominal(PLANT, big, np.eye(2), np.eye(1), "deadbeat")
    with pytest.raises(SynthesisError):
        synth_nominal(PLANT, SETS, np.eye(2), np.eye(1), "deadbeat", beta_x=0.9)
    with pytest.raises(SynthesisError):
        synth_nominal(PLANT, SETS, np.eye(2), np.zeros((1, 1)))


def test_sample_set_points_are_inside(deadbeat):
    pts = sample_set(deadbeat.Xf_bar, 500, seed=3)
    assert pts.shape[0] >= 500
    assert np.all(deadbeat.Xf_bar.contains(pts, 1e-9))


def test_ingredients_serialize(deadbeat):
    d = ingredients_to_dict(deadbeat)
    assert d["gain_label"] == "deadbeat"
    assert d["determination_index"] == deadbeat.determination_index
    assert HPolytope.from_dict(d["Xf_bar"]).n_constraints == deadbeat.Xf_bar.n_constraints
