import numpy as np
import pytest

from msilab.core import InputError, build_data_matrices, build_lifted_matrices
from msilab.multipliers import (MultiplierClass, bordered_data, instantiate, is_consistent, least_squares_model,
                                lift_multiplier, lifted_bd, qmi_value, weights_to_Pd)
from msilab.sdp import LmiProblem
from msilab.multipliers import system_multiplier
from msilab.sim import NoiseSpec, generate_data


def test_class_counts_and_validation():
    assert MultiplierClass("quadratic", 0.1, 50).c_d == 1
    assert MultiplierClass("diagonal", 0.1, 50).c_d == 50
    assert MultiplierClass("diagonal", 0.1, 50, n_d=2).size == 52
    with pytest.raises(InputError):
        MultiplierClass("full", 0.1, 5)
    with pytest.raises(InputError):
        MultiplierClass("diagonal", -0.1, 5)
    with pytest.raises(InputError):
        MultiplierClass("quadratic", 0.1, 3, Qd=np.eye(3))


def test_instantiate():
    q = MultiplierClass("quadratic", 0.5, 3)
    P = instantiate(q, 2.0)
    assert np.allclose(P, 2.0 * np.block([[-np.eye(3), np.zeros((3, 1))], [np.zeros((1, 3)), np.array([[0.75]])]]))
    d = MultiplierClass("diagonal", 0.5, 3)
    P = instantiate(d, [1.0, 0.0, 2.0])
    assert np.allclose(np.diag(P), [-1.0, 0.0, -2.0, 0.75])
    assert np.allclose(weights_to_Pd(d, [1.0, 0.0, 2.0]), P)
    for bad in ([1.0, -1.0, 0.0], [0.0, 0.0, 0.0], [1.0]):
        with pytest.raises(InputError):
            instantiate(d, bad)
    with pytest.raises(InputError):
        instantiate(q, -1.0)


@pytest.mark.parametrize("kind", ["diagonal", "quadratic"])
def test_true_system_satisfies_every_instance(plant, kind, rng):
    d_bar = 0.05
    rec = generate_data(plant, NoiseSpec(d_bar, seed=4), 30)
    dm = build_data_matrices(rec)
    mult = MultiplierClass(kind, d_bar, 30, plant.n_d)
    for _ in range(5):
        w = rng.uniform(0.0, 2.0, mult.c_d)
        P_AB = lift_multiplier(dm, instantiate(mult, w), plant.Bd)
        assert np.linalg.eigvalsh(qmi_value(P_AB, plant.A, plant.B))[0] >= -1e-12
    assert is_consistent(dm, mult, plant.Bd, plant.A, plant.B)
    A_bad = plant.A + np.array([[0.0, 0.0], [0.0, 0.05]])
    assert not is_consistent(dm, mult, plant.Bd, A_bad, plant.B)


def test_lifted_true_pair_is_contained(plant, rng):
    # the h-step disturbance is sum_i A^i Bd d; its 2-norm bound is what a level-h multiplier must cover
    d_bar = 0.02
    rec = generate_data(plant, NoiseSpec(d_bar, seed=2), 40)
    h = 3
    L = build_lifted_matrices(rec, h)
    Ah, Bh = plant.lifted(h)
    R = L.Xhp - Ah @ L.Xh - Bh @ L.Uh
    bound = np.linalg.norm(R, axis=0).max()
    mult = MultiplierClass("diagonal", bound, L.N_h, plant.n)
    P_AB = lift_multiplier(L, instantiate(mult, rng.uniform(0, 1, L.N_h)), lifted_bd(plant.Bd, h))
    assert np.linalg.eigvalsh(qmi_value(P_AB, Ah, Bh))[0] >= -1e-12


def test_system_multiplier_expression_matches_numeric(plant, rec50_noisy):
    dm = build_data_matrices(rec50_noisy)
    mult = MultiplierClass("diagonal", 0.01, 50, 1)
    p = LmiProblem()
    P, w = system_multiplier(p, "w", mult, dm.Xp, dm.X, dm.U, plant.Bd, kappa=10.0)
    x = np.linspace(0.1, 1.0, p.nvars)
    ref = lift_multiplier(dm, weights_to_Pd(mult, x, kappa=10.0), plant.Bd)
    assert np.allclose(P.value(x), ref, rtol=1e-12, atol=1e-14)


def test_bordered_data_and_ls(plant, rec50):
    dm = build_data_matrices(rec50)
    M = bordered_data(dm.Xp, dm.X, dm.U, plant.Bd)
    assert M.shape == (5, 51)
    assert np.allclose(least_squares_model(dm.Xp, dm.X, dm.U), np.hstack([plant.A, plant.B]), atol=1e-10)
    with pytest.raises(InputError):
        bordered_data(dm.Xp[:, :-1], dm.X, dm.U, plant.Bd)
    assert lifted_bd(plant.Bd, 1) is not None and np.array_equal(lifted_bd(plant.Bd, 2), np.eye(2))
