import numpy as np
import pytest

from msilab import setmem
from msilab.core import Controller, InputError, build_data_matrices
from msilab.sim import NoiseSpec, generate_data


def test_box_contains_true_plant(plant):
    for d_bar in (0.0, 0.01, 0.1):
        rec = generate_data(plant, NoiseSpec(d_bar, seed=2), 30)
        box = setmem.identify_box(rec, plant.Bd, d_bar)
        assert box.contains(plant.A, plant.B)
        # the noise enters only the first state, so the second row is pinned exactly
        assert box.widths[1].max() < 1e-7


def test_box_widths_grow_with_noise(plant):
    rec = generate_data(plant, NoiseSpec(0.01, seed=2), 30)
    small = setmem.identify_box(rec, plant.Bd, 0.01)
    large = setmem.identify_box(rec, plant.Bd, 0.05)
    assert np.all(large.widths >= small.widths - 1e-9) and large.widths.sum() > small.widths.sum()


def test_identify_errors(plant):
    rec = generate_data(plant, NoiseSpec(0.1, seed=2), 30)
    with pytest.raises(InputError, match="inconsistent"):
        setmem.identify_box(rec, plant.Bd, 1e-6)
    short = generate_data(plant, NoiseSpec(0.0, seed=2), 2)
    with pytest.raises(InputError, match="unbounded"):
        setmem.identify_box(short, plant.Bd, 0.0)
    with pytest.raises(InputError):
        setmem.identify_box(rec, plant.Bd, -1.0)


def test_vertices():
    box = setmem.ParamBox([[0.0, 1.0, 2.0]], [[1.0, 1.0, 3.0]])
    V = list(box.vertices())
    assert box.n_vertices == 8 and len(V) == 8
    assert np.array_equal(V[0], [[0.0, 1.0, 2.0]]) and np.array_equal(V[-1], [[1.0, 1.0, 3.0]])
    assert np.array_equal(V[1], [[0.0, 1.0, 3.0]])  # last entry toggles first
    with pytest.raises(InputError):
        setmem.ParamBox([[1.0, 0.0]], [[0.0, 0.0]])


def test_constraint_count(plant, gain):
    box = setmem.ParamBox(np.hstack([plant.A, plant.B]), np.hstack([plant.A, plant.B]))
    p = setmem.build_box_lmi(box, gain, 5)
    assert setmem.box_constraint_count(2, 1) == 66
    assert p.info["lmi_count"] == 66 and p.table_counts() == (8, 66)
    with pytest.raises(InputError, match="too large"):
        setmem.build_box_lmi(box, gain, 5, vertex_cap=32)


def test_degenerate_box_is_model_based(plant, gain):
    # a zero-width box is the model-based circle criterion
    AB = np.hstack([plant.A, plant.B])
    box = setmem.ParamBox(AB, AB)
    assert setmem.analyze_box(box, gain, 12)
    assert not setmem.analyze_box(box, gain, 13)


def test_analysis_on_data(plant, gain, rec50_noisy):
    box = setmem.identify_box(rec50_noisy, plant.Bd, 0.01)
    assert setmem.analyze_box(box, gain, 12)
    assert not setmem.analyze_box(box, gain, 13)
    with pytest.raises(InputError):
        setmem.analyze_box(box, Controller([[1.0, 2.0, 3.0]]), 3)
