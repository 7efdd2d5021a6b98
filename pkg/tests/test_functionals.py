import math

import numpy as np
import pytest

from polymerlab.functionals import (
    RangeError,
    brownian_expectation,
    default_g_family,
    default_path_family,
    default_phi_family,
    make_g,
    make_path_g,
    make_phi,
)
from polymerlab.oracle import all_paths


@pytest.mark.parametrize("d", [1, 2, 3])
def test_endpoint_family_in_unit_interval(d):
    z = np.stack(np.meshgrid(*([np.arange(-6, 7)] * d), indexing="ij"), -1).reshape(-1, d)
    for spec in default_g_family(d):
        vals = make_g(spec, 16, d)(z)
        assert vals.min() >= 0 and vals.max() <= 1, spec["name"]


def test_path_family_in_unit_interval():
    paths = all_paths(1, 5)
    for spec in default_path_family(1):
        vals = make_path_g(spec, 5, 1)(paths)
        assert vals.shape == (paths.shape[0],)
        assert vals.min() >= 0 and vals.max() <= 1, spec["name"]


def test_path_kinds_by_hand():
    paths = np.array([[[0], [1], [0], [1]], [[0], [-1], [-2], [-1]]])
    assert list(make_path_g({"kind": "first_step_positive"}, 3, 1)(paths)) == [1.0, 0.0]
    assert list(make_path_g({"kind": "returns"}, 3, 1)(paths)) == [1.0, 0.0]
    assert make_path_g({"kind": "occupation"}, 3, 1)(paths)[0] == pytest.approx(2 / 3)
    assert list(make_path_g({"kind": "step_pattern", "at": 2}, 3, 1)(paths)) == [0.0, 0.0]
    assert list(make_path_g({"kind": "step_pattern", "at": 3}, 3, 1)(paths)) == [1.0, 1.0]


def test_range_errors():
    with pytest.raises(RangeError):
        make_g({"kind": "constant", "value": 1.5}, 4, 1)
    with pytest.raises(RangeError):
        make_g({"kind": "ramp", "low": -0.5}, 4, 1)
    with pytest.raises(ValueError):
        make_g({"kind": "halfspace", "axis": 2}, 4, 2)
    with pytest.raises(ValueError):
        make_g({"kind": "nope"}, 4, 1)


SMOOTH = [s for s in default_phi_family() if s["kind"] != "radial_ramp"]  # the ramp's kink defeats quadrature


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("spec", SMOOTH, ids=lambda s: s["name"])
def test_phi_closed_forms_match_quadrature(spec, d):
    phi = make_phi(spec)
    nodes = 80 if d < 3 else 40
    assert phi.brownian_mean(d) == pytest.approx(brownian_expectation(phi, d, nodes=nodes), abs=1e-9)


@pytest.mark.parametrize("spec", default_phi_family(), ids=lambda s: s["name"])
def test_phi_closed_forms_match_monte_carlo(spec):
    phi = make_phi(spec)
    rng = np.random.default_rng(7)
    for d in (1, 3):
        x = rng.normal(scale=math.sqrt(1 / d), size=(400_000, d))
        v = phi(x)
        assert phi.brownian_mean(d) == pytest.approx(v.mean(), abs=5 * v.std() / math.sqrt(v.size))


def test_phi_values_bounded_and_checked():
    x = np.random.default_rng(8).normal(scale=3, size=(1000, 2))
    for spec in default_phi_family():
        v = make_phi(spec)(x)
        assert v.min() >= 0 and v.max() <= 1
    bad = make_phi({"kind": "half_plane_ramp"})
    object.__setattr__(bad, "rule", lambda y: y[..., 0])
    with pytest.raises(RangeError):
        bad(np.array([[2.0]]))
