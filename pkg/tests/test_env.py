import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import ndtri

from polymerlab.env import (
    EnvironmentField,
    EnvironmentSpec,
    layer_values,
    mix64,
    normal_quantile,
    quantile,
    replica_seed,
    shifted,
    site_value,
    site_values,
)

coords = st.integers(-50, 50)
times = st.integers(1, 500)
seeds = st.integers(0, 2**64 - 1)


def test_mix64_reference_vector():
    # SplitMix64 stream from state 0 starts with 0xE220A8397B1DCDAF
    assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF


def test_constant_is_one():
    f = EnvironmentField(EnvironmentSpec("Constant", seed=9))
    assert site_value(f, 1, (0,)) == 1.0
    assert np.all(site_values(f, np.arange(1, 20), np.arange(19).reshape(-1, 1)) == 1.0)


def test_twopoint_quantile_examples():
    params = {"a": 0.5, "b": 1.5, "p": 0.5}
    assert quantile("TwoPoint", params, 0.25) == 0.5
    assert quantile("TwoPoint", params, 0.75) == 1.5


def test_twopoint_exact_mean():
    spec = EnvironmentSpec("TwoPoint", {"a": 0.25, "b": 1.75, "p": 0.5})
    atoms, probs = spec.atoms()
    assert math.fsum(atoms * probs) == 1.0


def test_lognormal_beta_zero_is_one():
    for u in (1e-9, 0.3, 0.5, 0.999999):
        assert quantile("LogNormal", {"beta": 0.0}, u) == 1.0


def test_pareto_limits_and_mean():
    params = {"alpha": 1.5}
    assert quantile("ParetoTail", params, 1e-15) == pytest.approx(1.0 / 3.0, rel=1e-12)
    # integrable singularity at u=1: split the range
    left = quad(lambda u: quantile("ParetoTail", params, u), 1e-300, 0.5)[0]
    right = quad(lambda u: quantile("ParetoTail", params, u), 0.5, 1.0, limit=200)[0]
    assert left + right == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5])
def test_quantile_rejects_outside_unit_interval(u):
    with pytest.raises(ValueError):
        quantile("LogNormal", {"beta": 1.0}, u)


def test_normal_quantile_accuracy():
    us = np.concatenate([np.linspace(1e-12, 1e-6, 50), np.linspace(1e-6, 1 - 1e-6, 2001), 1 - np.linspace(1e-12, 1e-6, 50)])
    err = max(abs(normal_quantile(float(u)) - float(ndtri(u))) for u in us)
    assert err <= 1e-9


@given(st.floats(1e-12, 1 - 1e-12), st.floats(1e-12, 1 - 1e-12))
def test_quantiles_monotone(u, v):
    lo, hi = min(u, v), max(u, v)
    for fam, params in [("LogNormal", {"beta": 1.2}), ("ParetoTail", {"alpha": 1.3}), ("TwoPoint", {"a": 0.5, "b": 1.5, "p": 0.5})]:
        assert quantile(fam, params, lo) <= quantile(fam, params, hi)


@pytest.mark.parametrize(
    "spec",
    [
        EnvironmentSpec("TwoPoint", {"a": 0.5, "b": 1.5, "p": 0.5}, seed=3),
        EnvironmentSpec("LogNormal", {"beta": 0.5}, seed=3),
        EnvironmentSpec("ParetoTail", {"alpha": 1.9}, seed=3),
    ],
)
def test_mean_one_monte_carlo(spec):
    f = EnvironmentField(spec)
    n = 10**6
    ks = np.repeat(np.arange(1, 101), n // 100)
    x = np.tile(np.arange(n // 100), 100).reshape(-1, 1) - n // 200
    vals = site_values(f, ks, x)
    se = vals.std() / math.sqrt(n)
    # ParetoTail alpha<2 has no variance; its sample SE still bounds the typical error
    assert abs(vals.mean() - 1.0) <= 4 * se


def test_twopoint_sample_mean_within_three_se():
    f = EnvironmentField(EnvironmentSpec("TwoPoint", {"a": 0.5, "b": 1.5, "p": 0.5}, seed=11))
    vals = site_values(f, np.full(10**6, 7), np.arange(10**6).reshape(-1, 1))
    assert abs(vals.mean() - 1.0) <= 3 * 0.5 / 1000


def test_pareto_second_moment_grows():
    spec = EnvironmentSpec("ParetoTail", {"alpha": 1.5}, seed=0)
    medians = []
    for size in (10**3, 10**4, 10**5):
        moments = []
        for s in range(9):
            f = EnvironmentField(spec.with_seed(replica_seed(17, s)))
            vals = site_values(f, np.full(size, 1), np.arange(size).reshape(-1, 1))
            moments.append(np.mean(vals**2))
        medians.append(np.median(moments))
    assert medians[0] < medians[1] < medians[2]


@given(seeds, times, st.lists(coords, min_size=1, max_size=4))
def test_purity(seed, k, x):
    f = EnvironmentField(EnvironmentSpec("LogNormal", {"beta": 1.0}, seed=seed))
    a = site_value(f, k, x)
    assert a == site_value(f, k, x)
    assert a == site_value(shifted(f, 0, [0] * len(x)), k, x)


@given(seeds, st.integers(0, 50), st.integers(0, 50), times, st.lists(coords, min_size=3, max_size=3), st.lists(coords, min_size=3, max_size=3), st.lists(coords, min_size=3, max_size=3))
def test_shift_covariance_and_composition(seed, n1, n2, k, z1, z2, x):
    f = EnvironmentField(EnvironmentSpec("ParetoTail", {"alpha": 1.5}, seed=seed))
    g = shifted(shifted(f, n1, z1), n2, z2)
    target = [a + b + c for a, b, c in zip(z1, z2, x)]
    assert site_value(g, k, x) == site_value(f, n1 + n2 + k, target)
    assert site_value(g, k, x) == site_value(shifted(f, n1 + n2, [a + b for a, b in zip(z1, z2)]), k, x)


def test_shift_example():
    f = EnvironmentField(EnvironmentSpec("LogNormal", {"beta": 1.0}, seed=42))
    assert site_value(shifted(f, 3, (1, 0)), 1, (0, 0)) == site_value(f, 4, (1, 0))


def test_layer_values_match_site_values(family_spec):
    f = shifted(EnvironmentField(family_spec.with_seed(99)), 2, (1, -3))
    box = layer_values(f, 5, 2, 4)
    ax = np.arange(-4, 5)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    assert np.array_equal(box.reshape(-1), site_values(f, np.full(len(pts), 5), pts))


def test_horizon_switches_off_later_layers():
    f = EnvironmentField(EnvironmentSpec("LogNormal", {"beta": 1.0}, seed=1)).restricted(3)
    assert site_value(f, 4, (0,)) == 1.0
    assert site_value(f, 3, (1,)) != 1.0


def test_site_index_must_be_positive():
    f = EnvironmentField(EnvironmentSpec("LogNormal", {"beta": 1.0}))
    with pytest.raises(ValueError):
        site_value(f, 0, (0,))


@pytest.mark.parametrize(
    "family,params",
    [
        ("TwoPoint", {"a": 0.5, "b": 1.5, "p": 0.4}),
        ("TwoPoint", {"a": -0.5, "b": 2.5, "p": 0.5}),
        ("LogNormal", {"beta": -1.0}),
        ("ParetoTail", {"alpha": 2.5}),
        ("ParetoTail", {"alpha": 1.0}),
        ("Gamma", {}),
    ],
)
def test_invalid_specs(family, params):
    with pytest.raises(ValueError):
        EnvironmentSpec(family, params)


@given(seeds)
def test_spec_json_round_trip(seed):
    spec = EnvironmentSpec("TwoPoint", {"a": 0.0, "b": 2.0, "p": 0.5}, seed=seed)
    text = spec.to_json()
    assert json.loads(text)["seed"] == str(seed)
    assert EnvironmentSpec.from_json(text) == spec


def test_zero_atom_allowed():
    f = EnvironmentField(EnvironmentSpec("TwoPoint", {"a": 0.0, "b": 2.0, "p": 0.5}, seed=5))
    vals = site_values(f, np.full(1000, 1), np.arange(1000).reshape(-1, 1))
    assert set(np.unique(vals)) == {0.0, 2.0}
