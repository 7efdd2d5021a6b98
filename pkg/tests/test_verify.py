import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polymerlab.dp_core import EXACT
from polymerlab.env import EnvironmentSpec
from polymerlab.functionals import default_g_family, default_path_family, default_phi_family, make_phi
from polymerlab.oracle import TinyInstance, all_paths, enumerate_partition
from polymerlab.verify import (
    ContractionRecord,
    DegenerateInputError,
    ProductSpace,
    _schedule_replica,
    _schedule_tables,
    _uniformity_replica,
    check_increasing,
    contraction_check,
    contraction_exhaustive,
    contraction_monte_carlo,
    finite_json,
    fkg_exhaustive,
    fkg_polymer_pairs,
    map_replicas,
    martingale_residual_exact,
    random_increasing_pair,
    replica_field,
    schedule_decreasing,
    srw_smooth,
    survival_monotone,
    survival_scan,
    theorem_schedule_check,
    to_jsonl,
    uniformity_check,
    uniformity_summary,
)

LOGN = EnvironmentSpec("LogNormal", {"beta": 0.8}, seed=21)
CONST = EnvironmentSpec("Constant", {}, seed=0)
TWO = EnvironmentSpec("TwoPoint", {"a": 0.0, "b": 2.0, "p": 0.5}, seed=9)


@pytest.mark.parametrize("d,n", [(1, 2), (1, 3), (2, 2)])
def test_martingale_exact(d, n):
    assert martingale_residual_exact(TinyInstance(d, n)) <= 1e-15
    assert martingale_residual_exact(TinyInstance(d, n, TWO)) <= 1e-15


def test_contraction_exhaustive_path_family():
    inst = TinyInstance(1, 3)
    recs = contraction_exhaustive(inst, 1, 3, default_path_family(1))
    assert all(r.holds() for r in recs)
    by = {r.g_id: r for r in recs}
    assert by["one"].lhs == pytest.approx(by["one"].rhs, abs=1e-15)
    assert by["zero"].lhs == 0.0


@settings(max_examples=25)
@given(st.lists(st.floats(0, 1), min_size=8, max_size=8), st.integers(0, 3))
def test_contraction_any_unit_interval_path_functional(table, m):
    """Arbitrary g: {paths} -> [0, 1] on the 3-step d=1 instance."""
    inst = TinyInstance(1, 3)
    paths = all_paths(1, 3)
    codes = {p.tobytes(): i for i, p in enumerate(paths)}
    vals = np.array(table)
    env = inst.environment()

    def g(ps):
        return vals[[codes[p.tobytes()] for p in ps]]

    lhs = env.expectation(np.abs(env.partition(3, g) - env.partition(3, g, upto=m)))
    rhs = env.expectation(np.abs(env.partition(3) - env.partition(3, upto=m)))
    assert lhs <= rhs + 1e-15


def test_contraction_monte_carlo():
    recs = contraction_monte_carlo(LOGN, 1, 3, 12, default_g_family(1), 300)
    by = {r.g_id: r for r in recs}
    assert by["one"].lhs == by["one"].rhs
    assert by["zero"].lhs == 0.0
    assert all(r.holds() for r in recs)
    assert all(r.replicas == 300 and r.mode == "monteCarlo" for r in recs)


def test_contraction_threads_identical():
    a = contraction_monte_carlo(LOGN, 2, 2, 6, default_g_family(2), 20, threads=1)
    b = contraction_monte_carlo(LOGN, 2, 2, 6, default_g_family(2), 20, threads=3)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]


def test_contraction_argument_checks():
    with pytest.raises(ValueError):
        contraction_check(LOGN, 1, 4, 3, default_g_family(1), 10)
    with pytest.raises(ValueError):
        contraction_check(LOGN, 1, 1, 3, default_g_family(1))
    with pytest.raises(ValueError):
        ContractionRecord(1, 2, "x", -1.0, 0.0)
    assert len(contraction_check(TWO, 1, 1, 2, default_g_family(1), exhaustive=True)) == 10


def _brute_cov(space, f, g):
    ef = eg = efg = 0.0
    for idx in np.ndindex(*[v.size for v in space.levels]):
        x = np.array([[space.levels[i][j] for i, j in enumerate(idx)]])
        p = math.prod(space.probs[i][j] for i, j in enumerate(idx))
        fv, gv = float(f(x)[0]), float(g(x)[0])
        ef += p * fv
        eg += p * gv
        efg += p * fv * gv
    return efg - ef * eg


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_fkg_random_pairs(seed):
    space, f, g = random_increasing_pair(np.random.default_rng(seed), max_atoms=512)
    cov = fkg_exhaustive(space, f, g)
    assert cov >= -1e-12
    assert cov == pytest.approx(_brute_cov(space, f, g), abs=1e-9)


def test_check_increasing_names_coordinate():
    space = ProductSpace([np.array([0.0, 1.0])] * 3, [np.array([0.5, 0.5])] * 3)
    with pytest.raises(ValueError, match="coordinate 2"):
        check_increasing(space, lambda x: x[:, 0] - x[:, 2])
    # decreasing f and increasing g: negative covariance, so the monotonicity guard matters
    assert _brute_cov(space, lambda x: -x[:, 0], lambda x: x[:, 0]) < 0


def test_product_space_validation():
    with pytest.raises(ValueError):
        ProductSpace([np.array([1.0, 0.0])], [np.array([0.5, 0.5])])
    with pytest.raises(ValueError):
        ProductSpace([np.array([0.0, 1.0])], [np.array([0.5, 0.6])])


def test_fkg_polymer_pairs():
    inst = TinyInstance(1, 3)
    for spec in default_path_family(1):
        covs = fkg_polymer_pairs(inst, 1, spec)
        assert len(covs) == 4
        assert min(covs) >= -1e-15, spec["name"]


def test_survival_constant_and_nested():
    rows, logs = survival_scan(CONST, 1, [5, 10], 4)
    assert all(r.mean_w == pytest.approx(1.0) and r.frac_above == 1.0 for r in rows)
    rows, logs = survival_scan(TWO, 1, [2, 6, 20], 50)
    assert survival_monotone(logs)
    fp = [r.frac_positive for r in rows]
    assert fp[0] >= fp[1] >= fp[2]
    assert not survival_monotone(np.array([[-math.inf, 0.0]]))


def test_srw_smooth_matches_direct_averaging():
    rng = np.random.default_rng(3)
    for d in (1, 2):
        v = rng.uniform(size=(21,) * d)
        direct = v.copy()
        for _ in range(5):
            direct = sum(np.roll(direct, s, axis=a) for a in range(d) for s in (1, -1)) / (2 * d)
        assert np.allclose(srw_smooth(v, 5), direct, atol=1e-13)


@pytest.mark.parametrize("d,n", [(1, 16), (2, 6)])
def test_schedule_replica_matches_enumeration(d, n):
    m = int(math.floor(n**0.25))
    phis = [make_phi(s) for s in default_phi_family()]
    tables = {n: _schedule_tables(phis, d, n, m, 8.0)}
    field = replica_field(LOGN, 0)
    _, e_n, e_m = _schedule_replica(field, d, [n], [m], phis, tables, EXACT)
    full = enumerate_partition(field, d, n)
    frozen = enumerate_partition(field.restricted(m), d, n)
    for i, phi in enumerate(phis):
        want_n = full.mass(lambda p: phi(p[:, -1] / math.sqrt(n))) / full.partition
        want_m = frozen.mass(lambda p: phi(p[:, -1] / math.sqrt(n))) / frozen.partition
        assert e_n[n][i] == pytest.approx(want_n, abs=1e-12)
        assert e_m[n][i] == pytest.approx(want_m, abs=1e-12)


def test_schedule_constant_environment():
    rows = theorem_schedule_check(CONST, 1, [16, 81], default_phi_family(), 2)
    assert all(r.median_nm < 1e-12 for r in rows)
    # the remaining gap is the random walk's distance to Brownian motion, shrinking in n
    assert schedule_decreasing(rows, "median_mb")
    assert not schedule_decreasing(rows, "median_nm")


def test_schedule_degenerate():
    with pytest.raises(DegenerateInputError):
        theorem_schedule_check(TWO, 1, [16], default_phi_family(), 2, threshold=1e300)


@pytest.mark.parametrize("d,n", [(1, 10), (2, 5)])
def test_uniformity_replica_matches_enumeration(d, n):
    field = replica_field(LOGN, 1)
    step = tuple([1] + [0] * (d - 1))
    _, probs = _uniformity_replica(field, d, [0, 1, 3], [n], step, EXACT)
    e = enumerate_partition(field, d, n)
    for m in (0, 1, 3):
        want = e.mass(lambda p: np.all(p[:, m + 1] - p[:, m] == step, axis=1).astype(float)) / e.partition
        assert probs[(m, n)] == pytest.approx(want, rel=1e-12)


def test_uniformity_check_structure():
    recs = uniformity_check(LOGN, 1, [0, 4], [2, 4, 12], (1,), 30)
    table = {(r.m, r.n): r for r in recs}
    assert table[(4, 2)].value == 0.0 and table[(4, 4)].value == 0.0
    assert table[(0, 12)].value > 0
    assert all(r.p_event == 0.5 for r in recs)
    summary = uniformity_summary(recs)
    assert summary[0][0] >= summary[4][0]
    const = uniformity_check(CONST, 2, [0], [3], (0, 1), 2)
    assert const[0].value == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        uniformity_check(LOGN, 2, [0], [3], (1,), 2)


def test_map_replicas_order():
    assert map_replicas(lambda r: r * r, range(20), threads=4) == [r * r for r in range(20)]


def test_json_helpers():
    s = finite_json({"a": math.inf, "b": [1.0, math.nan], "c": np.float64(2.0)})
    assert json.loads(s) == {"a": None, "b": [1.0, None], "c": 2.0}
    lines = to_jsonl([{"x": -math.inf}, ContractionRecord(0, 1, "g", 0.0, 0.0)])
    assert len(lines.splitlines()) == 2
    assert json.loads(lines.splitlines()[1])["holds"] is True
