"""Executable checks of the structural claims about the polymer.

Exhaustive checks run over every environment atom of a :class:`TinyInstance`
and hold to rounding; Monte Carlo checks run one exact DP per environment
replica and compare against standard errors.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dp_core import (
    fsum,
    EXACT,
    CylinderEvent,
    PartitionSlice,
    Truncation,
    backward_slices,
    forward_step,
    initial_slice,
    pair_mass,
    total_mass,
)
from .env import EnvironmentField, EnvironmentSpec, replica_seed
from .functionals import make_g, make_path_g, make_phi
from .oracle import MAX_ATOMS, TinyEnvironment, TinyInstance, TooLargeError

__all__ = [
    "DegenerateInputError",
    "ContractionRecord",
    "UniformityRecord",
    "SurvivalRow",
    "ScheduleRow",
    "ProductSpace",
    "map_replicas",
    "replica_field",
    "linear_mass",
    "martingale_residual_exact",
    "contraction_exhaustive",
    "contraction_monte_carlo",
    "contraction_check",
    "check_increasing",
    "fkg_exhaustive",
    "fkg_polymer_pairs",
    "random_increasing_pair",
    "survival_scan",
    "survival_monotone",
    "srw_smooth",
    "theorem_schedule_check",
    "schedule_decreasing",
    "uniformity_check",
    "uniformity_summary",
    "to_jsonl",
    "finite_json",
]


class DegenerateInputError(ValueError):
    """Every replica died (``W_n = 0``), so the polymer measure is undefined."""


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return math.nan, math.nan
    mean = fsum(x) / x.size
    if x.size < 2:
        return mean, math.nan
    var = fsum((x - mean) ** 2) / (x.size - 1)
    return mean, math.sqrt(var / x.size)


def map_replicas(fn: Callable[[int], object], replicas: Iterable[int], threads: int = 1) -> list:
    """``[fn(r) for r in replicas]``, computed on a thread pool; order is preserved."""
    replicas = list(replicas)
    if threads <= 1:
        return [fn(r) for r in replicas]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, replicas))


def replica_field(spec: EnvironmentSpec, replica: int) -> EnvironmentField:
    return EnvironmentField(spec.with_seed(replica_seed(spec.seed, replica)))


def linear_mass(slc: PartitionSlice, values: np.ndarray | None = None) -> float:
    """``sum_z u_n(z) * values(z)`` in linear scale (``values`` on the slice box, C order)."""
    if slc.is_zero():
        return 0.0
    w = slc.weights.reshape(-1)
    if values is not None:
        w = w * values
    return fsum(w) * math.exp(slc.log_scale)


def _finite(obj):
    """Non-finite floats become ``None`` so every line is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def finite_json(obj) -> str:
    return json.dumps(_finite(obj), sort_keys=True, allow_nan=False)


def to_jsonl(records: Iterable) -> str:
    lines = []
    for rec in records:
        data = rec.to_dict() if hasattr(rec, "to_dict") else rec
        lines.append(json.dumps(_finite(data), sort_keys=True, allow_nan=False))
    return "".join(line + "\n" for line in lines)


# martingale


def martingale_residual_exact(inst: TinyInstance) -> float:
    """``max |E[W_{k+1} | F_k] - W_k|`` over ``k < n`` and all atoms of ``F_k``."""
    env = inst.environment()
    worst = 0.0
    prev = np.ones(env.size)
    for k in range(inst.n):
        nxt = env.partition(k + 1)
        cond = env.conditional(nxt, k)
        worst = max(worst, float(np.max(np.abs(cond - prev))))
        prev = nxt
    return worst


# contraction


@dataclass
class ContractionRecord:
    m: int
    n: int
    g_id: str
    lhs: float
    rhs: float
    se_lhs: float = 0.0
    se_rhs: float = 0.0
    mode: str = "exhaustive"
    replicas: int = 0

    def __post_init__(self) -> None:
        if self.lhs < 0 or self.rhs < 0:
            raise ValueError("contraction estimates are nonnegative")
        if self.mode not in ("exhaustive", "monteCarlo"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def combined_se(self) -> float:
        return math.hypot(self.se_lhs, self.se_rhs)

    def holds(self, atol: float = 1e-12, se_mult: float = 4.0) -> bool:
        if self.mode == "exhaustive":
            return self.lhs <= self.rhs + atol
        return self.lhs <= self.rhs + se_mult * self.combined_se

    def to_dict(self) -> dict:
        out = asdict(self)
        out["holds"] = self.holds()
        return out


def contraction_exhaustive(inst: TinyInstance, m: int, n: int, g_family: Sequence[Mapping]) -> list[ContractionRecord]:
    """``E|W_n(g) - W_m(g)|`` against ``E|W_n - W_m|`` over every environment atom.

    ``g`` may be any path functional (see :func:`make_path_g`).
    """
    if not 0 <= m <= n <= inst.n:
        raise ValueError("need 0 <= m <= n <= instance horizon")
    env = inst.environment()
    w_n = env.partition(n)
    w_m = env.partition(n, upto=m)
    rhs = env.expectation(np.abs(w_n - w_m))
    out = []
    for spec in g_family:
        g = make_path_g(spec, n, inst.d)
        lhs = env.expectation(np.abs(env.partition(n, g) - env.partition(n, g, upto=m)))
        out.append(ContractionRecord(m, n, spec.get("name", spec["kind"]), lhs, rhs, mode="exhaustive"))
    return out


def _contraction_replica(field: EnvironmentField, d: int, m: int, n: int, tables, truncation: Truncation):
    slc = initial_slice(d)
    for _ in range(m):
        slc = forward_step(field, slc, truncation)
    full, frozen = slc, slc
    rest = field.restricted(m)
    for _ in range(n - m):
        full = forward_step(field, full, truncation)
        frozen = forward_step(rest, frozen, truncation)
    w_n, w_m = linear_mass(full), linear_mass(frozen)
    diffs = []
    for table in tables:
        vals_full = table(full)
        vals_frozen = table(frozen)
        diffs.append(abs(linear_mass(full, vals_full) - linear_mass(frozen, vals_frozen)))
    return abs(w_n - w_m), diffs


def contraction_monte_carlo(
    spec: EnvironmentSpec,
    d: int,
    m: int,
    n: int,
    g_family: Sequence[Mapping],
    replicas: int,
    truncation: Truncation = EXACT,
    threads: int = 1,
) -> list[ContractionRecord]:
    """One exact DP per replica for endpoint functionals ``g(X_n)``.

    ``W_m(g)`` is the mass at time ``n`` of the recursion whose environment is
    switched off after time ``m``; ``W_m`` is computed the same way so that
    ``g = 1`` gives ``lhs == rhs`` exactly.
    """
    if not 0 <= m <= n:
        raise ValueError("need 0 <= m <= n")
    gs = [make_g(s, n, d) for s in g_family]

    def tabulate(g):
        return lambda slc: g(slc.coords())

    tables = [tabulate(g) for g in gs]
    results = map_replicas(
        lambda r: _contraction_replica(replica_field(spec, r), d, m, n, tables, truncation), range(replicas), threads
    )
    rhs, se_rhs = _mean_se([r[0] for r in results])
    out = []
    for i, s in enumerate(g_family):
        lhs, se_lhs = _mean_se([r[1][i] for r in results])
        out.append(
            ContractionRecord(m, n, s.get("name", s["kind"]), lhs, rhs, se_lhs, se_rhs, "monteCarlo", replicas)
        )
    return out


def contraction_check(
    spec: EnvironmentSpec,
    d: int,
    m: int,
    n: int,
    g_family: Sequence[Mapping],
    replicas: int | None = None,
    exhaustive: bool = False,
    truncation: Truncation = EXACT,
    threads: int = 1,
) -> list[ContractionRecord]:
    if m > n:
        raise ValueError("need m <= n")
    if exhaustive:
        return contraction_exhaustive(TinyInstance(d, n, spec), m, n, g_family)
    if not replicas:
        raise ValueError("Monte Carlo mode needs replicas >= 1")
    return contraction_monte_carlo(spec, d, m, n, g_family, replicas, truncation, threads)


# FKG


@dataclass
class ProductSpace:
    """Independent coordinates, each on an ordered finite set of levels."""

    levels: list[np.ndarray]
    probs: list[np.ndarray]

    def __post_init__(self) -> None:
        self.levels = [np.asarray(v, dtype=np.float64) for v in self.levels]
        self.probs = [np.asarray(p, dtype=np.float64) for p in self.probs]
        if len(self.levels) != len(self.probs):
            raise ValueError("levels and probs must have the same length")
        for v, p in zip(self.levels, self.probs):
            if v.shape != p.shape or v.size < 1:
                raise ValueError("each coordinate needs matching levels and probabilities")
            if np.any(np.diff(v) <= 0):
                raise ValueError("levels must be strictly increasing")
            if np.any(p < 0) or abs(fsum(p) - 1.0) > 1e-12:
                raise ValueError("coordinate probabilities must sum to one")
        if self.size > MAX_ATOMS:
            raise TooLargeError(f"{self.size} atoms exceeds {MAX_ATOMS}")

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def size(self) -> int:
        return int(np.prod([v.size for v in self.levels])) if self.levels else 1

    def indices(self) -> np.ndarray:
        shape = [v.size for v in self.levels]
        return np.stack(np.unravel_index(np.arange(self.size), shape), axis=1)

    def values(self, idx: np.ndarray | None = None) -> np.ndarray:
        idx = self.indices() if idx is None else idx
        return np.stack([self.levels[i][idx[:, i]] for i in range(self.dim)], axis=1)

    def probabilities(self, idx: np.ndarray | None = None) -> np.ndarray:
        idx = self.indices() if idx is None else idx
        p = np.ones(idx.shape[0])
        for i in range(self.dim):
            p = p * self.probs[i][idx[:, i]]
        return p


def check_increasing(space: ProductSpace, fn: Callable[[np.ndarray], np.ndarray], name: str = "f", tol: float = 0.0) -> np.ndarray:
    """Values of ``fn`` on every atom, after checking every one-coordinate bump.

    Raises ``ValueError`` naming the first coordinate along which ``fn`` drops
    by more than ``tol``.
    """
    idx = space.indices()
    base = np.asarray(fn(space.values(idx)), dtype=np.float64)
    for i in range(space.dim):
        up = idx[:, i] + 1 < space.levels[i].size
        if not np.any(up):
            continue
        bumped = idx[up].copy()
        bumped[:, i] += 1
        flat = np.ravel_multi_index(bumped.T, [v.size for v in space.levels])
        drop = base[up] - base[flat]
        if np.any(drop > tol):
            bad = int(np.argmax(drop))
            raise ValueError(
                f"{name} is not increasing in coordinate {i}: drops by {float(drop[bad])!r} at atom {idx[up][bad].tolist()}"
            )
    return base


def fkg_exhaustive(space: ProductSpace, f: Callable, g: Callable, tol: float = 0.0) -> float:
    """Exact ``Cov(f, g)`` under the product law, for increasing ``f`` and ``g``."""
    fv = check_increasing(space, f, "f", tol)
    gv = check_increasing(space, g, "g", tol)
    p = space.probabilities()
    ef = fsum(p * fv)
    eg = fsum(p * gv)
    return fsum(p * (fv - ef) * (gv - eg))


def fkg_polymer_pairs(inst: TinyInstance, m: int, g_spec: Mapping) -> list[float]:
    """``Cov((W_n(1-g) - W_m(1-g)), 1{W_n(g) >= W_m(g)})`` over layers ``m+1..n``,
    one value per configuration of the first ``m`` layers (``n = inst.n``)."""
    n = inst.n
    g = make_path_g(g_spec, n, inst.d)

    def gbar(paths):
        return 1.0 - g(paths)

    early = [i for i, (k, _) in enumerate(inst.sites) if k <= m]
    late = [i for i, (k, _) in enumerate(inst.sites) if k > m]
    atoms, atom_probs = inst.atoms, inst.atom_probs
    space = ProductSpace([atoms] * len(late), [atom_probs] * len(late))
    out = []
    for fixed in np.ndindex(*([atoms.size] * len(early))):

        def full(late_vals, fixed=fixed):
            vals = np.empty((late_vals.shape[0], inst.n_sites))
            vals[:, early] = atoms[list(fixed)]
            vals[:, late] = late_vals
            return TinyEnvironment(inst, vals)

        def f(late_vals):
            env = full(late_vals)
            return env.partition(n, gbar) - env.partition(n, gbar, upto=m)

        def h(late_vals):
            env = full(late_vals)
            return (env.partition(n, g) >= env.partition(n, g, upto=m)).astype(np.float64)

        out.append(fkg_exhaustive(space, f, h))
    return out


def random_increasing_pair(rng: np.random.Generator, max_atoms: int = 1 << 16):
    """A random product space and two increasing functions on it."""
    while True:
        k = int(rng.integers(1, 17))
        sizes = rng.integers(2, 5, size=k)
        if np.prod(sizes) <= max_atoms:
            break
    levels = [np.sort(rng.choice(np.arange(0, 10 * s), size=s, replace=False)).astype(float) / 4 for s in sizes]
    probs = [rng.dirichlet(np.ones(s)) for s in sizes]
    probs = [p / p.sum() for p in probs]
    space = ProductSpace(levels, probs)
    return space, _random_increasing(rng, k), _random_increasing(rng, k)


def _random_increasing(rng: np.random.Generator, k: int) -> Callable[[np.ndarray], np.ndarray]:
    kind = int(rng.integers(0, 5))
    w = rng.uniform(0.0, 1.0, size=k)
    if kind == 0:
        return lambda x: x @ w
    if kind == 1:
        thr = float(rng.uniform(0.2, 0.8)) * w.sum() * 5
        return lambda x: (x @ w >= thr).astype(float)
    if kind == 2:
        subset = rng.choice(k, size=int(rng.integers(1, k + 1)), replace=False)
        return lambda x: x[:, subset].max(axis=1)
    if kind == 3:
        # polymer-like: nonnegative sum of products over random coordinate sets
        sets = [rng.choice(k, size=int(rng.integers(1, min(k, 4) + 1)), replace=False) for _ in range(4)]
        return lambda x: sum(np.prod(x[:, s], axis=1) for s in sets)
    subset = rng.choice(k, size=int(rng.integers(1, k + 1)), replace=False)
    return lambda x: x[:, subset].min(axis=1)


# survival


@dataclass
class SurvivalRow:
    n: int
    replicas: int
    mean_w: float
    se_w: float
    median_w: float
    frac_above: float
    frac_positive: float
    mean_log_rate: float
    median_log_rate: float
    threshold: float

    @property
    def mean_one_z(self) -> float:
        """``(mean W_n - 1) / SE``; heavy tails make this unreliable in strong disorder."""
        if not self.se_w > 0:
            return 0.0 if self.mean_w == 1.0 else math.inf
        return (self.mean_w - 1.0) / self.se_w

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mean_one_z"] = self.mean_one_z
        return out


def _log_w_path(field: EnvironmentField, d: int, grid: Sequence[int], truncation: Truncation) -> list[float]:
    wanted = set(grid)
    slc = initial_slice(d)
    out = {}
    if 0 in wanted:
        out[0] = 0.0
    for _ in range(max(grid)):
        slc = forward_step(field, slc, truncation)
        if slc.n in wanted:
            out[slc.n] = total_mass(slc)
    return [out[n] for n in grid]


def survival_scan(
    spec: EnvironmentSpec,
    d: int,
    n_grid: Sequence[int],
    replicas: int,
    threshold: float = 1e-3,
    truncation: Truncation = EXACT,
    threads: int = 1,
) -> tuple[list[SurvivalRow], np.ndarray]:
    """Per-``n`` survival table and the ``(replicas, len(n_grid))`` matrix of ``log W_n``."""
    grid = sorted(set(int(n) for n in n_grid))
    logs = np.array(
        map_replicas(lambda r: _log_w_path(replica_field(spec, r), d, grid, truncation), range(replicas), threads)
    ).reshape(replicas, len(grid))
    rows = []
    for j, n in enumerate(grid):
        lw = logs[:, j]
        w = np.exp(lw)
        mean, se = _mean_se(w)
        rate = lw / n if n > 0 else np.zeros_like(lw)
        rows.append(
            SurvivalRow(
                n=n,
                replicas=replicas,
                mean_w=mean,
                se_w=se,
                median_w=float(np.median(w)),
                frac_above=float(np.mean(w > threshold)),
                frac_positive=float(np.mean(lw > -math.inf)),
                mean_log_rate=float(fsum(rate) / rate.size) if np.all(np.isfinite(rate)) else -math.inf,
                median_log_rate=float(np.median(rate)),
                threshold=threshold,
            )
        )
    return rows, logs


def survival_monotone(logs: np.ndarray) -> bool:
    """``{W_n > 0}`` shrinks along the grid for every replica."""
    alive = logs > -math.inf
    return bool(np.all(alive[:, 1:] <= alive[:, :-1]))


# theorem schedule


@dataclass
class ScheduleRow:
    n: int
    m: int
    phi_id: str
    median_nm: float
    median_mb: float
    mean_nm: float
    mean_mb: float
    brownian: float
    survivors: int
    replicas: int

    def to_dict(self) -> dict:
        return asdict(self)


def srw_smooth(values: np.ndarray, steps: int) -> np.ndarray:
    """``h(y) = E[values(y + S_steps)]`` for the simple random walk ``S``, on a periodic box.

    Uses the characteristic function ``((1/d) sum_j cos theta_j)^steps``; the
    caller makes the box wide enough that wrap-around carries negligible mass.
    """
    d = values.ndim
    side = values.shape
    if steps == 0:
        return values.copy()
    freqs = [np.fft.fftfreq(s) * 2 * np.pi for s in side[:-1]] + [np.fft.rfftfreq(side[-1]) * 2 * np.pi]
    grids = np.meshgrid(*freqs, indexing="ij", sparse=True)
    psi = sum(np.cos(g) for g in grids) / d
    return np.fft.irfftn(np.fft.rfftn(values) * psi**steps, s=side, axes=tuple(range(d)))


def _phi_on_box(phi, radius: int, n: int, d: int) -> np.ndarray:
    axis = np.arange(-radius, radius + 1) / math.sqrt(n)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([g.reshape(-1) for g in grids], axis=1)
    return phi(pts).reshape((2 * radius + 1,) * d)


def _schedule_tables(phis, d: int, n: int, m: int, tail_sd: float) -> list[np.ndarray]:
    """Per phi, ``h(y) = E[phi((y + S_{n-m}) / sqrt n)]`` on the box ``|y|_inf <= m``."""
    k = n - m
    half = m + 1 + int(math.ceil(tail_sd * math.sqrt(max(k, 1) / d)))
    out = []
    for phi in phis:
        h = srw_smooth(_phi_on_box(phi, half, n, d), k)
        cut = half - m
        out.append(np.ascontiguousarray(h[(slice(cut, cut + 2 * m + 1),) * d]))
    return out


def _schedule_replica(field, d, grid, ms, phis, tables, truncation):
    wanted_m = set(ms)
    wanted_n = set(grid)
    slc = initial_slice(d)
    at_m = {0: slc} if 0 in wanted_m else {}
    e_n = {}
    horizon = max(grid)
    for _ in range(horizon):
        slc = forward_step(field, slc, truncation)
        if slc.n in wanted_m:
            at_m[slc.n] = slc
        if slc.n in wanted_n:
            if slc.is_zero():
                e_n[slc.n] = None
                continue
            total = fsum(slc.weights.reshape(-1))
            pts = slc.coords() / math.sqrt(slc.n)
            e_n[slc.n] = [fsum(slc.weights.reshape(-1) * phi(pts)) / total for phi in phis]
    e_m = {}
    for n, m in zip(grid, ms):
        u = at_m[m]
        if u.is_zero():
            e_m[n] = None
            continue
        w = u.weights.reshape(-1)
        total = fsum(w)
        crop = (slice(m - u.radius, m + u.radius + 1),) * d
        e_m[n] = [fsum(w * tab[crop].reshape(-1)) / total for tab in tables[n]]
    return total_mass(slc), e_n, e_m


def theorem_schedule_check(
    spec: EnvironmentSpec,
    d: int,
    n_grid: Sequence[int],
    phi_family: Sequence[Mapping],
    replicas: int,
    threshold: float = 1e-3,
    truncation: Truncation = EXACT,
    threads: int = 1,
    tail_sd: float = 8.0,
    raw: bool = False,
):
    """``|E_n[phi(X^(n))] - E_m[phi(X^(n))]|`` and ``|E_m[phi(X^(n))] - E_B[phi]|`` with ``m = floor(n^(1/4))``.

    ``E_m`` is the law that follows the polymer for ``m`` steps and the simple
    random walk afterwards.  Medians and means are over replicas with
    ``W_N > threshold``, ``N = max(n_grid)``.
    """
    grid = sorted(set(int(n) for n in n_grid))
    ms = [int(math.floor(n**0.25 + 1e-12)) for n in grid]
    phis = [make_phi(s) for s in phi_family]
    names = [s.get("name", s["kind"]) for s in phi_family]
    tables = {n: _schedule_tables(phis, d, n, m, tail_sd) for n, m in zip(grid, ms)}
    results = map_replicas(
        lambda r: _schedule_replica(replica_field(spec, r), d, grid, ms, phis, tables, truncation),
        range(replicas),
        threads,
    )
    log_thr = math.log(threshold) if threshold > 0 else -math.inf
    alive = [res for res in results if res[0] > log_thr]
    if not alive:
        raise DegenerateInputError("no replica survives to the end of the grid")
    rows = []
    means = [phi.brownian_mean(d, 1.0) for phi in phis]
    nm_all = np.array([[[abs(res[1][n][i] - res[2][n][i]) for i in range(len(phis))] for n in grid] for res in alive])
    mb_all = np.array([[[abs(res[2][n][i] - means[i]) for i in range(len(phis))] for n in grid] for res in alive])
    for j, (n, m) in enumerate(zip(grid, ms)):
        for i, name in enumerate(names):
            eb = means[i]
            nm = nm_all[:, j, i]
            mb = mb_all[:, j, i]
            rows.append(
                ScheduleRow(
                    n=n,
                    m=m,
                    phi_id=name,
                    median_nm=float(np.median(nm)),
                    median_mb=float(np.median(mb)),
                    mean_nm=fsum(nm) / nm.size,
                    mean_mb=fsum(mb) / mb.size,
                    brownian=eb,
                    survivors=len(alive),
                    replicas=replicas,
                )
            )
    if raw:
        return rows, nm_all, mb_all
    return rows


def schedule_decreasing(rows: Sequence[ScheduleRow], column: str, aggregate: str = "max") -> bool:
    """Is the per-``n`` aggregate (over phi) of a median column strictly decreasing in ``n``?"""
    by_n: dict[int, list[float]] = {}
    for row in rows:
        by_n.setdefault(row.n, []).append(getattr(row, column))
    agg = {"max": max, "mean": lambda v: fsum(v) / len(v)}[aggregate]
    seq = [agg(by_n[n]) for n in sorted(by_n)]
    return all(b < a for a, b in zip(seq, seq[1:]))


# uniformity


@dataclass
class UniformityRecord:
    m: int
    n: int
    event_id: str
    value: float
    se: float
    survivors: int
    replicas: int
    p_event: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("uniformity value must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _event_id(event: CylinderEvent) -> str:
    return "+".join("".join("+-"[c < 0] + str(j + 1) for j, c in enumerate(step) if c) for step in event.pattern)


def _uniformity_replica(field, d, m_grid, n_grid, pattern, truncation):
    """``log W_N`` and ``{(m, n): P_n(B_m)}`` for a one-step pattern ``B_m = {X_{m+1} - X_m = pattern}``."""
    horizon = max(n_grid)
    wanted_m = {m for m in m_grid if m + 1 <= horizon}
    wanted_n = set(n_grid)
    slc = initial_slice(d)
    u = {0: slc} if 0 in wanted_m else {}
    log_w = {}
    for _ in range(horizon):
        slc = forward_step(field, slc, truncation)
        if slc.n in wanted_m:
            u[slc.n] = slc
        if slc.n in wanted_n:
            log_w[slc.n] = total_mass(slc)
    probs = {}
    for n in sorted(wanted_n):
        ms = [m for m in sorted(wanted_m) if m < n]
        if not ms or log_w[n] == -math.inf:
            continue
        v = backward_slices(field, d, n, [m + 1 for m in ms], truncation)
        for m in ms:
            probs[(m, n)] = math.exp(pair_mass(u[m], v[m + 1], pattern) - log_w[n])
    return log_w[horizon], probs


def uniformity_check(
    spec: EnvironmentSpec,
    d: int,
    m_grid: Sequence[int],
    n_grid: Sequence[int],
    step: Sequence[int],
    replicas: int,
    threshold: float = 1e-3,
    truncation: Truncation = EXACT,
    threads: int = 1,
) -> list[UniformityRecord]:
    """``E'|P_n(B) - P(B)|`` for ``B = {X_{m+1} - X_m = step}`` on the ``(m, n)`` grid.

    ``E'`` averages over replicas with ``W_N > threshold``, ``N = max(n_grid)``.
    For ``n <= m`` the event does not see the environment and the value is 0.
    """
    event = CylinderEvent(0, (tuple(step),))
    if event.d != d:
        raise ValueError("step dimension does not match the lattice")
    p_b = event.probability()
    name = _event_id(event)
    m_grid = sorted(set(int(m) for m in m_grid))
    n_grid = sorted(set(int(n) for n in n_grid))
    results = map_replicas(
        lambda r: _uniformity_replica(replica_field(spec, r), d, m_grid, n_grid, event.pattern[0], truncation),
        range(replicas),
        threads,
    )
    log_thr = math.log(threshold) if threshold > 0 else -math.inf
    alive = [res[1] for res in results if res[0] > log_thr]
    records = []
    for m in m_grid:
        for n in n_grid:
            if n <= m or not alive:
                records.append(UniformityRecord(m, n, name, 0.0, 0.0, len(alive), replicas, p_b))
                continue
            dev = [abs(pr[(m, n)] - p_b) for pr in alive]
            mean, se = _mean_se(dev)
            records.append(UniformityRecord(m, n, name, min(1.0, mean), 0.0 if math.isnan(se) else se, len(alive), replicas, p_b))
    return records


def uniformity_summary(records: Sequence[UniformityRecord]) -> dict[int, tuple[float, float]]:
    """``m -> (sup_n value, SE at the maximising n)``."""
    out: dict[int, tuple[float, float]] = {}
    for rec in records:
        if rec.m not in out or rec.value > out[rec.m][0]:
            out[rec.m] = (rec.value, rec.se)
    return out
