"""The four run workflows (simulate, verify, scaling, report) behind the CLI.

Every workflow takes a :class:`RunConfig` and an output directory and writes
deterministic files there; wall-clock information goes only to the
``run_meta.json`` sidecar written by the CLI.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import dp_core
from .config import RunConfig
from .dp_core import CylinderEvent, EndpointFunctional, Truncation
from .env import EnvironmentField, EnvironmentSpec, replica_seed
from .functionals import default_path_family
from .metrics import (
    GaussianMarginalSpec,
    bounded_lipschitz_estimate,
    marginal_report,
    random_test_family,
    write_cdf_csv,
)
from .oracle import TinyInstance, enumerate_partition
from .sampler import backward_sample, jitter_uniforms, rescale_batch, sample_endpoints
from .verify import (
    DegenerateInputError,
    contraction_exhaustive,
    finite_json,
    contraction_monte_carlo,
    fkg_exhaustive,
    fkg_polymer_pairs,
    map_replicas,
    martingale_residual_exact,
    random_increasing_pair,
    replica_field,
    schedule_decreasing,
    survival_monotone,
    survival_scan,
    theorem_schedule_check,
    to_jsonl,
    uniformity_check,
    uniformity_summary,
)

__all__ = [
    "VerificationReport",
    "ORACLE_FAMILIES",
    "oracle_agreement",
    "mean_one_check",
    "decomposition_check",
    "run_check",
    "run_verify",
    "run_simulate",
    "run_scaling",
    "run_report",
    "slice_memory_mb",
    "MissingInputError",
]

ORACLE_FAMILIES = [
    EnvironmentSpec("Constant"),
    EnvironmentSpec("TwoPoint", {"a": 0.5, "b": 1.5, "p": 0.5}),
    EnvironmentSpec("TwoPoint", {"a": 0.0, "b": 2.0, "p": 0.5}),
    EnvironmentSpec("LogNormal", {"beta": 1.0}),
    EnvironmentSpec("ParetoTail", {"alpha": 1.5}),
]
TINY_SPEC = EnvironmentSpec("TwoPoint", {"a": 0.5, "b": 1.5, "p": 0.5})


class MissingInputError(OSError):
    """``report`` found none of the files it aggregates."""


@dataclass
class VerificationReport:
    check: str
    passed: bool
    values: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _rel(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def _tiny_spec(spec: EnvironmentSpec) -> EnvironmentSpec:
    return spec if spec.family in ("Constant", "TwoPoint") else TINY_SPEC


# oracle agreement


def oracle_agreement(spec: EnvironmentSpec, d: int, n: int, seed: int) -> float:
    """Largest relative gap between the DP and brute-force enumeration for one
    environment: total, every point-to-point mass, one endpoint functional and
    one cylinder event."""
    field_ = EnvironmentField(spec.with_seed(seed))
    enum = enumerate_partition(field_, d, n)
    slc = dp_core.run(field_, d, n)
    worst = _rel(math.exp(dp_core.total_mass(slc)), enum.partition)
    masses = enum.endpoint_masses()
    coords, logu = dp_core.point_to_point(slc)
    got = {tuple(int(c) for c in z): math.exp(lu) for z, lu in zip(coords, logu)}
    for z, w in masses.items():
        worst = max(worst, _rel(got.get(z, 0.0), w))
    g = EndpointFunctional(lambda z: (z[:, 0] > 0).astype(float), "endpoint_positive")
    worst = max(worst, _rel(math.exp(dp_core.endpoint_mass(slc, g)), enum.mass(lambda p: g(p[:, -1, :]))))
    rng = np.random.default_rng(seed & 0xFFFFFFFF)
    steps = dp_core.unit_steps(d)
    j = int(rng.integers(1, n + 1))
    m = int(rng.integers(0, n - j + 1))
    pattern = tuple(tuple(int(c) for c in steps[i]) for i in rng.integers(0, 2 * d, size=j))
    event = CylinderEvent(m, pattern)
    want = enum.mass(lambda p: np.all(np.diff(p[:, m : m + j + 1], axis=1) == np.array(pattern)[None], axis=(1, 2)))
    worst = max(worst, _rel(math.exp(dp_core.constrained_mass(field_, d, n, event)), want))
    return worst


def _check_oracle(cfg: RunConfig) -> VerificationReport:
    block = cfg.oracle
    worst = 0.0
    count = 0
    for d in block.dims:
        for n in range(1, block.max_n + 1):
            for spec in ORACLE_FAMILIES:
                for i in range(block.instances):
                    seed = replica_seed(cfg.seed, (d << 40) | (n << 32) | i)
                    worst = max(worst, oracle_agreement(spec, d, n, seed))
                    count += 1
    tol = cfg.tolerances.oracle_relative
    return VerificationReport("oracle", worst <= tol, {"max_relative_error": worst, "instances": count}, {"relative": tol})


# martingale


def mean_one_check(spec: EnvironmentSpec, d: int, n: int, replicas: int, truncation: Truncation, threads: int = 1) -> dict:
    rows, _ = survival_scan(spec, d, [n], replicas, 0.0, truncation, threads)
    row = rows[0]
    return {"n": n, "mean": row.mean_w, "se": row.se_w, "z": row.mean_one_z}


def _check_martingale(cfg: RunConfig) -> VerificationReport:
    tiny = _tiny_spec(cfg.environment)
    residuals = {}
    for d, n in cfg.martingale.instances:
        for spec in (tiny, EnvironmentSpec("TwoPoint", {"a": 0.0, "b": 2.0, "p": 0.5})):
            residuals[f"d{d}_n{n}_{spec.family}_{spec.params}"] = martingale_residual_exact(TinyInstance(d, n, spec))
    means = [mean_one_check(cfg.environment, cfg.d, n, cfg.replicas, cfg.trunc(), cfg.threads) for n in cfg.n_grid]
    k = cfg.tolerances.se_multiplier
    exact_ok = max(residuals.values()) <= cfg.tolerances.exact_atol
    mc_ok = all(abs(m["mean"] - 1.0) <= k * m["se"] + cfg.tolerances.exact_atol for m in means)
    return VerificationReport(
        "martingale",
        exact_ok and mc_ok,
        {"max_exact_residual": max(residuals.values()), "exact": residuals},
        {"exact_atol": cfg.tolerances.exact_atol, "se_multiplier": k},
        means,
    )


# contraction


def _check_contraction(cfg: RunConfig) -> VerificationReport:
    block = cfg.contraction
    tol = cfg.tolerances
    records = []
    if block.exhaustive:
        inst = TinyInstance(block.exhaustive_d, block.exhaustive_n, _tiny_spec(cfg.environment))
        records += contraction_exhaustive(inst, block.exhaustive_m, block.exhaustive_n, default_path_family(inst.d))
    records += contraction_monte_carlo(
        cfg.environment, cfg.d, block.m, block.n, cfg.gs(), cfg.replicas, cfg.trunc(), cfg.threads
    )
    ok = all(r.holds(tol.exact_atol, tol.se_multiplier) for r in records)
    return VerificationReport(
        "contraction",
        ok,
        {"records": len(records), "violations": sum(not r.holds(tol.exact_atol, tol.se_multiplier) for r in records)},
        {"exact_atol": tol.exact_atol, "se_multiplier": tol.se_multiplier},
        [r.to_dict() for r in records],
    )


# FKG


def _check_fkg(cfg: RunConfig) -> VerificationReport:
    block = cfg.fkg
    rng = np.random.default_rng(cfg.seed)
    covs = [fkg_exhaustive(*random_increasing_pair(rng, block.max_atoms)) for _ in range(block.pairs)]
    inst = TinyInstance(1, block.pair_n, _tiny_spec(cfg.environment))
    polymer = {}
    for spec in default_path_family(1):
        polymer[spec["name"]] = min(fkg_polymer_pairs(inst, block.pair_m, spec))
    worst = min(covs + list(polymer.values()))
    tol = cfg.tolerances.exact_atol
    return VerificationReport(
        "fkg",
        worst >= -tol,
        {"min_covariance": worst, "random_pairs": len(covs), "polymer_pairs": polymer},
        {"exact_atol": tol},
    )


# decomposition


def decomposition_check(seed: int, instances: int, max_n: int, max_k: int, dims=(1, 2, 3)) -> list[dict]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(instances):
        d = int(dims[i % len(dims)])
        spec = ORACLE_FAMILIES[int(rng.integers(0, len(ORACLE_FAMILIES)))]
        n = int(rng.integers(0, max_n + 1))
        k = int(rng.integers(0, max_k + 1))
        field_ = EnvironmentField(spec.with_seed(int(rng.integers(0, 2**63))))
        out.append({"d": d, "n": n, "k": k, "family": spec.family, "residual": dp_core.decomposition_residual(field_, d, n, k)})
    return out


def _check_decomposition(cfg: RunConfig) -> VerificationReport:
    block = cfg.decomposition
    recs = decomposition_check(cfg.seed, block.instances, block.max_n, block.max_k)
    worst = max(r["residual"] for r in recs)
    tol = cfg.tolerances.decomposition_residual
    return VerificationReport("decomposition", worst <= tol, {"max_residual": worst}, {"residual": tol}, recs)


# survival, schedule, uniformity


def _check_survival(cfg: RunConfig) -> VerificationReport:
    rows, logs = survival_scan(
        cfg.environment, cfg.d, cfg.n_grid, cfg.replicas, cfg.survival_threshold, cfg.trunc(), cfg.threads
    )
    monotone = survival_monotone(logs)
    fracs = [r.frac_above for r in rows]
    return VerificationReport(
        "survival",
        monotone,
        {
            "positive_sets_nested": monotone,
            "frac_above_first": fracs[0],
            "frac_above_last": fracs[-1],
            "median_w": [r.median_w for r in rows],
        },
        {"threshold": cfg.survival_threshold},
        [r.to_dict() for r in rows],
    )


def _check_schedule(cfg: RunConfig) -> VerificationReport:
    rows = theorem_schedule_check(
        cfg.environment,
        cfg.d,
        cfg.n_grid,
        cfg.phis(),
        cfg.replicas,
        cfg.survival_threshold,
        cfg.trunc(),
        cfg.threads,
        cfg.tolerances.brownian_tail_sd,
    )
    atol = cfg.tolerances.exact_atol * 100
    verdict = {}
    for name in sorted({r.phi_id for r in rows}):
        sub = [r for r in rows if r.phi_id == name]
        verdict[name] = {}
        for col in ("median_nm", "median_mb"):
            flat = all(getattr(r, col) <= atol for r in sub)
            verdict[name][col] = flat or schedule_decreasing(sub, col)
    ok = all(all(v.values()) for v in verdict.values())
    return VerificationReport("schedule", ok, {"decreasing": verdict}, {"zero_atol": atol}, [r.to_dict() for r in rows])


def _check_uniformity(cfg: RunConfig) -> VerificationReport:
    records = []
    ok = True
    summaries = {}
    k = cfg.tolerances.se_multiplier
    atol = cfg.tolerances.exact_atol * 100
    for name, step in cfg.event_steps():
        recs = uniformity_check(
            cfg.environment, cfg.d, cfg.ms(), cfg.n_grid, step, cfg.replicas, cfg.survival_threshold, cfg.trunc(), cfg.threads
        )
        records += [r.to_dict() for r in recs]
        zero_ok = all(r.value == 0.0 for r in recs if r.n <= r.m)
        summary = uniformity_summary(recs)
        lo_m, hi_m = min(summary), max(summary)
        (a, sa), (b, sb) = summary[lo_m], summary[hi_m]
        if all(r.value <= atol for r in recs):
            sep_ok = True
        else:
            sep_ok = a - b > k * math.hypot(sa, sb)
        summaries[name] = {"sup_by_m": {str(m): v for m, v in summary.items()}, "separated": sep_ok, "zero_for_n_le_m": zero_ok}
        ok = ok and zero_ok and sep_ok
    return VerificationReport("uniformity", ok, summaries, {"se_multiplier": k}, records)


_CHECKS: dict[str, Callable[[RunConfig], VerificationReport]] = {
    "oracle": _check_oracle,
    "martingale": _check_martingale,
    "contraction": _check_contraction,
    "fkg": _check_fkg,
    "decomposition": _check_decomposition,
    "survival": _check_survival,
    "schedule": _check_schedule,
    "uniformity": _check_uniformity,
}


def run_check(name: str, cfg: RunConfig) -> VerificationReport:
    try:
        return _CHECKS[name](cfg)
    except DegenerateInputError as exc:
        return VerificationReport(name, False, {"error": str(exc)})


def run_verify(cfg: RunConfig, out: Path) -> list[VerificationReport]:
    reports = [run_check(name, cfg) for name in cfg.checks]
    out.mkdir(parents=True, exist_ok=True)
    if cfg.format == "csv":
        with open(out / "verify.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["check", "passed", "values"])
            for r in reports:
                writer.writerow([r.check, int(r.passed), finite_json(r.values)])
    (out / "verify.jsonl").write_text(to_jsonl(reports))
    return reports


# simulate and scaling


def slice_memory_mb(d: int, n: int, truncation: Truncation) -> float:
    """Memory needed to keep every slice ``u_0..u_n``."""
    total = sum((2 * min(k, truncation.radius(k)) + 1) ** d for k in range(n + 1))
    return total * 8 / 2**20


def _replica_samples(cfg: RunConfig, r: int, grid: list[int], times: np.ndarray, need_paths: bool):
    """``{n: (log W_n, positions (P, T, d) rescaled)}`` for one replica."""
    field_ = replica_field(cfg.environment, r)
    seed = field_.spec.seed
    idx = np.arange(cfg.samples_per_replica)
    wanted = set(grid)
    out = {}
    slc = dp_core.initial_slice(cfg.d)
    slices = [slc] if need_paths else None
    for _ in range(max(grid)):
        slc = dp_core.forward_step(field_, slc, cfg.trunc())
        if need_paths:
            slices.append(slc)
        if slc.n not in wanted:
            continue
        log_w = dp_core.total_mass(slc)
        if slc.is_zero():
            out[slc.n] = (log_w, None, None)
            continue
        if need_paths:
            paths = backward_sample(slices[: slc.n + 1], seed, r, idx)
            pos = rescale_batch(paths, slc.n, times)
            lattice = paths[:, -1, :]
        else:
            lattice = sample_endpoints(slc, seed, r, idx)
            pos = (lattice / math.sqrt(slc.n))[:, None, :]
        out[slc.n] = (log_w, pos, lattice)
    return out


def _collect(cfg: RunConfig):
    grid = sorted(set(cfg.n_grid))
    need_paths = cfg.sampling == "paths"
    times = np.asarray(cfg.time_grid if need_paths else [1.0], dtype=np.float64)
    if need_paths:
        mem = slice_memory_mb(cfg.d, max(grid), cfg.trunc())
        if mem > cfg.memory_budget_mb:
            raise MemoryError(
                f"path sampling needs {mem:.0f} MB of slices, above memoryBudgetMB={cfg.memory_budget_mb}; "
                "use sampling='endpoints' or a truncation"
            )
    results = map_replicas(lambda r: _replica_samples(cfg, r, grid, times, need_paths), range(cfg.replicas), cfg.threads)
    return grid, times, results


def run_simulate(cfg: RunConfig, out: Path) -> dict:
    grid, times, results = _collect(cfg)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    rows = []
    for r, res in enumerate(results):
        for n in grid:
            log_w, pos, lattice = res[n]
            rec: dict[str, Any] = {"replica": r, "n": n, "logW": log_w if math.isfinite(log_w) else None}
            if pos is None:
                rec["paths"] = 0
                lines.append(finite_json(rec))
                continue
            rec["paths"] = int(pos.shape[0])
            rec["times"] = [float(t) for t in times]
            lines.append(finite_json(rec))
            for p in range(pos.shape[0]):
                sample = {
                    "replica": r,
                    "n": n,
                    "path": p,
                    "endpoint": [int(c) for c in lattice[p]],
                    "rescaled": [[float(v) for v in pos[p, t]] for t in range(len(times))],
                }
                lines.append(finite_json(sample))
                for t, tv in enumerate(times):
                    rows.append([r, n, p, repr(float(tv))] + [repr(float(v)) for v in pos[p, t]])
    (out / "simulate.jsonl").write_text("".join(line + "\n" for line in lines))
    if cfg.format == "csv":
        with open(out / "simulate.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replica", "n", "path", "t"] + [f"x{j + 1}" for j in range(cfg.d)])
            writer.writerows(rows)
    return {"replicas": cfg.replicas, "grid": grid}


def _brownian_batch(seed: int, count: int, times: np.ndarray, d: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dt = np.diff(np.concatenate([[0.0], times]))
    incr = rng.normal(size=(count, times.size, d)) * np.sqrt(dt / d)[None, :, None]
    return np.cumsum(incr, axis=1)


def run_scaling(cfg: RunConfig, out: Path) -> tuple[list[dict], bool]:
    """Pooled metric reports per ``n`` over replicas with ``W_n > threshold``."""
    grid, times, results = _collect(cfg)
    out.mkdir(parents=True, exist_ok=True)
    family = random_test_family(64, times.size, cfg.d, cfg.seed & 0xFFFFFFFF)
    all_reports = []
    ok = True
    tol = cfg.tolerances
    log_thr = math.log(cfg.survival_threshold) if cfg.survival_threshold > 0 else -math.inf
    for n in grid:
        alive = [r for r, res in enumerate(results) if res[n][1] is not None and res[n][0] > log_thr]
        if not alive:
            all_reports.append({"n": n, "survivors": 0, "error": "no surviving replica"})
            ok = False
            continue
        pos = np.concatenate([results[r][n][1] for r in alive], axis=0)
        jit = np.concatenate(
            [jitter_uniforms(replica_seed(cfg.seed, r), r, np.arange(cfg.samples_per_replica), cfg.d) for r in alive]
        )
        brown = _brownian_batch(cfg.seed & 0xFFFFFFFF, pos.shape[0], times, cfg.d)
        bl = bounded_lipschitz_estimate(pos, brown, family)
        rows = []
        for ti, t in enumerate(times):
            for rep in marginal_report(pos[:, ti, :], n, float(t), jit, bl):
                rep.extra = {"survivors": len(alive), "replicas": cfg.replicas}
                rows.append(rep)
                if rep.levy > rep.ks:
                    ok = False
                if tol.ks_threshold is not None and rep.ks > tol.ks_threshold:
                    ok = False
                if rep.covariance_deviation > tol.covariance_threshold:
                    ok = False
        with open(out / f"scaling_n{n}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "coordinate", "ks", "levy", "covarianceDeviation", "boundedLipschitz", "samples"])
            for rep in rows:
                writer.writerow(
                    [repr(rep.t), rep.coordinate, repr(rep.ks), repr(rep.levy), repr(rep.covariance_deviation), repr(rep.bounded_lipschitz), rep.samples]
                )
        with open(out / f"samples_n{n}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{j + 1}" for j in range(cfg.d)])
            for ti, t in enumerate(times):
                for p in range(pos.shape[0]):
                    writer.writerow([repr(float(t))] + [repr(float(v)) for v in pos[p, ti]])
        all_reports += [rep.to_dict() for rep in rows]
    (out / "scaling.jsonl").write_text(to_jsonl(all_reports))
    return all_reports, ok


# report


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def run_report(cfg: RunConfig, out: Path) -> list[str]:
    """Summarise whatever earlier workflows left in ``out``; returns the summary lines."""
    sources = {name: out / name for name in ("verify.jsonl", "scaling.jsonl", "simulate.jsonl")}
    present = {k: v for k, v in sources.items() if v.exists()}
    if not present:
        raise MissingInputError(f"no verify/scaling/simulate outputs found in {out}")
    lines = []
    if "verify.jsonl" in present:
        lines.append("verification")
        for rec in _read_jsonl(present["verify.jsonl"]):
            lines.append(f"  {rec['check']:<14} {'PASS' if rec['passed'] else 'FAIL'}")
    if "scaling.jsonl" in present:
        reps = [r for r in _read_jsonl(present["scaling.jsonl"]) if "ks" in r]
        lines.append("scaling")
        with open(out / "scaling.dat", "w") as fh:
            fh.write("# n t coordinate ks levy covariance_deviation\n")
            for r in reps:
                fh.write(f"{r['n']} {r['t']!r} {r['coordinate']} {r['ks']!r} {r['levy']!r} {r['covariance_deviation']!r}\n")
                lines.append(
                    f"  n={r['n']:<5} t={r['t']:<5} x{r['coordinate']} ks={r['ks']:.4f} levy={r['levy']:.4f} cov={r['covariance_deviation']:.4f}"
                )
        for sample_file in sorted(out.glob("samples_n*.csv")):
            n = int(sample_file.stem.split("_n")[1])
            data = np.loadtxt(sample_file, delimiter=",", skiprows=1, ndmin=2)
            for t in np.unique(data[:, 0]):
                block = data[data[:, 0] == t, 1:]
                spec = GaussianMarginalSpec(float(t), block.shape[1])
                for j in range(block.shape[1]):
                    write_cdf_csv(out / f"cdf_n{n}_t{t:g}_x{j + 1}.csv", block[:, j], spec.cdf)
    if "simulate.jsonl" in present:
        recs = [r for r in _read_jsonl(present["simulate.jsonl"]) if "logW" in r]
        lines.append("simulate")
        with open(out / "logw.dat", "w") as fh:
            fh.write("# replica n logW\n")
            for r in recs:
                fh.write(f"{r['replica']} {r['n']} {r['logW']!r}\n")
        lines.append(f"  {len(recs)} replica-time records")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return lines
