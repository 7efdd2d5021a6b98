"""Distances between sampled polymer marginals/paths and the Brownian limit."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

__all__ = [
    "EmpiricalMeasure1D",
    "GaussianMarginalSpec",
    "MetricReport",
    "ks_distance",
    "levy_distance",
    "covariance_deviation",
    "is_degenerate",
    "TestFunctionFamily",
    "random_test_family",
    "bounded_lipschitz_estimate",
    "lattice_jitter",
    "marginal_spacing",
    "marginal_report",
    "write_cdf_csv",
]

CDF = Callable[[np.ndarray], np.ndarray]


@dataclass
class EmpiricalMeasure1D:
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.sort(np.asarray(self.values, dtype=np.float64).reshape(-1))
        if self.values.size < 1:
            raise ValueError("empirical measure needs at least one sample")

    @property
    def count(self) -> int:
        return int(self.values.size)

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.values, x, side="right") / self.count


@dataclass(frozen=True)
class GaussianMarginalSpec:
    """Coordinate marginal of ``B_t`` for a Brownian motion with covariance ``I/d``."""

    t: float
    d: int

    def __post_init__(self) -> None:
        if not 0 < self.t <= 1 or self.d < 1:
            raise ValueError("need t in (0, 1] and d >= 1")

    @property
    def variance(self) -> float:
        return self.t / self.d

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return ndtr(np.asarray(x) / math.sqrt(self.variance))


def _as_emp(emp) -> EmpiricalMeasure1D:
    return emp if isinstance(emp, EmpiricalMeasure1D) else EmpiricalMeasure1D(emp)


def ks_distance(emp, cdf: CDF) -> float:
    """``sup_x |F_emp(x) - F(x)|`` for a continuous ``F``, checked on both sides of every jump."""
    emp = _as_emp(emp)
    x = emp.values
    n = emp.count
    f = np.asarray(cdf(x), dtype=np.float64)
    # with ties only the last (upper) and first (lower) index of each value count
    upper = np.searchsorted(x, x, side="right") / n
    lower = np.searchsorted(x, x, side="left") / n
    return float(min(1.0, max(0.0, np.max(upper - f), np.max(f - lower))))


def _levy_feasible(x: np.ndarray, upper: np.ndarray, lower: np.ndarray, cdf: CDF, eps: float) -> bool:
    if np.any(upper > np.asarray(cdf(x + eps)) + eps):
        return False
    left = np.asarray(cdf(np.nextafter(x - eps, -np.inf)))
    return not np.any(left - eps > lower)


def levy_distance(emp, cdf: CDF, tol: float = 1e-7) -> float:
    """Smallest ``eps`` with ``F(x-eps)-eps <= F_emp(x) <= F(x+eps)+eps`` for all ``x``.

    Bisection on ``[0, ks]``; the KS distance is always feasible, so the result
    never exceeds it.
    """
    emp = _as_emp(emp)
    x = emp.values
    n = emp.count
    upper = np.searchsorted(x, x, side="right") / n
    lower = np.searchsorted(x, x, side="left") / n
    hi = ks_distance(emp, cdf)
    if hi == 0.0:
        return 0.0
    if not _levy_feasible(x, upper, lower, cdf, hi):
        # discontinuous F: the sup over x may sit between samples; widen up to 1
        hi = 1.0
    lo = 0.0
    if _levy_feasible(x, upper, lower, cdf, 0.0):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _levy_feasible(x, upper, lower, cdf, mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


def is_degenerate(endpoints: np.ndarray) -> bool:
    endpoints = np.asarray(endpoints, dtype=np.float64)
    return bool(np.all(endpoints == endpoints[0]))


def covariance_deviation(endpoints: np.ndarray, variance: float) -> float:
    """Operator norm of ``Cov_hat / variance - I`` (population covariance).

    A degenerate batch (all points equal) is reported as 1.
    """
    endpoints = np.asarray(endpoints, dtype=np.float64)
    if endpoints.ndim == 1:
        endpoints = endpoints[:, None]
    if endpoints.shape[0] < 2:
        raise ValueError("covariance needs at least two points")
    if variance <= 0:
        raise ValueError("expected variance must be positive")
    if is_degenerate(endpoints):
        return 1.0
    cov = np.cov(endpoints, rowvar=False, bias=True).reshape(endpoints.shape[1], endpoints.shape[1])
    dev = cov / variance - np.eye(endpoints.shape[1])
    return float(np.max(np.abs(np.linalg.eigvalsh(dev))))


@dataclass
class TestFunctionFamily:
    """``phi(theta) = clip(offset + sum_j w_j theta[t_j, i_j], 0, 1)`` with ``sum |w_j| <= 1``.

    Each member is bounded by 1 and 1-Lipschitz for the sup norm on paths.
    """

    __test__ = False  # not a pytest class

    offsets: np.ndarray
    weights: np.ndarray  # (F, K)
    times: np.ndarray  # (F, K) indices into the t-grid
    axes: np.ndarray  # (F, K)

    def __len__(self) -> int:
        return int(self.offsets.shape[0])

    def evaluate(self, batch: np.ndarray) -> np.ndarray:
        """``batch`` (P, T, d) -> values (F, P)."""
        coords = batch[:, self.times, self.axes]  # (P, F, K)
        lin = self.offsets[None, :] + np.einsum("pfk,fk->pf", coords, self.weights)
        return np.clip(lin, 0.0, 1.0).T


def random_test_family(count: int, n_times: int, d: int, seed: int, max_terms: int = 3) -> TestFunctionFamily:
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=(count, max_terms))
    keep = np.arange(max_terms)[None, :] < rng.integers(1, max_terms + 1, size=count)[:, None]
    weights = weights * keep
    weights /= np.abs(weights).sum(axis=1, keepdims=True)
    return TestFunctionFamily(
        offsets=rng.uniform(0.25, 0.75, size=count),
        weights=weights,
        times=rng.integers(0, n_times, size=(count, max_terms)),
        axes=rng.integers(0, d, size=(count, max_terms)),
    )


def bounded_lipschitz_estimate(batch_a: np.ndarray, batch_b: np.ndarray, family: TestFunctionFamily) -> float:
    """``max_phi |mean_A phi - mean_B phi|``: a lower bound on the bounded-Lipschitz distance."""
    if len(family) == 0:
        raise ValueError("test function family is empty")
    batch_a = np.asarray(batch_a, dtype=np.float64)
    batch_b = np.asarray(batch_b, dtype=np.float64)
    if batch_a.shape[1:] != batch_b.shape[1:]:
        raise ValueError("batches must share the time grid and dimension")
    gap = family.evaluate(batch_a).mean(axis=1) - family.evaluate(batch_b).mean(axis=1)
    return float(min(1.0, np.max(np.abs(gap))))


def lattice_jitter(values: np.ndarray, spacing: float, uniforms: np.ndarray) -> np.ndarray:
    """Spread lattice-valued samples uniformly over one cell of width ``spacing``."""
    return np.asarray(values, dtype=np.float64) + spacing * (np.asarray(uniforms) - 0.5)


def marginal_spacing(n: int, d: int) -> float:
    """Lattice spacing of one coordinate of ``X_n / sqrt(n)``: parity forces steps of 2 when d = 1."""
    return (2.0 if d == 1 else 1.0) / math.sqrt(n)


@dataclass
class MetricReport:
    n: int
    t: float
    coordinate: int
    ks: float
    levy: float
    covariance_deviation: float
    bounded_lipschitz: float = 0.0
    samples: int = 0
    jittered: bool = True
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("ks", "levy", "covariance_deviation", "bounded_lipschitz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def marginal_report(
    positions: np.ndarray,
    n: int,
    t: float,
    jitter_uniforms: np.ndarray | None = None,
    bounded_lipschitz: float = 0.0,
) -> list[MetricReport]:
    """KS/Levy per coordinate and the covariance deviation of rescaled positions ``(P, d)`` at time ``t``."""
    positions = np.asarray(positions, dtype=np.float64)
    d = positions.shape[1]
    spec = GaussianMarginalSpec(t, d)
    cov = covariance_deviation(positions, spec.variance)
    reports = []
    for j in range(d):
        x = positions[:, j]
        if jitter_uniforms is not None:
            x = lattice_jitter(x, marginal_spacing(n, d), jitter_uniforms[:, j])
        reports.append(
            MetricReport(
                n=n,
                t=t,
                coordinate=j + 1,
                ks=ks_distance(x, spec.cdf),
                levy=levy_distance(x, spec.cdf),
                covariance_deviation=cov,
                bounded_lipschitz=bounded_lipschitz,
                samples=int(positions.shape[0]),
                jittered=jitter_uniforms is not None,
                degenerate=is_degenerate(positions),
            )
        )
    return reports


def write_cdf_csv(path, values: np.ndarray, cdf: CDF) -> None:
    """Plot-ready ``x, F_emp(x), F(x)`` rows."""
    emp = EmpiricalMeasure1D(values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "F_emp", "F"])
        fe = np.searchsorted(emp.values, emp.values, side="right") / emp.count
        for x, a, b in zip(emp.values, fe, cdf(emp.values)):
            writer.writerow([repr(float(x)), repr(float(a)), repr(float(b))])
