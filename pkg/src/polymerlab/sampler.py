"""Exact sampling from the polymer measure by backward recursion.

Given the stored slices ``u_0..u_n``, the endpoint is drawn with weights
``u_n(z)`` and each earlier position from ``u_{k-1}(y)`` over the neighbours
``y`` of the current point (the site weight at time ``k`` and the ``1/2d``
factor are common to all candidates).  Uniforms come from a keyed stream
indexed by ``(seed, replica, path, step)`` so any single path can be
regenerated on its own.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .dp_core import PartitionSlice, unit_steps
from .env import _mix64, _to_unit, mix64

__all__ = [
    "NoMeasureError",
    "PolymerPath",
    "RescaledPath",
    "PathSampleBatch",
    "keyed_uniforms",
    "jitter_uniforms",
    "backward_sample",
    "sample_paths",
    "sample_endpoints",
    "interpolate",
    "rescale",
    "rescale_batch",
]

_SAMPLER_TAG = 0x73616D706C657221  # "sampler!"


class NoMeasureError(ValueError):
    """Raised when ``W_n = 0`` and the polymer measure is undefined."""


@njit(cache=True, nogil=True)
def _keyed(base, paths, step, out):
    s = np.uint64(step)
    for i in range(paths.shape[0]):
        v = _mix64(_mix64(base ^ np.uint64(paths[i])) ^ _mix64(s))
        out[i] = _to_unit(v)


def _stream_base(seed: int, replica: int) -> np.uint64:
    return np.uint64(mix64(mix64(seed ^ _SAMPLER_TAG) ^ (replica & ((1 << 64) - 1))))


def keyed_uniforms(seed: int, replica: int, path_indices: np.ndarray, step: int) -> np.ndarray:
    """One uniform in (0, 1) per path index for the given step."""
    path_indices = np.asarray(path_indices, dtype=np.int64)
    out = np.empty(path_indices.shape[0])
    _keyed(_stream_base(seed, replica), path_indices, step, out)
    return out


_JITTER_STEP = 1 << 62  # far above any path step key


def jitter_uniforms(seed: int, replica: int, path_indices: np.ndarray, d: int) -> np.ndarray:
    """``(P, d)`` uniforms for lattice jitter, disjoint from the sampling streams."""
    return np.stack([keyed_uniforms(seed, replica, path_indices, _JITTER_STEP + j) for j in range(d)], axis=1)


@dataclass
class PolymerPath:
    sites: np.ndarray

    def __post_init__(self) -> None:
        self.sites = np.asarray(self.sites, dtype=np.int64)
        if self.sites.ndim == 1:
            self.sites = self.sites.reshape(-1, 1)
        if np.any(self.sites[0] != 0):
            raise ValueError("a polymer path starts at the origin")
        steps = np.abs(np.diff(self.sites, axis=0)).sum(axis=1)
        if np.any(steps != 1):
            raise ValueError("consecutive sites must be lattice neighbours")

    @property
    def n(self) -> int:
        return self.sites.shape[0] - 1

    @property
    def d(self) -> int:
        return self.sites.shape[1]


def interpolate(path: PolymerPath | np.ndarray, s: float) -> np.ndarray:
    """Piecewise-linear position at real time ``s``; equals ``X_k`` at ``s = k``."""
    sites = path.sites if isinstance(path, PolymerPath) else np.asarray(path)
    n = sites.shape[0] - 1
    if not 0.0 <= s <= n:
        raise ValueError(f"time {s} outside [0, {n}]")
    k = min(int(math.floor(s)), n - 1) if n > 0 else 0
    if n == 0:
        return sites[0].astype(np.float64)
    frac = s - k
    return (1.0 - frac) * sites[k] + frac * sites[k + 1]


@dataclass
class RescaledPath:
    """``t -> n^{-1/2} X_{nt}`` on [0, 1]."""

    n: int
    sites: np.ndarray

    def __call__(self, t: float) -> np.ndarray:
        if not 0.0 <= t <= 1.0:
            raise ValueError("rescaled time must lie in [0, 1]")
        return interpolate(self.sites, self.n * t) / math.sqrt(self.n)

    def on_grid(self, ts: Sequence[float]) -> np.ndarray:
        return rescale_batch(self.sites[None, : self.n + 1], self.n, ts)[0]


def rescale(path: PolymerPath, n: int) -> RescaledPath:
    if path.n < n:
        raise ValueError("path shorter than the rescaling horizon")
    return RescaledPath(n, path.sites[: n + 1])


def rescale_batch(paths: np.ndarray, n: int, ts: Sequence[float]) -> np.ndarray:
    """Rescaled positions of a batch ``(P, >=n+1, d)`` on a time grid -> ``(P, T, d)``."""
    ts = np.asarray(ts, dtype=np.float64)
    s = n * ts
    k = np.minimum(np.floor(s).astype(np.int64), n - 1)
    frac = (s - k)[None, :, None]
    lo = paths[:, k, :]
    hi = paths[:, k + 1, :]
    return ((1.0 - frac) * lo + frac * hi) / math.sqrt(n)


def _draw_from_weights(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(weights)
    idx = np.searchsorted(cum, u * cum[-1], side="right")
    return np.minimum(idx, weights.size - 1)


def sample_endpoints(
    slc: PartitionSlice, seed: int, replica: int, path_indices: Sequence[int]
) -> np.ndarray:
    """Endpoints ``X_n`` drawn from ``P_n`` (endpoint-only batch mode)."""
    if slc.is_zero():
        raise NoMeasureError(f"W_{slc.n} = 0: the polymer measure is undefined")
    path_indices = np.asarray(path_indices, dtype=np.int64)
    u = keyed_uniforms(seed, replica, path_indices, slc.n)
    flat = _draw_from_weights(slc.weights.reshape(-1), u)
    return np.stack(np.unravel_index(flat, slc.weights.shape), axis=1) - slc.radius


def backward_sample(
    slices: Sequence[PartitionSlice], seed: int, replica: int, path_indices: Sequence[int]
) -> np.ndarray:
    """Paths ``(P, n+1, d)`` drawn exactly from ``P_n`` given slices ``0..n``."""
    n = len(slices) - 1
    d = slices[-1].d
    path_indices = np.asarray(path_indices, dtype=np.int64)
    n_paths = path_indices.shape[0]
    out = np.zeros((n_paths, n + 1, d), dtype=np.int64)
    out[:, n] = sample_endpoints(slices[n], seed, replica, path_indices)
    steps = unit_steps(d)
    for k in range(n, 0, -1):
        prev = slices[k - 1]
        r = prev.radius
        cand = out[:, k][:, None, :] - steps[None, :, :]  # predecessor y = z - step
        inside = np.all(np.abs(cand) <= r, axis=2)
        idx = np.clip(cand + r, 0, 2 * r)
        w = prev.weights[tuple(np.moveaxis(idx, 2, 0))] * inside
        cum = np.cumsum(w, axis=1)
        u = keyed_uniforms(seed, replica, path_indices, k - 1) * cum[:, -1]
        choice = np.minimum((cum <= u[:, None]).sum(axis=1), 2 * d - 1)
        out[:, k - 1] = cand[np.arange(n_paths), choice]
    return out


def sample_paths(
    slices: Sequence[PartitionSlice], seed: int, replica: int, path_indices: Sequence[int]
) -> list[PolymerPath]:
    return [PolymerPath(p) for p in backward_sample(slices, seed, replica, path_indices)]


@dataclass
class PathSampleBatch:
    """Sampled records of one environment replica."""

    seed: int
    replica: int
    path_indices: np.ndarray
    n: int
    environment: dict = field(default_factory=dict)
    endpoints: np.ndarray | None = None
    grid: np.ndarray | None = None
    rescaled: np.ndarray | None = None

    def rows(self) -> list[list]:
        rows = []
        if self.rescaled is not None:
            for i, p in enumerate(self.path_indices):
                rows.append([self.replica, int(p)] + [float(v) for v in self.rescaled[i].reshape(-1)])
        else:
            for i, p in enumerate(self.path_indices):
                rows.append([self.replica, int(p)] + [int(v) for v in self.endpoints[i]])
        return rows

    def header(self, d: int) -> list[str]:
        if self.rescaled is not None:
            cols = [f"t{t:g}_x{j + 1}" for t in self.grid for j in range(d)]
        else:
            cols = [f"x{j + 1}" for j in range(d)]
        return ["replica", "pathIndex"] + cols

    def write_csv(self, path, d: int, header: bool = True) -> None:
        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if header:
                writer.writerow(self.header(d))
            writer.writerows(self.rows())

    def summary(self) -> dict:
        data = self.rescaled[:, -1, :] if self.rescaled is not None else self.endpoints / math.sqrt(self.n)
        return {
            "replica": self.replica,
            "seed": str(self.seed),
            "n": self.n,
            "paths": int(len(self.path_indices)),
            "environment": self.environment,
            "mean": [float(x) for x in data.mean(axis=0)],
            "second_moment": [float(x) for x in (data**2).mean(axis=0)],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)
