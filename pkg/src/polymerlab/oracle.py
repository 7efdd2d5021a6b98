"""Brute-force references: every path, and (for tiny instances) every environment.

Nothing here goes through the transfer recursion; the only shared piece is
the site-value hash of :mod:`polymerlab.env`.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .env import EnvironmentField, EnvironmentSpec, site_values

__all__ = [
    "TooLargeError",
    "MAX_ATOMS",
    "PathEnumeration",
    "all_paths",
    "enumerate_partition",
    "TinyInstance",
    "TinyEnvironment",
    "enumerate_environment_expectation",
    "kahan_sum",
]

MAX_ATOMS = 1 << 24


class TooLargeError(ValueError):
    """Enumeration would exceed the brute-force budget."""


def _fsum(values) -> float:
    # fsum over a list of floats is far faster than over numpy scalars
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist())


def kahan_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Compensated summation along ``axis`` (vectorised over the other axes)."""
    values = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    total = np.zeros(values.shape[1:])
    comp = np.zeros(values.shape[1:])
    for row in values:
        y = row - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


@lru_cache(maxsize=32)
def all_paths(d: int, n: int) -> np.ndarray:
    """Every n-step nearest-neighbour path from 0, shape ``((2d)^n, n+1, d)`` (read-only)."""
    if (2 * d) ** n > MAX_ATOMS:
        raise TooLargeError(f"(2d)^n = {(2 * d) ** n} paths exceeds {MAX_ATOMS}")
    steps = np.zeros((2 * d, d), dtype=np.int64)
    for j in range(d):
        steps[2 * j, j] = 1
        steps[2 * j + 1, j] = -1
    if n == 0:
        out = np.zeros((1, 1, d), dtype=np.int64)
        out.setflags(write=False)
        return out
    choice = np.array(list(itertools.product(range(2 * d), repeat=n)), dtype=np.int64)
    incr = steps[choice]
    paths = np.zeros((choice.shape[0], n + 1, d), dtype=np.int64)
    paths[:, 1:] = np.cumsum(incr, axis=1)
    paths.setflags(write=False)
    return paths


@lru_cache(maxsize=32)
def _endpoint_groups(d: int, n: int) -> tuple[list[tuple[int, ...]], np.ndarray, np.ndarray]:
    """Sorted endpoints of :func:`all_paths`, the path order grouping them, and the split points."""
    ends = all_paths(d, n)[:, -1]
    order = np.lexsort(ends.T[::-1])
    sorted_ends = ends[order]
    new = np.ones(len(order), dtype=bool)
    new[1:] = np.any(sorted_ends[1:] != sorted_ends[:-1], axis=1)
    starts = np.flatnonzero(new)
    keys = [tuple(int(c) for c in sorted_ends[i]) for i in starts]
    return keys, order, starts[1:]


@dataclass
class PathEnumeration:
    d: int
    n: int
    paths: np.ndarray  # (P, n+1, d)
    weights: np.ndarray  # prod of site values along each path

    @property
    def partition(self) -> float:
        """``W_n``."""
        return _fsum(self.weights) / (2 * self.d) ** self.n

    def endpoint_masses(self) -> dict[tuple[int, ...], float]:
        """``z -> W_n(X_n = z)``."""
        ends, order, cuts = _endpoint_groups(self.d, self.n)
        groups = np.split(self.weights[order], cuts)
        scale = (2 * self.d) ** self.n
        return {z: _fsum(ws) / scale for z, ws in zip(ends, groups)}

    def mass(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        """``W_n(g)`` for a path functional ``g`` evaluated on the path array."""
        vals = np.asarray(g(self.paths), dtype=np.float64)
        return _fsum(self.weights * vals) / (2 * self.d) ** self.n

    def probabilities(self) -> np.ndarray:
        """Per-path polymer probabilities (sum to one when ``W_n > 0``)."""
        total = _fsum(self.weights)
        if total == 0.0:
            raise ZeroDivisionError("W_n = 0: the polymer measure is undefined")
        return self.weights / total


def enumerate_partition(field: EnvironmentField, d: int, n: int) -> PathEnumeration:
    paths = all_paths(d, n)
    if n == 0:
        return PathEnumeration(d, 0, paths, np.ones(1))
    weights = np.ones(paths.shape[0])
    for k, (sites, inverse) in enumerate(_layer_sites(d, n), start=1):
        zeta = site_values(field, np.full(sites.shape[0], k), sites)
        weights = weights * zeta[inverse]
    return PathEnumeration(d, n, paths, weights)


@lru_cache(maxsize=32)
def _layer_sites(d: int, n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per time ``k``: the distinct sites visited and, per path, the index of its site."""
    paths = all_paths(d, n)
    out = []
    for k in range(1, n + 1):
        sites, inverse = np.unique(paths[:, k], axis=0, return_inverse=True)
        out.append((sites, inverse.reshape(-1)))
    return out


@dataclass
class TinyInstance:
    """All sites reachable by time ``n`` carrying two-point (or constant) variables.

    Sites are ordered by time, then lexicographically, and configuration
    ``c`` assigns to site ``s`` the atom ``(c >> (S-1-s)) & 1``: configurations
    agreeing on the first ``k`` layers form contiguous blocks.
    """

    d: int
    n: int
    spec: EnvironmentSpec = field(default_factory=lambda: EnvironmentSpec("TwoPoint", {"a": 0.5, "b": 1.5, "p": 0.5}))

    def __post_init__(self) -> None:
        self.atoms, self.atom_probs = self.spec.atoms()
        sites = []
        for k in range(1, self.n + 1):
            for x in itertools.product(range(-k, k + 1), repeat=self.d):
                if sum(abs(c) for c in x) <= k and (sum(x) + k) % 2 == 0:
                    sites.append((k, x))
        self.sites = sites
        self.index = {s: i for i, s in enumerate(sites)}
        if len(self.atoms) ** len(sites) > MAX_ATOMS:
            raise TooLargeError(f"{len(self.atoms)}^{len(sites)} environment atoms exceeds {MAX_ATOMS}")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def layer_sites(self, k: int) -> list[int]:
        return [i for i, (t, _) in enumerate(self.sites) if t == k]

    def environment(self) -> "TinyEnvironment":
        return TinyEnvironment(self)


class TinyEnvironment:
    """Every environment configuration of a :class:`TinyInstance` at once."""

    def __init__(self, inst: TinyInstance, values: np.ndarray | None = None) -> None:
        """``values`` (N, n_sites) evaluates at chosen configurations instead of all of them."""
        self.inst = inst
        S = inst.n_sites
        if values is not None:
            self.values = np.asarray(values, dtype=np.float64).reshape(-1, S)
            self.prob = np.full(self.values.shape[0], np.nan)
        else:
            if len(inst.atoms) == 1:
                codes = np.zeros((1, S), dtype=np.int64)
            else:
                c = np.arange(2**S, dtype=np.int64)
                codes = (c[:, None] >> (S - 1 - np.arange(S))[None, :]) & 1
            self.values = inst.atoms[codes]
            self.prob = np.prod(inst.atom_probs[codes], axis=1)
        self.paths = all_paths(inst.d, inst.n)
        cols = np.empty((self.paths.shape[0], inst.n), dtype=np.int64)
        for p, path in enumerate(self.paths):
            for k in range(1, inst.n + 1):
                cols[p, k - 1] = inst.index[(k, tuple(int(c) for c in path[k]))]
        self.cols = cols

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def partition(self, n: int, g: Callable[[np.ndarray], np.ndarray] | None = None, upto: int | None = None) -> np.ndarray:
        """``W_{upto}(g)`` for every configuration, with ``g`` a functional of the
        ``self.inst.n``-step path; ``upto`` defaults to ``n`` and ``g`` to 1.

        ``n`` is the length of the walk the functional sees; site values are
        applied only for times ``1..upto``.
        """
        upto = n if upto is None else upto
        if upto > n or n > self.inst.n:
            raise ValueError("need upto <= n <= instance horizon")
        # group paths of the full horizon by their first n steps
        paths = self.paths[:, : n + 1]
        gvals = np.ones(paths.shape[0]) if g is None else np.asarray(g(paths), dtype=np.float64)
        if np.any(gvals < 0) or np.any(gvals > 1):
            raise ValueError("functional must take values in [0, 1]")
        terms = np.empty((paths.shape[0], self.size))
        for p in range(paths.shape[0]):
            w = np.ones(self.size)
            for k in range(upto):
                w = w * self.values[:, self.cols[p, k]]
            terms[p] = w * gvals[p]
        # every n-step prefix appears (2d)^(N-n) times among the full-horizon paths
        total_paths = paths.shape[0]
        return kahan_sum(terms, axis=0) / total_paths

    def expectation(self, values: np.ndarray) -> float:
        return _fsum(self.prob * np.asarray(values, dtype=np.float64))

    def conditional(self, values: np.ndarray, layers: int) -> np.ndarray:
        """``E[values | F_layers]`` broadcast back to every configuration."""
        inst = self.inst
        if self.size == 1:
            return np.asarray(values, dtype=np.float64)
        fixed = sum(1 for (k, _) in inst.sites if k <= layers)
        block = 2 ** (inst.n_sites - fixed)
        v = np.asarray(values, dtype=np.float64).reshape(-1, block)
        p = self.prob.reshape(-1, block)
        cond = (v * p).sum(axis=1) / p.sum(axis=1)
        return np.repeat(cond, block)


def enumerate_environment_expectation(
    inst: TinyInstance, functional: Callable[[TinyEnvironment], np.ndarray]
) -> float:
    """Exact ``E[functional(zeta)]`` over all environment atoms of ``inst``."""
    env = inst.environment()
    return env.expectation(functional(env))
