"""Forward transfer recursion for point-to-point partition functions.

A slice at time ``n`` holds ``u_n(z) = W_n(X_n = z)`` on the box
``[-r, r]^d`` as linear weights divided by their maximum, together with the
log of that maximum.  Entries off the parity sublattice are zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numba import njit

from .env import (
    EnvironmentField,
    MAX_DIM,
    _AXIS_MULT,
    _mix64,
    _quantile,
    _time_key,
    _to_unit,
    layer_values,
    shifted,
)

__all__ = [
    "PartitionSlice",
    "Truncation",
    "CylinderEvent",
    "EndpointFunctional",
    "initial_slice",
    "forward_step",
    "backward_slices",
    "pair_mass",
    "iterate_slices",
    "run",
    "total_mass",
    "point_to_point",
    "endpoint_mass",
    "constrained_mass",
    "decomposition_residual",
    "logsumexp",
    "fsum",
]


def fsum(values) -> float:
    """Correctly rounded sum; ``math.fsum`` over a list is much faster than over numpy scalars."""
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist())


def logsumexp(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        return -math.inf
    top = values.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + math.log(fsum(np.exp(values - top))))


@dataclass
class PartitionSlice:
    n: int
    d: int
    weights: np.ndarray
    log_scale: float
    discarded: float = 0.0

    @property
    def radius(self) -> int:
        return (self.weights.shape[0] - 1) // 2

    def is_zero(self) -> bool:
        return self.log_scale == -math.inf

    def axis(self) -> np.ndarray:
        r = self.radius
        return np.arange(-r, r + 1)

    def coords(self) -> np.ndarray:
        """All box points, shape ``(side**d, d)`` in C order."""
        grids = np.meshgrid(*([self.axis()] * self.d), indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights) + self.log_scale

    def point_log_mass(self, z: Sequence[int]) -> float:
        z = np.asarray(z, dtype=np.int64)
        if np.any(np.abs(z) > self.radius):
            return -math.inf
        w = self.weights[tuple(z + self.radius)]
        return math.log(w) + self.log_scale if w > 0 else -math.inf

    def to_csv(self, path) -> None:
        coords, logu = point_to_point(self)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"z_{i + 1}" for i in range(self.d)] + ["log_u"])
            for z, lu in zip(coords, logu):
                writer.writerow([int(c) for c in z] + [repr(float(lu))])


@dataclass(frozen=True)
class Truncation:
    """Box window of radius ``ceil(c * sqrt(n))`` at time ``n``; ``c=None`` is exact."""

    c: float | None = None

    def radius(self, n: int) -> int:
        if self.c is None:
            return n
        return min(n, int(math.ceil(self.c * math.sqrt(n))))


EXACT = Truncation(None)


@dataclass(frozen=True)
class CylinderEvent:
    """``{X_{m+i} - X_{m+i-1} = pattern[i-1], i = 1..j}``."""

    offset: int
    pattern: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if self.offset < 0:
            raise ValueError("event offset must be >= 0")
        pattern = tuple(tuple(int(c) for c in step) for step in self.pattern)
        if not pattern:
            raise ValueError("event pattern must contain at least one increment")
        dims = {len(step) for step in pattern}
        if len(dims) != 1:
            raise ValueError("all increments must have the same dimension")
        for step in pattern:
            if sum(abs(c) for c in step) != 1:
                raise ValueError(f"increment {step} is not a unit lattice vector")
        object.__setattr__(self, "pattern", pattern)

    @property
    def d(self) -> int:
        return len(self.pattern[0])

    @property
    def length(self) -> int:
        return len(self.pattern)

    def probability(self) -> float:
        """Probability under the simple random walk."""
        return (2 * self.d) ** (-self.length)

    @staticmethod
    def all_patterns(d: int, j: int, offset: int) -> list["CylinderEvent"]:
        steps = unit_steps(d)
        out = []
        for idx in np.ndindex(*([2 * d] * j)):
            out.append(CylinderEvent(offset, tuple(tuple(steps[i]) for i in idx)))
        return out

    def to_dict(self) -> dict:
        return {"offset": self.offset, "pattern": [list(s) for s in self.pattern]}

    @classmethod
    def from_dict(cls, data) -> "CylinderEvent":
        return cls(int(data["offset"]), tuple(tuple(s) for s in data["pattern"]))


@dataclass(frozen=True)
class EndpointFunctional:
    """``g(X) = rule(X_n)`` with ``rule`` mapping an ``(M, d)`` integer array to [0, 1]."""

    rule: Callable[[np.ndarray], np.ndarray]
    name: str = "g"

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        values = np.asarray(self.rule(np.asarray(coords)), dtype=np.float64).reshape(-1)
        if values.size and (values.min() < 0.0 or values.max() > 1.0 or np.isnan(values).any()):
            raise ValueError(f"functional {self.name!r} leaves the range [0, 1]")
        return values


def unit_steps(d: int) -> np.ndarray:
    """The 2d unit increments in fixed order +e_1, -e_1, +e_2, ..."""
    steps = np.zeros((2 * d, d), dtype=np.int64)
    for j in range(d):
        steps[2 * j, j] = 1
        steps[2 * j + 1, j] = -1
    return steps


def step_index(step: Sequence[int]) -> int:
    step = list(step)
    for j, c in enumerate(step):
        if c == 1:
            return 2 * j
        if c == -1:
            return 2 * j + 1
    raise ValueError(f"{step} is not a unit step")


@njit(cache=True, nogil=True)
def _step_kernel(padded, d, n_next, offs, code, params, tkey, axis_keys, env_on, layer, r_keep, out, stats):
    """One transfer step on flat C-order boxes.

    ``padded`` is the previous slice zero-padded by two on every side, so it
    has the side ``so + 2`` where ``so`` is the side of ``out`` (the radius
    grows by one per step).  ``out`` must be zero on entry; only sites of the
    right parity are written.  ``offs`` lists the flat offsets (in ``padded``)
    of the admitted predecessors.  ``layer`` (same size as ``out``) replaces
    hashed site values when non-empty.  ``stats`` receives (max inside the
    radius ``r_keep`` window, mass inside, mass outside).
    """
    total = out.shape[0]
    so = int(round(total ** (1.0 / d)))
    while so**d < total:
        so += 1
    while so**d > total:
        so -= 1
    ps = so + 2
    r_out = so // 2
    ostr = np.empty(d, dtype=np.int64)
    pstr = np.empty(d, dtype=np.int64)
    s = 1
    t = 1
    for j in range(d - 1, -1, -1):
        ostr[j] = s
        pstr[j] = t
        s *= so
        t *= ps
    inv = 1.0 / (2.0 * d)
    use_layer = layer.shape[0] > 0
    last = d - 1
    n_offs = offs.shape[0]
    top = 0.0
    kept = 0.0
    lost = 0.0
    n_rows = total // so
    idx = np.zeros(d, dtype=np.int64)
    for row in range(n_rows):
        # decode outer coordinates of this row
        rem = row
        par = n_next
        obase = 0
        pbase = 0
        row_inside = True
        hrow = np.uint64(0)
        for j in range(last - 1, -1, -1):
            idx[j] = rem % so
            rem //= so
        for j in range(last):
            par += idx[j] - r_out
            obase += idx[j] * ostr[j]
            pbase += (idx[j] + 1) * pstr[j]
            if abs(idx[j] - r_out) > r_keep:
                row_inside = False
            hrow = hrow + axis_keys[j, idx[j]]
        start = (par - r_out) % 2
        for c in range(start, so, 2):
            p = pbase + c + 1
            acc = 0.0
            for q in range(n_offs):
                acc += padded[p + offs[q]]
            if acc > 0.0:
                acc *= inv
                flat = obase + c
                if use_layer:
                    acc *= layer[flat]
                elif env_on:
                    v = _mix64(tkey ^ _mix64(hrow + axis_keys[last, c]))
                    acc *= _quantile(code, params, _to_unit(v))
                out[flat] = acc
                if row_inside and abs(c - r_out) <= r_keep:
                    kept += acc
                    if acc > top:
                        top = acc
                else:
                    lost += acc
    stats[0] = top
    stats[1] = kept
    stats[2] = lost


_EMPTY = np.zeros(0)


def _neighbour_offsets(d: int, side: int, allowed: np.ndarray | None) -> np.ndarray:
    # arrival by +e_j comes from z - e_j, arrival by -e_j from z + e_j
    offs = []
    for j in range(d):
        stride = side ** (d - 1 - j)
        if allowed is None or allowed[2 * j]:
            offs.append(-stride)
        if allowed is None or allowed[2 * j + 1]:
            offs.append(stride)
    return np.array(offs, dtype=np.int64)


def initial_slice(d: int) -> PartitionSlice:
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"dimension must be between 1 and {MAX_DIM}")
    return PartitionSlice(0, d, np.ones((1,) * d), 0.0)


def _axis_keys(field: EnvironmentField, d: int, radius: int) -> np.ndarray:
    offset = field.offset(d)
    base = np.arange(-radius, radius + 1, dtype=np.int64)
    keys = np.empty((d, 2 * radius + 1), dtype=np.uint64)
    for j in range(d):
        c = base + offset[j]
        keys[j] = ((c << 1) ^ (c >> 63)).astype(np.uint64) * _AXIS_MULT[j]
    return keys


def _transfer(
    field: EnvironmentField,
    weights: np.ndarray,
    time: int,
    r_keep: int,
    layer: np.ndarray | None = None,
    allowed: np.ndarray | None = None,
) -> tuple[np.ndarray, float, float]:
    """``out(z) = zeta_{time,z} / (2d) * sum of weights over admitted neighbours``.

    Computed on the box one larger than ``weights`` and cropped to ``r_keep``.
    Returns (max-normalised output, log of the normaliser, fraction of the
    output mass falling outside the crop).
    """
    d = weights.ndim
    r_full = (weights.shape[0] - 1) // 2 + 1
    r_keep = min(r_keep, r_full)
    env_on = not field.is_constant() and (field.horizon is None or time <= field.horizon)
    hashed = env_on and layer is None
    axis_keys = _axis_keys(field, d, r_full) if hashed else np.zeros((d, 1), dtype=np.uint64)
    tkey = np.uint64(int(_time_key(np.uint64(field.spec.seed), time + field.shift_n))) if hashed else np.uint64(0)
    if layer is not None:
        layer = np.ascontiguousarray(layer, dtype=np.float64).reshape(-1)
        if layer.shape[0] != (2 * r_full + 1) ** d:
            raise ValueError("explicit layer must cover the radius r+1 box")
    out = np.zeros((2 * r_full + 1) ** d)
    stats = np.zeros(3)
    _step_kernel(
        np.pad(weights, 2).reshape(-1),
        d,
        time,
        _neighbour_offsets(d, 2 * r_full + 3, allowed),
        field.spec.code,
        field.spec.kernel_params(),
        tkey,
        axis_keys,
        env_on,
        _EMPTY if layer is None else layer,
        r_keep,
        out,
        stats,
    )
    top, kept, lost = stats
    out = out.reshape((2 * r_full + 1,) * d)
    lost_frac = 0.0
    if r_keep < r_full:
        cut = r_full - r_keep
        if lost > 0:
            lost_frac = lost / (kept + lost)
        out = np.ascontiguousarray(out[(slice(cut, -cut),) * d])
    if top <= 0.0:
        return np.zeros_like(out), -math.inf, lost_frac
    out /= top
    return out, math.log(top), lost_frac


def forward_step(
    field: EnvironmentField,
    slc: PartitionSlice,
    truncation: Truncation = EXACT,
    layer: np.ndarray | None = None,
    allowed: np.ndarray | None = None,
) -> PartitionSlice:
    """``u_{n+1}(z) = zeta_{n+1,z} / (2d) * sum_{|y-z|_1=1} u_n(y)``.

    ``layer`` supplies explicit site values on the radius ``r+1`` box instead
    of the field; ``allowed`` restricts the arrival increments (forced steps).
    """
    d = slc.d
    n_next = slc.n + 1
    r_new = min(slc.radius + 1, truncation.radius(n_next))
    if slc.is_zero():
        return PartitionSlice(n_next, d, np.zeros((2 * r_new + 1,) * d), -math.inf, slc.discarded)
    out, log_top, lost = _transfer(field, slc.weights, n_next, r_new, layer, allowed)
    return PartitionSlice(n_next, d, out, slc.log_scale + log_top, slc.discarded + lost)


def backward_slices(
    field: EnvironmentField,
    d: int,
    n: int,
    times: Sequence[int],
    truncation: Truncation = EXACT,
) -> dict[int, PartitionSlice]:
    """Line-to-point weights ``v_t(z) = E_z[prod_{i=t}^{n} zeta_{i, X_{i-t}}]``
    (walk started at ``z`` at time ``t``), for each ``t`` in ``times``.

    ``v_t`` is stored on the forward window of time ``t``, so that
    ``W_n = sum_z u_m(z) / (2d) * sum_e v_{m+1}(z + e)`` for any ``m < n``.
    """
    wanted = set(times)
    if any(t < 1 or t > n for t in wanted):
        raise ValueError("backward times must lie in [1, n]")
    r = truncation.radius(n)
    side = 2 * r + 1
    axis = np.arange(-r, r + 1)
    parity = sum(np.ix_(*([axis] * d)))
    mask = ((parity + n) % 2 == 0).astype(np.float64)
    weights = layer_values(field, n, d, r, mask) * mask
    top = weights.max()
    log_scale = math.log(top) if top > 0 else -math.inf
    if top > 0:
        weights = weights / top
    out = {}
    if n in wanted:
        out[n] = PartitionSlice(n, d, weights, log_scale)
    for t in range(n - 1, min(wanted) - 1, -1):
        r_t = truncation.radius(t)
        if log_scale == -math.inf:
            weights = np.zeros((2 * r_t + 1,) * d)
        else:
            weights, log_top, _ = _transfer(field, weights, t, r_t)
            log_scale += log_top
        if t in wanted:
            out[t] = PartitionSlice(t, d, weights, log_scale)
    return out


def pair_mass(u: PartitionSlice, v: PartitionSlice, step: Sequence[int]) -> float:
    """``log sum_z u(z) / (2d) * v(z + step)`` for slices at times ``m`` and ``m+1``."""
    if u.is_zero() or v.is_zero():
        return -math.inf
    coords, _ = point_to_point(u)
    target = coords + np.asarray(step, dtype=np.int64) + v.radius
    ok = np.all((target >= 0) & (target <= 2 * v.radius), axis=1)
    wu = u.weights.reshape(-1)[np.ravel_multi_index((coords[ok] + u.radius).T, u.weights.shape)]
    wv = v.weights[tuple(target[ok].T)]
    mass = fsum(wu * wv)
    if mass <= 0.0:
        return -math.inf
    return u.log_scale + v.log_scale + math.log(mass / (2 * u.d))


def iterate_slices(
    field: EnvironmentField, d: int, n: int, truncation: Truncation = EXACT
) -> Iterator[PartitionSlice]:
    """Yield the slices at times 0, 1, ..., n."""
    slc = initial_slice(d)
    yield slc
    for _ in range(n):
        slc = forward_step(field, slc, truncation)
        yield slc


def run(field: EnvironmentField, d: int, n: int, truncation: Truncation = EXACT) -> PartitionSlice:
    slc = initial_slice(d)
    for _ in range(n):
        slc = forward_step(field, slc, truncation)
    return slc


def total_mass(slc: PartitionSlice) -> float:
    """``log W_n``; ``-inf`` when the slice carries no mass."""
    if slc.is_zero():
        return -math.inf
    return slc.log_scale + math.log(fsum(slc.weights.reshape(-1)))


def point_to_point(slc: PartitionSlice) -> tuple[np.ndarray, np.ndarray]:
    """Support points (M, d) and ``log u_n`` at them."""
    flat = slc.weights.reshape(-1)
    nz = np.nonzero(flat)[0]
    coords = np.stack(np.unravel_index(nz, slc.weights.shape), axis=1) - slc.radius
    return coords.astype(np.int64), np.log(flat[nz]) + slc.log_scale


def endpoint_mass(slc: PartitionSlice, g: EndpointFunctional | Callable) -> float:
    """``log W_n(g)`` for a function of the endpoint with values in [0, 1]."""
    if not isinstance(g, EndpointFunctional):
        g = EndpointFunctional(g)
    coords, logu = point_to_point(slc)
    if coords.shape[0] == 0:
        return -math.inf
    vals = g(coords)
    mass = fsum(np.exp(logu - slc.log_scale) * vals)
    if mass <= 0.0:
        return -math.inf
    return slc.log_scale + math.log(mass)


def constrained_mass(
    field: EnvironmentField,
    d: int,
    n: int,
    event: CylinderEvent,
    truncation: Truncation = EXACT,
    times: Sequence[int] | None = None,
):
    """``log W_n(B)`` for a cylinder event ``B`` on increments ``m+1..m+j``.

    With ``times`` given, returns a dict ``{t: log W_t(B)}`` for every
    ``t`` in ``times`` (each must satisfy ``m + j <= t <= n``).
    """
    m, j = event.offset, event.length
    if event.d != d:
        raise ValueError("event dimension does not match the lattice")
    if m + j > n:
        raise ValueError(f"event ends at step {m + j} beyond horizon {n}")
    wanted = set(times) if times is not None else {n}
    if any(t < m + j or t > n for t in wanted):
        raise ValueError("requested times must lie in [m + j, n]")
    slc = initial_slice(d)
    for _ in range(m):
        slc = forward_step(field, slc, truncation)
    for step in event.pattern:
        allowed = np.zeros(2 * d, dtype=np.bool_)
        allowed[step_index(step)] = True
        slc = forward_step(field, slc, truncation, allowed=allowed)
    out = {}
    if slc.n in wanted:
        out[slc.n] = total_mass(slc)
    while slc.n < n:
        slc = forward_step(field, slc, truncation)
        if slc.n in wanted:
            out[slc.n] = total_mass(slc)
    return out if times is not None else out[n]


def decomposition_residual(field: EnvironmentField, d: int, n: int, k: int) -> float:
    """Relative gap in ``W_{n+k} = sum_z W_n(X_n=z) * theta_{n,z} W_k``.

    Absolute gap when ``W_{n+k} = 0``.
    """
    if n < 0 or k < 0:
        raise ValueError("n and k must be >= 0")
    slices = list(iterate_slices(field, d, n + k))
    lhs = total_mass(slices[n + k])
    coords, logu = point_to_point(slices[n])
    terms = []
    for z, lu in zip(coords, logu):
        sub = shifted(field, n, tuple(z))
        terms.append(lu + total_mass(run(sub, d, k)))
    rhs = logsumexp(np.array(terms)) if terms else -math.inf
    if lhs == -math.inf:
        return 0.0 if rhs == -math.inf else math.exp(rhs)
    if rhs == -math.inf:
        return 1.0
    return abs(math.expm1(rhs - lhs))
