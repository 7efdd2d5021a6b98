"""Keyed i.i.d. mean-one environments on N x Z^d.

Every site value is a pure function of ``(seed, family, params, k, x)``: a
SplitMix64-style hash of the site index is turned into a uniform in (0, 1)
and pushed through the inverse CDF of the chosen family.  No RNG state is
carried around, so shifted fields and repeated queries return identical bits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from numba import njit

__all__ = [
    "FAMILIES",
    "EnvironmentSpec",
    "EnvironmentField",
    "site_value",
    "site_values",
    "shifted",
    "quantile",
    "layer_values",
    "mix64",
    "replica_seed",
]

FAMILIES = ("Constant", "TwoPoint", "LogNormal", "ParetoTail")
_FAMILY_CODE = {name: i for i, name in enumerate(FAMILIES)}

MASK64 = (1 << 64) - 1

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TIME_MULT = np.uint64(0x9E3779B97F4A7C15)
# one distinct odd multiplier per lattice axis
_AXIS_MULT = np.array(
    [0xD1B54A32D192ED03, 0xABC98388FB8FAC03, 0x8CB92BA72F3D8DD7, 0xF1357AEA2E62A9C5],
    dtype=np.uint64,
)
MAX_DIM = len(_AXIS_MULT)
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def _mix64(z):
    z = z ^ (z >> _S30)
    z = z * _M1
    z = z ^ (z >> _S27)
    z = z * _M2
    return z ^ (z >> _S31)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (reference, used for keys)."""
    z &= MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replica_seed(seed: int, replica: int) -> int:
    """Seed of environment replica ``replica`` derived from a base seed."""
    return mix64((seed & MASK64) ^ mix64(replica * 0xA0761D6478BD642F + 0xE7037ED1A0B428DB))


@njit(cache=True, nogil=True)
def _zigzag(x):
    # x is int64
    return np.uint64((x << 1) ^ (x >> 63))


@njit(cache=True, nogil=True)
def _time_key(seed, k):
    return seed ^ _mix64(np.uint64(k) * _TIME_MULT)


@njit(cache=True, nogil=True)
def _to_unit(v):
    # top 53 bits, midpoint rounding: strictly inside (0, 1)
    return (float(v >> _S11) + 0.5) * _INV_2_53


@njit(cache=True, nogil=True)
def _ndtri(p):
    # Wichura, AS241 (PPND16); |error| ~ 1e-16
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    x = num / den
    if q < 0.0:
        return -x
    return x


@njit(cache=True, nogil=True)
def _quantile(code, params, u):
    if code == 0:
        return 1.0
    if code == 1:
        # params = (lower atom, upper atom, P(lower atom))
        if u <= params[2]:
            return params[0]
        return params[1]
    if code == 2:
        beta = params[0]
        return math.exp(beta * _ndtri(u) - 0.5 * beta * beta)
    alpha = params[0]
    return (alpha - 1.0) / alpha * (1.0 - u) ** (-1.0 / alpha)


@njit(cache=True, nogil=True)
def _site_batch(code, params, seed, ks, coords, out):
    n, d = coords.shape
    for i in range(n):
        packed = np.uint64(0)
        for j in range(d):
            packed = packed + _zigzag(coords[i, j]) * _AXIS_MULT[j]
        v = _mix64(_time_key(seed, ks[i]) ^ _mix64(packed))
        out[i] = _quantile(code, params, _to_unit(v))


@njit(cache=True, nogil=True)
def _layer_kernel(code, params, seed, k, axis_keys, side, d, mask, out):
    """Fill ``out`` (flat box of side ``side`` in ``d`` dims) with site values
    at time ``k`` wherever ``mask`` is nonzero.  ``axis_keys[j, c]`` holds the
    zigzag-multiplied contribution of coordinate index ``c`` on axis ``j``."""
    tkey = _time_key(seed, k)
    total = out.shape[0]
    idx = np.zeros(d, dtype=np.int64)
    for flat in range(total):
        if mask[flat] != 0.0:
            packed = np.uint64(0)
            for j in range(d):
                packed = packed + axis_keys[j, idx[j]]
            v = _mix64(tkey ^ _mix64(packed))
            out[flat] = _quantile(code, params, _to_unit(v))
        # odometer increment, last axis fastest (C order)
        j = d - 1
        while j >= 0:
            idx[j] += 1
            if idx[j] < side:
                break
            idx[j] = 0
            j -= 1


def _validate_params(family: str, params: Mapping[str, float]) -> None:
    if family not in _FAMILY_CODE:
        raise ValueError(f"unknown environment family {family!r}; expected one of {FAMILIES}")
    if family == "TwoPoint":
        a, b, p = (float(params[key]) for key in ("a", "b", "p"))
        if a < 0 or b <= 0 or not 0 < p < 1:
            raise ValueError("TwoPoint needs a >= 0, b > 0 and 0 < p < 1")
        if abs(p * a + (1 - p) * b - 1.0) > 1e-12:
            raise ValueError(f"TwoPoint mean p*a+(1-p)*b = {p * a + (1 - p) * b!r} != 1")
    elif family == "LogNormal":
        if float(params["beta"]) < 0:
            raise ValueError("LogNormal needs beta >= 0")
    elif family == "ParetoTail":
        alpha = float(params["alpha"])
        if not 1 < alpha <= 2:
            raise ValueError("ParetoTail needs 1 < alpha <= 2")


@dataclass(frozen=True)
class EnvironmentSpec:
    """Law and seed of an i.i.d. environment.

    ``params`` keys: TwoPoint ``a, b, p`` (``P(zeta=a)=p``), LogNormal ``beta``,
    ParetoTail ``alpha``; Constant takes none.
    """

    family: str = "Constant"
    params: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        _validate_params(self.family, self.params)
        if not 0 <= int(self.seed) <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def code(self) -> int:
        return _FAMILY_CODE[self.family]

    def kernel_params(self) -> np.ndarray:
        p = self.params
        if self.family == "TwoPoint":
            a, b, prob = p["a"], p["b"], p["p"]
            if a <= b:
                return np.array([a, b, prob])
            return np.array([b, a, 1.0 - prob])
        if self.family == "LogNormal":
            return np.array([p["beta"], 0.0, 0.0])
        if self.family == "ParetoTail":
            return np.array([p["alpha"], 0.0, 0.0])
        return np.zeros(3)

    def with_seed(self, seed: int) -> "EnvironmentSpec":
        return EnvironmentSpec(self.family, dict(self.params), seed)

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Support points and probabilities (TwoPoint and Constant only)."""
        if self.family == "Constant":
            return np.array([1.0]), np.array([1.0])
        if self.family == "TwoPoint":
            lo, hi, p = self.kernel_params()
            return np.array([lo, hi]), np.array([p, 1.0 - p])
        raise ValueError(f"{self.family} has no finite atom set")

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "params": dict(self.params), "seed": str(self.seed)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EnvironmentSpec":
        return cls(data["family"], dict(data.get("params", {})), int(data.get("seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "EnvironmentSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class EnvironmentField:
    """An environment viewed through a space-time shift.

    ``horizon`` (in the field's own time) switches the environment off after
    that time: sites with ``k > horizon`` take the value 1.  This is how
    quantities measurable w.r.t. the first ``m`` layers, such as ``W_m(g)``
    with ``g`` depending on later steps, are computed by the same recursion.
    """

    spec: EnvironmentSpec
    shift_n: int = 0
    shift_z: tuple[int, ...] = ()
    horizon: int | None = None

    def __post_init__(self) -> None:
        if self.shift_n < 0:
            raise ValueError("time shift must be >= 0")
        object.__setattr__(self, "shift_z", tuple(int(c) for c in self.shift_z))

    def offset(self, d: int) -> np.ndarray:
        z = np.zeros(d, dtype=np.int64)
        z[: len(self.shift_z)] = self.shift_z
        if len(self.shift_z) > d and any(self.shift_z[d:]):
            raise ValueError("shift has more nonzero coordinates than the lattice dimension")
        return z

    def is_constant(self) -> bool:
        return self.spec.family == "Constant" or (
            self.spec.family == "LogNormal" and self.spec.params["beta"] == 0.0
        )

    def restricted(self, horizon: int) -> "EnvironmentField":
        """Field equal to this one up to time ``horizon`` and to 1 afterwards."""
        if self.horizon is not None:
            horizon = min(horizon, self.horizon)
        return EnvironmentField(self.spec, self.shift_n, self.shift_z, horizon)


def shifted(field: EnvironmentField, n: int, z: Sequence[int]) -> EnvironmentField:
    """``theta_{n,z}``: the field seen from the space-time point ``(n, z)``."""
    if n < 0:
        raise ValueError("time shift must be >= 0")
    d = max(len(z), len(field.shift_z))
    new_z = tuple(int(a) for a in field.offset(d) + np.pad(np.asarray(z, dtype=np.int64), (0, d - len(z))))
    horizon = None if field.horizon is None else field.horizon - n
    if horizon is not None and horizon < 0:
        horizon = 0
    return EnvironmentField(field.spec, field.shift_n + n, new_z, horizon)


def site_values(field: EnvironmentField, ks: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Vectorised ``site_value`` over arrays of times ``ks`` (shape (N,)) and
    lattice points ``coords`` (shape (N, d))."""
    ks = np.asarray(ks, dtype=np.int64).reshape(-1)
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords.reshape(1, -1) if ks.size == 1 else coords.reshape(-1, 1)
    if np.any(ks < 1):
        raise ValueError("site time index must be >= 1")
    d = coords.shape[1]
    if d > MAX_DIM:
        raise ValueError(f"lattice dimension above {MAX_DIM} is not supported")
    out = np.empty(ks.shape[0], dtype=np.float64)
    spec = field.spec
    _site_batch(
        spec.code,
        spec.kernel_params(),
        np.uint64(spec.seed),
        ks + field.shift_n,
        np.ascontiguousarray(coords + field.offset(d)),
        out,
    )
    if field.horizon is not None:
        out[ks > field.horizon] = 1.0
    return out


def site_value(field: EnvironmentField, k: int, x: Sequence[int]) -> float:
    """Value of the environment at time ``k >= 1`` and site ``x``."""
    return float(site_values(field, np.array([k]), np.asarray([x], dtype=np.int64))[0])


def layer_values(
    field: EnvironmentField, k: int, d: int, radius: int, mask: np.ndarray | None = None
) -> np.ndarray:
    """Values at time ``k`` on the box ``[-radius, radius]^d`` (C order).

    Entries where ``mask`` is zero are left at 0 and never hashed.
    """
    side = 2 * radius + 1
    shape = (side,) * d
    if field.horizon is not None and k > field.horizon:
        return np.ones(shape)
    spec = field.spec
    if mask is None:
        mask_flat = np.ones(side**d)
    else:
        mask_flat = np.ascontiguousarray(mask, dtype=np.float64).reshape(-1)
    if spec.family == "Constant":
        return (mask_flat != 0).astype(np.float64).reshape(shape) if mask is not None else np.ones(shape)
    if k < 1:
        raise ValueError("site time index must be >= 1")
    if d > MAX_DIM:
        raise ValueError(f"lattice dimension above {MAX_DIM} is not supported")
    offset = field.offset(d)
    axis_keys = np.empty((d, side), dtype=np.uint64)
    base = np.arange(-radius, radius + 1, dtype=np.int64)
    for j in range(d):
        c = base + offset[j]
        axis_keys[j] = ((c << 1) ^ (c >> 63)).astype(np.uint64) * _AXIS_MULT[j]
    out = np.zeros(side**d)
    _layer_kernel(
        spec.code,
        spec.kernel_params(),
        np.uint64(spec.seed),
        k + field.shift_n,
        axis_keys,
        side,
        d,
        mask_flat,
        out,
    )
    return out.reshape(shape)


def quantile(family: str, params: Mapping[str, float], u: float) -> float:
    """Inverse CDF of a mean-one family at ``u`` in (0, 1)."""
    if not 0.0 < u < 1.0:
        raise ValueError("quantile argument must lie strictly inside (0, 1)")
    spec = EnvironmentSpec(family, dict(params), 0)
    return float(_quantile(spec.code, spec.kernel_params(), float(u)))


def normal_quantile(p: float) -> float:
    """Standard normal inverse CDF (AS241)."""
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie strictly inside (0, 1)")
    return float(_ndtri(float(p)))
