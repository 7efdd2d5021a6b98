"""Named test functionals with values in [0, 1].

* endpoint functionals ``g(X) = rule(X_n)`` on lattice points (contraction check),
* path functionals on whole ``(P, n+1, d)`` path arrays (exhaustive mode only),
* ``phi`` functionals of the rescaled endpoint ``X^{(n)}_1`` with their
  Brownian expectations (theorem schedule check).

Every family is built from a JSON-able dict ``{"kind": ..., **params}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import quad
from scipy.stats import chi2

from .dp_core import EndpointFunctional

__all__ = [
    "G_KINDS",
    "PATH_KINDS",
    "PHI_KINDS",
    "RangeError",
    "make_g",
    "make_path_g",
    "PhiFunctional",
    "make_phi",
    "default_g_family",
    "default_path_family",
    "default_phi_family",
    "brownian_expectation",
]


class RangeError(ValueError):
    """A declared functional would leave [0, 1]."""


def _bounds(spec: Mapping) -> tuple[float, float]:
    low = float(spec.get("low", 0.0))
    high = float(spec.get("high", 1.0))
    if not 0.0 <= low <= high <= 1.0:
        raise RangeError(f"need 0 <= low <= high <= 1, got low={low}, high={high}")
    return low, high


def _g_constant(spec, n, d):
    c = float(spec["value"])
    if not 0.0 <= c <= 1.0:
        raise RangeError(f"constant value {c} outside [0, 1]")
    return lambda z: np.full(z.shape[0], c)


def _g_halfspace(spec, n, d):
    low, high = _bounds(spec)
    axis, thr = int(spec.get("axis", 0)), float(spec.get("threshold", 0.0))
    return lambda z: np.where(z[:, axis] > thr, high, low)


def _g_ramp(spec, n, d):
    low, high = _bounds(spec)
    axis = int(spec.get("axis", 0))
    slope, offset = float(spec.get("slope", 0.5)), float(spec.get("offset", 0.5))
    return lambda z: np.clip(offset + slope * z[:, axis] / math.sqrt(max(n, 1)), low, high)


def _g_bump(spec, n, d):
    low, high = _bounds(spec)
    scale = float(spec.get("scale", 1.0))
    return lambda z: low + (high - low) * np.exp(-(z.astype(float) ** 2).sum(axis=1) / (scale * max(n, 1)))


def _g_ball(spec, n, d):
    low, high = _bounds(spec)
    radius = float(spec.get("radius", 1.0)) * math.sqrt(max(n, 1))
    return lambda z: np.where(np.abs(z).sum(axis=1) <= radius, high, low)


def _g_residue(spec, n, d):
    low, high = _bounds(spec)
    axis, mod = int(spec.get("axis", 0)), int(spec.get("modulus", 4))
    return lambda z: np.where(z[:, axis] % mod == 0, high, low)


G_KINDS: dict[str, Callable] = {
    "constant": _g_constant,
    "halfspace": _g_halfspace,
    "ramp": _g_ramp,
    "bump": _g_bump,
    "ball": _g_ball,
    "residue": _g_residue,
}


def make_g(spec: Mapping, n: int, d: int) -> EndpointFunctional:
    kind = spec.get("kind")
    if kind not in G_KINDS:
        raise ValueError(f"unknown endpoint functional kind {kind!r}")
    if "axis" in spec and not 0 <= int(spec["axis"]) < d:
        raise ValueError(f"axis {spec['axis']} outside dimension {d}")
    return EndpointFunctional(G_KINDS[kind](spec, n, d), name=spec.get("name", kind))


def default_g_family(d: int) -> list[dict]:
    fam = [
        {"kind": "constant", "value": 1.0, "name": "one"},
        {"kind": "constant", "value": 0.0, "name": "zero"},
        {"kind": "constant", "value": 0.5, "name": "half"},
        {"kind": "halfspace", "axis": 0, "threshold": 0.0, "name": "endpoint_positive"},
        {"kind": "halfspace", "axis": 0, "threshold": -0.5, "low": 0.2, "high": 0.9, "name": "endpoint_nonneg_soft"},
        {"kind": "ramp", "axis": 0, "name": "ramp"},
        {"kind": "ramp", "axis": 0, "slope": -1.0, "offset": 0.3, "name": "ramp_steep"},
        {"kind": "bump", "scale": 1.0, "name": "bump"},
        {"kind": "ball", "radius": 1.0, "name": "ball"},
        {"kind": "residue", "axis": 0, "modulus": 4, "name": "residue4"},
    ]
    if d >= 2:
        fam.append({"kind": "halfspace", "axis": 1, "threshold": 0.0, "name": "endpoint_positive_2"})
    return fam


# path functionals: arrays (P, n+1, d) -> (P,)

def _path_first_step(spec, n, d):
    return lambda paths: (paths[:, 1, 0] > 0).astype(float)


def _path_occupation(spec, n, d):
    return lambda paths: (paths[:, 1:, 0] > 0).mean(axis=1)


def _path_running_max(spec, n, d):
    return lambda paths: np.clip(paths[:, :, 0].max(axis=1) / max(n, 1), 0.0, 1.0)


def _path_returns(spec, n, d):
    return lambda paths: np.any(np.all(paths[:, 1:, :] == 0, axis=2), axis=1).astype(float)


def _path_step_pattern(spec, n, d):
    step = np.asarray(spec.get("step", [1] + [0] * (d - 1)))
    at = int(spec.get("at", 1))
    return lambda paths: np.all(paths[:, at] - paths[:, at - 1] == step, axis=1).astype(float)


PATH_KINDS: dict[str, Callable] = {
    "first_step_positive": _path_first_step,
    "occupation": _path_occupation,
    "running_max": _path_running_max,
    "returns": _path_returns,
    "step_pattern": _path_step_pattern,
}


def make_path_g(spec: Mapping, n: int, d: int) -> Callable[[np.ndarray], np.ndarray]:
    """Path functional; endpoint kinds are lifted through ``X_n``."""
    kind = spec.get("kind")
    if kind in PATH_KINDS:
        return PATH_KINDS[kind](spec, n, d)
    g = make_g(spec, n, d)
    return lambda paths: g(paths[:, -1, :])


def default_path_family(d: int) -> list[dict]:
    return default_g_family(d) + [
        {"kind": "first_step_positive", "name": "first_step_positive"},
        {"kind": "occupation", "name": "occupation"},
        {"kind": "running_max", "name": "running_max"},
        {"kind": "returns", "name": "returns"},
        {"kind": "step_pattern", "at": 2, "name": "second_step_e1"},
    ]


@dataclass(frozen=True)
class PhiFunctional:
    """``phi(theta) = rule(theta(1))`` for a path ``theta`` in ``C_0([0,1], R^d)``."""

    name: str
    rule: Callable[[np.ndarray], np.ndarray]
    mean: Callable[[int, float], float] | None = None

    def brownian_mean(self, d: int, t: float = 1.0) -> float:
        if self.mean is not None:
            return self.mean(d, t)
        return brownian_expectation(self, d, t)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.rule(np.asarray(x, dtype=np.float64)), dtype=np.float64)
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise RangeError(f"phi {self.name!r} leaves [0, 1]")
        return vals


def _phi_half_plane(spec):
    axis = int(spec.get("axis", 0))
    # odd around 1/2, so the Brownian mean is 1/2
    return (lambda x: np.clip(x[..., axis] / 2.0 + 0.5, 0.0, 1.0)), (lambda d, t: 0.5)


def _phi_gaussian_bump(spec):
    return (lambda x: np.exp(-(x**2).sum(axis=-1))), (lambda d, t: (1.0 + 2.0 * t / d) ** (-d / 2.0))


def _phi_cos(spec):
    axis, freq = int(spec.get("axis", 0)), float(spec.get("frequency", 2.0))
    return (
        (lambda x: 0.5 * (1.0 + np.cos(freq * x[..., axis]))),
        (lambda d, t: 0.5 * (1.0 + math.exp(-0.5 * freq * freq * t / d))),
    )


def _phi_radial_ramp(spec):
    def mean(d, t):
        # E[min(|B_t|^2, 1)] = int_0^1 P(chi2_d > y d / t) dy
        return quad(lambda y: chi2.sf(y * d / t, d), 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)[0]

    return (lambda x: np.clip((x**2).sum(axis=-1), 0.0, 1.0)), mean


PHI_KINDS: dict[str, Callable] = {
    "half_plane_ramp": _phi_half_plane,
    "gaussian_bump": _phi_gaussian_bump,
    "cos_wave": _phi_cos,
    "radial_ramp": _phi_radial_ramp,
}


def make_phi(spec: Mapping) -> PhiFunctional:
    kind = spec.get("kind")
    if kind not in PHI_KINDS:
        raise ValueError(f"unknown phi kind {kind!r}")
    rule, mean = PHI_KINDS[kind](spec)
    return PhiFunctional(spec.get("name", kind), rule, mean)


def default_phi_family() -> list[dict]:
    return [
        {"kind": "half_plane_ramp", "name": "half_plane_ramp"},
        {"kind": "gaussian_bump", "name": "gaussian_bump"},
        {"kind": "cos_wave", "frequency": 2.0, "name": "cos_wave"},
        {"kind": "radial_ramp", "name": "radial_ramp"},
    ]


def brownian_expectation(phi: Callable[[np.ndarray], np.ndarray], d: int, t: float = 1.0, nodes: int = 80) -> float:
    """``E[phi(B_t)]`` for ``B_t ~ N(0, (t/d) I_d)`` by tensor Gauss-Hermite quadrature."""
    x, w = hermegauss(nodes)
    w = w / w.sum()
    sd = math.sqrt(t / d)
    grids = np.meshgrid(*([x * sd] * d), indexing="ij")
    pts = np.stack([g.reshape(-1) for g in grids], axis=1)
    wts = np.ones(pts.shape[0])
    for wg in np.meshgrid(*([w] * d), indexing="ij"):
        wts = wts * wg.reshape(-1)
    return math.fsum((wts * phi(pts)).tolist())
