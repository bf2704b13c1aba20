"""Phase-space types, the massless Dirac symbol, band energies and potentials.

All potentials used here depend on ``x1`` only; they are still exposed with
full 2D signatures (``x`` of shape ``(..., 2)``) so that the transfer
coefficient, jump and Jacobian formulas can be written for general
``(x, xi)`` in R^4.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq


class SingularMomentumError(ValueError):
    """Raised when a quantity is requested at the conical point xi = 0."""


class DegeneratePotentialError(ValueError):
    """Raised when grad V vanishes where the model needs it non-zero."""


class Mode(enum.IntEnum):
    PLUS = 1
    MINUS = -1

    @property
    def sign(self) -> int:
        return int(self)

    def flipped(self) -> "Mode":
        return Mode(-int(self))


def as_vec2(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(2)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite vector {arr!r}")
    return arr


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __init__(self, x, xi):
        object.__setattr__(self, "x", as_vec2(x))
        object.__setattr__(self, "xi", as_vec2(xi))

    def __iter__(self):
        yield self.x
        yield self.xi

    def __eq__(self, other):
        if not isinstance(other, PhasePoint):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.xi, other.xi)

    def __hash__(self):
        return hash((tuple(self.x), tuple(self.xi)))

    def __repr__(self):
        return f"PhasePoint(x={self.x.tolist()}, xi={self.xi.tolist()})"


class HopRecord(NamedTuple):
    time: float
    point: PhasePoint  # pre-hop point on Sigma
    mode: Mode  # mode switched to


@dataclass
class Particle:
    point: PhasePoint
    mode: Mode = Mode.PLUS
    weight: float = 1.0
    hop_log: list[HopRecord] = field(default_factory=list)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if not self.weight >= 0.0:
            raise ValueError(f"particle weight must be non-negative, got {self.weight}")
        times = [h.time for h in self.hop_log]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("hop_log times must be strictly increasing")


# --------------------------------------------------------------------------
# Dirac symbol


def dirac_matrix(xi) -> np.ndarray:
    xi1, xi2 = as_vec2(xi)
    return np.array([[0.0, xi1 - 1j * xi2], [xi1 + 1j * xi2, 0.0]], dtype=complex)


def eigenprojectors(xi) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P_plus, P_minus)`` with ``P_pm = Id/2 +- A(xi) / (2|xi|)``."""
    xi = as_vec2(xi)
    r = math.hypot(*xi)
    if r == 0.0:
        raise SingularMomentumError("eigenprojectors are undefined at xi = 0")
    half = 0.5 * np.eye(2, dtype=complex)
    a = dirac_matrix(xi) / (2.0 * r)
    return half + a, half - a


# --------------------------------------------------------------------------
# Potentials


class Potential:
    """Potential ``V(x) = profile(x1)``.

    Subclasses implement the profile and its first two derivatives on arrays
    of ``x1``.  The 2D methods accept ``x`` with trailing dimension 2.
    """

    name = "potential"

    def profile(self, x1):
        raise NotImplementedError

    def d1(self, x1):
        raise NotImplementedError

    def d2(self, x1):
        raise NotImplementedError

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.profile(x[..., 0])

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., 0] = self.d1(x[..., 0])
        return g

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        h = np.zeros(x.shape[:-1] + (2, 2))
        h[..., 0, 0] = self.d2(x[..., 0])
        return h

    def params(self) -> dict:
        if dataclasses.is_dataclass(self):
            return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        return {}

    def kernel_spec(self):
        """``(kind, params)`` for the compiled step kernels, or ``None``."""
        return None

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params()}


@dataclass(frozen=True)
class BarrierPotential(Potential):
    """``4 sin^3(pi (x1 + 1) / 4)`` on ``[-1, 3]``, zero elsewhere."""

    height: float = 4.0
    left: float = -1.0
    right: float = 3.0
    name = "barrier"

    @property
    def _k(self):
        return np.pi / (self.right - self.left)

    def _phase(self, x1):
        return self._k * (x1 - self.left)

    def _inside(self, x1):
        return (x1 >= self.left) & (x1 <= self.right)

    def profile(self, x1):
        x1 = np.asarray(x1, dtype=float)
        s = np.sin(self._phase(x1))
        return np.where(self._inside(x1), self.height * s**3, 0.0)

    def d1(self, x1):
        x1 = np.asarray(x1, dtype=float)
        th = self._phase(x1)
        s = np.sin(th)
        return np.where(self._inside(x1), 3.0 * self.height * self._k * (s * s) * np.cos(th), 0.0)

    def d2(self, x1):
        x1 = np.asarray(x1, dtype=float)
        k = np.pi / (self.right - self.left)
        th = self._phase(x1)
        s, c = np.sin(th), np.cos(th)
        val = 3.0 * self.height * k**2 * (2.0 * s * c**2 - s**3)
        return np.where(self._inside(x1), val, 0.0)

    def kernel_spec(self):
        k = self._k
        return 1, np.array([self.height, self.left, self.right, k, 3.0 * self.height * k])


@dataclass(frozen=True)
class HarmonicPotential(Potential):
    """``(x1 - center)^2 / scale``; the defaults give ``(x1 + 10)^2 / 20``."""

    center: float = -10.0
    scale: float = 20.0
    name = "harmonic"

    def profile(self, x1):
        x1 = np.asarray(x1, dtype=float)
        return (x1 - self.center) ** 2 / self.scale

    def d1(self, x1):
        x1 = np.asarray(x1, dtype=float)
        return 2.0 * (x1 - self.center) / self.scale

    def d2(self, x1):
        x1 = np.asarray(x1, dtype=float)
        return np.full_like(x1, 2.0 / self.scale)

    def kernel_spec(self):
        return 0, np.array([self.center, self.scale], dtype=float)


@dataclass(frozen=True)
class AtanPotential(Potential):
    """``alpha * atan(2 x1 + pi / 2)``.

    With ``alpha=None`` the amplitude is calibrated by
    :func:`calibrate_atan_alpha` so the stopping slope matches the harmonic
    case.
    """

    alpha: float | None = None
    name = "atan"

    def __post_init__(self):
        if self.alpha is None:
            object.__setattr__(self, "alpha", calibrate_atan_alpha())

    def profile(self, x1):
        x1 = np.asarray(x1, dtype=float)
        return self.alpha * np.arctan(2.0 * x1 + np.pi / 2)

    def d1(self, x1):
        x1 = np.asarray(x1, dtype=float)
        z = 2.0 * x1 + np.pi / 2
        return 2.0 * self.alpha / (1.0 + z * z)

    def d2(self, x1):
        x1 = np.asarray(x1, dtype=float)
        z = 2.0 * x1 + np.pi / 2
        return -8.0 * self.alpha * z / (1.0 + z * z) ** 2

    def params(self) -> dict:
        return {"alpha": self.alpha}

    def kernel_spec(self):
        return 2, np.array([self.alpha], dtype=float)


def potential_eval(pot: Potential, x):
    return pot.value(x)


def potential_grad(pot: Potential, x):
    return pot.grad(x)


def potential_hessian(pot: Potential, x):
    return pot.hessian(x)


def band_energy(mode: Mode, point: PhasePoint, pot: Potential) -> float:
    sign = Mode(mode).sign
    return float(sign * math.hypot(*point.xi) + pot.value(point.x))


def band_energy_arrays(sign, x, xi, pot: Potential) -> np.ndarray:
    return sign * np.hypot(xi[..., 0], xi[..., 1]) + pot.value(x)


# --------------------------------------------------------------------------
# Stopping points and the atan calibration


def stopping_point(pot: Potential, x1_0: float, xi1_0: float, xi2_0: float,
                   bracket: tuple[float, float]) -> float:
    """Position where a plus-band trajectory started at ``(x1_0, xi)`` has ``xi1 = 0``.

    Solved from energy conservation ``V(x*) + |xi2| = V(x1_0) + |xi|``.
    """
    target = float(pot.profile(x1_0)) + math.hypot(xi1_0, xi2_0) - abs(xi2_0)
    return brentq(lambda s: float(pot.profile(s)) - target, *bracket, xtol=1e-15)


@functools.lru_cache(maxsize=None)
def calibrate_atan_alpha(x1_0: float = -2.0, xi1_0: float = 1.3, xi2_0: float = 0.1,
                         reference: Potential | None = None) -> float:
    """Find ``alpha`` such that ``V2'(x2*) = V1'(x1*)`` at the stopping points."""
    reference = reference or HarmonicPotential()
    x_ref = stopping_point(reference, x1_0, xi1_0, xi2_0, (x1_0, x1_0 + 20.0))
    slope = float(reference.d1(x_ref))
    rise = math.hypot(xi1_0, xi2_0) - abs(xi2_0)

    def mismatch(alpha):
        pot = AtanPotential(float(alpha))
        top = alpha * np.pi / 2
        if float(pot.profile(x1_0)) + rise >= top:
            return -slope
        x_star = stopping_point(pot, x1_0, xi1_0, xi2_0, (x1_0, 1e9))
        return float(pot.d1(x_star)) - slope

    # Smallest admissible alpha leaves the particle just able to stop.
    lo = rise / (np.pi / 2 - math.atan(2 * x1_0 + np.pi / 2)) * (1 + 1e-6)
    return brentq(mismatch, lo, 50.0, xtol=1e-14)


def make_potential(name: str, **params) -> Potential:
    name = name.lower()
    if name == "barrier":
        return BarrierPotential(**params)
    if name in ("harmonic", "v1"):
        return HarmonicPotential(**params)
    if name in ("atan", "v2"):
        return AtanPotential(**params)
    raise ValueError(f"unknown potential {name!r}")
