"""Landau-Zener hopping between the two bands and the particle process.

A particle is transported along its band flow.  Each time it crosses the
hopping surface ``{xi . grad V = 0}`` at ``(x*, xi*)`` it switches band with
probability ``T_eps(x*, xi*)``; a switch from band ``+-`` relocates it to
``J_+-(x*, xi*)`` before transport resumes on the other band at the same time.

Two estimators are offered.  ``RANDOM`` draws a uniform per crossing from a
counter-based stream keyed by ``(seed, particle index, draw counter)``, so a
run is reproducible whatever the evaluation order.  ``EXPECTED`` replaces the
draw by its expectation: the particle splits into a ``w (1 - T)`` part that
stays and a ``w T`` part that hops.  Both estimate the same kinetic solution;
the second has no sampling noise in the transferred mass.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .flow import CrossingOutcome, IntegratorParams, advance
from .phase_model import (
    DegeneratePotentialError,
    HopRecord,
    Mode,
    Particle,
    PhasePoint,
    Potential,
    SingularMomentumError,
)


class Statistic(enum.Enum):
    RANDOM = "random"
    EXPECTED = "expected"


@dataclass(frozen=True)
class HopOptions:
    jumps_enabled: bool = True
    transitions_enabled: bool = True
    max_hops: int | None = None
    skip_radius: float | None = None
    statistic: Statistic = Statistic.RANDOM

    def __post_init__(self):
        object.__setattr__(self, "statistic", Statistic(self.statistic))
        if self.skip_radius is not None and not self.skip_radius > 0:
            raise ValueError("skip_radius must be positive")
        if self.max_hops is not None and self.max_hops < 0:
            raise ValueError("max_hops must be >= 0")


# --------------------------------------------------------------------------
# Counter-based uniforms

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed: int, index, counter) -> np.ndarray:
    """Uniforms in ``[0, 1)`` as a pure function of ``(seed, index, counter)``.

    SplitMix64 finalisers chained over the three keys; 53 random bits.
    """
    index = np.atleast_1d(np.asarray(index)).astype(np.uint64)
    counter = np.atleast_1d(np.asarray(counter)).astype(np.uint64)
    with np.errstate(over="ignore"):
        s = _mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + _GOLDEN)
        z = _mix64(s ^ _mix64(index * _GOLDEN + _M1))
        z = _mix64(z + (counter + np.uint64(1)) * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass
class RngStream:
    seed: int
    index: int
    counter: int = 0

    def uniform(self) -> float:
        u = float(counter_uniforms(self.seed, self.index, self.counter)[0])
        self.counter += 1
        return u


# --------------------------------------------------------------------------
# Transition ingredients


def transfer_coefficient_arrays(x, xi, pot: Potential, eps: float) -> np.ndarray:
    g = pot.grad(x)
    gn = np.hypot(g[..., 0], g[..., 1])
    if np.any(gn == 0.0):
        raise DegeneratePotentialError("transfer coefficient needs grad V != 0")
    r2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
    return np.exp(-(np.pi / eps) * r2 / gn)


def transfer_coefficient(point: PhasePoint, pot: Potential, eps: float) -> float:
    """``exp(-(pi/eps) |xi|^2 / |grad V(x)|)``."""
    return float(transfer_coefficient_arrays(point.x, point.xi, pot, eps))


def jump_arrays(sign, x, xi, pot: Potential):
    g = pot.grad(x)
    gn2 = g[..., 0] ** 2 + g[..., 1] ** 2
    if np.any(gn2 == 0.0):
        raise DegeneratePotentialError("jump operator needs grad V != 0")
    r = np.hypot(xi[..., 0], xi[..., 1])
    shift = (2.0 * np.asarray(sign) * r / gn2)[..., None] * g
    return x + shift


def jump(mode_from: Mode, point: PhasePoint, pot: Potential) -> PhasePoint:
    """Apply ``J_+`` (from the plus band) or ``J_-`` (from the minus band)."""
    x = jump_arrays(Mode(mode_from).sign, point.x, point.xi, pot)
    return PhasePoint(x, point.xi)


def jacobian_lambda(mode: Mode, point: PhasePoint, pot: Potential) -> float:
    """Jacobian factor of the collision kernel on the hopping surface (diagnostic)."""
    g = pot.grad(point.x)
    gn2 = float(g @ g)
    if gn2 == 0.0:
        raise DegeneratePotentialError("Jacobian needs grad V != 0")
    r = math.hypot(*point.xi)
    if r == 0.0:
        return -math.sqrt(gn2)
    hxi = pot.hessian(point.x) @ point.xi
    num = -gn2 + Mode(mode).sign * float(hxi @ point.xi) / r
    return num / math.sqrt(gn2 + float(hxi @ hxi))


# --------------------------------------------------------------------------
# Ensembles


class HopTable:
    """Flat log of every hop, one row per event.

    Rows are appended in chunks and consolidated on first read, so logging
    stays linear in the number of events.
    """

    _fields = ("particle", "time", "x", "xi", "x_after", "to_sign")

    def __init__(self, particle=None, time=None, x=None, xi=None, x_after=None, to_sign=None):
        self._chunks = {k: [] for k in self._fields}
        self._data = {
            "particle": np.zeros(0, dtype=np.int64) if particle is None else particle,
            "time": np.zeros(0) if time is None else time,
            "x": np.zeros((0, 2)) if x is None else x,
            "xi": np.zeros((0, 2)) if xi is None else xi,
            "x_after": np.zeros((0, 2)) if x_after is None else x_after,
            "to_sign": np.zeros(0, dtype=np.int8) if to_sign is None else to_sign,
        }

    def _get(self, name):
        if self._chunks[name]:
            self._data[name] = np.concatenate([self._data[name], *self._chunks[name]])
            self._chunks[name] = []
        return self._data[name]

    particle = property(lambda self: self._get("particle"))
    time = property(lambda self: self._get("time"))
    x = property(lambda self: self._get("x"))
    xi = property(lambda self: self._get("xi"))
    x_after = property(lambda self: self._get("x_after"))
    to_sign = property(lambda self: self._get("to_sign"))

    def __len__(self):
        return len(self._data["time"]) + sum(len(c) for c in self._chunks["time"])

    def extend(self, particle, time, x, xi, x_after, to_sign):
        vals = (np.asarray(particle, dtype=np.int64), np.asarray(time, dtype=float),
                np.asarray(x, dtype=float).reshape(-1, 2), np.asarray(xi, dtype=float).reshape(-1, 2),
                np.asarray(x_after, dtype=float).reshape(-1, 2), np.asarray(to_sign, dtype=np.int8))
        for k, v in zip(self._fields, vals):
            self._chunks[k].append(v.copy())

    def copy(self) -> "HopTable":
        return HopTable(*(self._get(k).copy() for k in self._fields))


@dataclass
class Ensemble:
    """Particles stored column-wise.

    ``origin`` is the index of the initial particle a row descends from and
    keys its random stream; ``parent``/``born`` record splits made by the
    expected-value estimator so per-particle hop logs can be rebuilt.
    """

    x: np.ndarray
    xi: np.ndarray
    sign: np.ndarray
    weight: np.ndarray
    origin: np.ndarray = None
    draws: np.ndarray = None
    hops: np.ndarray = None
    parent: np.ndarray = None
    born: np.ndarray = None
    log: HopTable = field(default_factory=HopTable)

    def __post_init__(self):
        n = len(self.weight)
        self.x = np.asarray(self.x, dtype=float).reshape(n, 2)
        self.xi = np.asarray(self.xi, dtype=float).reshape(n, 2)
        self.sign = np.asarray(np.broadcast_to(self.sign, (n,)), dtype=np.int8).copy()
        self.weight = np.asarray(self.weight, dtype=float)
        if np.any(self.weight < 0):
            raise ValueError("weights must be non-negative")
        defaults = {
            "origin": lambda: np.arange(n, dtype=np.int64),
            "draws": lambda: np.zeros(n, dtype=np.int64),
            "hops": lambda: np.zeros(n, dtype=np.int64),
            "parent": lambda: np.full(n, -1, dtype=np.int64),
            "born": lambda: np.full(n, np.nan),
        }
        for name, make in defaults.items():
            if getattr(self, name) is None:
                setattr(self, name, make())

    def __len__(self):
        return len(self.weight)

    @classmethod
    def from_particles(cls, particles: Sequence[Particle]) -> "Ensemble":
        n = len(particles)
        ens = cls(
            x=np.array([p.point.x for p in particles]).reshape(n, 2),
            xi=np.array([p.point.xi for p in particles]).reshape(n, 2),
            sign=np.array([int(p.mode) for p in particles], dtype=np.int8),
            weight=np.array([p.weight for p in particles], dtype=float),
        )
        ens.hops = np.array([len(p.hop_log) for p in particles], dtype=np.int64)
        rows = [(i, h) for i, p in enumerate(particles) for h in p.hop_log]
        if rows:
            ens.log.extend(
                [i for i, _ in rows], np.array([h.time for _, h in rows]),
                np.array([h.point.x for _, h in rows]), np.array([h.point.xi for _, h in rows]),
                np.full((len(rows), 2), np.nan), [int(h.mode) for _, h in rows])
        return ens

    def copy(self) -> "Ensemble":
        return Ensemble(self.x.copy(), self.xi.copy(), self.sign.copy(), self.weight.copy(),
                        self.origin.copy(), self.draws.copy(), self.hops.copy(),
                        self.parent.copy(), self.born.copy(), self.log.copy())

    def hop_log(self, i: int) -> list[HopRecord]:
        own = np.nonzero(self.log.particle == i)[0]
        records = [HopRecord(float(self.log.time[j]),
                             PhasePoint(self.log.x[j], self.log.xi[j]),
                             Mode(int(self.log.to_sign[j]))) for j in own]
        p = int(self.parent[i])
        if p >= 0:
            # The split itself is logged on the child; the parent's earlier hops precede it.
            born = float(self.born[i])
            records = [h for h in self.hop_log(p) if h.time < born] + records
        return sorted(records, key=lambda h: h.time)

    def to_particles(self) -> list[Particle]:
        return [Particle(PhasePoint(self.x[i], self.xi[i]), Mode(int(self.sign[i])),
                         float(self.weight[i]), self.hop_log(i)) for i in range(len(self))]

    def total_weight(self) -> float:
        return float(np.sum(self.weight))

    def mode_weight(self, mode: Mode) -> float:
        return float(np.sum(self.weight[self.sign == int(mode)]))


class ParticleEvolutionError(RuntimeError):
    def __init__(self, message, particles=None):
        super().__init__(message)
        self.particles = particles


def _crossing_handler(ens: Ensemble, eps: float, pot: Potential, opts: HopOptions,
                      seed: int):
    def handle(rows, t_star, xc, xic, sign):
        n = len(rows)
        new_x, new_sign = xc.copy(), sign.copy()
        eligible = np.full(n, opts.transitions_enabled)
        if opts.max_hops is not None:
            eligible &= ens.hops[rows] < opts.max_hops
        if opts.skip_radius is not None:
            r = np.hypot(xic[:, 0], xic[:, 1])
            eligible &= r <= opts.skip_radius * math.sqrt(eps)
        if not eligible.any():
            return None
        T = np.zeros(n)
        T[eligible] = transfer_coefficient_arrays(xc[eligible], xic[eligible], pot, eps)
        landing = jump_arrays(sign, xc, xic, pot) if opts.jumps_enabled else xc

        if opts.statistic is Statistic.RANDOM:
            u = np.ones(n)
            er = rows[eligible]
            u[eligible] = counter_uniforms(seed, ens.origin[er], ens.draws[er])
            ens.draws[er] += 1
            move = eligible & (u < T)
            spawn = np.zeros(n, dtype=bool)
        else:
            move = eligible & (T >= 1.0)
            spawn = eligible & (T > 0.0) & (T < 1.0) & (ens.weight[rows] * T > 0.0)

        if move.any():
            mr = rows[move]
            ens.log.extend(mr, t_star[move], xc[move], xic[move], landing[move], -sign[move])
            ens.hops[mr] += 1
            new_x[move] = landing[move]
            new_sign[move] = -sign[move]

        if not spawn.any():
            return CrossingOutcome(new_x, xic, new_sign)

        pos = np.nonzero(spawn)[0]
        pr = rows[pos]
        w = ens.weight[pr]
        child_w = w * T[pos]
        ens.weight[pr] = w - child_w
        start = len(ens)
        child_ids = np.arange(start, start + len(pos), dtype=np.int64)
        ens.weight = np.concatenate([ens.weight, child_w])
        ens.origin = np.concatenate([ens.origin, ens.origin[pr]])
        ens.draws = np.concatenate([ens.draws, ens.draws[pr]])
        ens.hops = np.concatenate([ens.hops, ens.hops[pr] + 1])
        ens.parent = np.concatenate([ens.parent, pr])
        ens.born = np.concatenate([ens.born, t_star[pos]])
        ens.log.extend(child_ids, t_star[pos], xc[pos], xic[pos], landing[pos], -sign[pos])
        return CrossingOutcome(new_x, xic, new_sign, pos, landing[pos], xic[pos].copy(),
                               -sign[pos])

    return handle


def evolve_arrays(ens: Ensemble, t0: float, t1: float, eps: float, pot: Potential,
                  params: IntegratorParams, opts: HopOptions, seed: int = 0) -> Ensemble:
    """Evolve an :class:`Ensemble` in place and return it."""
    handler = _crossing_handler(ens, eps, pot, opts, seed)
    x, xi, sign = advance(ens.x, ens.xi, ens.sign, t0, t1, pot, params, handler)
    ens.x, ens.xi, ens.sign = x, xi, sign
    assert len(ens.weight) == len(x)
    return ens


def evolve_particle(particle: Particle, t0: float, t1: float, eps: float, pot: Potential,
                    params: IntegratorParams, opts: HopOptions, rng: RngStream) -> Particle:
    """Random realization of the hopping process for one particle.

    ``rng`` is advanced by the number of draws made.  The expected-value
    estimator splits particles, so it is only available through
    :func:`evolve_ensemble`.
    """
    if opts.statistic is not Statistic.RANDOM:
        raise ValueError("evolve_particle draws a random realization; use evolve_ensemble "
                         "for the expected-value estimator")
    ens = Ensemble.from_particles([particle])
    ens.origin[:] = rng.index
    ens.draws[:] = rng.counter
    try:
        evolve_arrays(ens, t0, t1, eps, pot, params, opts, rng.seed)
    except (ArithmeticError, RuntimeError, SingularMomentumError,
            DegeneratePotentialError) as exc:
        raise ParticleEvolutionError(f"particle {rng.index}: {exc}", [rng.index]) from exc
    rng.counter = int(ens.draws[0])
    return ens.to_particles()[0]


def evolve_ensemble(particles: Ensemble | Iterable[Particle], t0: float, t1: float,
                    eps: float, pot: Potential, params: IntegratorParams, opts: HopOptions,
                    seed: int = 0):
    """Evolve every particle with its own stream ``(seed, index)``.

    Accepts an :class:`Ensemble` (returned as a new evolved ensemble) or a
    sequence of :class:`Particle` (returned as a list of particles, which
    includes split-off parts under the expected-value estimator).
    """
    if isinstance(particles, Ensemble):
        return evolve_arrays(particles.copy(), t0, t1, eps, pot, params, opts, seed)
    particles = list(particles)
    ens = Ensemble.from_particles(particles)
    try:
        evolve_arrays(ens, t0, t1, eps, pot, params, opts, seed)
    except (SingularMomentumError, DegeneratePotentialError) as exc:
        raise ParticleEvolutionError(str(exc), list(range(len(particles)))) from exc
    return ens.to_particles()
