"""Classical band transport along the Hamiltonian flows of ``+-|xi| + V(x)``.

The integrator is the symmetric triple-jump composition of a Strang step
whose two sub-flows are exact:

* kick:  ``xi <- xi - h grad V(x)``   (``x`` frozen)
* drift: ``x  <- x +- h xi / |xi|``   (``xi`` frozen)

Everything below the scalar wrappers works on arrays of shape ``(n, 2)`` so
that whole particle ensembles advance together.  :func:`advance` is the
event-driven driver shared by :func:`propagate` and the hopping process: it
brackets sign changes of ``g = xi . grad V(x)`` from ``+`` to ``-`` and
refines them by bisection on the integrated flow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .phase_model import DegeneratePotentialError, Mode, PhasePoint, Potential

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba missing
    _kernels = None

GAMMA1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
GAMMA2 = 1.0 - 2.0 * GAMMA1


class IntegrationError(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NonUniqueContinuationError(DegeneratePotentialError):
    """The trajectory hit ``xi = 0`` where ``grad V = 0``."""


@dataclass(frozen=True)
class IntegratorParams:
    dt: float = 1e-2
    crossing_tol: float = 1e-10
    conical_tol: float = 1e-8
    max_bisection: int = 80

    def __post_init__(self):
        for name in ("dt", "crossing_tol", "conical_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def for_start(cls, point: PhasePoint, dt: float = 1e-2, **kw) -> "IntegratorParams":
        """Default parameters with ``conical_tol`` scaled by ``max(1, |xi0|)``."""
        tol = 1e-8 * max(1.0, math.hypot(*point.xi))
        return cls(dt=dt, conical_tol=tol, **kw)


class FlowEventKind(enum.Enum):
    SIGMA_CROSSING = "sigma_crossing"
    CONICAL_HIT = "conical_hit"


class FlowEvent(NamedTuple):
    kind: FlowEventKind
    time: float
    point: PhasePoint


# --------------------------------------------------------------------------
# Vector fields
#
# Internally a state is four contiguous 1D arrays (x1, x2, xi1, xi2); this
# keeps numpy loops long.  Potentials depend on x1 only, so only xi1 is kicked.


def _as_sign(sign, n):
    sign = np.asarray(sign)
    if sign.dtype != np.float64:
        sign = sign.astype(np.float64)
    return np.broadcast_to(sign, (n,))


def _cone_direction(x1, pot: Potential):
    d = pot.d1(x1)
    if np.any(d == 0.0):
        raise NonUniqueContinuationError(
            "trajectory reached xi = 0 at a critical point of V; continuation is not unique")
    return -np.sign(d)


def drift_direction(sign, x, xi, pot: Potential, conical_tol: float = 1e-8):
    """``+-xi/|xi|``, replaced by the outgoing limit ``-+grad V/|grad V|`` near the cone."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    xi = np.asarray(xi, dtype=float).reshape(-1, 2)
    r = np.hypot(xi[:, 0], xi[:, 1])
    small = r <= conical_tol
    with np.errstate(divide="ignore", invalid="ignore"):
        out = xi / r[:, None]
    if small.any():
        out[small, 0] = _cone_direction(x[small, 0], pot)
        out[small, 1] = 0.0
    return out * _as_sign(sign, len(r))[:, None]


def hamiltonian_field(mode: Mode, point: PhasePoint, pot: Potential,
                      conical_tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dx/dt, dxi/dt)`` of the band flow at ``point``."""
    dx = drift_direction(Mode(mode).sign, point.x, point.xi, pot, conical_tol)[0]
    return dx, -pot.grad(point.x)


def sigma_function(x, xi, pot: Potential):
    """``xi . grad V(x)``; its zero set is the hopping surface."""
    g = pot.grad(x)
    return xi[..., 0] * g[..., 0] + xi[..., 1] * g[..., 1]


def _sigma(state, pot):
    return state[2] * pot.d1(state[0])


# --------------------------------------------------------------------------
# Integrator


def _strang(sign, state, h, pot, conical_tol):
    x1, x2, xi1, xi2 = state
    xi1 = xi1 - (0.5 * h) * pot.d1(x1)
    r = np.sqrt(xi1 * xi1 + xi2 * xi2)
    small = r <= conical_tol
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (sign * h) / r
    if small.any():
        f = np.where(small, 0.0, f)
        x1 = x1 + f * xi1 + np.where(small, sign * h * _cone_direction(x1, pot), 0.0)
    else:
        x1 = x1 + f * xi1
    x2 = x2 + f * xi2
    xi1 = xi1 - (0.5 * h) * pot.d1(x1)
    return x1, x2, xi1, xi2


_GAMMAS = np.array([GAMMA1, GAMMA2, GAMMA1])

# Set to False to force the numpy reference path.
USE_KERNELS = _kernels is not None


def _kernel_args(pot):
    if not USE_KERNELS:
        return None
    spec = getattr(pot, "kernel_spec", None)
    return spec() if spec is not None else None


def _step_g(sign, state, h, pot, conical_tol):
    """Triple-jump step returning ``(new_state, g_before, g_after)``."""
    spec = _kernel_args(pot)
    if spec is None:
        g0 = _sigma(state, pot)
        new = _numpy_step(sign, state, h, pot, conical_tol)
        return new, g0, _sigma(new, pot)
    kind, p = spec
    n = len(state[0])
    sign = np.ascontiguousarray(np.broadcast_to(np.asarray(sign, dtype=np.float64), (n,)))
    h = np.ascontiguousarray(np.broadcast_to(np.asarray(h, dtype=np.float64), (n,)))
    g0 = np.empty(n)
    *new, g1, bad = _kernels.step_kernel(kind, p, sign, *state, h, g0, float(conical_tol),
                                         _GAMMAS)
    if bad:
        raise NonUniqueContinuationError(
            "trajectory reached xi = 0 at a critical point of V; continuation is not unique")
    return tuple(new), g0, g1


def _numpy_step(sign, state, h, pot, conical_tol):
    for gamma in _GAMMAS:
        state = _strang(sign, state, gamma * h, pot, conical_tol)
    return state


def _step(sign, state, h, pot, conical_tol):
    return _step_g(sign, state, h, pot, conical_tol)[0]


def _split(x, xi):
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    xi = np.asarray(xi, dtype=float).reshape(-1, 2)
    return (np.ascontiguousarray(x[:, 0]), np.ascontiguousarray(x[:, 1]),
            np.ascontiguousarray(xi[:, 0]), np.ascontiguousarray(xi[:, 1]))


def _join(state):
    x1, x2, xi1, xi2 = state
    return np.column_stack([x1, x2]), np.column_stack([xi1, xi2])


def _take(state, rows):
    return tuple(a[rows] for a in state)


def _put(state, rows, values):
    for a, v in zip(state, values):
        a[rows] = v


def strang_arrays(sign, x, xi, h, pot: Potential, conical_tol: float = 1e-8):
    state = _split(x, xi)
    return _join(_strang(_as_sign(sign, len(state[0])), state, np.asarray(h, dtype=float),
                         pot, conical_tol))


def step_arrays(sign, x, xi, h, pot: Potential, conical_tol: float = 1e-8):
    """One triple-jump step of size ``h`` (scalar or per-row array) on ``(n, 2)`` arrays."""
    state = _split(x, xi)
    return _join(_step(_as_sign(sign, len(state[0])), state, np.asarray(h, dtype=float),
                       pot, conical_tol))


def step(mode: Mode, point: PhasePoint, dt: float, pot: Potential,
         conical_tol: float = 1e-8) -> PhasePoint:
    x, xi = step_arrays(Mode(mode).sign, point.x, point.xi, dt, pot, conical_tol)
    return PhasePoint(x[0], xi[0])


def _locate(sign, state0, h, state1, pot, params):
    n = len(sign)
    lo = np.zeros(n)
    hi = np.array(np.broadcast_to(h, (n,)), dtype=float)
    best = tuple(a.copy() for a in state1)
    gh = _sigma(best, pot)
    for _ in range(params.max_bisection):
        act = np.nonzero((np.abs(gh) > params.crossing_tol) & (hi - lo > 4e-16 * hi))[0]
        if act.size == 0:
            break
        mid = 0.5 * (lo[act] + hi[act])
        sm, _, gm = _step_g(sign[act], _take(state0, act), mid, pot, params.conical_tol)
        neg = gm <= 0.0
        a_neg, a_pos = act[neg], act[~neg]
        hi[a_neg] = mid[neg]
        _put(best, a_neg, _take(sm, neg))
        gh[a_neg] = gm[neg]
        lo[a_pos] = mid[~neg]
    return hi, best


def locate_crossing(sign, x0, xi0, h, pot: Potential, params: IntegratorParams,
                    x1=None, xi1=None):
    """Bisect ``tau`` in ``(0, h]`` for rows whose ``g`` goes from ``> 0`` to ``<= 0``.

    Returns ``(tau, x, xi)``; the returned point always lies on the
    ``g <= 0`` side, so restarting from it cannot re-detect the same crossing.
    """
    state0 = _split(x0, xi0)
    sign = np.array(_as_sign(sign, len(state0[0])))
    h = np.array(np.broadcast_to(np.asarray(h, dtype=float), (len(sign),)))
    state1 = _step(sign, state0, h, pot, params.conical_tol) if x1 is None else _split(x1, xi1)
    tau, best = _locate(sign, state0, h, state1, pot, params)
    x, xi = _join(best)
    return tau, x, xi


class CrossingOutcome(NamedTuple):
    """What a crossing handler did to the rows it was given.

    ``spawn_parent`` indexes into the handler's input rows; spawned
    trajectories inherit the parent's remaining time in the current step.
    """

    x: np.ndarray
    xi: np.ndarray
    sign: np.ndarray
    spawn_parent: np.ndarray | None = None
    spawn_x: np.ndarray | None = None
    spawn_xi: np.ndarray | None = None
    spawn_sign: np.ndarray | None = None


CrossingHandler = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray],
                           "CrossingOutcome | None"]


def advance(x, xi, sign, t0: float, t1: float, pot: Potential, params: IntegratorParams,
            on_crossing: CrossingHandler | None = None):
    """Advance trajectories from ``t0`` to ``t1``, handling hopping-surface crossings.

    ``x`` and ``xi`` have shape ``(n, 2)``.  ``on_crossing(rows, t_star,
    x_star, xi_star, sign)`` is called with the refined crossing points; it
    may return a :class:`CrossingOutcome` that replaces those rows (hop,
    jump) and appends new trajectories.  Appended rows go to the end of the
    arrays in the order they were returned.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    state = _split(x, xi)
    n = len(state[0])
    sign = np.array(np.broadcast_to(sign, (n,)), dtype=np.int8)
    fsign = sign.astype(np.float64)
    span = t1 - t0
    n_steps = int(math.ceil(span / params.dt - 1e-9)) if span > 0 else 0
    for k in range(n_steps):
        ts = t0 + k * params.dt
        te = t1 if k == n_steps - 1 else t0 + (k + 1) * params.dt
        rem = np.full(n, te - ts)
        full = True
        while True:
            if full:
                rows = np.arange(n)
                sub, sg, r = state, fsign, te - ts
            else:
                rows = np.nonzero(rem > 0.0)[0]
                if rows.size == 0:
                    break
                sub, sg, r = _take(state, rows), fsign[rows], rem[rows]
            new, g0, g1 = _step_g(sg, sub, r, pot, params.conical_tol)
            bad = ~(np.isfinite(new[0]) & np.isfinite(new[1]) & np.isfinite(new[2]))
            if bad.any():
                i = int(rows[np.argmax(bad)])
                raise IntegrationError(
                    f"non-finite state after step at t={ts:.6g} (row {i})",
                    state={"row": i, "x": [state[0][i], state[1][i]],
                           "xi": [state[2][i], state[3][i]], "sign": int(sign[i]), "t": ts})
            hit = (g0 > 0.0) & (g1 <= 0.0)
            if not hit.any():
                if full:
                    state = new
                else:
                    _put(state, rows, new)
                break
            if full:
                r = rem.copy()
                state = tuple(a.copy() for a in state)
            full = False
            free = ~hit
            _put(state, rows[free], _take(new, free))
            rem[rows[free]] = 0.0
            crows = rows[hit]
            h_hit = np.broadcast_to(r, (len(rows),))[hit]
            start = _take(sub, hit)
            tau, best = _locate(sg[hit], start, h_hit, _take(new, hit), pot, params)
            t_star = te - h_hit + tau
            rem[crows] = np.maximum(h_hit - tau, 0.0)
            _put(state, crows, best)
            if on_crossing is None:
                continue
            xc, xic = _join(best)
            out = on_crossing(crows, t_star, xc, xic, sign[crows].copy())
            if out is None:
                continue
            _put(state, crows, _split(out.x, out.xi))
            sign[crows] = out.sign
            fsign[crows] = out.sign
            if out.spawn_parent is not None and len(out.spawn_parent):
                extra = _split(out.spawn_x, out.spawn_xi)
                state = tuple(np.concatenate([a, b]) for a, b in zip(state, extra))
                ssign = np.asarray(out.spawn_sign, dtype=np.int8)
                sign = np.concatenate([sign, ssign])
                fsign = np.concatenate([fsign, ssign.astype(np.float64)])
                rem = np.concatenate([rem, rem[crows[out.spawn_parent]]])
                n = len(sign)
    x, xi = _join(state)
    return x, xi, sign


# --------------------------------------------------------------------------
# Single-trajectory API


def propagate(mode: Mode, point: PhasePoint, t0: float, t1: float,
              params: IntegratorParams, pot: Potential
              ) -> tuple[PhasePoint, list[FlowEvent]]:
    """Integrate one band trajectory, reporting hopping-surface crossings."""
    events: list[FlowEvent] = []

    def record(rows, t_star, xc, xic, sign):
        for t, a, b in zip(t_star, xc, xic):
            p = PhasePoint(a, b)
            events.append(FlowEvent(FlowEventKind.SIGMA_CROSSING, float(t), p))
            if math.hypot(*b) <= params.conical_tol:
                events.append(FlowEvent(FlowEventKind.CONICAL_HIT, float(t), p))
        return None

    x, xi, _ = advance(point.x, point.xi, Mode(mode).sign, t0, t1, pot, params, record)
    return PhasePoint(x[0], xi[0]), events


def min_gap_along(mode: Mode, point: PhasePoint, t0: float, t1: float,
                  params: IntegratorParams, pot: Potential) -> tuple[float, float] | None:
    """Time and value of ``|xi|`` at the first hopping-surface crossing, or ``None``."""
    _, events = propagate(mode, point, t0, t1, params, pot)
    for ev in events:
        if ev.kind is FlowEventKind.SIGMA_CROSSING:
            return ev.time, float(math.hypot(*ev.point.xi))
    return None
