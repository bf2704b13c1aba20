"""Spectral reference solvers for the 2x2 Dirac system.

The potential depends on ``x1`` only and the data carry a plane wave
``exp(i x2 xi2_0 / eps)``, so the 2D problem reduces exactly to a 1D spinor
``phi(x1)`` with the transverse momentum ``xi2_0`` as a parameter.  Time
stepping is Strang splitting: half potential phase, exact kinetic step in
Fourier space, half potential phase.

Fourier convention: ``numpy.fft`` (unnormalized forward, ``1/n`` inverse);
the frequency of index ``j`` is ``k_j = 2 pi fftfreq(n, h)[j]`` and the
semiclassical momentum is ``xi1 = eps k``.

Graphene fields are stored in the spinor basis.  Pseudo-graphene fields are
stored as band amplitudes ``(a+, a-)`` with ``psi_hat = e+ a+ + e- a-``,
``e+- = (1, +-exp(i theta)) / sqrt(2)`` and ``exp(i theta) = (xi1 + i xi2)/|xi|``;
each amplitude then evolves as a scalar wave with symbol ``+-|xi| + V``, and
mode densities are measured in the spinor basis as for graphene.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .phase_model import Potential
from .sampling import MixtureSpec, SamplingMethod, WavepacketSpec, sample_mixture_centers


class ResolutionError(ValueError):
    def __init__(self, message, suggested_n=None):
        super().__init__(message)
        self.suggested_n = suggested_n


class BlowUpError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class QuantumVariant(enum.Enum):
    GRAPHENE = "graphene"
    PSEUDO_GRAPHENE = "pseudo"


@dataclass(frozen=True)
class Grid1D:
    x_min: float = -10.0
    x_max: float = 10.0
    n: int = 4096

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 2, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, self.h)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n": self.n}


def default_grid(eps: float, x_min: float = -10.0, x_max: float = 10.0,
                 points_per_eps: float = 8.0, xi_max: float | None = None,
                 safety: float = 4.0) -> Grid1D:
    """Smallest power-of-two grid with ``h <= eps / points_per_eps``.

    With ``xi_max`` the grid is refined further until ``h <= eps / (safety xi_max)``.
    """
    per = points_per_eps if xi_max is None else max(points_per_eps, safety * xi_max)
    need = per * (x_max - x_min) / eps
    return Grid1D(x_min, x_max, 2 ** max(1, math.ceil(math.log2(need) - 1e-12)))


def default_dt(eps: float) -> float:
    return eps / 20.0


def fourier_symbol(grid: Grid1D, eps: float, xi2: float):
    """``(|xi|, exp(i theta))`` on the Fourier lattice, with ``exp(i theta) = 1`` at ``xi = 0``."""
    xi1 = eps * grid.k
    r = np.hypot(xi1, xi2)
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(r > 0, (xi1 + 1j * xi2) / np.where(r > 0, r, 1.0), 1.0)
    return r, phase


@dataclass
class SpinorField:
    """Spinor (or band amplitudes, for pseudo-graphene) on a grid.

    ``psi`` has shape ``(..., 2, n)``; leading axes index independent states.
    """

    grid: Grid1D
    psi: np.ndarray
    eps: float
    xi2_0: float
    variant: QuantumVariant = QuantumVariant.GRAPHENE
    initial_norm: float | None = field(default=None)

    def __post_init__(self):
        self.variant = QuantumVariant(self.variant)
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape[-2:] != (2, self.grid.n):
            raise ValueError(f"psi must have shape (..., 2, {self.grid.n})")
        if not np.all(np.isfinite(self.psi)):
            raise ValueError("psi has non-finite entries")

    def norm2(self) -> np.ndarray:
        return self.grid.h * np.sum(np.abs(self.psi) ** 2, axis=(-2, -1))

    def copy(self) -> "SpinorField":
        return replace(self, psi=self.psi.copy())


def wavepacket_xi_max(spec: WavepacketSpec) -> float:
    """``|xi|`` bound covering the wavepacket's momentum spread to three standard deviations."""
    return math.hypot(spec.xi1_0, spec.xi2_0) + 3 * spec.sigma


def required_spacing(spec: WavepacketSpec, safety: float = 4.0) -> float:
    """Largest admissible ``h`` for a wavepacket: ``eps / (safety |xi|_max)``."""
    return spec.eps / (safety * wavepacket_xi_max(spec))


def grid_for(spec: WavepacketSpec, **kw) -> Grid1D:
    """Default grid for ``spec.eps``, refined if the wavepacket needs it."""
    return default_grid(spec.eps, xi_max=wavepacket_xi_max(spec), **kw)


def init_wavepacket(grid: Grid1D, spec: WavepacketSpec,
                    variant=QuantumVariant.GRAPHENE, safety: float = 4.0) -> SpinorField:
    """Plus-polarized coherent state centred at ``(x1_0, xi1_0)``.

    The Gaussian is built on the grid, projected with ``Pi+(eps D)`` and
    renormalized; the pre-normalization norm is kept in ``initial_norm``.
    """
    h_max = required_spacing(spec, safety)
    if grid.h > h_max:
        n = 2 ** math.ceil(math.log2(grid.length / h_max))
        raise ResolutionError(f"grid spacing {grid.h:.3g} exceeds {h_max:.3g}; use n >= {n}",
                              suggested_n=n)
    return _init_batch(grid, np.array([spec.x1_0]), np.array([spec.xi1_0]), spec.eps,
                       spec.xi2_0, QuantumVariant(variant), squeeze=True)


def _init_batch(grid, x0, k0, eps, xi2, variant, squeeze=False) -> SpinorField:
    x = grid.x
    # The period is large compared with sqrt(eps); wrap distances onto it anyway.
    d = (x[None, :] - x0[:, None] + 0.5 * grid.length) % grid.length - 0.5 * grid.length
    u = (math.pi * eps) ** -0.25 * np.exp(-d * d / (2 * eps) + 1j * d * k0[:, None] / eps)
    u_hat = np.fft.fft(u, axis=-1)
    _, phase = fourier_symbol(grid, eps, xi2)
    psi = np.empty((len(x0), 2, grid.n), dtype=complex)
    if variant is QuantumVariant.GRAPHENE:
        # Pi+ (sqrt2 u, 0) = e+ (e+^* (sqrt2 u, 0)) = e+ u_hat
        psi[:, 0] = np.fft.ifft(u_hat / math.sqrt(2), axis=-1)
        psi[:, 1] = np.fft.ifft(phase * u_hat / math.sqrt(2), axis=-1)
    else:
        psi[:, 0] = u
        psi[:, 1] = 0.0
    norm = np.sqrt(grid.h * np.sum(np.abs(psi) ** 2, axis=(-2, -1)))
    psi /= norm[:, None, None]
    if squeeze:
        return SpinorField(grid, psi[0], eps, xi2, variant, float(norm[0]))
    return SpinorField(grid, psi, eps, xi2, variant, None)


class StrangPropagator:
    """Precomputed phases for repeated Strang steps of size ``dt``."""

    def __init__(self, grid: Grid1D, eps: float, xi2: float, dt: float, pot: Potential,
                 variant=QuantumVariant.GRAPHENE):
        self.grid, self.eps, self.xi2, self.dt = grid, eps, xi2, dt
        self.variant = QuantumVariant(variant)
        v = pot.profile(grid.x)
        self.half_v = np.exp(-0.5j * dt * v / eps)
        self.full_v = self.half_v * self.half_v
        r, phase = fourier_symbol(grid, eps, xi2)
        w = r * dt / eps
        if self.variant is QuantumVariant.GRAPHENE:
            # exp(-i dt A / eps) = cos(w) Id - i sin(w) A/|xi|, A/|xi| = [[0, conj(p)], [p, 0]]
            self.c = np.cos(w)
            self.s01 = -1j * np.sin(w) * np.conj(phase)
            self.s10 = -1j * np.sin(w) * phase
        else:
            self.plus = np.exp(-1j * w)
            self.minus = np.conj(self.plus)

    def kinetic(self, psi: np.ndarray) -> np.ndarray:
        f = np.fft.fft(psi, axis=-1)
        if self.variant is QuantumVariant.GRAPHENE:
            a, b = f[..., 0, :], f[..., 1, :]
            out = np.empty_like(f)
            out[..., 0, :] = self.c * a + self.s01 * b
            out[..., 1, :] = self.s10 * a + self.c * b
        else:
            out = f
            out[..., 0, :] *= self.plus
            out[..., 1, :] *= self.minus
        return np.fft.ifft(out, axis=-1)

    def step(self, psi: np.ndarray) -> np.ndarray:
        psi = psi * self.half_v
        psi = self.kinetic(psi)
        psi *= self.half_v
        return psi

    def run(self, psi: np.ndarray, n_steps: int) -> np.ndarray:
        """``n_steps`` Strang steps with adjacent half phases merged."""
        if n_steps == 0:
            return psi.copy()
        psi = psi * self.half_v
        for i in range(n_steps):
            psi = self.kinetic(psi)
            psi *= self.full_v if i < n_steps - 1 else self.half_v
        return psi


def strang_step(psi: SpinorField, dt: float, pot: Potential, variant=None) -> SpinorField:
    variant = psi.variant if variant is None else QuantumVariant(variant)
    if variant is not psi.variant:
        raise ValueError("field representation does not match the requested variant")
    prop = StrangPropagator(psi.grid, psi.eps, psi.xi2_0, dt, pot, variant)
    return replace(psi, psi=prop.step(psi.psi))


def _schedule(t0: float, t1: float, dt: float) -> list[tuple[float, int]]:
    """Chunks ``(step, count)`` covering ``[t0, t1]``; the last step is shortened if needed."""
    span = t1 - t0
    if span < 0:
        raise ValueError("t1 must be >= t0")
    n_full = int(math.floor(span / dt + 1e-9))
    rest = span - n_full * dt
    out = [(dt, n_full)] if n_full else []
    if rest > 1e-12 * max(1.0, span):
        out.append((rest, 1))
    return out


def evolve(psi: SpinorField, t0: float, t1: float, dt: float, pot: Potential,
           variant=None, check_every: int = 256) -> SpinorField:
    variant = psi.variant if variant is None else QuantumVariant(variant)
    if variant is not psi.variant:
        raise ValueError("field representation does not match the requested variant")
    state = psi.psi
    done = 0
    for h, count in _schedule(t0, t1, dt):
        prop = StrangPropagator(psi.grid, psi.eps, psi.xi2_0, h, pot, variant)
        while count:
            m = min(count, check_every)
            state = prop.run(state, m)
            done += m
            count -= m
            if not np.all(np.isfinite(state)):
                raise BlowUpError(f"non-finite field by step {done}", step=done)
    return replace(psi, psi=state)


def mode_densities(psi: SpinorField) -> tuple[np.ndarray, np.ndarray]:
    """``(|Pi+ psi|^2, |Pi- psi|^2)`` in the spinor basis."""
    _, phase = fourier_symbol(psi.grid, psi.eps, psi.xi2_0)
    f = np.fft.fft(psi.psi, axis=-1)
    if psi.variant is QuantumVariant.GRAPHENE:
        # band amplitudes a+- = e+-^* psi_hat
        a_p = (f[..., 0, :] + np.conj(phase) * f[..., 1, :]) / math.sqrt(2)
        a_m = (f[..., 0, :] - np.conj(phase) * f[..., 1, :]) / math.sqrt(2)
    else:
        a_p, a_m = f[..., 0, :], f[..., 1, :]
    out = []
    for a, sgn in ((a_p, 1.0), (a_m, -1.0)):
        c0 = np.fft.ifft(a, axis=-1) / math.sqrt(2)
        c1 = np.fft.ifft(sgn * phase * a, axis=-1) / math.sqrt(2)
        out.append(np.abs(c0) ** 2 + np.abs(c1) ** 2)
    return out[0], out[1]


def mode_masses(psi: SpinorField) -> tuple[np.ndarray, np.ndarray]:
    rp, rm = mode_densities(psi)
    h = psi.grid.h
    return h * rp.sum(axis=-1), h * rm.sum(axis=-1)


@dataclass
class EnsembleResult:
    times: list[float]
    rho_plus: list[np.ndarray]
    rho_minus: list[np.ndarray]
    centers: np.ndarray
    norm_drift: float


def ensemble_evolve(mix: MixtureSpec, n_wavefunctions: int, grid: Grid1D, dt: float,
                    pot: Potential, variant=QuantumVariant.GRAPHENE, seed: int = 0,
                    times=(4.5,), batch: int = 32,
                    method=SamplingMethod.MC) -> EnsembleResult:
    """Equal-weight average of mode densities over coherent states with centres from ``f0``.

    States are evolved in batches; partial sums are accumulated in batch
    order so the result does not depend on how batches are scheduled.
    """
    if n_wavefunctions < 1:
        raise ValueError("n_wavefunctions must be >= 1")
    variant = QuantumVariant(variant)
    times = sorted(float(t) for t in times)
    x0, k0 = sample_mixture_centers(mix, n_wavefunctions, method, seed)
    acc_p = [np.zeros(grid.n) for _ in times]
    acc_m = [np.zeros(grid.n) for _ in times]
    drift = 0.0
    failures = []
    for start in range(0, n_wavefunctions, batch):
        sl = slice(start, min(start + batch, n_wavefunctions))
        field_ = _init_batch(grid, x0[sl], k0[sl], mix.eps, mix.xi2_0, variant)
        t_prev = 0.0
        try:
            for j, t in enumerate(times):
                field_ = evolve(field_, t_prev, t, dt, pot)
                t_prev = t
                rp, rm = mode_densities(field_)
                acc_p[j] += rp.sum(axis=0)
                acc_m[j] += rm.sum(axis=0)
            drift = max(drift, float(np.max(np.abs(field_.norm2() - 1.0))))
        except BlowUpError as exc:
            failures.append((sl.start, sl.stop, str(exc)))
    if failures:
        raise BlowUpError(f"{len(failures)} batch(es) failed: {failures}")
    n = float(n_wavefunctions)
    return EnsembleResult(times, [a / n for a in acc_p], [a / n for a in acc_m],
                          np.column_stack([x0, k0]), drift)


def write_density_csv(path, grid: Grid1D, rho_plus, rho_minus) -> None:
    data = np.column_stack([grid.x, rho_plus, rho_minus])
    np.savetxt(path, data, delimiter=",", header="x,rho_plus,rho_minus", comments="",
               fmt="%.17g")
