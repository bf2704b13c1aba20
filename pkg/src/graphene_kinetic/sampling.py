"""Initial data for the kinetic model.

A coherent state centred at ``(x1_0, xi_0)`` has the Gaussian Wigner
function

    (1 / (pi eps)) exp(-(x1 - x1_0)^2 / eps - (xi1 - xi1_0)^2 / eps)

with ``xi2`` pinned at ``xi2_0``.  Its plus-mode part is better approximated
by shifting ``x1`` by ``(eps / 2) xi2 / |xi|^2``; the samplers here produce
that shifted density.  Mixtures draw the centres from a density ``f0`` first.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, special

from .hopping import Ensemble
from .phase_model import SingularMomentumError


class ConfigurationError(ValueError):
    """Raised when a sampler is configured so it cannot work efficiently."""


class SamplingMethod(enum.Enum):
    QMC = "qmc"
    MC = "mc"


@dataclass(frozen=True)
class WavepacketSpec:
    x1_0: float = -2.0
    xi1_0: float = 1.3
    xi2_0: float = 0.1
    eps: float = 0.064

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    @property
    def sigma(self) -> float:
        """Standard deviation of each Wigner marginal, ``sqrt(eps / 2)``."""
        return math.sqrt(self.eps / 2)

    @property
    def center_shift(self) -> float:
        return plus_shift(self.eps, self.xi1_0, self.xi2_0)

    def to_dict(self) -> dict:
        return asdict(self)


def plus_shift(eps, xi1, xi2):
    """``(eps / 2) xi2 / |xi|^2``, the x1 offset of the plus-mode density."""
    r2 = np.asarray(xi1, dtype=float) ** 2 + np.asarray(xi2, dtype=float) ** 2
    if np.any(r2 == 0.0):
        raise SingularMomentumError("the plus-mode shift is undefined at xi = 0")
    return 0.5 * eps * np.asarray(xi2, dtype=float) / r2


def wigner_gaussian(spec: WavepacketSpec, x1, xi1):
    x1 = np.asarray(x1, dtype=float)
    xi1 = np.asarray(xi1, dtype=float)
    q = ((x1 - spec.x1_0) ** 2 + (xi1 - spec.xi1_0) ** 2) / spec.eps
    return np.exp(-q) / (math.pi * spec.eps)


def shifted_plus_density(spec: WavepacketSpec, x1, xi1, xi2=None):
    """Gaussian Wigner function evaluated at ``x1 - (eps/2) xi2 / |xi|^2``."""
    xi2 = spec.xi2_0 if xi2 is None else xi2
    return wigner_gaussian(spec, np.asarray(x1) - plus_shift(spec.eps, xi1, xi2), xi1)


def gaussian_position_marginal(spec: WavepacketSpec, x1):
    x1 = np.asarray(x1, dtype=float)
    return np.exp(-((x1 - spec.x1_0) ** 2) / spec.eps) / math.sqrt(math.pi * spec.eps)


def _xi_quadrature(center: float, sigma: float, n: int):
    """Trapezoid nodes and weights for a normal density in ``xi1``, truncated at 12 sigma."""
    t = np.linspace(-12.0, 12.0, n)
    w = np.full(n, t[1] - t[0])
    w[[0, -1]] *= 0.5
    w *= np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    return center + sigma * t, w


def shifted_position_marginal(spec: WavepacketSpec, x1, n_xi: int = 8193):
    """``int f_{+,0}(x1, xi1) dxi1`` by quadrature in ``xi1``.

    The shift varies fast near ``xi1 = 0`` when ``eps`` is large, so a fine
    uniform rule is used rather than Gauss-Hermite.
    """
    x1 = np.asarray(x1, dtype=float)
    nodes, w = _xi_quadrature(spec.xi1_0, spec.sigma, n_xi)
    shifts = plus_shift(spec.eps, nodes, spec.xi2_0)
    out = np.zeros_like(x1)
    reach = spec.x1_0 + np.array([shifts.min(), shifts.max()])
    live = (x1 > reach[0] - 40 * spec.sigma) & (x1 < reach[1] + 40 * spec.sigma)
    xs = x1[live]
    acc = np.zeros_like(xs)
    for s, wk in zip(np.array_split(shifts, max(1, n_xi // 256)),
                     np.array_split(w, max(1, n_xi // 256))):
        d = xs[None, :] - spec.x1_0 - s[:, None]
        acc += wk @ np.exp(-d * d / spec.eps)
    out[live] = acc / math.sqrt(math.pi * spec.eps)
    return out


# --------------------------------------------------------------------------
# Low-discrepancy points and the normal quantile

_PRIMES = (2, 3, 5, 7, 11, 13)


def radical_inverse(i, base: int = 2) -> np.ndarray:
    """Van der Corput radical inverse of the integers ``i`` in ``base``."""
    i = np.asarray(i, dtype=np.int64).copy()
    out = np.zeros(i.shape)
    scale = 1.0 / base
    while np.any(i > 0):
        out += (i % base) * scale
        i //= base
        scale /= base
    return out


def hammersley(n: int, dim: int = 2) -> np.ndarray:
    """``n`` Hammersley points in ``[0, 1)^dim``: ``((i + 0.5)/n, phi_2(i), phi_3(i), ...)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 1 <= dim <= len(_PRIMES) + 1:
        raise ValueError(f"dim must be in [1, {len(_PRIMES) + 1}]")
    i = np.arange(n)
    cols = [(i + 0.5) / n] + [radical_inverse(i, b) for b in _PRIMES[: dim - 1]]
    return np.column_stack(cols)


# Rational approximation of the normal quantile (relative error ~1e-9),
# polished by one Halley step on Phi.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _poly(coef, t):
    acc = np.zeros_like(t)
    for c in coef:
        acc = acc * t + c
    return acc


def inverse_normal_cdf(u):
    """Standard normal quantile of ``u`` in ``(0, 1)``."""
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0.0) & (u < 1.0))):
        raise ValueError("inverse_normal_cdf needs 0 < u < 1")
    z = np.empty_like(u)
    lo = u < _P_LOW
    hi = u > 1.0 - _P_LOW
    mid = ~(lo | hi)
    q = u[mid] - 0.5
    r = q * q
    z[mid] = _poly(_A, r) * q / (_poly(_B, r) * r + 1.0)
    for mask, uu, sgn in ((lo, u[lo], 1.0), (hi, 1.0 - u[hi], -1.0)):
        t = np.sqrt(-2.0 * np.log(uu))
        z[mask] = sgn * _poly(_C, t) / (_poly(_D, t) * t + 1.0)
    # Halley refinement
    e = 0.5 * special.erfc(-z / math.sqrt(2.0)) - u
    g = e * math.sqrt(2.0 * math.pi) * np.exp(0.5 * z * z)
    z = z - g / (1.0 + 0.5 * z * g)
    return z[()] if z.ndim == 0 else z


def normal_cdf(z):
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


def open_uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniforms strictly inside ``(0, 1)``: the 53-bit grid offset by half a cell."""
    return rng.random(shape) + 2.0**-54


def _unit_points(n: int, dim: int, method: SamplingMethod, seed: int) -> np.ndarray:
    method = SamplingMethod(method)
    if method is SamplingMethod.QMC:
        pts = hammersley(n, dim)
        # radical inverse of 0 is 0; the half offset keeps the quantile finite
        pts[:, 1:] += 0.5 / n
        return pts
    return open_uniforms(np.random.default_rng(seed), (n, dim))


# --------------------------------------------------------------------------
# Samplers


def _plus_ensemble(x1, xi1, xi2, eps) -> Ensemble:
    n = len(x1)
    x1 = x1 + plus_shift(eps, xi1, xi2)
    return Ensemble(np.column_stack([x1, np.zeros(n)]),
                    np.column_stack([xi1, np.broadcast_to(xi2, (n,))]),
                    1, np.full(n, 1.0 / n))


def sample_pure_state(spec: WavepacketSpec, n: int, method=SamplingMethod.QMC,
                      seed: int = 0, shifted: bool = True) -> Ensemble:
    """Sample the plus-mode initial density of one coherent state.

    Returns ``n`` plus-mode particles of weight ``1/n``.  With
    ``shifted=False`` the unshifted Gaussian Wigner function is sampled.
    QMC output does not depend on ``seed``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    z = inverse_normal_cdf(_unit_points(n, 2, method, seed))
    x1 = spec.x1_0 + spec.sigma * z[:, 0]
    xi1 = spec.xi1_0 + spec.sigma * z[:, 1]
    if not shifted:
        return _plus_ensemble(x1 - plus_shift(spec.eps, xi1, spec.xi2_0), xi1,
                              spec.xi2_0, spec.eps)
    return _plus_ensemble(x1, xi1, spec.xi2_0, spec.eps)


@dataclass(frozen=True)
class MixtureSpec:
    """Distribution ``f0`` of coherent-state centres.

    ``f0(x, xi) = C * bump(x) * exp(-xi_rate (xi - xi_center)^2)`` where
    ``bump`` is ``|cos(2 pi x)|`` on each interval of ``bumps`` and zero
    elsewhere, and ``C`` is fixed numerically so that ``f0`` has unit mass.
    """

    eps: float = 0.016
    xi2_0: float = 0.1
    bumps: tuple[tuple[float, float], ...] = ((-1.75, -1.25), (-2.75, -2.25))
    xi_center: float = 1.3
    xi_rate: float = 5.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        object.__setattr__(self, "bumps", tuple(tuple(map(float, b)) for b in self.bumps))
        for a, b in self.bumps:
            if not b > a:
                raise ValueError(f"empty bump interval ({a}, {b})")

    def bump(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.bumps:
            inside |= (x >= a) & (x <= b)
        return np.where(inside, np.abs(np.cos(2 * np.pi * x)), 0.0)

    def momentum_profile(self, xi):
        return np.exp(-self.xi_rate * (np.asarray(xi, dtype=float) - self.xi_center) ** 2)

    @property
    def normalization(self) -> float:
        return mixture_normalization(self)

    def density(self, x, xi):
        return self.normalization * self.bump(x) * self.momentum_profile(xi)

    @property
    def xi_sigma(self) -> float:
        return math.sqrt(0.5 / self.xi_rate)

    def wavepacket(self, x1_0: float, xi1_0: float) -> WavepacketSpec:
        return WavepacketSpec(x1_0, xi1_0, self.xi2_0, self.eps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bumps"] = [list(b) for b in self.bumps]
        return d


def _bump_mass(mix: MixtureSpec) -> float:
    return sum(integrate.quad(lambda s: abs(math.cos(2 * math.pi * s)), a, b,
                              limit=200, epsabs=1e-13)[0] for a, b in mix.bumps)


def mixture_normalization(mix: MixtureSpec) -> float:
    """``1 / int f0`` computed by adaptive quadrature."""
    mass_xi = integrate.quad(lambda s: float(mix.momentum_profile(s)), -np.inf, np.inf,
                             epsabs=1e-13)[0]
    return 1.0 / (_bump_mass(mix) * mass_xi)


def _bump_quantile(mix: MixtureSpec, u):
    """Inverse CDF of the normalized ``bump`` profile, by tabulation."""
    grid = np.concatenate([np.linspace(a, b, 4097) for a, b in sorted(mix.bumps)])
    dens = mix.bump(grid)
    cdf = np.zeros_like(grid)
    seg = 0.5 * (dens[1:] + dens[:-1]) * np.diff(grid)
    cdf[1:] = np.cumsum(seg)
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(u, cdf[keep], grid[keep])


def sample_mixture_centers(mix: MixtureSpec, n: int, method=SamplingMethod.MC,
                           seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` centres ``(x1_0, xi1_0)`` from ``f0``.

    MC uses rejection sampling from a bounding box; QMC maps the first two
    Hammersley coordinates through the inverse marginal CDFs.
    """
    method = SamplingMethod(method)
    if method is SamplingMethod.QMC:
        pts = _unit_points(n, 2, method, seed)
        return (_bump_quantile(mix, pts[:, 0]),
                mix.xi_center + mix.xi_sigma * inverse_normal_cdf(pts[:, 1]))
    rng = np.random.default_rng(seed)
    lo = min(a for a, _ in mix.bumps)
    hi = max(b for _, b in mix.bumps)
    half = 8.0 * mix.xi_sigma
    peak = mix.normalization
    box = (hi - lo) * 2 * half * peak
    efficiency = 1.0 / box
    if efficiency < 0.01:
        raise ConfigurationError(f"rejection efficiency {efficiency:.3g} is below 1%")
    xs, ks, have = [], [], 0
    while have < n:
        m = int((n - have) / efficiency * 1.1) + 16
        u = open_uniforms(rng, (m, 3))
        x = lo + (hi - lo) * u[:, 0]
        k = mix.xi_center + half * (2 * u[:, 1] - 1)
        ok = u[:, 2] * peak < mix.density(x, k)
        xs.append(x[ok])
        ks.append(k[ok])
        have += int(ok.sum())
    return np.concatenate(xs)[:n], np.concatenate(ks)[:n]


def sample_mixture(mix: MixtureSpec, n: int, method=SamplingMethod.QMC,
                   seed: int = 0) -> Ensemble:
    """Sample the plus-mode initial density of the mixture.

    Each particle gets its own centre from ``f0`` and then the coherent-state
    offset and plus-mode shift exactly as :func:`sample_pure_state`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    method = SamplingMethod(method)
    sigma = math.sqrt(mix.eps / 2)
    if method is SamplingMethod.QMC:
        pts = _unit_points(n, 4, method, seed)
        x0 = _bump_quantile(mix, pts[:, 0])
        k0 = mix.xi_center + mix.xi_sigma * inverse_normal_cdf(pts[:, 1])
        z = inverse_normal_cdf(pts[:, 2:])
    else:
        x0, k0 = sample_mixture_centers(mix, n, method, seed)
        rng = np.random.default_rng([seed, 1])
        z = inverse_normal_cdf(open_uniforms(rng, (n, 2)))
    return _plus_ensemble(x0 + sigma * z[:, 0], k0 + sigma * z[:, 1], mix.xi2_0, mix.eps)


def mixture_position_marginal(mix: MixtureSpec, x1, n_xi: int = 4097):
    """x1-marginal of the sampled mixture density, by quadrature.

    Centre position, coherent offset and shift are independent, so the
    marginal is ``bump * N(0, eps/2)`` convolved with the law of the shift
    under ``xi1 ~ N(xi_center, xi_sigma^2 + eps/2)``.
    """
    x1 = np.asarray(x1, dtype=float)
    sigma = math.sqrt(mix.eps / 2)
    lo = min(a for a, _ in mix.bumps) - 10 * sigma
    hi = max(b for _, b in mix.bumps) + 10 * sigma
    fine = np.linspace(lo, hi, 8001)
    src = np.linspace(lo, hi, 8001)
    bump = mix.bump(src) / _bump_mass(mix)
    dx = src[1] - src[0]
    smooth = np.zeros_like(fine)
    for chunk in np.array_split(np.arange(len(fine)), 16):
        d = fine[chunk, None] - src[None, :]
        smooth[chunk] = (np.exp(-d * d / (2 * sigma**2)) @ bump) * dx
    smooth /= math.sqrt(2 * math.pi) * sigma
    total = math.hypot(mix.xi_sigma, sigma)
    nodes, w = _xi_quadrature(mix.xi_center, total, n_xi)
    shifts = plus_shift(mix.eps, nodes, mix.xi2_0)
    out = np.zeros_like(x1)
    for s, wk in zip(shifts, w):
        out += wk * np.interp(x1 - s, fine, smooth, left=0.0, right=0.0)
    return out


# --------------------------------------------------------------------------
# Export


def write_particles_csv(path, ens: Ensemble) -> None:
    """Write ``x1,xi1,xi2,mode,weight`` rows with round-trip float formatting."""
    data = np.column_stack([ens.x[:, 0], ens.xi[:, 0], ens.xi[:, 1],
                            ens.sign.astype(float), ens.weight])
    np.savetxt(path, data, delimiter=",", header="x1,xi1,xi2,mode,weight", comments="",
               fmt=["%.17g", "%.17g", "%.17g", "%d", "%.17g"])
