"""Fast property checks that need no reference numbers.

Each check returns a :class:`Check`; :func:`run_all` runs the whole set and is
what the ``selftest`` CLI subcommand prints.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from .fields import deposit_density
from .flow import IntegratorParams, step_arrays
from .hopping import Ensemble, HopOptions, Statistic, evolve_ensemble
from .phase_model import (
    AtanPotential,
    BarrierPotential,
    HarmonicPotential,
    Mode,
    PhasePoint,
    band_energy,
    dirac_matrix,
    eigenprojectors,
)
from .quantum_ref import (
    QuantumVariant,
    evolve,
    grid_for,
    init_wavepacket,
)
from .sampling import WavepacketSpec, inverse_normal_cdf, normal_cdf, sample_pure_state


class Check(NamedTuple):
    name: str
    value: float
    bound: str
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3g} ({self.bound})"


def check_unitarity(eps: float = 0.064, steps: int = 2000) -> Check:
    spec = WavepacketSpec(eps=eps)
    psi = init_wavepacket(grid_for(spec), spec)
    dt = eps / 20
    out = evolve(psi, 0.0, steps * dt, dt, HarmonicPotential())
    drift = abs(float(out.norm2()) - float(psi.norm2()))
    return Check("quantum norm drift", drift, "<= 1e-10", drift <= 1e-10)


def check_pseudo_masses(eps: float = 0.064) -> Check:
    spec = WavepacketSpec(eps=eps)
    psi = init_wavepacket(grid_for(spec), spec, QuantumVariant.PSEUDO_GRAPHENE)
    out = evolve(psi, 0.0, 4.5, eps / 20, HarmonicPotential())
    h = psi.grid.h
    m0 = h * np.sum(np.abs(psi.psi) ** 2, axis=-1)
    m1 = h * np.sum(np.abs(out.psi) ** 2, axis=-1)
    drift = float(np.max(np.abs(m1 - m0)))
    return Check("pseudo-graphene component masses", drift, "<= 1e-10", drift <= 1e-10)


def integrator_order(dts=(0.2, 0.1, 0.05, 0.025), t1: float = 3.0) -> float:
    """Log-log slope of the end-point error against a fine reference.

    The test trajectory keeps ``|xi|`` well away from zero so the asymptotic
    regime is reached at these step sizes.
    """
    pot = AtanPotential()
    p0 = PhasePoint((0.0, 0.0), (1.0, 0.5))

    def end(dt):
        x, xi = np.array([p0.x]), np.array([p0.xi])
        for _ in range(int(round(t1 / dt))):
            x, xi = step_arrays(1, x, xi, dt, pot)
        return np.concatenate([x[0], xi[0]])

    ref = end(min(dts) / 8)
    errs = [np.linalg.norm(end(dt) - ref) for dt in dts]
    return float(np.polyfit(np.log(dts), np.log(errs), 1)[0])


def check_integrator_order() -> Check:
    slope = integrator_order()
    return Check("integrator order", slope, "4 +- 0.2", abs(slope - 4) <= 0.2)


def check_reversibility(n_steps: int = 200, dt: float = 0.01) -> Check:
    pot = BarrierPotential()
    rng = np.random.default_rng(0)
    x = np.column_stack([rng.uniform(-2, 4, 64), np.zeros(64)])
    xi = np.column_stack([rng.uniform(0.5, 2, 64), np.full(64, 0.1)])
    a, b = x, xi
    for _ in range(n_steps):
        a, b = step_arrays(1, a, b, dt, pot)
    for _ in range(n_steps):
        a, b = step_arrays(1, a, b, -dt, pot)
    err = float(max(np.abs(a - x).max(), np.abs(b - xi).max()))
    return Check("integrator reversibility", err, "<= 1e-12", err <= 1e-12)


def hop_energy_mismatch(jumps: bool, xi2_values=(0.02, 0.05, 0.1, 0.2), eps: float = 1.0):
    """Return ``(|xi*|, |E_after - E_before|)`` for a forced hop on the harmonic potential."""
    pot = HarmonicPotential()
    out = []
    for xi2 in xi2_values:
        ens = Ensemble(np.array([[-2.0, 0.0]]), np.array([[1.3, xi2]]), 1, np.array([1.0]))
        res = evolve_ensemble(ens, 0.0, 2.0, eps, pot, IntegratorParams(dt=1e-3),
                              HopOptions(jumps_enabled=jumps, statistic=Statistic.EXPECTED))
        child = np.nonzero(res.sign == -1)[0][0]
        h = res.log
        j = int(np.nonzero(h.particle == child)[0][0])
        before = band_energy(Mode.PLUS, PhasePoint(h.x[j], h.xi[j]), pot)
        after = band_energy(Mode.MINUS, PhasePoint(h.x_after[j], h.xi[j]), pot)
        out.append((math.hypot(*h.xi[j]), abs(after - before)))
    return out


def check_hop_energy() -> list[Check]:
    on = hop_energy_mismatch(True)
    c = max(d / r**2 for r, d in on)
    off = hop_energy_mismatch(False)
    dev = max(abs(d - 2 * r) for r, d in off)
    return [Check("hop energy mismatch / |xi*|^2 (jumps on)", c, "bounded, <= 1", c <= 1.0),
            Check("hop energy mismatch - 2|xi*| (jumps off)", dev, "<= 1e-12", dev <= 1e-12)]


def check_deposition_mass(n: int = 100_000) -> Check:
    spec = WavepacketSpec(eps=0.064)
    ens = sample_pure_state(spec, n, "mc", seed=3)
    rng = np.random.default_rng(4)
    ens.weight = rng.random(n)
    d = deposit_density(ens, grid_for(spec))
    err = abs(d.mass() - float(np.sum(ens.weight))) / float(np.sum(ens.weight))
    return Check("deposition mass conservation", err, "<= 1e-14", err <= 1e-14)


def check_weight_constancy(n: int = 20_000) -> Check:
    spec = WavepacketSpec(eps=0.064)
    ens = sample_pure_state(spec, n, "qmc")
    out = evolve_ensemble(ens, 0.0, 7.5, spec.eps, BarrierPotential(), IntegratorParams(),
                          HopOptions(statistic=Statistic.EXPECTED))
    err = abs(out.total_weight() - ens.total_weight())
    return Check("total kinetic weight", err, "<= 1e-14", err <= 1e-14)


def check_inverse_cdf(n: int = 10_000) -> Check:
    u = (np.arange(n) + 0.5) / n
    err = float(np.max(np.abs(normal_cdf(inverse_normal_cdf(u)) - u)))
    return Check("inverse normal CDF round trip", err, "<= 1e-9", err <= 1e-9)


def check_projectors(n: int = 200) -> Check:
    rng = np.random.default_rng(5)
    worst = 0.0
    for xi in rng.normal(size=(n, 2)):
        pp, pm = eigenprojectors(xi)
        a = dirac_matrix(xi)
        r = math.hypot(*xi)
        terms = [pp @ pp - pp, pm @ pm - pm, pp @ pm, pp + pm - np.eye(2),
                 a @ pp - r * pp, a @ pm + r * pm, pp - pp.conj().T]
        worst = max(worst, max(float(np.abs(t).max()) for t in terms))
    return Check("projector algebra", worst, "<= 1e-12", worst <= 1e-12)


CHECKS: list[Callable[[], Check | list[Check]]] = [
    check_unitarity, check_pseudo_masses, check_integrator_order, check_reversibility,
    check_hop_energy, check_deposition_mass, check_weight_constancy, check_inverse_cdf,
    check_projectors,
]


def run_all(echo: Callable[[str], None] | None = print) -> list[Check]:
    results: list[Check] = []
    for fn in CHECKS:
        out = fn()
        for c in out if isinstance(out, list) else [out]:
            results.append(c)
            if echo:
                echo(c.line())
    return results
