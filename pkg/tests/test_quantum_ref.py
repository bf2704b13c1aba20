from __future__ import annotations

import numpy as np
import pytest

from graphene_kinetic.phase_model import BarrierPotential, HarmonicPotential, Potential
from graphene_kinetic.quantum_ref import (
    BlowUpError,
    Grid1D,
    QuantumVariant,
    ResolutionError,
    SpinorField,
    StrangPropagator,
    default_dt,
    default_grid,
    ensemble_evolve,
    evolve,
    grid_for,
    init_wavepacket,
    mode_densities,
    mode_masses,
    strang_step,
    write_density_csv,
)
from graphene_kinetic.sampling import MixtureSpec, WavepacketSpec

H = HarmonicPotential()


class Flat(Potential):
    name = "flat"

    def profile(self, x1):
        return np.zeros_like(np.asarray(x1, dtype=float))

    def d1(self, x1):
        return np.zeros_like(np.asarray(x1, dtype=float))

    def d2(self, x1):
        return np.zeros_like(np.asarray(x1, dtype=float))


def _packet(eps=0.064, variant=QuantumVariant.GRAPHENE):
    spec = WavepacketSpec(eps=eps)
    return init_wavepacket(grid_for(spec), spec, variant)


def _minus_rate(eps):
    psi = _packet(eps)
    out = evolve(psi, 0.0, 4.5, default_dt(eps), H)
    return float(mode_masses(out)[1])


def test_grid_contract():
    g = Grid1D(-10, 10, 8)
    assert g.h == 2.5
    assert np.allclose(g.x, -10 + 2.5 * np.arange(8))
    assert np.allclose(g.k, 2 * np.pi * np.fft.fftfreq(8, 2.5))
    with pytest.raises(ValueError):
        Grid1D(-10, 10, 12)
    with pytest.raises(ValueError):
        Grid1D(1, 0, 8)
    assert default_grid(0.064).n == 2 ** int(np.ceil(np.log2(160 / 0.064)))
    assert default_grid(0.064).h <= 0.064 / 8
    assert default_dt(0.064) == pytest.approx(0.0032)


def test_init_wavepacket_properties():
    for eps in (0.004, 0.016, 0.064):
        spec = WavepacketSpec(eps=eps)
        psi = init_wavepacket(grid_for(spec), spec)
        assert float(psi.norm2()) == pytest.approx(1.0, abs=1e-14)
        rp, rm = mode_densities(psi)
        assert psi.grid.h * rm.sum() <= 1e-12
        assert abs(psi.initial_norm - 1.0) <= np.sqrt(eps)
        mean = psi.grid.h * (psi.grid.x * (rp + rm)).sum()
        assert abs(mean - (spec.x1_0 + spec.center_shift)) <= 0.05 * eps


def test_resolution_error():
    spec = WavepacketSpec(eps=0.016)
    with pytest.raises(ResolutionError) as info:
        init_wavepacket(Grid1D(-10, 10, 256), spec)
    n = info.value.suggested_n
    init_wavepacket(Grid1D(-10, 10, n), spec)


def test_field_validation():
    g = Grid1D(-10, 10, 16)
    with pytest.raises(ValueError):
        SpinorField(g, np.zeros((2, 8)), 0.1, 0.1)
    bad = np.zeros((2, 16), dtype=complex)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        SpinorField(g, bad, 0.1, 0.1)


def test_free_step_keeps_mode_masses():
    psi = _packet()
    m0 = mode_masses(psi)
    out = strang_step(psi, 0.05, Flat())
    m1 = mode_masses(out)
    assert abs(m1[0] - m0[0]) <= 1e-12 and abs(m1[1] - m0[1]) <= 1e-12


def test_zero_frequency_is_identity():
    g = Grid1D(-10, 10, 64)
    prop = StrangPropagator(g, 0.1, 0.0, 0.3, Flat())
    assert prop.c[0] == 1.0 and prop.s01[0] == 0.0 and prop.s10[0] == 0.0
    const = np.zeros((2, 64), dtype=complex)
    const[0] = 0.3
    const[1] = -0.2j
    assert np.allclose(prop.kinetic(const), const, atol=1e-15)


def test_strang_local_error_is_third_order():
    psi = _packet(0.128)
    diffs = []
    for dt in (0.04, 0.02, 0.01):
        one = strang_step(psi, dt, H).psi
        two = strang_step(strang_step(psi, dt / 2, H), dt / 2, H).psi
        diffs.append(np.sqrt(psi.grid.h * np.sum(np.abs(one - two) ** 2)))
    slope = np.polyfit(np.log([0.04, 0.02, 0.01]), np.log(diffs), 1)[0]
    assert abs(slope - 3) <= 0.2


def test_strang_global_order_two():
    psi = _packet(0.128)
    t1 = 1.0
    ref = evolve(psi, 0.0, t1, 0.0125 / 8, H).psi
    dts = [0.05, 0.025, 0.0125]
    errs = [np.sqrt(psi.grid.h * np.sum(np.abs(evolve(psi, 0.0, t1, dt, H).psi - ref) ** 2))
            for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - 2) <= 0.2


def test_unitarity_long_run():
    psi = _packet(0.128)
    out = evolve(psi, 0.0, 10_000 * 1e-3, 1e-3, BarrierPotential())
    assert abs(float(out.norm2()) - 1.0) <= 1e-12


def test_pseudo_components_decouple():
    psi = _packet(0.064, QuantumVariant.PSEUDO_GRAPHENE)
    h = psi.grid.h
    m0 = h * np.sum(np.abs(psi.psi) ** 2, axis=-1)
    out = evolve(psi, 0.0, 4.5, default_dt(0.064), H)
    m1 = h * np.sum(np.abs(out.psi) ** 2, axis=-1)
    assert np.abs(m1 - m0).max() <= 1e-10
    assert float(mode_masses(out)[1]) <= 1e-12
    with pytest.raises(ValueError):
        evolve(psi, 0.0, 1.0, 0.1, H, variant=QuantumVariant.GRAPHENE)


def test_shortened_last_step():
    psi = _packet(0.128)
    a = evolve(psi, 0.0, 0.1, 0.03, H)
    b = strang_step(evolve(psi, 0.0, 0.09, 0.03, H), 0.01, H)
    assert np.allclose(a.psi, b.psi, atol=1e-13)
    with pytest.raises(ValueError):
        evolve(psi, 1.0, 0.0, 0.1, H)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_detected():
    class Wild(Flat):
        def profile(self, x1):
            return np.full_like(np.asarray(x1, dtype=float), np.inf)

    with pytest.raises(BlowUpError) as info:
        evolve(_packet(0.128), 0.0, 0.1, 0.01, Wild())
    assert info.value.step >= 1


def test_mode_densities_parseval():
    psi = _packet(0.064)
    out = evolve(psi, 0.0, 2.5, default_dt(0.064), H)
    rp, rm = mode_densities(out)
    assert abs(out.grid.h * (rp + rm).sum() - float(out.norm2())) <= 1e-12
    assert np.all(rp >= 0) and np.all(rm >= 0)


def test_adiabatic_free_flight():
    eps = 0.064
    psi = _packet(eps)
    m0 = mode_masses(psi)[1]
    out = evolve(psi, 0.0, 0.8, default_dt(eps), H)
    assert abs(mode_masses(out)[1] - m0) <= 5 * eps * 0.8


@pytest.mark.parametrize("eps,rate", [(0.064, 0.596), (0.032, 0.355)])
def test_transfer_rate_after_crossing(eps, rate):
    assert abs(_minus_rate(eps) - rate) <= 0.01


def test_ensemble_single_state_reduces_to_evolve():
    mix = MixtureSpec(eps=0.128)
    g = Grid1D(-10, 10, 2048)
    res = ensemble_evolve(mix, 1, g, 0.01, H, times=(0.5, 1.0))
    x0, k0 = res.centers[0]
    single = init_wavepacket(g, mix.wavepacket(x0, k0))
    single = evolve(single, 0.0, 1.0, 0.01, H)
    rp, rm = mode_densities(single)
    assert np.allclose(res.rho_plus[-1], rp, atol=1e-12)
    assert np.allclose(res.rho_minus[-1], rm, atol=1e-12)


def test_ensemble_mass_and_batching():
    mix = MixtureSpec(eps=0.128)
    g = Grid1D(-10, 10, 2048)
    a = ensemble_evolve(mix, 12, g, 0.02, H, seed=3, times=(1.0,), batch=4)
    b = ensemble_evolve(mix, 12, g, 0.02, H, seed=3, times=(1.0,), batch=4)
    c = ensemble_evolve(mix, 12, g, 0.02, H, seed=3, times=(1.0,), batch=5)
    assert g.h * (a.rho_plus[0] + a.rho_minus[0]).sum() == pytest.approx(1.0, abs=1e-10)
    assert np.array_equal(a.rho_plus[0], b.rho_plus[0])
    assert np.allclose(a.rho_plus[0], c.rho_plus[0], atol=1e-13)
    assert a.norm_drift <= 1e-10
    with pytest.raises(ValueError):
        ensemble_evolve(mix, 0, g, 0.02, H)


def test_density_csv(tmp_path):
    g = Grid1D(-10, 10, 8)
    path = tmp_path / "rho.csv"
    write_density_csv(path, g, np.arange(8.0), np.ones(8) / 3)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,rho_plus,rho_minus"
    assert len(lines) == 9
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 2], np.ones(8) / 3)
