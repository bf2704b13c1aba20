from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from graphene_kinetic.fields import (
    Density1D,
    GridMismatchError,
    OutOfDomainError,
    deposit_density,
    density_from_values,
    l1_error,
    observable,
    quintic_bspline,
    write_density_csv,
    write_metrics_csv,
)
from graphene_kinetic.flow import IntegratorParams
from graphene_kinetic.hopping import Ensemble, HopOptions, evolve_ensemble
from graphene_kinetic.lab import initial_data_errors
from graphene_kinetic.phase_model import HarmonicPotential, Mode, band_energy_arrays
from graphene_kinetic.quantum_ref import Grid1D
from graphene_kinetic.sampling import (
    WavepacketSpec,
    gaussian_position_marginal,
    sample_pure_state,
)

# dyadic grid: positions built from h are exact in binary
DYADIC = Grid1D(-8.0, 8.0, 1024)


def _ens(x1, w=None, sign=1):
    x1 = np.asarray(x1, dtype=float)
    n = len(x1)
    w = np.full(n, 1.0 / n) if w is None else np.asarray(w, dtype=float)
    return Ensemble(np.column_stack([x1, np.zeros(n)]), np.tile([[1.0, 0.1]], (n, 1)), sign, w)


def test_bspline_kernel():
    assert np.allclose(quintic_bspline([0, 1, 2, 3]), [66 / 120, 26 / 120, 1 / 120, 0])
    assert integrate.quad(lambda u: float(quintic_bspline(u)), -3, 3, points=[-2, -1, 0, 1, 2])[0] \
        == pytest.approx(1.0, abs=1e-13)
    u = np.linspace(-0.5, 0.5, 1001)
    total = sum(quintic_bspline(u - k) for k in range(-3, 4))
    assert np.abs(total - 1).max() <= 1e-14


def test_single_particle_deposition():
    d = deposit_density(_ens([0.3], [1.0]), DYADIC)
    assert d.mass() == pytest.approx(1.0, abs=1e-15)
    node = DYADIC.x[500]
    d = deposit_density(_ens([node], [1.0]), DYADIC)
    w = d.values * DYADIC.h
    assert np.allclose(w[497:504], [0, 1 / 120, 26 / 120, 66 / 120, 26 / 120, 1 / 120, 0],
                       atol=1e-16)
    assert np.count_nonzero(w) == 5


def test_qmc_gaussian_reconstruction():
    spec = WavepacketSpec(eps=0.064)
    grid = Grid1D(-10, 10, 4096)
    ens = sample_pure_state(spec, 1_000_000, "qmc", shifted=False)
    ref = density_from_values(grid, gaussian_position_marginal(spec, grid.x))
    assert l1_error(deposit_density(ens, grid), ref) <= 1e-3


def test_out_of_domain():
    with pytest.raises(OutOfDomainError) as info:
        deposit_density(_ens([0.0, 7.99, -9.0]), DYADIC)
    assert sorted(info.value.indices.tolist()) == [1, 2]


def test_mode_filter():
    ens = _ens([0.0, 1.0, 2.0])
    ens.sign[1] = -1
    plus = deposit_density(ens, DYADIC, Mode.PLUS)
    minus = deposit_density(ens, DYADIC, Mode.MINUS)
    both = deposit_density(ens, DYADIC)
    assert plus.mass() == pytest.approx(2 / 3) and minus.mass() == pytest.approx(1 / 3)
    assert np.allclose(plus.values + minus.values, both.values, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-7.9, 7.9), st.floats(0, 10)), min_size=1, max_size=200))
def test_deposition_conserves_mass(pairs):
    x, w = np.array(pairs).T
    d = deposit_density(_ens(x, w), DYADIC)
    assert abs(d.mass() - w.sum()) <= 1e-14 * max(1.0, w.sum())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(100, 800), st.integers(0, 63)), min_size=1, max_size=50),
       st.integers(-90, 90))
def test_deposition_translation_equivariant(cells, m):
    i, j = np.array(cells).T
    x = DYADIC.x_min + DYADIC.h * (i + j / 64.0)
    a = deposit_density(_ens(x), DYADIC).values
    b = deposit_density(_ens(x + m * DYADIC.h), DYADIC).values
    assert np.array_equal(np.roll(a, m), b)


def test_l1_examples():
    g = DYADIC
    d1 = deposit_density(_ens([-4.0], [1.0]), g)
    d2 = deposit_density(_ens([4.0], [1.0]), g)
    assert l1_error(d1, d1) == 0.0
    assert l1_error(d1, d2) == pytest.approx(2.0, abs=1e-14)
    with pytest.raises(GridMismatchError):
        l1_error(d1, Density1D(Grid1D(-8, 8, 512), np.zeros(512)))
    with pytest.raises(ValueError):
        Density1D(g, -np.ones(g.n))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_l1_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (Density1D(DYADIC, rng.random(DYADIC.n)) for _ in range(3))
    assert l1_error(a, b) == pytest.approx(l1_error(b, a), rel=1e-15)
    assert l1_error(a, c) <= l1_error(a, b) + l1_error(b, c) + 1e-12


def test_initial_data_error_oracle_is_monotone():
    e = [initial_data_errors(WavepacketSpec(eps=eps))[0] for eps in (0.02, 0.04, 0.08)]
    assert e[0] < e[1] < e[2]


def test_observable():
    ens = _ens(np.linspace(-1, 1, 11))
    ens.weight[:] = np.linspace(0, 1, 11)
    assert observable(ens, lambda x, xi, s: 1.0) == pytest.approx(ens.total_weight())
    ens.sign[:3] = -1
    assert observable(ens, lambda x, xi, s: 1.0, Mode.MINUS) == pytest.approx(0.3)
    pot = HarmonicPotential()
    spec = WavepacketSpec(eps=0.064)
    ens = sample_pure_state(spec, 5000, "qmc")

    def energy(x, xi, s):
        return band_energy_arrays(s, x, xi, pot)

    e0 = observable(ens, energy)
    out = evolve_ensemble(ens, 0.0, 3.0, spec.eps, pot, IntegratorParams(),
                          HopOptions(transitions_enabled=False))
    assert observable(out, energy) == pytest.approx(e0, abs=1e-9)


def test_csv_writers(tmp_path):
    d = deposit_density(_ens([0.0], [1.0]), DYADIC)
    write_density_csv(tmp_path / "rho.csv", d)
    lines = (tmp_path / "rho.csv").read_text().splitlines()
    assert lines[0] == "x,rho" and len(lines) == DYADIC.n + 1
    data = np.loadtxt(tmp_path / "rho.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 1], d.values)
    write_metrics_csv(tmp_path / "m.csv", [0.1, 0.2], [1e-3, 2e-3])
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "epsilon,err"
