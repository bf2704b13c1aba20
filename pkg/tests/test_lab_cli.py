from __future__ import annotations

import json

import numpy as np
import pytest

from graphene_kinetic import cli, lab
from graphene_kinetic.flow import IntegratorParams, propagate
from graphene_kinetic.hopping import HopOptions, transfer_coefficient
from graphene_kinetic.lab import ConfigError, RunConfig, Table, default_config
from graphene_kinetic.phase_model import HarmonicPotential, Mode, PhasePoint
from graphene_kinetic.quantum_ref import (
    QuantumVariant,
    default_dt,
    evolve,
    grid_for,
    init_wavepacket,
    mode_densities,
)
from graphene_kinetic.sampling import WavepacketSpec

SMALL = ["--eps", "0.128", "--particles", "2000", "--no-quantum"]


def _csvs(path):
    return {p.name: p.read_bytes() for p in sorted(path.glob("*.csv"))}


# -- configuration -------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(experiment="nope")
    with pytest.raises(ConfigError):
        RunConfig(eps=[0.1, -0.2])
    with pytest.raises(ConfigError):
        RunConfig(sampling="sobol")
    with pytest.raises(ConfigError):
        RunConfig(estimator="median")
    with pytest.raises(ConfigError):
        RunConfig(potential={"name": "cubic"})
    with pytest.raises(ConfigError):
        RunConfig(particles=0)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"experiment": "klein", "particle": 10})


def test_config_round_trip(tmp_path):
    for name in lab.EXPERIMENTS:
        cfg = default_config(name)
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    path = tmp_path / "c.json"
    path.write_text(json.dumps(default_config("klein", desk=True).to_dict()))
    assert RunConfig.load(path).particles == 1_000_000
    with pytest.raises(FileNotFoundError):
        RunConfig.load(tmp_path / "missing.json")
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(path)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        RunConfig.load(path)


def test_default_presets():
    s = default_config("sampling")
    assert s.eps == pytest.approx([2.5e-3 * 2**k for k in range(10)])
    m = default_config("mixture")
    assert (m.particles, m.wavefunctions) == (4_000_000, 5000)
    d = default_config("mixture", desk=True)
    assert (d.wavefunctions, d.grid_n, d.qdt(0.016)) == (500, 2048, pytest.approx(0.0016))
    assert default_config("transport-error").transitions is False


def test_output_dir_precedence(monkeypatch, tmp_path):
    cfg = RunConfig()
    monkeypatch.delenv(lab.OUT_ENV, raising=False)
    assert lab.output_dir(cfg).as_posix() == "runs/transfer-table"
    monkeypatch.setenv(lab.OUT_ENV, str(tmp_path / "env"))
    assert lab.output_dir(cfg) == tmp_path / "env" / "transfer-table"
    cfg.out = str(tmp_path / "cfg")
    assert lab.output_dir(cfg) == tmp_path / "cfg" / "transfer-table"
    assert lab.output_dir(cfg, str(tmp_path / "o")) == tmp_path / "o" / "transfer-table"


def test_table_csv_format():
    t = Table(["epsilon", "n", "model", "v"], [[0.1, 3, "kinetic", 1 / 3], [1e-20, 0, "q", True]])
    assert t.to_csv() == "epsilon,n,model,v\n0.1,3,kinetic,0.3333333333333333\n1e-20,0,q,1\n"


# -- CLI -----------------------------------------------------------------


def test_missing_config_exits_2_without_output(tmp_path, capsys):
    rc = cli.main(["klein", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)])
    assert rc == 2
    assert "not found" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_invalid_config_exits_2(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"experiment": "klein", "eps": [0.1], "bogus": 1}))
    assert cli.main(["klein", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_cli_run_is_byte_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["transfer-table", *SMALL, "--seed", "5", "--out", str(a)]) == 0
    assert cli.main(["transfer-table", *SMALL, "--seed", "5", "--out", str(b)]) == 0
    assert "wrote" in capsys.readouterr().out
    ca, cb = _csvs(a / "transfer-table"), _csvs(b / "transfer-table")
    assert ca == cb and "transfer_table.csv" in ca
    manifest = json.loads((a / "transfer-table" / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["seed"] == 5
    assert manifest["config"]["particles"] == 2000
    assert manifest["derived"]["potential"] == {"name": "harmonic", "center": -10.0,
                                                "scale": 20.0}
    assert manifest["derived"]["grid_n[0.128]"] == 2048
    assert manifest["derived"]["quantum_dt[0.128]"] == pytest.approx(0.0064)
    assert manifest["derived"]["kinetic_dt"] == 0.01
    # the echoed config reproduces the run
    cfg_path = tmp_path / "echo.json"
    echoed = dict(manifest["config"], out=str(tmp_path / "c"))
    cfg_path.write_text(json.dumps(echoed))
    assert cli.main(["transfer-table", "--config", str(cfg_path)]) == 0
    assert _csvs(tmp_path / "c" / "transfer-table") == ca


def test_env_output_directory(tmp_path, monkeypatch):
    monkeypatch.setenv(lab.OUT_ENV, str(tmp_path))
    assert cli.main(["transfer-table", *SMALL]) == 0
    assert (tmp_path / "transfer-table" / "manifest.json").is_file()


def test_failed_run_writes_failed_manifest(tmp_path, monkeypatch):
    def boom(config):
        raise lab.ConservationError("synthetic")

    monkeypatch.setitem(lab.RUNNERS, "transfer-table", boom)
    assert cli.main(["transfer-table", *SMALL, "--out", str(tmp_path)]) == 1
    manifest = json.loads((tmp_path / "transfer-table" / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert any("synthetic" in w for w in manifest["warnings"])


def test_selftest_subcommand(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10


# -- runners -------------------------------------------------------------


def test_klein_without_transitions_is_all_reflection():
    cfg = default_config("klein", particles=2000, quantum=False, transitions=False,
                         times=[4.5, 7.5])
    res = lab.run(cfg)
    kin = res.summary["kinetic[0.064]"]
    assert kin["wp1"] == pytest.approx(1.0, abs=1e-12)
    assert kin["wp2"] == 0.0 and kin["wp3"] == 0.0
    snaps = res.tables["klein_snapshots_eps0.064"]
    assert len(snaps.rows) == 3 * cfg.grid(0.064, cfg.wavepacket_spec(0.064)).n


def test_jumps_irrelevant_without_transitions():
    base = dict(particles=2000, quantum=False, transitions=False, times=[7.5])
    on = lab.run(default_config("klein", **base))
    off = lab.run(default_config("klein", jumps=False, **base))
    assert on.tables["klein_snapshots_eps0.064"].to_csv() == \
        off.tables["klein_snapshots_eps0.064"].to_csv()


def test_klein_small_run_has_mass_closure():
    cfg = default_config("klein", particles=20_000, quantum=False)
    kin = lab.run(cfg).summary["kinetic[0.064]"]
    assert abs(kin["residual"]) < lab.KLEIN_RESIDUAL_LIMIT
    assert 0.6 < kin["wp2"] < 0.85


def test_transfer_rate_grows_with_eps():
    cfg = default_config("transfer-table", particles=5000)
    pot = cfg.make_potential()
    rates = [lab.kinetic_transfer_rate(cfg, eps, pot, "expected")
             for eps in (0.008, 0.016, 0.032, 0.064, 0.128)]
    assert np.all(np.diff(rates) > 0)
    star = PhasePoint((-0.615, 0.0), (0.0, 0.1))
    ts = [transfer_coefficient(star, pot, eps) for eps in (0.1, 10.0, 1e3, 1e6)]
    assert np.all(np.diff(ts) > 0) and ts[-1] == pytest.approx(1.0, abs=1e-6)


def test_derived_vprime():
    assert lab.derived_vprime(0.064, 0.1, np.exp(-np.pi * 0.01 / (0.064 * 0.9385))) == \
        pytest.approx(0.9385)
    assert np.isnan(lab.derived_vprime(0.1, 0.1, 0.0))


def test_mixture_rate_matches_pure_state_rate():
    cfg = default_config("mixture", eps=[0.128], particles=100_000, quantum=False,
                         times=[4.5], grid_n=2048)
    res = lab.run(cfg)
    pure = lab.kinetic_transfer_rate(default_config("transfer-table", particles=100_000),
                                     0.128, HarmonicPotential(), "expected")
    assert res.summary["0.128"]["rate_kinetic"] == pytest.approx(pure, abs=0.01)
    assert res.derived["f0_normalization"] == pytest.approx(1.98166, abs=1e-5)
    assert res.derived["grid_n[0.128]"] == 2048
    assert res.derived["quantum_dt[0.128]"] == pytest.approx(0.0064)


def test_small_mixture_with_quantum(tmp_path):
    cfg = default_config("mixture", eps=[0.128], particles=5000, wavefunctions=4,
                         grid_n=2048, quantum_dt_per_eps=0.2, times=[4.5])
    res = lab.run(cfg)
    assert res.derived["quantum_norm_drift[0.128]"] <= 1e-10
    assert 0.6 < res.summary["0.128"]["rate_quantum"] < 0.95
    lab.write_result(res, cfg, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["derived"]["wavefunctions"] == 4


def test_transport_error_runner_small():
    cfg = default_config("transport-error", eps=[0.128, 0.064], particles=20_000)
    res = lab.run(cfg)
    assert res.derived["atan_alpha"] == pytest.approx(0.6799, abs=1e-4)
    rows = res.tables["transport_error"].rows
    assert all(r[1] > 0 and r[2] > 0 for r in rows)
    assert "slope_V1" in res.summary


def test_jump_ablation_runner_small():
    res = lab.run(default_config("jump-ablation", eps=[0.128], particles=20_000))
    e = res.summary["0.128"]
    assert e["plus_jumps"] == e["plus_nojumps"]
    assert e["minus_nojumps"] > e["minus_jumps"]


def test_plus_density_ignores_jumps_at_small_eps():
    eps = 0.004
    cfg = default_config("jump-ablation", eps=[eps], particles=5000)
    spec = cfg.wavepacket_spec(eps)
    grid = cfg.grid(eps, spec)
    pot = cfg.make_potential()
    dens = []
    for jumps in (True, False):
        ens = lab._pure_ensemble(cfg, spec)
        lab._evolve_kinetic(ens, 0.0, 4.5, eps, pot, cfg, cfg.hop_options(jumps_enabled=jumps))
        dens.append(lab._kinetic_densities(ens, grid)[0].values)
    assert np.array_equal(dens[0], dens[1])


def test_sampling_runner_small():
    cfg = default_config("sampling", eps=[0.04, 0.08, 0.16], particle_counts=[1024, 4096],
                         convergence_eps=[0.16])
    res = lab.run(cfg)
    assert len(res.tables["initial_data_error"].rows) == 3
    assert res.summary["slope_err0"] > 0 and res.summary["slope_err1"] > 0
    rows = res.tables["sampling_error"].rows
    assert [r[1] for r in rows] == [1024, 4096]
    assert rows[1][3] < rows[0][3]


@pytest.mark.parametrize("eps", [0.064, 0.016])
def test_center_trajectory_follows_quantum_mean(eps):
    """Pseudo-graphene in the harmonic field: <x1> tracks the centre ray to O(eps)."""
    pot = HarmonicPotential()
    spec = WavepacketSpec(eps=eps)
    psi = init_wavepacket(grid_for(spec), spec, QuantumVariant.PSEUDO_GRAPHENE)
    out = evolve(psi, 0.0, 4.5, default_dt(eps), pot)
    rp, _ = mode_densities(out)
    mean = out.grid.h * float((out.grid.x * rp).sum())
    q, _ = propagate(Mode.PLUS, PhasePoint((-2.0, 0.0), (1.3, 0.1)), 0.0, 4.5,
                     IntegratorParams(dt=1e-3), pot)
    assert abs(mean - q.x[0]) <= 0.1 * eps


def test_hop_options_overrides():
    cfg = RunConfig(jumps=False, max_hops=3)
    opts = cfg.hop_options(transitions_enabled=False)
    assert isinstance(opts, HopOptions)
    assert not opts.jumps_enabled and not opts.transitions_enabled and opts.max_hops == 3


def test_klein_small_eps_is_mostly_reflected():
    cfg = default_config("klein", eps=[0.004], particles=200_000, quantum=False)
    spec = cfg.wavepacket_spec(0.004)
    pot = cfg.make_potential()
    ens = lab._pure_ensemble(cfg, spec)
    lab._evolve_kinetic(ens, 0.0, 7.5, 0.004, pot, cfg, cfg.hop_options())
    assert lab.classify_klein_kinetic(ens)["wp1"] == pytest.approx(0.9192, abs=0.01)
