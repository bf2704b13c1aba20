"""Experiment drivers, run configuration and output persistence.

Each ``run_*`` function takes a :class:`RunConfig` and returns a
:class:`RunResult` holding CSV tables and summary numbers; :func:`write_result`
writes the tables and a JSON manifest to the output directory.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .fields import Density1D, deposit_density, density_from_values, l1_error
from .flow import IntegratorParams
from .hopping import Ensemble, HopOptions, Statistic, evolve_arrays
from .phase_model import Mode, Potential, make_potential
from .quantum_ref import (
    Grid1D,
    QuantumVariant,
    default_grid,
    ensemble_evolve,
    evolve,
    grid_for,
    init_wavepacket,
    mode_densities,
)
from .sampling import (
    MixtureSpec,
    SamplingMethod,
    WavepacketSpec,
    gaussian_position_marginal,
    sample_mixture,
    sample_pure_state,
    shifted_position_marginal,
)

log = logging.getLogger(__name__)

OUT_ENV = "GRAPHENE_KINETIC_OUT"

EXPERIMENTS = ("klein", "transfer-table", "transport-error", "jump-ablation", "sampling",
               "mixture")

# Windows used to split the final quantum plus density of the Klein run.
KLEIN_LEFT_EDGE = -1.0
KLEIN_RIGHT_EDGE = 3.0
KLEIN_WP_SPLIT = -3.5
KLEIN_RESIDUAL_LIMIT = 0.02


class ConfigError(ValueError):
    pass


class ConservationError(RuntimeError):
    pass


@dataclass
class RunConfig:
    experiment: str = "transfer-table"
    eps: list[float] = field(default_factory=lambda: [0.032])
    potential: dict = field(default_factory=lambda: {"name": "harmonic"})
    wavepacket: dict = field(default_factory=lambda: {"x1_0": -2.0, "xi1_0": 1.3, "xi2_0": 0.1})
    mixture: dict | None = None
    particles: int = 100_000
    wavefunctions: int = 500
    sampling: str = "qmc"
    kinetic_dt: float = 1e-2
    quantum_dt_per_eps: float = 0.05
    grid_n: int | None = None
    grid_points_per_eps: float = 8.0
    jumps: bool = True
    transitions: bool = True
    estimator: str = "expected"
    max_hops: int | None = None
    seed: int = 0
    quantum: bool = True
    times: list[float] = field(default_factory=lambda: [4.5])
    particle_counts: list[int] = field(default_factory=list)
    convergence_eps: list[float] | None = None
    out: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        self.eps = [float(e) for e in np.atleast_1d(self.eps)]
        if not self.eps or any(not e > 0 for e in self.eps):
            raise ConfigError("eps values must be positive")
        if not self.quantum_dt_per_eps > 0 or not self.kinetic_dt > 0:
            raise ConfigError("time steps must be positive")
        if self.particles < 1 or self.wavefunctions < 1:
            raise ConfigError("particle and wavefunction counts must be >= 1")
        try:
            SamplingMethod(self.sampling)
            Statistic(self.estimator)
            self.make_potential()
            for e in self.eps:
                self.wavepacket_spec(e)
                if self.mixture is not None:
                    self.mixture_spec(e)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived objects ---------------------------------------------------
    def make_potential(self) -> Potential:
        params = dict(self.potential)
        return make_potential(params.pop("name"), **params)

    def wavepacket_spec(self, eps: float) -> WavepacketSpec:
        return WavepacketSpec(eps=eps, **self.wavepacket)

    def mixture_spec(self, eps: float) -> MixtureSpec:
        d = dict(self.mixture or {})
        if "bumps" in d:
            d["bumps"] = tuple(tuple(b) for b in d["bumps"])
        return MixtureSpec(eps=eps, **d)

    def hop_options(self, **overrides) -> HopOptions:
        kw = dict(jumps_enabled=self.jumps, transitions_enabled=self.transitions,
                  max_hops=self.max_hops, statistic=Statistic(self.estimator))
        kw.update(overrides)
        return HopOptions(**kw)

    def integrator(self) -> IntegratorParams:
        return IntegratorParams(dt=self.kinetic_dt)

    def grid(self, eps: float, spec: WavepacketSpec | None = None) -> Grid1D:
        if self.grid_n is not None:
            return Grid1D(-10.0, 10.0, self.grid_n)
        if spec is not None and self.grid_points_per_eps >= 8.0:
            return grid_for(spec)
        return default_grid(eps, points_per_eps=self.grid_points_per_eps)

    def qdt(self, eps: float) -> float:
        return self.quantum_dt_per_eps * eps

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def default_config(experiment: str, desk: bool = False, **overrides) -> RunConfig:
    """Default configuration for each experiment.

    ``desk=True`` selects the reduced preset: fewer particles, 500 quantum
    wavefunctions for mixtures on a coarser grid and time step.
    """
    base: dict[str, Any] = {"experiment": experiment}
    if experiment == "klein":
        base.update(eps=[0.064], potential={"name": "barrier"},
                    particles=1_000_000 if desk else 4_000_000,
                    estimator="random", times=[0.0, 3.0, 4.5, 7.5])
    elif experiment == "transfer-table":
        base.update(eps=[0.128, 0.064, 0.032, 0.016], particles=100_000)
    elif experiment == "transport-error":
        base.update(eps=[0.01, 0.02, 0.04, 0.08, 0.16], particles=1_600_000,
                    transitions=False)
    elif experiment == "jump-ablation":
        base.update(eps=[0.004, 0.016, 0.064], particles=400_000)
    elif experiment == "sampling":
        base.update(eps=[2.5e-3 * 2**k for k in range(10)],
                    particle_counts=[2**k for k in range(10, 21, 2)],
                    convergence_eps=[0.0025, 0.01, 0.04, 0.16])
    elif experiment == "mixture":
        base.update(eps=[0.128, 0.016], particles=4_000_000, wavefunctions=5000,
                    mixture={}, times=[0.0, 1.8, 2.7, 4.5])
        if desk:
            base.update(particles=1_000_000, wavefunctions=500, grid_n=2048,
                        quantum_dt_per_eps=0.1)
    else:
        raise ConfigError(f"unknown experiment {experiment!r}")
    base.update(overrides)
    return RunConfig.from_dict(base)


@dataclass
class Table:
    header: list[str]
    rows: list[list[float]]

    def to_csv(self) -> str:
        lines = [",".join(self.header)]
        for r in self.rows:
            lines.append(",".join(_fmt(v) for v in r))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


@dataclass
class RunResult:
    experiment: str
    tables: dict[str, Table] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)
    derived: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


@dataclass
class RunManifest:
    config: dict
    derived: dict
    seed: int
    timestamp: str
    summary: dict
    warnings: list[str]
    status: str = "ok"
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def output_dir(config: RunConfig, override: str | None = None) -> Path:
    return Path(override or config.out or os.environ.get(OUT_ENV) or "runs") / config.experiment


def write_result(result: RunResult, config: RunConfig, out: Path, status: str = "ok") -> Path:
    out.mkdir(parents=True, exist_ok=True)
    for name, table in result.tables.items():
        (out / f"{name}.csv").write_text(table.to_csv())
    manifest = RunManifest(config.to_dict(), result.derived, config.seed,
                           _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                           result.summary, result.warnings, status)
    (out / "manifest.json").write_text(manifest.to_json())
    return out


# --------------------------------------------------------------------------
# Shared pieces


def _potential_derived(pot: Potential) -> dict:
    return {"potential": pot.to_dict()}


def _record_discretization(res: RunResult, config: RunConfig, eps: float,
                           grid: Grid1D) -> None:
    res.derived[f"grid_n[{eps}]"] = grid.n
    res.derived[f"quantum_dt[{eps}]"] = config.qdt(eps)
    res.derived["kinetic_dt"] = config.kinetic_dt


def _evolve_kinetic(ens: Ensemble, t0: float, t1: float, eps: float, pot: Potential,
                    config: RunConfig, opts: HopOptions) -> Ensemble:
    w0 = ens.total_weight()
    evolve_arrays(ens, t0, t1, eps, pot, config.integrator(), opts, config.seed)
    drift = abs(ens.total_weight() - w0)
    if drift > 1e-12 * max(1.0, w0):
        raise ConservationError(f"kinetic weight drifted by {drift:.3g}")
    return ens


def _evolve_quantum(psi, t0, t1, dt, pot):
    n0 = psi.norm2()
    out = evolve(psi, t0, t1, dt, pot)
    drift = float(np.max(np.abs(out.norm2() - n0)))
    if drift > 1e-10:
        raise ConservationError(f"quantum norm drifted by {drift:.3g}")
    return out, drift


def _kinetic_densities(ens: Ensemble, grid: Grid1D) -> tuple[Density1D, Density1D]:
    return deposit_density(ens, grid, Mode.PLUS), deposit_density(ens, grid, Mode.MINUS)


def _pure_ensemble(config: RunConfig, spec: WavepacketSpec, **kw) -> Ensemble:
    return sample_pure_state(spec, config.particles, config.sampling, config.seed, **kw)


def log_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def derived_vprime(eps: float, xi2: float, rate: float) -> float:
    """``-pi xi2^2 / (eps log T)``; equals ``|V'(x*)|`` when ``T`` follows the Landau-Zener law."""
    if not 0.0 < rate < 1.0:
        return float("nan")
    return -math.pi * xi2**2 / (eps * math.log(rate))


# --------------------------------------------------------------------------
# Klein tunnelling


def classify_klein_kinetic(ens: Ensemble, x_split: float = 1.0) -> dict[str, float]:
    """Split the plus-mode weight by genealogy.

    No hop gives wavepacket 1.  Two hops give wavepacket 2 if the particle
    ends right of ``x_split`` and wavepacket 3 if it ends left of it.
    """
    plus = ens.sign == 1
    x = ens.x[:, 0]
    w = ens.weight
    wp1 = float(w[plus & (ens.hops == 0)].sum())
    wp2 = float(w[plus & (ens.hops == 2) & (x > x_split)].sum())
    wp3 = float(w[plus & (ens.hops == 2) & (x <= x_split)].sum())
    total = float(w.sum())
    return {"wp1": wp1, "wp2": wp2, "wp3": wp3, "residual": total - wp1 - wp2 - wp3}


def classify_klein_quantum(grid: Grid1D, rho_plus: np.ndarray) -> dict[str, float]:
    """Split the final plus density by position windows.

    Left of ``KLEIN_LEFT_EDGE`` the reflected packet (wavepacket 1) and the
    late packet (wavepacket 3) are separated at ``KLEIN_WP_SPLIT``; right of
    ``KLEIN_RIGHT_EDGE`` is wavepacket 2.
    """
    x, h = grid.x, grid.h
    wp1 = float(h * rho_plus[x < KLEIN_WP_SPLIT].sum())
    wp3 = float(h * rho_plus[(x >= KLEIN_WP_SPLIT) & (x < KLEIN_LEFT_EDGE)].sum())
    wp2 = float(h * rho_plus[x > KLEIN_RIGHT_EDGE].sum())
    return {"wp1": wp1, "wp2": wp2, "wp3": wp3, "residual": 1.0 - wp1 - wp2 - wp3}


def run_klein(config: RunConfig) -> RunResult:
    pot = config.make_potential()
    res = RunResult("klein", derived={**_potential_derived(pot), "windows": {
        "wp1": f"x < {KLEIN_WP_SPLIT}", "wp3": f"{KLEIN_WP_SPLIT} <= x < {KLEIN_LEFT_EDGE}",
        "wp2": f"x > {KLEIN_RIGHT_EDGE}"}})
    rates = Table(["epsilon", "model", "wp1", "wp2", "wp3", "residual"], [])
    times = sorted(set([0.0] + [float(t) for t in config.times]))
    for eps in config.eps:
        spec = config.wavepacket_spec(eps)
        grid = config.grid(eps, spec)
        _record_discretization(res, config, eps, grid)
        snaps = Table(["x", "t", "kinetic_plus", "kinetic_minus", "quantum_plus",
                       "quantum_minus"], [])
        ens = _pure_ensemble(config, spec)
        opts = config.hop_options()
        psi = init_wavepacket(grid, spec) if config.quantum else None
        t_prev = 0.0
        q_rho = None
        for t in times:
            _evolve_kinetic(ens, t_prev, t, eps, pot, config, opts)
            kp, km = _kinetic_densities(ens, grid)
            if psi is not None:
                psi, _ = _evolve_quantum(psi, t_prev, t, config.qdt(eps), pot)
                q_rho = mode_densities(psi)
            qp, qm = q_rho if q_rho is not None else (np.full(grid.n, np.nan),) * 2
            for j in range(grid.n):
                snaps.rows.append([grid.x[j], t, kp.values[j], km.values[j], qp[j], qm[j]])
            t_prev = t
        res.tables[f"klein_snapshots_eps{eps:g}"] = snaps
        kin = classify_klein_kinetic(ens)
        rates.rows.append([eps, "kinetic", kin["wp1"], kin["wp2"], kin["wp3"], kin["residual"]])
        res.summary[f"kinetic[{eps}]"] = kin
        if abs(kin["residual"]) > KLEIN_RESIDUAL_LIMIT:
            res.warnings.append(f"kinetic residual {kin['residual']:.4f} at eps={eps}")
        if psi is not None:
            qua = classify_klein_quantum(grid, q_rho[0])
            rates.rows.append([eps, "quantum", qua["wp1"], qua["wp2"], qua["wp3"],
                               qua["residual"]])
            res.summary[f"quantum[{eps}]"] = qua
            if abs(qua["residual"]) > KLEIN_RESIDUAL_LIMIT:
                res.warnings.append(f"quantum residual {qua['residual']:.4f} at eps={eps}")
    res.tables["klein_rates"] = rates
    return res


# --------------------------------------------------------------------------
# Transfer rates at the crossing


def kinetic_transfer_rate(config: RunConfig, eps: float, pot: Potential, estimator: str,
                          t_final: float = 4.5) -> float:
    spec = config.wavepacket_spec(eps)
    ens = _pure_ensemble(config, spec)
    _evolve_kinetic(ens, 0.0, t_final, eps, pot, config, config.hop_options(statistic=estimator))
    return ens.mode_weight(Mode.MINUS) / ens.total_weight()


def quantum_transfer_rate(config: RunConfig, eps: float, pot: Potential,
                          t_final: float = 4.5) -> tuple[float, float]:
    spec = config.wavepacket_spec(eps)
    psi = init_wavepacket(config.grid(eps, spec), spec)
    out, drift = _evolve_quantum(psi, 0.0, t_final, config.qdt(eps), pot)
    _, rm = mode_densities(out)
    return float(psi.grid.h * rm.sum() / psi.norm2()), drift


def run_transfer_table(config: RunConfig) -> RunResult:
    pot = config.make_potential()
    xi2 = config.wavepacket_spec(config.eps[0]).xi2_0
    res = RunResult("transfer-table", derived=_potential_derived(pot))
    table = Table(["epsilon", "rate_quantum", "rate_kinetic_expected", "rate_kinetic_random",
                   "vprime_quantum", "vprime_kinetic_expected", "vprime_kinetic_random"], [])
    for eps in config.eps:
        q = float("nan")
        spec = config.wavepacket_spec(eps)
        _record_discretization(res, config, eps, config.grid(eps, spec))
        if config.quantum:
            q, drift = quantum_transfer_rate(config, eps, pot)
            res.derived[f"quantum_norm_drift[{eps}]"] = drift
        ke = kinetic_transfer_rate(config, eps, pot, "expected")
        kr = kinetic_transfer_rate(config, eps, pot, "random")
        row = [eps, q, ke, kr] + [derived_vprime(eps, xi2, r) for r in (q, ke, kr)]
        table.rows.append(row)
        res.summary[str(eps)] = dict(zip(table.header[1:], row[1:]))
    res.tables["transfer_table"] = table
    return res


# --------------------------------------------------------------------------
# Transport error (pseudo-graphene) and jump ablation


def transport_error(config: RunConfig, eps: float, pot: Potential,
                    t_final: float = 4.5) -> float:
    spec = config.wavepacket_spec(eps)
    grid = config.grid(eps, spec)
    psi = init_wavepacket(grid, spec, QuantumVariant.PSEUDO_GRAPHENE)
    out, _ = _evolve_quantum(psi, 0.0, t_final, config.qdt(eps), pot)
    qp, qm = mode_densities(out)
    ens = _pure_ensemble(config, spec)
    _evolve_kinetic(ens, 0.0, t_final, eps, pot, config,
                    config.hop_options(transitions_enabled=False))
    kp, km = _kinetic_densities(ens, grid)
    return (l1_error(kp, density_from_values(grid, qp))
            + l1_error(km, density_from_values(grid, qm)))


def run_transport_error(config: RunConfig) -> RunResult:
    pots = {"V1": make_potential("harmonic"), "V2": make_potential("atan")}
    res = RunResult("transport-error",
                    derived={"atan_alpha": pots["V2"].alpha, "variant": "pseudo"})
    table = Table(["epsilon", "err_V1", "err_V2", "ratio"], [])
    for eps in config.eps:
        _record_discretization(res, config, eps, config.grid(eps, config.wavepacket_spec(eps)))
        e1 = transport_error(config, eps, pots["V1"])
        e2 = transport_error(config, eps, pots["V2"])
        table.rows.append([eps, e1, e2, e2 / e1])
    res.tables["transport_error"] = table
    if len(config.eps) >= 2:
        errs = np.array([r[1:3] for r in table.rows])
        res.summary["slope_V1"] = log_slope(config.eps, errs[:, 0])
        res.summary["slope_V2"] = log_slope(config.eps, errs[:, 1])
    res.summary["ratio_min"] = min(r[3] for r in table.rows)
    res.summary["ratio_max"] = max(r[3] for r in table.rows)
    return res


def jump_ablation_errors(config: RunConfig, eps: float, pot: Potential,
                         t_final: float = 4.5) -> dict[str, float]:
    spec = config.wavepacket_spec(eps)
    grid = config.grid(eps, spec)
    psi = init_wavepacket(grid, spec)
    out, _ = _evolve_quantum(psi, 0.0, t_final, config.qdt(eps), pot)
    qp, qm = (density_from_values(grid, r) for r in mode_densities(out))
    errs = {}
    for label, jumps in (("jumps", True), ("nojumps", False)):
        ens = _pure_ensemble(config, spec)
        _evolve_kinetic(ens, 0.0, t_final, eps, pot, config,
                        config.hop_options(jumps_enabled=jumps))
        kp, km = _kinetic_densities(ens, grid)
        errs[f"plus_{label}"] = l1_error(kp, qp)
        errs[f"minus_{label}"] = l1_error(km, qm)
    return errs


def run_jump_ablation(config: RunConfig) -> RunResult:
    pot = config.make_potential()
    res = RunResult("jump-ablation", derived=_potential_derived(pot))
    keys = ["plus_jumps", "minus_jumps", "plus_nojumps", "minus_nojumps"]
    table = Table(["epsilon"] + keys, [])
    for eps in config.eps:
        _record_discretization(res, config, eps, config.grid(eps, config.wavepacket_spec(eps)))
        errs = jump_ablation_errors(config, eps, pot)
        table.rows.append([eps] + [errs[k] for k in keys])
        res.summary[str(eps)] = errs
    res.tables["jump_ablation"] = table
    return res


# --------------------------------------------------------------------------
# Initial-data and sampling errors


def initial_data_errors(spec: WavepacketSpec, grid: Grid1D | None = None) -> tuple[float, float]:
    """``(err0, err1)``: L1 distance from ``|psi_0|^2`` to the unshifted and shifted marginals."""
    grid = grid or Grid1D(-10.0, 10.0, max(2**16, grid_for(spec).n))
    rp, rm = mode_densities(init_wavepacket(grid, spec))
    rho = rp + rm
    e0 = grid.h * np.abs(rho - gaussian_position_marginal(spec, grid.x)).sum()
    e1 = grid.h * np.abs(rho - shifted_position_marginal(spec, grid.x)).sum()
    return float(e0), float(e1)


def reconstruction_error(spec: WavepacketSpec, n: int, method, seed: int,
                         grid: Grid1D, rho_ref: Density1D) -> float:
    ens = sample_pure_state(spec, n, method, seed)
    return l1_error(deposit_density(ens, grid), rho_ref)


def run_sampling_convergence(config: RunConfig) -> RunResult:
    res = RunResult("sampling")
    init = Table(["epsilon", "err0", "err1"], [])
    for eps in config.eps:
        e0, e1 = initial_data_errors(config.wavepacket_spec(eps))
        init.rows.append([eps, e0, e1])
    res.tables["initial_data_error"] = init
    if len(config.eps) >= 2:
        res.summary["slope_err0"] = log_slope(config.eps, [r[1] for r in init.rows])
        res.summary["slope_err1"] = log_slope(config.eps, [r[2] for r in init.rows])
    counts = config.particle_counts or [config.particles]
    conv = Table(["epsilon", "n", "err_qmc", "err_mc"], [])
    for eps in config.convergence_eps or _sampling_eps(config.eps):
        spec = config.wavepacket_spec(eps)
        grid = config.grid(eps, spec)
        rp, rm = mode_densities(init_wavepacket(grid, spec))
        ref = density_from_values(grid, rp + rm)
        for n in counts:
            conv.rows.append([eps, n,
                              reconstruction_error(spec, n, "qmc", config.seed, grid, ref),
                              reconstruction_error(spec, n, "mc", config.seed, grid, ref)])
        rows = [r for r in conv.rows if r[0] == eps]
        if len(rows) >= 2:
            res.summary[f"mc_slope[{eps}]"] = log_slope([r[1] for r in rows], [r[3] for r in rows])
            res.summary[f"qmc_slope[{eps}]"] = log_slope([r[1] for r in rows], [r[2] for r in rows])
    res.tables["sampling_error"] = conv
    return res


def _sampling_eps(eps_list: list[float], k: int = 4) -> list[float]:
    """Up to ``k`` values spread over the sweep for the N-convergence study."""
    if len(eps_list) <= k:
        return list(eps_list)
    idx = np.linspace(0, len(eps_list) - 1, k).round().astype(int)
    return [eps_list[i] for i in idx]


# --------------------------------------------------------------------------
# Mixtures


def run_mixture(config: RunConfig) -> RunResult:
    pot = config.make_potential()
    res = RunResult("mixture", derived=_potential_derived(pot))
    table = Table(["epsilon", "rate_quantum", "rate_kinetic"], [])
    times = sorted(set([0.0] + [float(t) for t in config.times]))
    for eps in config.eps:
        mix = config.mixture_spec(eps)
        res.derived["f0_normalization"] = mix.normalization
        grid = config.grid(eps)
        _record_discretization(res, config, eps, grid)
        ens = sample_mixture(mix, config.particles, config.sampling, config.seed)
        opts = config.hop_options()
        kin = []
        t_prev = 0.0
        for t in times:
            _evolve_kinetic(ens, t_prev, t, eps, pot, config, opts)
            kin.append(_kinetic_densities(ens, grid))
            t_prev = t
        rate_k = ens.mode_weight(Mode.MINUS) / ens.total_weight()
        rate_q = float("nan")
        q = None
        if config.quantum:
            q = ensemble_evolve(mix, config.wavefunctions, grid, config.qdt(eps), pot,
                                seed=config.seed, times=times)
            if q.norm_drift > 1e-10:
                raise ConservationError(f"quantum norm drifted by {q.norm_drift:.3g}")
            rate_q = float(grid.h * q.rho_minus[-1].sum())
            res.derived[f"quantum_norm_drift[{eps}]"] = q.norm_drift
        snaps = Table(["x", "t", "kinetic_plus", "kinetic_minus", "quantum_plus",
                       "quantum_minus"], [])
        for i, t in enumerate(times):
            kp, km = kin[i]
            qp = q.rho_plus[i] if q else np.full(grid.n, np.nan)
            qm = q.rho_minus[i] if q else np.full(grid.n, np.nan)
            for j in range(grid.n):
                snaps.rows.append([grid.x[j], t, kp.values[j], km.values[j], qp[j], qm[j]])
        res.tables[f"mixture_snapshots_eps{eps:g}"] = snaps
        table.rows.append([eps, rate_q, rate_k])
        res.summary[str(eps)] = {"rate_quantum": rate_q, "rate_kinetic": rate_k}
    res.derived["wavefunctions"] = config.wavefunctions
    res.tables["mixture_rates"] = table
    return res


RUNNERS: dict[str, Callable[[RunConfig], RunResult]] = {
    "klein": run_klein,
    "transfer-table": run_transfer_table,
    "transport-error": run_transport_error,
    "jump-ablation": run_jump_ablation,
    "sampling": run_sampling_convergence,
    "mixture": run_mixture,
}


def run(config: RunConfig) -> RunResult:
    return RUNNERS[config.experiment](config)
