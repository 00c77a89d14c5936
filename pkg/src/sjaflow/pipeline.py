"""Batch experiments: build, diagonalize, extract, flow, synthesize, compare.

Every realization runs the whole chain independently; series are averaged
label by label (arithmetic mean) on one time grid shared by all
realizations.  Results, per-realization series, kernel dumps and a manifest
with content hashes go to the output directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .decimation import KernelTable, build_kernel_table, dense_regime_check, jacobi_spectral_function
from .dynamics import (TimeSeries, average_series, error_curve, exact_autocorrelator,
                       exact_quench_corotated, long_time_mean, response_amplitude,
                       synthesize_autocorr, synthesize_quench, tdpt_autocorr, tdpt_quench,
                       time_grid)
from .eth import EnergyGrid, extract_form_factors
from .flow import FlowState, solve_iterative
from .hermitian import DecimationLog, JacobiResult, jacobi_diagonalize
from .models import (QuenchProblem, RmtSpec, SpinChainSpec, build_ising_sector, build_rmt,
                     to_h0_eigenbasis)

log = logging.getLogger("sjaflow")

MODELS = ("rmt-gaussian", "rmt-bimodal", "ising")
ABORT_FRACTION = 0.2


class ConfigError(ValueError):
    pass


class AbortThresholdExceeded(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    """Run parameters.  Unknown keys are rejected by :meth:`from_dict`.

    ``E_cut`` defaults to 0.5 (RMT) or L/2 (spin chain); ``T`` to 40/J.
    ``observable`` is ``"H0^2"`` or ``"H0"``; unset means H0^2 for quenches
    and H0 for autocorrelators.  ``sizes`` lists N (RMT) or L values for the
    finite-size study.
    """

    model: str = "rmt-gaussian"
    N: int | None = 512
    L: int | None = None
    J: float = 0.5
    sigma_omega: float = 1.5
    omega0: float = 0.0
    g: float = 0.9045
    h: float = 0.809
    band: float = 2.5
    E_cut: float | None = None
    realizations: int = 1
    base_seed: int = 0
    w_min: float = 1e-6
    n_bin: int = 4
    n_slices: int = 32
    e_bins: int = 32
    omega_bins: int = 129
    k_max: int = 2
    T: float | None = None
    samples: int = 512
    outputs: dict = field(default_factory=lambda: {"directory": "out", "series": None,
                                                   "per_realization": True})
    observable: str | None = None
    sizes: list | None = None
    workers: int = 1
    slicing: str = "weight"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.is_rmt and (self.N is None or int(self.N) < 8):
            raise ConfigError("RMT models need N >= 8")
        if not self.is_rmt and (self.L is None or int(self.L) < 4):
            raise ConfigError("ising model needs L >= 4")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if not self.w_min > 0:
            raise ConfigError("w_min must be > 0")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if self.J < 0 or self.sigma_omega <= 0 or self.band <= 0:
            raise ConfigError("need J >= 0, sigma_omega > 0, band > 0")
        if self.model == "rmt-bimodal" and self.omega0 == 0:
            raise ConfigError("rmt-bimodal needs omega0 != 0")
        if self.n_bin < 1 or self.n_slices < 4 or self.samples < 2:
            raise ConfigError("need n_bin >= 1, n_slices >= 4, samples >= 2")
        if self.T is not None and self.T <= 0:
            raise ConfigError("T must be positive")
        if self.observable not in (None, "H0^2", "H0"):
            raise ConfigError("observable must be 'H0^2' or 'H0'")
        if self.slicing not in ("weight", "count"):
            raise ConfigError("slicing must be 'weight' or 'count'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not isinstance(self.outputs, dict):
            raise ConfigError("outputs must be an object")
        bad = set(self.outputs) - {"directory", "series", "per_realization"}
        if bad:
            raise ConfigError(f"unknown outputs keys: {sorted(bad)}")

    @property
    def is_rmt(self) -> bool:
        return self.model.startswith("rmt")

    @property
    def size(self) -> int:
        return int(self.N) if self.is_rmt else int(self.L)

    @property
    def time_span(self) -> float:
        if self.T is not None:
            return float(self.T)
        return 40.0 / self.J if self.J > 0 else 40.0

    @property
    def e_cut(self) -> float:
        if self.E_cut is not None:
            return float(self.E_cut)
        return 0.5 if self.is_rmt else 0.5 * self.L

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        if "outputs" in d:
            cfg.outputs = {"directory": "out", "series": None, "per_realization": True, **d["outputs"]}
            cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(kw)
        return ExperimentConfig.from_dict(d)

    def paper_scale(self) -> "ExperimentConfig":
        """N = 2048 with 10 realizations, or L = 16 for the spin chain."""
        if self.is_rmt:
            sizes = None if self.sizes is None else [1024, 2048]
            return self.replace(N=2048, realizations=10, sizes=sizes)
        sizes = None if self.sizes is None else [14, 16]
        return self.replace(L=16, sizes=sizes)


# --- one realization -----------------------------------------------------------

@dataclass
class Realization:
    index: int
    seed: int | None
    problem: QuenchProblem | None = None
    jacobi: JacobiResult | None = None
    grid: EnergyGrid | None = None
    kernel: KernelTable | None = None
    flow: FlowState | None = None
    status: str = "ok"
    stage: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def build_problem(cfg: ExperimentConfig, seed: int, kind: str) -> QuenchProblem:
    """Problem for one realization; ``kind`` is 'quench' or 'autocorr'."""
    obs = cfg.observable or ("H0^2" if kind == "quench" else "H0")
    if cfg.is_rmt:
        spec = RmtSpec(int(cfg.N), cfg.J, cfg.sigma_omega, cfg.omega0, cfg.band, seed)
        prob = build_rmt(spec, cfg.model.split("-")[1], E_cut=cfg.e_cut)
    else:
        spec = SpinChainSpec(int(cfg.L), cfg.J, cfg.g, cfg.h)
        H0, V, d = build_ising_sector(spec)
        prob = to_h0_eigenbasis(H0, V, cfg.w_min, cfg.J, E_cut=cfg.e_cut)
        prob.meta.update(L=spec.L, g=spec.g, h=spec.h, sector_dim=d)
    E = prob.energies
    A = E ** 2 if obs == "H0^2" else E.copy()
    rho = prob.rho_diag if kind == "quench" else np.full(len(E), 1.0 / len(E))
    out = prob.with_state(rho_diag=rho, A_diag=A)
    out.meta.update(observable=obs, kind=kind)
    return out


def _zero_kernel(grid, nu, n_slices):
    M = grid.M
    z = np.zeros((n_slices, M, M))
    return KernelTable(z, z.copy(), np.full(n_slices, np.nan), np.full(n_slices, np.nan), grid, nu)


def run_realization(cfg: ExperimentConfig, r: int, kind: str) -> Realization:
    """Build, diagonalize (co-rotating rho and A), extract, slice and flow; errors are captured."""
    seed = cfg.base_seed + r if cfg.is_rmt else None
    out = Realization(r, seed)
    stage = "build"
    try:
        prob = build_problem(cfg, seed if seed is not None else 0, kind)
        out.problem = prob
        stage = "jacobi"
        obs = [np.diag(prob.A_diag)] if kind == "autocorr" else [np.diag(prob.rho_diag), np.diag(prob.A_diag)]
        out.jacobi = jacobi_diagonalize(prob.H, cfg.w_min, obs)
        stage = "extract"
        E = prob.energies
        out.grid = EnergyGrid.by_count(E, cfg.n_bin)
        ff0 = extract_form_factors(E, prob.rho_diag, prob.A_diag, out.grid)
        stage = "kernel"
        if out.jacobi.log.n_total:
            out.kernel = build_kernel_table(out.jacobi.log, ff0.nu, out.grid, cfg.n_slices, cfg.slicing)
        else:
            out.kernel = _zero_kernel(out.grid, ff0.nu, cfg.n_slices)
        stage = "flow"
        out.flow = solve_iterative(ff0, out.kernel, cfg.k_max, with_f2=(kind == "autocorr"))
    except Exception as e:  # recorded in the manifest, the run continues
        out.status, out.stage = "aborted", stage
        out.error = f"{type(e).__name__}: {e}"
        log.warning("realization %d aborted at %s: %s", r, stage, out.error)
        log.debug(traceback.format_exc())
    return out


def _run_all(cfg: ExperimentConfig, kind: str) -> list:
    idx = range(cfg.realizations)
    if cfg.workers > 1 and cfg.realizations > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(run_realization, [cfg] * len(idx), idx, [kind] * len(idx)))
    return [run_realization(cfg, r, kind) for r in idx]


def realization_series(rz: Realization, times, kind: str, k_max: int) -> dict:
    """Series per label for one finished realization on the given time grid."""
    P, res = rz.problem, rz.jacobi
    meta = dict(realization=rz.index, seed=rz.seed)
    out = {}
    if kind == "quench":
        v0 = float(P.rho_diag @ P.A_diag)
        out["exact"] = exact_quench_corotated(res.eigenvalues, res.observers[0], res.observers[1], times, meta)
        out["tdpt"] = tdpt_quench(P.energies, P.V, P.rho_diag, P.A_diag, P.J, times, meta=meta)
        for k in range(1, k_max + 1):
            out[f"sja-{k}"] = synthesize_quench(rz.flow.order(k), v0, times, f"sja-{k}", meta=meta)
    else:
        N = P.N
        a0 = float(np.sum(P.A_diag ** 2) / N)
        out["exact"] = exact_autocorrelator(res.eigenvalues, res.observers[0], times, meta)
        out["tdpt"] = tdpt_autocorr(P.energies, P.V, P.A_diag, P.J, times, meta=meta)
        for k in range(1, k_max + 1):
            out[f"sja-{k}"] = synthesize_autocorr(rz.flow.order(k), N, times, a0, f"sja-{k}", meta=meta)
    return out


def common_time_grid(cfg: ExperimentConfig, realizations) -> np.ndarray:
    spans = [0.0]
    for rz in realizations:
        if rz.ok:
            spans.append(np.ptp(rz.jacobi.eigenvalues))
            spans.append(np.ptp(rz.problem.energies))
    return time_grid(cfg.time_span, cfg.samples, max(spans))


def summarize(avg: dict, J: float) -> dict:
    ex = avg["exact"]
    amp = response_amplitude(ex)
    out = {"exact": dict(amplitude=amp, long_time_mean=long_time_mean(ex), value_t0=float(ex.values[0]))}
    for lab, s in avg.items():
        if lab == "exact":
            continue
        e = error_curve(s, ex, J)
        out[lab] = dict(short_time_max_err=e.short_time_max_err,
                        long_time_mean_err=e.long_time_mean_err,
                        short_time_rel=e.short_time_max_err / amp if amp > 0 else 0.0,
                        all_time_max_rel=float(e.curve.values.max() / amp) if amp > 0 else 0.0,
                        long_time_mean=long_time_mean(s), value_t0=float(s.values[0]))
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    kind: str
    times: np.ndarray
    averaged: dict
    per_realization: list
    realizations: list
    summary: dict
    out_dir: str | None = None
    manifest: dict | None = None
    intensive: dict | None = None

    @property
    def n_aborted(self) -> int:
        return sum(not r.ok for r in self.realizations)


def coupling_ratio(cfg: ExperimentConfig, problem: QuenchProblem | None = None) -> float:
    """epsilon = J / sigma_omega; for the spin chain sigma is the rms frequency of |V|^2."""
    if cfg.is_rmt or problem is None:
        return cfg.J / cfg.sigma_omega
    E = problem.energies
    V2 = np.abs(problem.V) ** 2
    sig = np.sqrt(np.sum(V2 * (E[None, :] - E[:, None]) ** 2) / np.sum(V2))
    return cfg.J / sig


def _check_spin_realizations(cfg: ExperimentConfig) -> ExperimentConfig:
    if not cfg.is_rmt and cfg.realizations != 1:
        warnings.warn("spin-chain model is deterministic; realizations forced to 1")
        return cfg.replace(realizations=1)
    return cfg


def run_experiment(cfg: ExperimentConfig, kind: str = "quench", out_dir=None, times=None,
                   command: str | None = None) -> ExperimentResult:
    """Quench (``kind='quench'``) or infinite-temperature autocorrelator (``'autocorr'``) study."""
    if kind not in ("quench", "autocorr"):
        raise ValueError(f"unknown experiment kind {kind!r}")
    cfg = _check_spin_realizations(cfg)
    rz = _run_all(cfg, kind)
    good = [r for r in rz if r.ok]
    n_bad = len(rz) - len(good)
    res = ExperimentResult(cfg, kind, np.array([]), {}, [], rz, {}, out_dir)
    if n_bad > ABORT_FRACTION * len(rz) or not good:
        if out_dir is not None:
            res.manifest = write_outputs(res, out_dir, command, status="aborted")
        raise AbortThresholdExceeded(f"{n_bad} of {len(rz)} realizations aborted")
    if times is None:
        times = common_time_grid(cfg, good)
    res.times = np.asarray(times, dtype=float)
    per = [realization_series(r, res.times, kind, cfg.k_max) for r in good]
    labels = list(per[0])
    res.per_realization = per
    res.averaged = {lab: average_series([p[lab] for p in per], lab) for lab in labels}
    for s in res.averaged.values():
        s.meta.update(model=cfg.model, J=cfg.J, kind=kind, seeds=[r.seed for r in good],
                      epsilon=coupling_ratio(cfg, good[0].problem))
    res.summary = summarize(res.averaged, cfg.J)
    if out_dir is not None:
        res.manifest = write_outputs(res, out_dir, command)
    return res


def run_quench_experiment(cfg, out_dir=None, **kw) -> ExperimentResult:
    return run_experiment(cfg, "quench", out_dir, **kw)


def run_autocorr_experiment(cfg, out_dir=None, **kw) -> ExperimentResult:
    return run_experiment(cfg, "autocorr", out_dir, **kw)


# --- finite-size study -------------------------------------------------------------

def intensive_scale(cfg: ExperimentConfig) -> float:
    """Autocorrelators are divided by L**2 (spin chain); RMT series are left as they are."""
    return float(cfg.L) ** 2 if not cfg.is_rmt else 1.0


def run_finite_size_study(cfg: ExperimentConfig, out_dir=None, command=None) -> dict:
    """Autocorrelators at each size on a shared grid plus cross-size deviations.

    The deviation between consecutive sizes is the long-time-window mean of
    ``|x_1(t) - x_2(t)|`` of the intensive series.  For every consecutive
    pair the dense-regime check compares the realization-0 decimation logs.
    """
    cfg = _check_spin_realizations(cfg)
    sizes = list(cfg.sizes or ([256, 512] if cfg.is_rmt else [10, 12]))
    if len(sizes) < 2:
        raise ConfigError("finite-size study needs at least two sizes")
    key = "N" if cfg.is_rmt else "L"
    cfgs = [cfg.replace(**{key: s, "sizes": None}) for s in sizes]
    runs = [_run_all(c, "autocorr") for c in cfgs]
    for c, rz in zip(cfgs, runs):
        bad = sum(not r.ok for r in rz)
        if bad > ABORT_FRACTION * len(rz) or bad == len(rz):
            raise AbortThresholdExceeded(f"{key}={c.size}: {bad} of {len(rz)} realizations aborted")
    times = time_grid(cfg.time_span, cfg.samples,
                      max(np.ptp(r.jacobi.eigenvalues) for rz in runs for r in rz if r.ok))
    results = []
    for c, rz, s in zip(cfgs, runs, sizes):
        good = [r for r in rz if r.ok]
        per = [realization_series(r, times, "autocorr", c.k_max) for r in good]
        avg = {lab: average_series([p[lab] for p in per], lab) for lab in per[0]}
        sc = intensive_scale(c)
        inten = {lab: TimeSeries(times, v.values / sc, lab, dict(v.meta, size=s, intensive_scale=sc))
                 for lab, v in avg.items()}
        res = ExperimentResult(c, "autocorr", times, avg, per, rz, summarize(avg, c.J))
        res.intensive = inten
        results.append(res)
    deviations = []
    for a, b in zip(results, results[1:]):
        d = {}
        for lab in a.intensive:
            diff = TimeSeries(times, np.abs(a.intensive[lab].values - b.intensive[lab].values), lab)
            d[lab] = long_time_mean(diff)
        r1 = next(r for r in a.realizations if r.ok)
        r2 = next(r for r in b.realizations if r.ok)
        rep = dense_regime_check(r1.jacobi.log, r1.problem.N, r1.problem.energies,
                                 r2.jacobi.log, r2.problem.N, r2.problem.energies)
        deviations.append(dict(sizes=[a.config.size, b.config.size], long_time_deviation=d,
                               dense_regime=dict(status=rep.status, ratio=_finite_or_none(rep.ratio),
                                                 n_cells=rep.n_cells,
                                                 window=[_finite_or_none(x) for x in rep.window])))
    study = dict(sizes=sizes, times=times, results=results, deviations=deviations)
    if out_dir is not None:
        files = []
        for res, s in zip(results, sizes):
            sub = os.path.join(out_dir, f"{key}{s}")
            m = write_outputs(res, sub, command)
            files += [dict(f, path=os.path.join(f"{key}{s}", f["path"])) for f in m["files"]]
            idir = os.path.join(sub, "intensive")
            os.makedirs(idir, exist_ok=True)
            for lab, ts in res.intensive.items():
                files += [_file_entry(p, out_dir) for p in ts.to_csv(os.path.join(idir, f"{lab}.csv"))]
        path = os.path.join(out_dir, "finite_size.json")
        with open(path, "w") as fh:
            json.dump(dict(sizes=sizes, deviations=deviations), fh, indent=1, default=_jsonable)
        files.append(_file_entry(path, out_dir))
        study["manifest"] = _write_manifest(out_dir, cfg, command, files, status="ok",
                                            extra=dict(study="finite-size", deviations=deviations))
    return study


# --- decimation statistics only ------------------------------------------------------

def run_jacobi_stats(cfg: ExperimentConfig, out_dir, command=None) -> dict:
    """Decimation logs, kernel tables, f_Jac and the problem arrays for every realization."""
    cfg = _check_spin_realizations(cfg)
    os.makedirs(out_dir, exist_ok=True)
    files, records = [], []
    for r in range(cfg.realizations):
        rz = run_realization(cfg, r, "quench")
        records.append(_realization_record(rz))
        if not rz.ok:
            continue
        tag = f"r{r:03d}"
        paths = [os.path.join(out_dir, f"{tag}_log.csv"), os.path.join(out_dir, f"{tag}_kernel.csv"),
                 os.path.join(out_dir, f"{tag}_problem.npz"), os.path.join(out_dir, f"{tag}_fjac.csv")]
        rz.jacobi.log.to_csv(paths[0])
        rz.kernel.to_csv(paths[1])
        rz.problem.save(paths[2])
        fj = jacobi_spectral_function(rz.jacobi.log, rz.kernel.nu, rz.grid, cfg.J)
        c = rz.grid.centers
        I, K = np.meshgrid(np.arange(len(c)), np.arange(len(c)), indexing="ij")
        np.savetxt(paths[3], np.column_stack([c[I].ravel(), (c[K] - c[I]).ravel(), fj.ravel()]),
                   delimiter=",", header="E,omega,value", comments="", fmt="%.17g")
        files += [_file_entry(p, out_dir) for p in paths]
    bad = sum(rec["status"] != "ok" for rec in records)
    status = "aborted" if bad > ABORT_FRACTION * len(records) else "ok"
    m = _write_manifest(out_dir, cfg, command, files, status, extra=dict(realizations=records))
    if status == "aborted":
        raise AbortThresholdExceeded(f"{bad} of {len(records)} realizations aborted")
    return m


def run_flow_only(cfg: ExperimentConfig, log_path, problem_path, kind="quench", out_dir=None,
                  command=None) -> dict:
    """SJA series from a saved decimation log and problem file (no diagonalization)."""
    dlog = DecimationLog.from_csv(log_path)
    P = QuenchProblem.load(problem_path)
    if kind == "autocorr":
        P = P.with_state(rho_diag=np.full(P.N, 1.0 / P.N))
    grid = EnergyGrid.by_count(P.energies, cfg.n_bin)
    ff0 = extract_form_factors(P.energies, P.rho_diag, P.A_diag, grid)
    if dlog.n_total:
        kt = build_kernel_table(dlog, ff0.nu, grid, cfg.n_slices, cfg.slicing)
    else:
        kt = _zero_kernel(grid, ff0.nu, cfg.n_slices)
    fs = solve_iterative(ff0, kt, cfg.k_max, with_f2=(kind == "autocorr"))
    span = np.ptp(P.energies) + 2 * P.J * np.max(np.sum(np.abs(P.V), axis=1))
    times = time_grid(cfg.time_span, cfg.samples, span)
    series = {}
    for k in range(1, cfg.k_max + 1):
        if kind == "quench":
            series[f"sja-{k}"] = synthesize_quench(fs.order(k), float(P.rho_diag @ P.A_diag), times, f"sja-{k}")
        else:
            series[f"sja-{k}"] = synthesize_autocorr(fs.order(k), P.N, times,
                                                     float(np.sum(P.A_diag ** 2) / P.N), f"sja-{k}")
    out = dict(series=series, flow=fs)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        files = []
        for lab, s in series.items():
            files += [_file_entry(p, out_dir) for p in s.to_csv(os.path.join(out_dir, f"{lab}.csv"))]
        out["manifest"] = _write_manifest(out_dir, cfg, command, files, "ok",
                                          extra=dict(log=str(log_path), problem=str(problem_path),
                                                     conservation={k: fs.conservation(k) for k in range(1, cfg.k_max + 1)}))
    return out


# --- output ------------------------------------------------------------------------------

def _finite_or_none(x):
    return float(x) if np.isfinite(x) else None


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def sha256_file(path) -> str:
    hsh = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            hsh.update(chunk)
    return hsh.hexdigest()


def _file_entry(path, root) -> dict:
    return dict(path=os.path.relpath(path, root), sha256=sha256_file(path))


def versions() -> dict:
    import numba
    import scipy
    return dict(python=platform.python_version(), numpy=np.__version__, scipy=scipy.__version__,
                numba=numba.__version__, sjaflow=__version__)


def _realization_record(rz: Realization) -> dict:
    rec = dict(index=rz.index, seed=rz.seed, status=rz.status)
    if not rz.ok:
        rec.update(stage=rz.stage, error=rz.error)
        return rec
    rec.update(n_rotations=rz.jacobi.n_rotations, dim=rz.problem.N,
               conservation={k: rz.flow.conservation(k) for k in range(1, rz.flow.k_max + 1)})
    return rec


def _write_manifest(out_dir, cfg, command, files, status, extra=None) -> dict:
    m = dict(command=command, status=status, config=cfg.to_dict(), config_sha256=cfg.sha256(),
             versions=versions(), combine="arithmetic mean", files=files)
    if extra:
        m.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(m, fh, indent=1, sort_keys=True, default=_jsonable)
    return m


def write_outputs(res: ExperimentResult, out_dir, command=None, status="ok") -> dict:
    """Averaged and per-realization series, error curves, kernel dumps, manifest."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    wanted = res.config.outputs.get("series")
    keep = (lambda lab: True) if not wanted else (lambda lab: lab in wanted or lab == "exact")
    if res.averaged:
        sdir = os.path.join(out_dir, "series")
        os.makedirs(sdir, exist_ok=True)
        for lab, s in res.averaged.items():
            if keep(lab):
                files += [_file_entry(p, out_dir) for p in s.to_csv(os.path.join(sdir, f"{lab}.csv"),
                                                                   dict(summary=res.summary.get(lab)))]
        edir = os.path.join(out_dir, "errors")
        os.makedirs(edir, exist_ok=True)
        for lab, s in res.averaged.items():
            if lab != "exact" and keep(lab):
                e = error_curve(s, res.averaged["exact"], res.config.J)
                files += [_file_entry(p, out_dir) for p in e.curve.to_csv(os.path.join(edir, f"{lab}.csv"))]
        if res.config.outputs.get("per_realization", True):
            good = [r for r in res.realizations if r.ok]
            for rz, ser in zip(good, res.per_realization):
                rdir = os.path.join(out_dir, "realizations", f"r{rz.index:03d}")
                os.makedirs(rdir, exist_ok=True)
                for lab, s in ser.items():
                    if keep(lab):
                        files += [_file_entry(p, out_dir) for p in s.to_csv(os.path.join(rdir, f"{lab}.csv"))]
                path = os.path.join(rdir, "kernel.csv")
                rz.kernel.to_csv(path)
                files.append(_file_entry(path, out_dir))
    return _write_manifest(out_dir, res.config, command, files, status,
                           extra=dict(kind=res.kind, summary=res.summary,
                                      realizations=[_realization_record(r) for r in res.realizations],
                                      n_aborted=res.n_aborted, argv=list(sys.argv)))
