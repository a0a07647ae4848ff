"""Experiment pipeline: DNS ensembles, closure runs, gamma fits and reports."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import io
from .calibration import FitResult, fit_gamma, rms_per_mode_step, squared_difference
from .closure import ClosureConfig, integrate_closure
from .ensemble import (
    DEFAULT_SPINUP,
    DEFAULT_STRIDE,
    ExperimentConfig,
    MomentSeries,
    draw_equilibrium_base,
    run_ensemble,
)
from .spectral import DEFAULT_DT, ModelConfig

log = logging.getLogger(__name__)

DEFAULT_MEMBERS = 100_000
FULL_SCALE_MEMBERS = 1_000_000
DEFAULT_SEED = 20120501

PRESETS = {
    "close": dict(r_dev=1.0 / math.sqrt(10.0)),
    "mid": dict(r_dev=1.0),
    "far": dict(r_dev=math.sqrt(10.0)),
    "extreme": dict(r_dev=10.0),
    "buffer": dict(r_dev=math.sqrt(10.0), buffered=True),
}


@dataclass
class ExperimentSpec:
    name: str = "custom"
    n: int = 50
    beta: float = 5.0
    dt: float = DEFAULT_DT
    t_final: float = 1.5
    grid_size: Optional[int] = None
    m_resolved: int = 5
    r_dev: float = 1.0 / math.sqrt(10.0)
    buffered: bool = False
    ensemble_size: int = DEFAULT_MEMBERS
    seed: int = DEFAULT_SEED
    gamma: Union[float, str] = "fit"
    output_dir: str = "runs"
    spinup_time: float = DEFAULT_SPINUP
    observe_stride: int = DEFAULT_STRIDE
    workers: int = 1
    variant: str = "nonstationary"
    bracket_lo: float = 1.0
    bracket_hi: float = 500.0
    rel_tol: float = 1e-3
    # DNS outputs are reused from here when their fingerprint matches
    cache_dir: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.gamma, str) and self.gamma != "fit":
            self.gamma = float(self.gamma)
        if not isinstance(self.gamma, str) and self.gamma < 0:
            raise ValueError("gamma must be non-negative or 'fit'")
        if self.m_resolved < 1 or self.closure_modes > self.n:
            raise ValueError("resolved modes do not fit in the model")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.r_dev < 0:
            raise ValueError("r_dev must be non-negative")

    @property
    def closure_modes(self) -> int:
        return 2 * self.m_resolved if self.buffered else self.m_resolved

    @property
    def record_modes(self) -> int:
        # DNS always records 2m modes so buffered comparisons can reuse unbuffered runs
        return min(self.n, 2 * self.m_resolved)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(n=self.n, beta=self.beta, dt=self.dt, t_final=self.t_final, grid_size=self.grid_size)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def closure_config(self, gamma: float = 0.0, variant: Optional[str] = None) -> ClosureConfig:
        return ClosureConfig(m=self.closure_modes, beta=self.beta, gamma=gamma, dt=self.dt,
                             t_final=self.t_final, variant=variant or self.variant,
                             observe_stride=self.observe_stride)

    def dns_fingerprint(self) -> str:
        keys = dict(n=self.n, beta=self.beta, dt=self.dt, t_final=self.t_final, grid_size=self.model.grid_size,
                    m_resolved=self.m_resolved, record=self.record_modes, r_dev=self.r_dev,
                    ensemble_size=self.ensemble_size, seed=self.seed, spinup=self.spinup_time,
                    stride=self.observe_stride, code=source_digest())
        return hashlib.sha256(json.dumps(keys, sort_keys=True).encode()).hexdigest()[:16]

    def to_items(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    @classmethod
    def from_items(cls, items: dict) -> "ExperimentSpec":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in items.items():
            if key not in types:
                raise ValueError(f"unknown configuration key {key!r}")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)


_INT_KEYS = {"n", "grid_size", "m_resolved", "ensemble_size", "seed", "observe_stride", "workers"}
_FLOAT_KEYS = {"beta", "dt", "t_final", "r_dev", "spinup_time", "bracket_lo", "bracket_hi", "rel_tol"}
_BOOL_KEYS = {"buffered"}


def _coerce(key: str, raw):
    if not isinstance(raw, str):
        return raw
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {raw!r}")
    if key == "gamma":
        return raw if raw == "fit" else float(raw)
    return raw


def preset(name: str, **overrides) -> ExperimentSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown experiment {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    kw.setdefault("output_dir", str(Path("runs") / name))
    return ExperimentSpec(name=name, **kw)


_DIGEST: Optional[str] = None


def source_digest() -> str:
    """Hash of the sources that determine DNS output; cached runs go stale when they change."""
    global _DIGEST
    if _DIGEST is None:
        h = hashlib.sha256()
        here = Path(__file__).parent
        for p in (here / "spectral.py", here / "ensemble.py"):
            h.update(p.name.encode())
            h.update(p.read_bytes())
        _DIGEST = h.hexdigest()[:16]
    return _DIGEST


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    fit: Optional[FitResult] = None
    gamma: Optional[float] = None
    error_value: Optional[float] = None
    rms: Optional[float] = None
    manifest: list = field(default_factory=list)

    def damping_times(self) -> list:
        if self.gamma is None or self.gamma == 0:
            return []
        coeff = math.sqrt(self.spec.beta / self.gamma)
        return [coeff / k for k in range(1, self.spec.m_resolved + 1)]

    def items(self) -> dict:
        out = {f"spec.{k}": v for k, v in self.spec.to_items().items()}
        if self.fit is not None:
            out.update({f"fit.{k}": v for k, v in self.fit.as_dict().items()})
        if self.gamma is not None:
            out["gamma"] = float(self.gamma)
            out["damping_time_coeff"] = math.sqrt(self.spec.beta / self.gamma) if self.gamma > 0 else float("inf")
        if self.error_value is not None:
            out["error_value"] = float(self.error_value)
        if self.rms is not None:
            out["rms_per_mode_step"] = float(self.rms)
        for k, tau in enumerate(self.damping_times(), start=1):
            out[f"damping_time.k{k}"] = tau
        out["manifest"] = [str(p) for p in self.manifest]
        return out

    def write(self, path) -> Path:
        return io.write_kv(path, self.items())


def _dns_dir(spec: ExperimentSpec) -> Path:
    if spec.cache_dir:
        return Path(spec.cache_dir) / f"dns-{spec.dns_fingerprint()}"
    return spec.out


def cmd_dns(spec: ExperimentSpec) -> tuple[MomentSeries, np.ndarray, list]:
    """Equilibrated base draw, then the ensemble run; writes dns.csv and base.csv.

    Reuses an existing DNS output whose stored fingerprint matches the spec.
    """
    where = _dns_dir(spec)
    dns_csv, base_csv, meta = where / "dns.csv", where / "base.csv", where / "dns_meta.txt"
    fp = spec.dns_fingerprint()
    if dns_csv.exists() and base_csv.exists() and meta.exists() and io.read_kv(meta).get("fingerprint") == fp:
        log.info("reusing DNS output in %s", where)
        series, b = io.read_series(dns_csv), io.read_vector(base_csv)
    else:
        model = spec.model
        log.info("drawing base vector (spin-up %.4g)", spec.spinup_time)
        b = draw_equilibrium_base(model, spec.m_resolved, spec.spinup_time, spec.seed)
        config = ExperimentConfig(model=model, b=b, r_dev=spec.r_dev, ensemble_size=spec.ensemble_size,
                                  seed=spec.seed, observe_stride=spec.observe_stride,
                                  record_modes=spec.record_modes)
        series = run_ensemble(config, workers=spec.workers)
        io.write_series(dns_csv, series)
        io.write_vector(base_csv, b)
        io.write_kv(meta, {"fingerprint": fp, "ensemble_size": spec.ensemble_size, "seed": spec.seed,
                           "r_dev": spec.r_dev})
    manifest = [dns_csv, base_csv, meta]
    if where != spec.out:
        spec.out.mkdir(parents=True, exist_ok=True)
        for src in (dns_csv, base_csv):
            dst = spec.out / src.name
            dst.write_bytes(src.read_bytes())
            manifest.append(dst)
    return series, b, manifest


def base_vector(spec: ExperimentSpec) -> np.ndarray:
    """The equilibrated base draw b_k, read from a previous run when available."""
    for where in (spec.out, _dns_dir(spec)):
        if (where / "base.csv").exists():
            return io.read_vector(where / "base.csv")
    b = draw_equilibrium_base(spec.model, spec.m_resolved, spec.spinup_time, spec.seed)
    io.write_vector(spec.out / "base.csv", b)
    return b


def initial_means(spec: ExperimentSpec, b: np.ndarray) -> np.ndarray:
    a0 = spec.r_dev * np.asarray(b, dtype=complex)[:spec.m_resolved]
    if spec.buffered:
        a0 = np.concatenate([a0, np.zeros(spec.m_resolved, dtype=complex)])
    return a0


def cmd_closure(spec: ExperimentSpec, gamma: float, b: np.ndarray, variant: Optional[str] = None,
                filename: str = "closure.csv") -> tuple[MomentSeries, Path]:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    series = integrate_closure(initial_means(spec, b), spec.closure_config(gamma, variant))
    path = io.write_series(spec.out / filename, series)
    return series, path


def _difference(closure: MomentSeries, dns: MomentSeries, modes: int) -> MomentSeries:
    return MomentSeries(dns.times.copy(), closure.means[:, :modes] - dns.means[:, :modes],
                        closure.energy_mean - dns.energy_mean, closure.hamiltonian_mean - dns.hamiltonian_mean)


def cmd_fit(spec: ExperimentSpec) -> ExperimentReport:
    """Fit gamma (or score a fixed gamma) against the DNS and write all series and the report."""
    dns, b, manifest = cmd_dns(spec)
    a0 = initial_means(spec, b)
    modes = spec.m_resolved
    target = dns.truncated(spec.closure_modes) if dns.n_modes >= spec.closure_modes else dns
    report = ExperimentReport(spec=spec, manifest=list(manifest))
    if spec.gamma == "fit":
        fit = fit_gamma(target, spec.closure_config(), a0=a0, bracket=(spec.bracket_lo, spec.bracket_hi),
                        mode_count=modes, rel_tol=spec.rel_tol, workers=spec.workers)
        report.fit = fit
        gamma = fit.gamma_star
        io.write_kv(spec.out / "scan.txt", {f"gamma_{i:02d}": [g, e] for i, (g, e) in enumerate(fit.scan)})
        report.manifest.append(spec.out / "scan.txt")
    else:
        gamma = float(spec.gamma)
    closure, cpath = cmd_closure(spec, gamma, b)
    report.gamma = gamma
    report.error_value = squared_difference(closure, target, modes)
    report.rms = rms_per_mode_step(closure, target, modes)
    diff_path = io.write_series(spec.out / "difference.csv", _difference(closure, target, modes))
    report.manifest += [cpath, diff_path]
    rpath = spec.out / "report.txt"
    report.manifest.append(rpath)
    report.write(rpath)
    return report


def cmd_experiment(name: str, **overrides) -> ExperimentReport:
    """DNS, fit and closure replay for one of the named experiments."""
    spec = preset(name, **overrides)
    return cmd_fit(spec)
