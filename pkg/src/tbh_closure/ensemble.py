"""Monte Carlo ensembles of TBH trajectories and their first-moment series.

Every ensemble member owns a counter-based Philox stream keyed by
(master seed, member index), so a member's initial condition does not depend
on how members are grouped into chunks or distributed over workers.  Partial
sums are formed per fixed-size chunk and folded in chunk order, which makes
the reduced moments bit-identical for any worker count.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .spectral import (
    BlowUpError,
    ModelConfig,
    PseudoSpectralRHS,
    energy,
    integrate_trajectory,
    rk4_step,
)

log = logging.getLogger(__name__)

MEMBER_STREAM = 0
BASE_STREAM = 1
TRAJECTORY_STREAM = 2

DEFAULT_SPINUP = 100.0
DEFAULT_STRIDE = 10
DEFAULT_CHUNK = 256


class InsufficientRunWarning(UserWarning):
    pass


def member_rng(seed: int, member: int, stream: int = MEMBER_STREAM) -> np.random.Generator:
    """Independent generator for one ensemble member.

    The 128-bit Philox key packs the master seed (high word) and the member
    index (low word); `stream` occupies the top word of the counter so that
    different uses of the same member never share output.
    """
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must fit in 64 bits")
    if not 0 <= member < 2 ** 64:
        raise ValueError("member index must fit in 64 bits")
    bitgen = np.random.Philox(key=(int(seed) << 64) | int(member), counter=int(stream) << 192)
    return np.random.Generator(bitgen)


@dataclass(frozen=True)
class TrialDensity:
    """Quasi-equilibrium Gaussian: mean a_k on the first m modes, variance 1/beta per mode."""

    beta: float
    means: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "means", np.asarray(self.means, dtype=complex).ravel())

    @property
    def m(self) -> int:
        return self.means.shape[0]

    @property
    def component_std(self) -> float:
        return 1.0 / np.sqrt(2.0 * self.beta)


def sample_member(density: TrialDensity, model: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    """One microstate z drawn from the trial density."""
    if density.m > model.n:
        raise ValueError(f"density has {density.m} resolved means but the model only {model.n} modes")
    g = rng.standard_normal(2 * model.n) * density.component_std
    z = g[:model.n] + 1j * g[model.n:]
    z[:density.m] += density.means
    return z


def sample_members(density: TrialDensity, model: ModelConfig, seed: int, members: Sequence[int],
                   stream: int = MEMBER_STREAM) -> np.ndarray:
    return np.stack([sample_member(density, model, member_rng(seed, int(i), stream)) for i in members])


def gibbs_state(model: ModelConfig, rng: np.random.Generator, energy_shell: Optional[float] = None) -> np.ndarray:
    """Equilibrium draw; optionally rescaled onto the surface E = energy_shell."""
    z = sample_member(TrialDensity(model.beta), model, rng)
    if energy_shell is not None:
        z *= np.sqrt(energy_shell / energy(z))
    return z


def draw_equilibrium_base(model: ModelConfig, m: int, spinup_time: float = DEFAULT_SPINUP,
                          seed: int = 0) -> np.ndarray:
    """First m modes of a Gibbs sample after a long free integration."""
    if spinup_time <= 0:
        raise ValueError("spinup_time must be positive")
    if not 1 <= m <= model.n:
        raise ValueError(f"m must lie in 1..{model.n}")
    z0 = gibbs_state(model, member_rng(seed, 0, BASE_STREAM))
    z = integrate_trajectory(z0, replace(model, t_final=spinup_time))
    return z[:m].copy()


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    b: np.ndarray
    r_dev: float = 1.0 / np.sqrt(10.0)
    ensemble_size: int = 100_000
    seed: int = 0
    observe_stride: int = DEFAULT_STRIDE
    record_modes: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "b", np.asarray(self.b, dtype=complex).ravel())
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.r_dev < 0:
            raise ValueError("r_dev must be non-negative")
        if self.observe_stride < 1:
            raise ValueError("observe_stride must be >= 1")
        if self.b.shape[0] > self.model.n:
            raise ValueError("base vector longer than the model")
        if self.record_modes is None:
            object.__setattr__(self, "record_modes", self.b.shape[0])
        if not 1 <= self.record_modes <= self.model.n:
            raise ValueError("record_modes out of range")

    @property
    def density(self) -> TrialDensity:
        return TrialDensity(self.model.beta, self.r_dev * self.b)


@dataclass
class MomentSeries:
    """Snapshot times with mean resolved amplitudes and E/H diagnostics."""

    times: np.ndarray
    means: np.ndarray
    energy_mean: np.ndarray
    hamiltonian_mean: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.means = np.asarray(self.means, dtype=complex)
        if self.means.ndim == 1:
            self.means = self.means[:, None]
        self.energy_mean = np.asarray(self.energy_mean, dtype=float)
        self.hamiltonian_mean = np.asarray(self.hamiltonian_mean, dtype=float)
        S = self.times.shape[0]
        if self.means.shape[0] != S or self.energy_mean.shape != (S,) or self.hamiltonian_mean.shape != (S,):
            raise ValueError("series columns disagree in length")
        if S > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        if not np.all(np.isfinite(self.means)):
            raise ValueError("non-finite means in series")

    @property
    def n_modes(self) -> int:
        return self.means.shape[1]

    def __len__(self):
        return self.times.shape[0]

    def truncated(self, modes: int) -> "MomentSeries":
        return MomentSeries(self.times.copy(), self.means[:, :modes].copy(),
                            self.energy_mean.copy(), self.hamiltonian_mean.copy())


def snapshot_times(model: ModelConfig, stride: int) -> np.ndarray:
    steps = model.n_steps
    idx = list(range(0, steps + 1, stride))
    if idx[-1] != steps:
        idx.append(steps)
    return np.asarray(idx, dtype=float) * model.dt


def _chunk_bounds(size: int, chunk: int):
    return [(lo, min(size, lo + chunk)) for lo in range(0, size, chunk)]


def _run_chunk(args):
    config, lo, hi = args
    model = config.model
    z = sample_members(config.density, model, config.seed, range(lo, hi))
    rhs = PseudoSpectralRHS(model.n, model.grid_size)
    m = config.record_modes
    sums_z, sums_e, sums_h = [], [], []

    def observe(t, s):
        sums_z.append(np.sum(s[:, :m], axis=0))
        sums_e.append(np.sum(energy(s)))
        h = np.sum((np.conj(s) * rhs.convolution(s)).real, axis=-1) / 3.0
        sums_h.append(np.sum(h))

    steps = model.n_steps
    observe(0.0, z)
    for i in range(1, steps + 1):
        try:
            z = rk4_step(z, model.dt, rhs)
        except BlowUpError as err:
            bad = lo + int(err.rows[0]) if err.rows is not None and len(err.rows) else lo
            raise BlowUpError(
                f"member {bad} (seed {config.seed}) blew up at t={i * model.dt:.6g}",
                member=bad, seed=config.seed,
            ) from None
        if i % config.observe_stride == 0 or i == steps:
            observe(i * model.dt, z)
    return np.array(sums_z), np.array(sums_e), np.array(sums_h)


def _pairwise_fold(parts):
    """Sum a list of arrays along a fixed binary tree (independent of scheduling)."""
    if len(parts) == 1:
        return parts[0]
    mid = len(parts) // 2
    return _pairwise_fold(parts[:mid]) + _pairwise_fold(parts[mid:])


def run_ensemble(config: ExperimentConfig, workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> MomentSeries:
    """Propagate every member and reduce to across-member means at each snapshot."""
    bounds = _chunk_bounds(config.ensemble_size, chunk_size)
    tasks = [(config, lo, hi) for lo, hi in bounds]
    log.info("ensemble: %d members in %d chunks, %d workers", config.ensemble_size, len(tasks), workers)
    if workers <= 1 or len(tasks) == 1:
        parts = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    sz = _pairwise_fold([p[0] for p in parts])
    se = _pairwise_fold([p[1] for p in parts])
    sh = _pairwise_fold([p[2] for p in parts])
    N = float(config.ensemble_size)
    return MomentSeries(snapshot_times(config.model, config.observe_stride), sz / N, se / N, sh / N)


def efolding_time(lags: np.ndarray, acf: np.ndarray) -> float:
    """First lag at which the autocorrelation falls to 1/e (linear interpolation)."""
    lags = np.asarray(lags, dtype=float)
    acf = np.asarray(acf, dtype=float)
    target = np.exp(-1.0)
    below = np.nonzero(acf <= target)[0]
    if below.size == 0:
        return np.inf
    j = below[0]
    if j == 0:
        return lags[0]
    f0, f1 = acf[j - 1], acf[j]
    return lags[j - 1] + (f0 - target) / (f0 - f1) * (lags[j] - lags[j - 1])


def equilibrium_trajectory(model: ModelConfig, modes: Sequence[int], run_length: float, seed: int,
                           sample_stride: int = 10, spinup_time: float = 10.0,
                           energy_shell: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """Sampled z_k(t), k in `modes`, along one equilibrated trajectory.

    Returns (times, samples) with samples of shape (len(times), len(modes)).
    """
    rng = member_rng(seed, 0, TRAJECTORY_STREAM)
    z = gibbs_state(model, rng, energy_shell)
    if spinup_time > 0:
        z = integrate_trajectory(z, replace(model, t_final=spinup_time))
    idx = np.asarray(modes, dtype=int) - 1
    if np.any(idx < 0) or np.any(idx >= model.n):
        raise ValueError("mode index out of range")
    out_t, out_z = [], []

    def observe(t, s):
        out_t.append(t)
        out_z.append(s[idx])

    integrate_trajectory(z, replace(model, t_final=run_length), observe, stride=sample_stride)
    return np.asarray(out_t), np.asarray(out_z)


def autocorrelation(samples: np.ndarray, max_lag: int) -> np.ndarray:
    """Re <x(t+j) x*(t)> / <|x|^2> for j = 0..max_lag, time-averaged over the series.

    `samples` has time on axis 0; extra axes are handled independently.
    """
    x = np.asarray(samples, dtype=complex)
    T = x.shape[0]
    if max_lag >= T:
        raise ValueError("series shorter than the largest lag")
    nfft = 1 << int(np.ceil(np.log2(2 * T)))
    X = np.fft.fft(x, n=nfft, axis=0)
    raw = np.fft.ifft(X * np.conj(X), axis=0)[:max_lag + 1]
    counts = (T - np.arange(max_lag + 1)).reshape((-1,) + (1,) * (x.ndim - 1))
    cov = raw / counts
    acf = cov.real / cov[0].real
    acf[0] = 1.0
    return acf


def equilibrium_autocorrelation(model: ModelConfig, k, lags: np.ndarray, run_length: float, seed: int = 0,
                                sample_stride: int = 10, spinup_time: float = 10.0) -> np.ndarray:
    """Normalized equilibrium autocorrelation of mode(s) k on the given lag grid.

    Lags must be multiples of the sampling interval dt * sample_stride.  A
    warning is issued when the run spans fewer than 100 e-folding times.
    """
    scalar = np.isscalar(k)
    modes = [int(k)] if scalar else [int(j) for j in k]
    lags = np.asarray(lags, dtype=float)
    interval = model.dt * sample_stride
    steps = np.rint(lags / interval).astype(int)
    if np.any(np.abs(steps * interval - lags) > 1e-9 * max(1.0, lags.max(initial=0.0))) or np.any(steps < 0):
        raise ValueError(f"lags must be non-negative multiples of the sampling interval {interval}")
    if run_length <= lags.max(initial=0.0):
        raise ValueError("run_length must exceed the largest lag")
    _, samples = equilibrium_trajectory(model, modes, run_length, seed, sample_stride, spinup_time)
    acf = autocorrelation(samples, int(steps.max(initial=0)))[steps]
    for j, mode in enumerate(modes):
        tau = efolding_time(lags, acf[:, j])
        if not np.isfinite(tau) or run_length < 100.0 * tau:
            warnings.warn(
                f"mode {mode}: run length {run_length} covers fewer than 100 decorrelation times (tau={tau:.3g})",
                InsufficientRunWarning,
                stacklevel=2,
            )
    return acf[:, 0] if scalar else acf.T
