"""Truncated Burgers-Hopf dynamics on n complex Fourier modes.

A state is a complex array whose last axis holds z_1..z_n.  The mean mode
z_0 is identically zero and negative wavenumbers are never stored: any
formula that needs z_{-k} uses conj(z_k).  Leading axes are treated as a
batch, so an ensemble of states is simply a (members, n) array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

DEFAULT_DT = 5e-4


class BlowUpError(FloatingPointError):
    """Raised when a trajectory produces non-finite amplitudes."""

    def __init__(self, message: str, member: Optional[int] = None, seed: Optional[int] = None,
                 rows: Optional[np.ndarray] = None):
        super().__init__(message)
        self.member = member
        self.seed = seed
        # batch rows (leading-axis indices) that went non-finite
        self.rows = rows


def alias_free_grid(n: int) -> int:
    """Smallest FFT-friendly physical grid that holds quadratic products exactly."""
    if n < 1:
        raise ValueError("mode count must be positive")
    return sfft.next_fast_len(3 * n + 1, real=True)


@dataclass(frozen=True)
class ModelConfig:
    n: int = 50
    beta: float = 5.0
    dt: float = DEFAULT_DT
    t_final: float = 1.5
    grid_size: Optional[int] = field(default=None)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_final < 0:
            raise ValueError(f"t_final must be non-negative, got {self.t_final}")
        if self.grid_size is None:
            object.__setattr__(self, "grid_size", alias_free_grid(self.n))
        elif self.grid_size < 3 * self.n + 1:
            raise ValueError(
                f"grid_size={self.grid_size} aliases the quadratic product; need >= {3 * self.n + 1}"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


def _check_grid(n: int, grid_size: Optional[int]) -> int:
    if n < 1:
        raise ValueError("state must carry at least one mode")
    if grid_size is None:
        return alias_free_grid(n)
    if grid_size < 3 * n + 1:
        raise ValueError(f"grid_size={grid_size} aliases the quadratic product; need >= {3 * n + 1}")
    return grid_size


def to_physical(z: np.ndarray, grid_size: Optional[int] = None) -> np.ndarray:
    """Real field u(x_j) = sum_{k=-n..n} z_k exp(i k x_j) on a uniform grid."""
    z = np.asarray(z, dtype=complex)
    n = z.shape[-1]
    M = _check_grid(n, grid_size)
    spec = np.zeros(z.shape[:-1] + (M // 2 + 1,), dtype=complex)
    spec[..., 1:n + 1] = z
    return sfft.irfft(spec, n=M, axis=-1, norm="forward")


class PseudoSpectralRHS:
    """Reusable TBH right-hand side with a cached spectral work buffer.

    The buffer is reallocated only when the batch shape changes, which keeps
    the inner loop of long integrations free of allocations beyond the FFTs.
    """

    def __init__(self, n: int, grid_size: Optional[int] = None):
        self.n = n
        self.grid_size = _check_grid(n, grid_size)
        k = np.arange(1, n + 1)
        # backward-normalized transforms: irfft carries 1/M, so c_k = M * rfft(u_b^2)
        self._conv_scale = float(self.grid_size)
        self._factor = (-0.5j * self.grid_size) * k
        self._buf: Optional[np.ndarray] = None

    def _spectrum(self, z: np.ndarray) -> np.ndarray:
        shape = z.shape[:-1] + (self.grid_size // 2 + 1,)
        if self._buf is None or self._buf.shape != shape:
            self._buf = np.zeros(shape, dtype=complex)
        self._buf[..., 1:self.n + 1] = z
        return self._buf

    def _square_transform(self, z: np.ndarray) -> np.ndarray:
        u = sfft.irfft(self._spectrum(z), n=self.grid_size, axis=-1)
        np.multiply(u, u, out=u)
        return sfft.rfft(u, axis=-1)[..., 1:self.n + 1]

    def convolution(self, z: np.ndarray) -> np.ndarray:
        return self._square_transform(z) * self._conv_scale

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self._square_transform(z) * self._factor


def self_convolution(z: np.ndarray, grid_size: Optional[int] = None) -> np.ndarray:
    """c_k = sum_{k1+k2=k} z_{k1} z_{k2} for k = 1..n, indices over +-1..+-n.

    Computed as the Fourier coefficients of u^2 on an alias-free grid.
    """
    z = np.asarray(z, dtype=complex)
    return PseudoSpectralRHS(z.shape[-1], grid_size).convolution(z)


def tbh_rhs(z: np.ndarray, grid_size: Optional[int] = None) -> np.ndarray:
    """dz_k/dt = -(ik/2) sum_{k1+k2=k} z_{k1} z_{k2}, pseudo-spectral evaluation."""
    z = np.asarray(z, dtype=complex)
    return PseudoSpectralRHS(z.shape[-1], grid_size)(z)


def tbh_rhs_direct(z: np.ndarray) -> np.ndarray:
    """Literal double sum over ordered pairs (k1, k2); O(n^2), for checking only."""
    z = np.asarray(z, dtype=complex)
    if z.ndim != 1:
        raise ValueError("direct convolution takes a single state")
    n = z.shape[0]
    if n < 1:
        raise ValueError("state must carry at least one mode")
    if n > 64:
        raise ValueError("direct convolution is an oracle for n <= 64")

    def amp(j):
        return z[j - 1] if j > 0 else np.conj(z[-j - 1])

    out = np.zeros(n, dtype=complex)
    for k in range(1, n + 1):
        acc = 0j
        for k1 in range(-n, n + 1):
            k2 = k - k1
            if k1 == 0 or k2 == 0 or abs(k2) > n:
                continue
            acc += amp(k1) * amp(k2)
        out[k - 1] = -0.5j * k * acc
    return out


def rk4_step(z: np.ndarray, dt: float, rhs: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Classical four-stage Runge-Kutta step of an autonomous system."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    z = np.asarray(z)
    if not np.all(np.isfinite(z)):
        raise BlowUpError("non-finite amplitudes entering RK4 step")
    if dt == 0:
        return z.copy()
    k1 = rhs(z)
    k2 = rhs(z + (0.5 * dt) * k1)
    k3 = rhs(z + (0.5 * dt) * k2)
    k4 = rhs(z + dt * k3)
    out = z + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    if not np.all(np.isfinite(out)):
        rows = None
        if out.ndim > 1:
            rows = np.nonzero(~np.isfinite(out).reshape(-1, out.shape[-1]).all(axis=-1))[0]
        raise BlowUpError(f"RK4 step produced non-finite amplitudes (dt={dt})", rows=rows)
    return out


def energy(z: np.ndarray) -> np.ndarray:
    """E = 1/2 sum_{k=-n..n} |z_k|^2 = sum_{k=1..n} |z_k|^2."""
    z = np.asarray(z)
    return np.sum(z.real ** 2 + z.imag ** 2, axis=-1)


def hamiltonian(z: np.ndarray, grid_size: Optional[int] = None) -> np.ndarray:
    """Cubic invariant H = 1/6 sum_{k1+k2+k3=0} z_{k1} z_{k2} z_{k3}.

    Grouping the triple sum by k3 gives H = 1/3 sum_{k=1..n} Re(conj(z_k) c_k)
    with c the truncated self-convolution.
    """
    z = np.asarray(z, dtype=complex)
    c = self_convolution(z, grid_size)
    return np.sum((np.conj(z) * c).real, axis=-1) / 3.0


def integrate_trajectory(
    z0: np.ndarray,
    config: ModelConfig,
    observer: Optional[Callable[[float, np.ndarray], None]] = None,
    stride: int = 1,
) -> np.ndarray:
    """Advance z0 over [0, config.t_final] with fixed-step RK4.

    The observer, if given, is called as observer(t, z) at t=0 and after
    every `stride` steps (and at the final step).
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    z = np.array(z0, dtype=complex)
    if z.shape[-1] != config.n:
        raise ValueError(f"state has {z.shape[-1]} modes, config expects {config.n}")
    rhs = PseudoSpectralRHS(config.n, config.grid_size)
    steps = config.n_steps
    if observer is not None:
        observer(0.0, z)
    for i in range(1, steps + 1):
        z = rk4_step(z, config.dt, rhs)
        if observer is not None and (i % stride == 0 or i == steps):
            observer(i * config.dt, z)
    return z
