"""Fitting the closure parameter gamma against ensemble first moments."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .closure import ClosureConfig, integrate_closure
from .ensemble import MomentSeries

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_BRACKET = (1.0, 500.0)
SCAN_POINTS = 16


class GridMismatchError(ValueError):
    pass


class FitFailure(RuntimeError):
    """No interior minimum of the error function on the scanned bracket."""

    def __init__(self, message: str, scan: list[tuple[float, float]]):
        super().__init__(message)
        self.scan = scan

    def scan_table(self) -> str:
        return "\n".join(f"{g:.10g}\t{e:.10g}" for g, e in self.scan)


@dataclass
class FitResult:
    gamma_star: float
    damping_time_coeff: float
    error_value: float
    rms_per_mode_step: float
    evaluations: int
    scan: list = field(default_factory=list)
    brackets: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "gamma_star": self.gamma_star,
            "damping_time_coeff": self.damping_time_coeff,
            "error_value": self.error_value,
            "rms_per_mode_step": self.rms_per_mode_step,
            "evaluations": self.evaluations,
        }


def _check_grid(a: MomentSeries, b: MomentSeries):
    if len(a) != len(b) or not np.allclose(a.times, b.times, rtol=0.0, atol=1e-9):
        raise GridMismatchError(f"time grids differ ({len(a)} vs {len(b)} snapshots)")


def squared_difference(closure: MomentSeries, dns: MomentSeries, mode_count: Optional[int] = None) -> float:
    """Sum over snapshots and the 2*mode_count real components of (closure - dns)^2."""
    _check_grid(closure, dns)
    m = closure.n_modes if mode_count is None else mode_count
    if m > closure.n_modes or m > dns.n_modes:
        raise ValueError("mode_count exceeds the modes carried by a series")
    d = closure.means[:, :m] - dns.means[:, :m]
    return float(np.sum(d.real ** 2) + np.sum(d.imag ** 2))


def rms_per_mode_step(closure: MomentSeries, dns: MomentSeries, mode_count: Optional[int] = None) -> float:
    """sqrt(total squared difference / (2 m n_snapshots))."""
    m = closure.n_modes if mode_count is None else mode_count
    total = squared_difference(closure, dns, m)
    return math.sqrt(total / (2 * m * len(dns)))


def error_function(gamma: float, dns: MomentSeries, closure_config: ClosureConfig, a0: np.ndarray,
                   mode_count: Optional[int] = None) -> float:
    """Squared mismatch between the closure run at `gamma` and the DNS means."""
    run = integrate_closure(a0, replace(closure_config, gamma=float(gamma)))
    return squared_difference(run, dns, mode_count)


class _Objective:
    """Picklable error-function wrapper that counts evaluations."""

    def __init__(self, dns, config, a0, mode_count):
        self.dns, self.config, self.a0, self.mode_count = dns, config, np.asarray(a0), mode_count
        self.calls = 0

    def __call__(self, gamma):
        self.calls += 1
        return error_function(gamma, self.dns, self.config, self.a0, self.mode_count)


def _eval_one(args):
    obj, g = args
    return obj(g)


def coarse_scan(objective, bracket: Sequence[float], points: int = SCAN_POINTS, workers: int = 1):
    lo, hi = bracket
    grid = np.geomspace(lo, hi, points)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_eval_one, [(objective, g) for g in grid]))
        objective.calls += len(grid)
    else:
        values = [objective(g) for g in grid]
    return [(float(g), float(v)) for g, v in zip(grid, values)]


def golden_section(f, lo: float, hi: float, rel_tol: float = 1e-3, max_evals: int = 60):
    """Minimize a unimodal f on [lo, hi]; stops when (hi - lo) <= rel_tol * midpoint.

    Returns (x_best, f_best, brackets) where brackets records (lo, hi) after
    every iteration.
    """
    if not lo < hi:
        raise ValueError("empty bracket")
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    evals = 2
    brackets = [(lo, hi)]
    while (hi - lo) > rel_tol * 0.5 * (hi + lo) and evals < max_evals:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = f(x2)
        evals += 1
        brackets.append((lo, hi))
    if f1 <= f2:
        return x1, f1, brackets
    return x2, f2, brackets


def fit_gamma(dns: MomentSeries, closure_config: ClosureConfig, a0: Optional[np.ndarray] = None,
              bracket: Sequence[float] = DEFAULT_BRACKET, mode_count: Optional[int] = None,
              rel_tol: float = 1e-3, scan_points: int = SCAN_POINTS, workers: int = 1) -> FitResult:
    """Coarse log scan to locate the minimum, then golden-section refinement."""
    if a0 is None:
        a0 = dns.means[0, :closure_config.m]
    mode_count = min(closure_config.m, dns.n_modes) if mode_count is None else mode_count
    objective = _Objective(dns, closure_config, a0, mode_count)
    scan = coarse_scan(objective, bracket, scan_points, workers)
    values = [v for _, v in scan]
    j = int(np.argmin(values))
    log.info("scan minimum at gamma=%.4g (index %d of %d)", scan[j][0], j, len(scan))
    if j == 0 or j == len(scan) - 1:
        raise FitFailure(f"error function has no interior minimum on [{bracket[0]}, {bracket[1]}]", scan)
    lo, hi = scan[j - 1][0], scan[j + 1][0]
    g_star, e_star, brackets = golden_section(objective, lo, hi, rel_tol, max_evals=60 - len(scan))
    run = integrate_closure(a0, replace(closure_config, gamma=g_star))
    rms = rms_per_mode_step(run, dns, mode_count)
    return FitResult(
        gamma_star=float(g_star),
        damping_time_coeff=float(np.sqrt(closure_config.beta / g_star)),
        error_value=float(e_star),
        rms_per_mode_step=rms,
        evaluations=objective.calls,
        scan=scan,
        brackets=brackets,
    )
