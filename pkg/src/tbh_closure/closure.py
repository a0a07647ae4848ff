"""Best-fit reduced dynamics for the m lowest TBH modes.

The reduced equations keep the m-mode TBH advection, with each ordered
interaction pair (k1, k2) weighted by 1 + Omega(k1, k2, t), and add a
fractional-diffusion damping sqrt(gamma/beta)|k| tanh(sqrt(gamma/beta)|k| t).
Three variants share the machinery:

* ``nonstationary`` -- Omega co-evolves from zero, damping ramps via tanh.
* ``stationary``    -- Omega fixed at its saturated value omega, tanh = 1.
* ``linearized``    -- advection dropped, tanh damping kept.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ensemble import MomentSeries
from .spectral import BlowUpError

VARIANTS = ("nonstationary", "stationary", "linearized")


@dataclass(frozen=True)
class ClosureConfig:
    m: int = 5
    beta: float = 5.0
    gamma: float = 64.74
    dt: float = 5e-4
    t_final: float = 1.5
    variant: str = "nonstationary"
    observe_stride: int = 10
    # evaluate the damping once per step at its start time instead of at each RK4 stage
    freeze_damping: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.observe_stride < 1:
            raise ValueError("observe_stride must be >= 1")

    @property
    def rate(self) -> float:
        """sqrt(gamma/beta): damping rate per unit wavenumber at saturation."""
        return float(np.sqrt(self.gamma / self.beta))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


def omega_factor(k1: int, k2: int) -> float:
    """Stationary modification of the (k1, k2) advection coefficient.

    Defined for target wavenumbers k = k1 + k2 >= 1; the equations for
    negative k are the conjugates and never need their own factor.
    """
    if k1 == 0 or k2 == 0:
        raise ValueError("wavenumbers must be nonzero")
    k = k1 + k2
    if k == 0:
        raise ValueError("omega is singular for k1 + k2 = 0")
    if k < 0:
        raise ValueError("omega is defined for positive targets k1 + k2 only")
    return (k1 * abs(k1) + k2 * abs(k2) - k * k) / (k * (abs(k1) + abs(k2) + k1 + k2))


def m_coeff(k, t, gamma: float, beta: float):
    """Quadratic value-function coefficient M_k(t) (Riccati solution with M_k(0) = 0)."""
    if beta <= 0 or gamma < 0:
        raise ValueError("need beta > 0 and gamma >= 0")
    ak = np.abs(np.asarray(k, dtype=float))
    return np.sqrt(gamma / beta ** 3) * ak * np.tanh(np.sqrt(gamma / beta) * ak * np.asarray(t, dtype=float))


def m_saturated(k, gamma: float, beta: float):
    return np.sqrt(gamma / beta ** 3) * np.abs(np.asarray(k, dtype=float))


class PairTable:
    """Index bookkeeping for interaction pairs k1 + k2 = k, 1 <= k <= m, k1, k2 in +-1..+-m.

    Unordered pairs are stored once with k1 >= k2; ``ordered_*`` arrays list
    every ordered pair together with the slot of its stored representative.
    """

    def __init__(self, m: int):
        self.m = m
        stored = []
        for k in range(1, m + 1):
            for k1 in range(-m, m + 1):
                k2 = k - k1
                if k1 == 0 or k2 == 0 or abs(k2) > m or k1 < k2:
                    continue
                stored.append((k1, k2))
        self.stored = np.array(stored, dtype=int).reshape(-1, 2)
        slot = {tuple(p): i for i, p in enumerate(map(tuple, self.stored))}
        ordered = []
        for k1, k2 in self.stored:
            ordered.append((k1, k2, slot[(k1, k2)]))
            if k1 != k2:
                ordered.append((k2, k1, slot[(k1, k2)]))
        ordered = np.array(ordered, dtype=int).reshape(-1, 3)
        self.ordered_k1 = ordered[:, 0]
        self.ordered_k2 = ordered[:, 1]
        self.ordered_slot = ordered[:, 2]
        self.ordered_k = self.ordered_k1 + self.ordered_k2
        # (m, n_ordered) 0/1 matrix gathering ordered-pair products into their target mode
        self.gather = np.zeros((m, len(ordered)))
        self.gather[self.ordered_k - 1, np.arange(len(ordered))] = 1.0
        self.k1 = self.stored[:, 0]
        self.k2 = self.stored[:, 1]
        self.k = self.k1 + self.k2
        self.omega = np.array([omega_factor(a, b) for a, b in self.stored])

    def __len__(self):
        return self.stored.shape[0]

    def lookup(self, values: np.ndarray, k1: int, k2: int) -> float:
        key = (max(k1, k2), min(k1, k2))
        for i, p in enumerate(self.stored):
            if (p[0], p[1]) == key:
                return values[i]
        raise KeyError((k1, k2))

    def extend(self, a: np.ndarray) -> np.ndarray:
        """Array indexed by k + m holding a_k for k in -m..m (a_0 = 0, a_{-k} = conj a_k)."""
        m = self.m
        ext = np.zeros(2 * m + 1, dtype=complex)
        ext[m + 1:] = a
        ext[:m] = np.conj(a[::-1])
        return ext

    def quadratic_sum(self, a: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
        """sum_{k1+k2=k} w(k1,k2) a_{k1} a_{k2} for k = 1..m; w = 1 when weights is None."""
        ext = self.extend(a)
        prod = ext[self.ordered_k1 + self.m] * ext[self.ordered_k2 + self.m]
        if weights is not None:
            prod = prod * weights[self.ordered_slot]
        return self.gather @ prod


_TABLES: dict[int, PairTable] = {}


def pair_table(m: int) -> PairTable:
    if m not in _TABLES:
        _TABLES[m] = PairTable(m)
    return _TABLES[m]


@dataclass
class ClosureState:
    a: np.ndarray
    t: float = 0.0
    omega_table: Optional[np.ndarray] = None
    pairs: PairTable = field(init=False, repr=False)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=complex).ravel().copy()
        self.pairs = pair_table(self.a.shape[0])
        if self.omega_table is None:
            self.omega_table = np.zeros(len(self.pairs))
        else:
            self.omega_table = np.asarray(self.omega_table, dtype=float).copy()
            if self.omega_table.shape != (len(self.pairs),):
                raise ValueError("omega table does not match the pair layout")

    def omega(self, k1: int, k2: int) -> float:
        return self.pairs.lookup(self.omega_table, k1, k2)


def damping_coefficients(config: ClosureConfig, t: float) -> np.ndarray:
    """beta * M_k(t) = sqrt(gamma/beta)|k| tanh(sqrt(gamma/beta)|k|t); no ramp when stationary."""
    k = np.arange(1, config.m + 1)
    if config.variant == "stationary":
        return config.rate * k
    return config.rate * k * np.tanh(config.rate * k * t)


def _omega_coefficients(pairs: PairTable, config: ClosureConfig, t: float):
    """Damping D and forcing F of the Omega ODE at time t, per stored pair."""
    b = config.beta
    M1 = m_coeff(pairs.k1, t, config.gamma, b)
    M2 = m_coeff(pairs.k2, t, config.gamma, b)
    Mk = m_coeff(pairs.k, t, config.gamma, b)
    D = b * (M1 + M2 + Mk)
    F = (b / pairs.k) * (pairs.k1 * M1 + pairs.k2 * M2 - pairs.k * Mk)
    return D, F


def omega_evolution_step(state: ClosureState, config: ClosureConfig, dt: float) -> np.ndarray:
    """Advance the Omega table from state.t to state.t + dt.

    Damping and forcing are taken at the new time level:
    Omega_new = (Omega_old + dt F) / (1 + dt D).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    D, F = _omega_coefficients(state.pairs, config, state.t + dt)
    return (state.omega_table + dt * F) / (1.0 + dt * D)


def _interaction_weights(state: ClosureState, config: ClosureConfig) -> Optional[np.ndarray]:
    if config.variant == "stationary":
        return 1.0 + state.pairs.omega
    if config.variant == "nonstationary":
        return 1.0 + state.omega_table
    return None


def _rhs(a, pairs, weights, damping, linear_only):
    k = np.arange(1, pairs.m + 1)
    out = -damping * a
    if not linear_only:
        out = out - 0.5j * k * pairs.quadratic_sum(a, weights)
    return out


def closure_rhs(state: ClosureState, config: ClosureConfig) -> np.ndarray:
    """da_k/dt for k = 1..m at the state's time."""
    if state.a.shape[0] != config.m:
        raise ValueError(f"state has {state.a.shape[0]} modes, config expects {config.m}")
    return _rhs(state.a, state.pairs, _interaction_weights(state, config),
                damping_coefficients(config, state.t), config.variant == "linearized")


def reduced_energy(a: np.ndarray) -> float:
    a = np.asarray(a)
    return float(np.sum(a.real ** 2 + a.imag ** 2))


def reduced_hamiltonian(a: np.ndarray) -> float:
    """Cubic invariant of the m-mode truncation (same formula as the full model)."""
    a = np.asarray(a, dtype=complex)
    c = pair_table(a.shape[0]).quadratic_sum(a)
    return float(np.sum((np.conj(a) * c).real) / 3.0)


def integrate_closure(a0: np.ndarray, config: ClosureConfig) -> MomentSeries:
    """Co-evolve the reduced means and the Omega table; sample every observe_stride steps.

    Advection uses classical RK4 with Omega held at its value at the start of
    the step; the table is then advanced by omega_evolution_step.
    """
    a = np.asarray(a0, dtype=complex).ravel()
    if a.shape[0] != config.m:
        raise ValueError(f"a0 has {a.shape[0]} modes, config expects {config.m}")
    if not np.all(np.isfinite(a)):
        raise ValueError("a0 must be finite")
    state = ClosureState(a)
    pairs = state.pairs
    dt = config.dt
    linear_only = config.variant == "linearized"
    evolve_omega = config.variant == "nonstationary"
    times, means, es, hs = [], [], [], []

    def observe(t, a):
        times.append(t)
        means.append(a.copy())
        es.append(reduced_energy(a))
        hs.append(reduced_hamiltonian(a))

    steps = config.n_steps
    observe(0.0, state.a)
    for i in range(1, steps + 1):
        t = state.t
        w = _interaction_weights(state, config)
        if config.freeze_damping:
            d0 = dh = d1 = damping_coefficients(config, t)
        else:
            d0 = damping_coefficients(config, t)
            dh = damping_coefficients(config, t + 0.5 * dt)
            d1 = damping_coefficients(config, t + dt)
        a = state.a
        k1 = _rhs(a, pairs, w, d0, linear_only)
        k2 = _rhs(a + 0.5 * dt * k1, pairs, w, dh, linear_only)
        k3 = _rhs(a + 0.5 * dt * k2, pairs, w, dh, linear_only)
        k4 = _rhs(a + dt * k3, pairs, w, d1, linear_only)
        new_a = a + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if not np.all(np.isfinite(new_a)):
            raise BlowUpError(f"closure blew up at t={t + dt:.6g} (gamma={config.gamma})")
        if evolve_omega:
            state.omega_table = omega_evolution_step(state, config, dt)
        state.a = new_a
        state.t = i * dt
        if i % config.observe_stride == 0 or i == steps:
            observe(state.t, state.a)
    return MomentSeries(np.asarray(times), np.asarray(means), np.asarray(es), np.asarray(hs))


def omega_history(config: ClosureConfig, t_end: float, dt: Optional[float] = None):
    """Omega table sampled at every step of its own evolution from zero (no advection needed)."""
    dt = config.dt if dt is None else dt
    state = ClosureState(np.zeros(config.m, dtype=complex))
    steps = int(round(t_end / dt))
    ts = [0.0]
    table = [state.omega_table.copy()]
    for i in range(1, steps + 1):
        state.omega_table = omega_evolution_step(state, config, dt)
        state.t = i * dt
        ts.append(state.t)
        table.append(state.omega_table.copy())
    return np.asarray(ts), np.asarray(table), state.pairs


def omega_saturation_estimate(k1: int, k2: int, t, gamma: float, beta: float):
    """omega(k1,k2) * (1 - exp(-sqrt(gamma/beta)(|k1|+|k2|+k1+k2) t))."""
    rate = np.sqrt(gamma / beta) * (abs(k1) + abs(k2) + k1 + k2)
    return omega_factor(k1, k2) * (1.0 - np.exp(-rate * np.asarray(t, dtype=float)))


@dataclass
class ValueFunctionCoeffs:
    """Taylor coefficients of the stationary value function v(lambda).

    v = sum_k M_k |lambda_k|^2 + sum_{k1,k2,k3} N_{k1k2k3} lambda_k1 lambda_k2 lambda_k3
    with lambda_{-k} = conj(lambda_k) and indices over +-1..+-m.
    """

    M: np.ndarray
    N: dict
    beta: float
    gamma: float

    @property
    def m(self) -> int:
        return self.M.shape[0]

    def n_coeff(self, k1: int, k2: int, k3: int) -> complex:
        return self.N.get((k1, k2, k3), 0j)

    def value(self, lam: np.ndarray) -> float:
        lam = np.asarray(lam, dtype=complex)
        ext = pair_table(self.m).extend(lam)
        m = self.m
        quad = np.sum(self.M * np.abs(lam) ** 2)
        cubic = sum(c * ext[a + m] * ext[b + m] * ext[d + m] for (a, b, d), c in self.N.items())
        return float(quad + np.real(cubic))

    def conj_gradient(self, lam: np.ndarray) -> np.ndarray:
        """dv/d(conj lambda_k) = M_k lambda_k + 3 sum_{k1+k2=k} N_{k1,k2,-k} lambda_k1 lambda_k2."""
        lam = np.asarray(lam, dtype=complex)
        pairs = pair_table(self.m)
        w = np.array([self.n_coeff(int(a), int(b), -int(a + b)) for a, b in pairs.stored])
        ext = pairs.extend(lam)
        prod = ext[pairs.ordered_k1 + self.m] * ext[pairs.ordered_k2 + self.m] * w[pairs.ordered_slot]
        return self.M * lam + 3.0 * (pairs.gather @ prod)


def value_coeffs(gamma: float, beta: float, m: int) -> ValueFunctionCoeffs:
    """M_k = sqrt(gamma/beta^3)|k| and N on zero-sum triples from the cubic Hamilton-Jacobi balance."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    M = m_saturated(np.arange(1, m + 1), gamma, beta)
    idx = [j for j in range(-m, m + 1) if j != 0]
    N = {}
    for k1, k2, k3 in itertools.product(idx, repeat=3):
        if k1 + k2 + k3 != 0:
            continue
        num = k1 * abs(k1) + k2 * abs(k2) + k3 * abs(k3)
        N[(k1, k2, k3)] = 1j / (6.0 * beta ** 2) * num / (abs(k1) + abs(k2) + abs(k3))
    return ValueFunctionCoeffs(M, N, beta, gamma)


def hj_hamiltonian(lam: np.ndarray, mu: np.ndarray, gamma: float, beta: float) -> float:
    """sum_k beta|mu_k|^2 - gamma k^2 |lambda_k|^2 / beta^2 + (i/2beta) sum_{k1+k2+k3=0} k3 lambda lambda mu_k3."""
    lam = np.asarray(lam, dtype=complex)
    mu = np.asarray(mu, dtype=complex)
    m = lam.shape[0]
    k = np.arange(1, m + 1)
    pairs = pair_table(m)
    # sum over k3 = -k of k3 * mu_{k3} * c_k, plus the conjugate half (k3 = +k)
    c = pairs.quadratic_sum(lam)
    cubic = np.sum(-k * np.conj(mu) * c) + np.sum(k * mu * np.conj(c))
    out = np.sum(beta * np.abs(mu) ** 2 - gamma / beta ** 2 * k ** 2 * np.abs(lam) ** 2) \
        + (0.5j / beta) * cubic
    return float(np.real(out))


def entropy(a: np.ndarray, beta: float) -> float:
    """s = -(beta/2) sum_{k=-m..m} |a_k|^2."""
    a = np.asarray(a)
    return float(-beta * np.sum(a.real ** 2 + a.imag ** 2))


def cost_function(a: np.ndarray, adot: np.ndarray, gamma: float, beta: float) -> float:
    """Lack-of-fit rate L with lambda = beta a.

    L = sum_k (1/beta)|lambda_dot_k + (ik/2beta) sum lambda lambda|^2 + (gamma k^2/beta^2)|lambda_k|^2,
    which in mean variables reads beta|adot_k + (ik/2) sum a a|^2 + gamma k^2 |a_k|^2.
    """
    a = np.asarray(a, dtype=complex).ravel()
    adot = np.asarray(adot, dtype=complex).ravel()
    if a.shape != adot.shape:
        raise ValueError("a and adot must have equal length")
    m = a.shape[0]
    k = np.arange(1, m + 1)
    resolved = adot + 0.5j * k * pair_table(m).quadratic_sum(a)
    return float(np.sum(beta * np.abs(resolved) ** 2 + gamma * k ** 2 * np.abs(a) ** 2))
