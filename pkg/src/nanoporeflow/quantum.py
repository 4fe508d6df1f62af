"""Quantum-statistical calculators: relativistic matter waves, beat
superposition, dispersion relations, 2D momentum-mode quantization,
Bose-Einstein occupations with chemical-potential solving, and a truncated
ladder-operator sandbox.

All functions are pure; CODATA constants are module-level and immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# CODATA 2018 exact values
H = 6.62607015e-34       # Planck constant [J s]
HBAR = H / (2.0 * math.pi)
C = 299792458.0          # speed of light [m/s]
K_B = 1.380649e-23       # Boltzmann constant [J/K]


class DomainError(ValueError):
    """Input outside the mathematical domain of the formula."""


class AmplitudeMismatch(ValueError):
    """Superposed waves must share one amplitude."""


class InsufficientSamples(ValueError):
    """Dispersion tables need at least 3 strictly increasing samples."""


class ConvergenceError(RuntimeError):
    pass


def relativistic_energy(p: float, E0: float) -> float:
    """Total energy E = sqrt(p^2 c^2 + E0^2)."""
    if E0 < 0:
        raise DomainError("rest energy must be >= 0")
    return math.hypot(p * C, E0)


def de_broglie_wavelength(k_e: float, E0: float) -> float:
    """Matter wavelength lambda = h c / sqrt(k_e^2 + 2 k_e E0).

    Equivalent to h/p with p recovered from E = k_e + E0; the radicand
    vanishes at k_e = 0, so non-positive kinetic energy is a domain error.
    """
    if k_e <= 0:
        raise DomainError("kinetic energy must be > 0")
    if E0 < 0:
        raise DomainError("rest energy must be >= 0")
    return H * C / math.sqrt(k_e * k_e + 2.0 * k_e * E0)


@dataclass(frozen=True)
class Wave:
    B: float       # amplitude
    omega: float   # angular frequency [rad/s]
    k: float       # wave number [rad/m]

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be >= 0")


@dataclass(frozen=True)
class BeatDecomposition:
    """y = 2B cos(envelope_phase) cos(carrier_phase) with half-difference
    envelope and mean carrier."""

    displacement: float
    envelope_phase: float   # (omega1-omega2)/2 * t - (k1-k2)/2 * x
    carrier_phase: float    # mean(omega) * t - mean(k) * x
    envelope: float
    carrier: float
    product_value: float


def superpose_waves(w1: Wave, w2: Wave, x: float, t: float) -> BeatDecomposition:
    """Equal-amplitude two-wave superposition and its beat decomposition.

    The direct cosine sum and the product form 2B cos(d_omega t - d_k x)
    cos(mean_omega t - mean_k x) agree identically (trig identity) when the
    deltas are half-differences.
    """
    if w1.B != w2.B:
        raise AmplitudeMismatch(f"amplitudes differ: {w1.B} vs {w2.B}")
    B = w1.B
    direct = B * (math.cos(w1.omega * t - w1.k * x)
                  + math.cos(w2.omega * t - w2.k * x))
    d_omega = 0.5 * (w1.omega - w2.omega)
    d_k = 0.5 * (w1.k - w2.k)
    m_omega = 0.5 * (w1.omega + w2.omega)
    m_k = 0.5 * (w1.k + w2.k)
    env_phase = d_omega * t - d_k * x
    car_phase = m_omega * t - m_k * x
    envelope = 2.0 * B * math.cos(env_phase)
    carrier = math.cos(car_phase)
    return BeatDecomposition(displacement=direct, envelope_phase=env_phase,
                             carrier_phase=car_phase, envelope=envelope,
                             carrier=carrier, product_value=envelope * carrier)


def _check_samples(x: np.ndarray) -> None:
    if x.size < 3:
        raise InsufficientSamples("need at least 3 samples")
    if np.any(np.diff(x) <= 0):
        raise InsufficientSamples("abscissae must be strictly increasing")
    if np.any(x <= 0):
        raise InsufficientSamples("abscissae must be positive")


def group_velocity_from_k(k, v_p) -> np.ndarray:
    """v_g = v_p + k dv_p/dk (2nd-order centered, one-sided at the ends)."""
    k = np.asarray(k, dtype=float)
    v_p = np.asarray(v_p, dtype=float)
    _check_samples(k)
    dvp = np.gradient(v_p, k, edge_order=2)
    return v_p + k * dvp


def group_velocity_from_lambda(lam, v_p) -> np.ndarray:
    """v_g = v_p - lambda dv_p/dlambda; consistent with the k form under
    lambda = 2 pi / k."""
    lam = np.asarray(lam, dtype=float)
    v_p = np.asarray(v_p, dtype=float)
    _check_samples(lam)
    dvp = np.gradient(v_p, lam, edge_order=2)
    return v_p - lam * dvp


@dataclass(frozen=True)
class ModeGrid2D:
    """Plane-wave modes of a 2D box: k components 0, +-2pi/L, ... +-2pi n/L."""

    L: float
    n_max: int
    m: float
    kx: np.ndarray        # flattened, len (2 n_max + 1)^2
    ky: np.ndarray
    energies: np.ndarray  # hbar^2 |k|^2 / 2m, same order as kx/ky

    @property
    def mode_count(self) -> int:
        return self.kx.size

    @property
    def epsilon_min(self) -> float:
        return float(np.min(self.energies))

    def sorted_spectrum(self) -> np.ndarray:
        return np.sort(self.energies)


def build_mode_grid(L: float, n_max: int, m: float) -> ModeGrid2D:
    if L <= 0 or m <= 0:
        raise ValueError("L and m must be positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = np.arange(-n_max, n_max + 1)
    KX, KY = np.meshgrid(2.0 * np.pi * n / L, 2.0 * np.pi * n / L)
    kx = KX.ravel()
    ky = KY.ravel()
    energies = HBAR ** 2 * (kx ** 2 + ky ** 2) / (2.0 * m)
    return ModeGrid2D(L=L, n_max=n_max, m=m, kx=kx, ky=ky, energies=energies)


def be_occupation(epsilon, Q: float, T: float):
    """Bose-Einstein occupation n = 1 / (exp((eps - Q)/kT) - 1), Q < eps."""
    if T <= 0:
        raise DomainError("temperature must be > 0")
    eps = np.asarray(epsilon, dtype=float)
    if np.any(Q >= eps):
        raise DomainError("chemical potential must be strictly below every level")
    out = 1.0 / np.expm1((eps - Q) / (K_B * T))
    if np.ndim(epsilon) == 0:
        return float(out)
    return out


def _total_occupation(grid: ModeGrid2D, Q: float, T: float) -> float:
    return float(np.sum(be_occupation(grid.energies, Q, T)))


def solve_chemical_potential(grid: ModeGrid2D, N_target: float, T: float,
                             rel_tol: float = 1e-9, max_iter: int = 500) -> float:
    """Bisect Q in (-inf, eps_min) until the summed occupation hits N_target.

    Total occupation is strictly increasing in Q, so the solution is unique.
    """
    if N_target <= 0:
        raise DomainError("target particle number must be > 0")
    if T <= 0:
        raise DomainError("temperature must be > 0")
    eps_min = grid.epsilon_min
    kt = K_B * T

    # Expand toward -inf until occupation is below target.
    lo = eps_min - kt
    for _ in range(200):
        if _total_occupation(grid, lo, T) < N_target:
            break
        lo = eps_min - 2.0 * (eps_min - lo)
    # Shrink toward eps_min until occupation exceeds target (ground-state
    # occupation diverges at the boundary, so this always succeeds).
    hi = eps_min - kt
    for _ in range(2000):
        if _total_occupation(grid, hi, T) > N_target:
            break
        hi = eps_min - 0.5 * (eps_min - hi)

    Q = 0.5 * (lo + hi)
    for _ in range(max_iter):
        n = _total_occupation(grid, Q, T)
        if abs(n - N_target) <= rel_tol * N_target:
            return Q
        if n > N_target:
            hi = Q
        else:
            lo = Q
        Q = 0.5 * (lo + hi)
    raise ConvergenceError(
        f"chemical potential bisection did not reach {rel_tol:.1e} in {max_iter} steps")


def condensate_fraction(grid: ModeGrid2D, N_target: float, T: float) -> float:
    """Ground-mode occupation share n0 / sum(n) at the solved potential."""
    Q = solve_chemical_potential(grid, N_target, T)
    n = be_occupation(grid.energies, Q, T)
    ground = n[np.argmin(grid.energies)]
    return float(ground / np.sum(n))


@dataclass(frozen=True)
class FockSpace:
    """Truncated number-state realization of the ladder operators.

    a annihilates (a|0> = 0), a_dag creates up to the truncation level; the
    commutator [a, a_dag] is the identity except the last diagonal entry,
    which is -n_max (truncation artifact).
    """

    n_max: int
    a: np.ndarray
    a_dag: np.ndarray

    @property
    def number_operator(self) -> np.ndarray:
        """diag(0..n_max): the closed form of a_dag @ a.

        Built analytically so eigenvalues are exact integers; the float
        matrix product sqrt(n)*sqrt(n) differs by one ulp for some n.
        """
        return np.diag(np.arange(self.n_max + 1, dtype=float))

    @property
    def commutator(self) -> np.ndarray:
        """diag(1, ..., 1, -n_max): the closed form of [a, a_dag].

        The -n_max corner is the truncation artifact of the finite basis.
        """
        d = np.ones(self.n_max + 1)
        d[-1] = -float(self.n_max)
        return np.diag(d)

    def ket(self, n: int) -> np.ndarray:
        if not 0 <= n <= self.n_max:
            raise ValueError(f"level {n} outside 0..{self.n_max}")
        vec = np.zeros(self.n_max + 1)
        vec[n] = 1.0
        return vec


def ladder_operators(n_max: int) -> FockSpace:
    """Matrices a[n-1, n] = sqrt(n) on the (n_max+1)-dimensional number basis."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    a = np.zeros((n_max + 1, n_max + 1))
    for n in range(1, n_max + 1):
        a[n - 1, n] = math.sqrt(n)
    return FockSpace(n_max=n_max, a=a, a_dag=a.T.copy())
