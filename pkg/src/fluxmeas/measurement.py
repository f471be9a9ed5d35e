"""Impulsive Gaussian flux measurements on states in a truncated eigenbasis.

A measurement with outcome ``phi0`` and instrumental error ``delta_phi`` acts
as the operator  w = exp(-(phi - phi0)^2 / (2 delta_phi^2)).  States are not
renormalised by the collapse: the squared norm carries the (unnormalised)
probability weight of the recorded outcomes.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, TruncationWarning
from .spectral import EigenBasis


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Complex coefficients over an eigenbasis.

    ``leakage`` records the fraction of norm lost when the state was
    projected into the truncated basis (zero for states built in the basis).
    """

    basis: EigenBasis
    coeffs: np.ndarray
    time_tag: float = 0.0
    leakage: float = 0.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (self.basis.n_states,):
            raise ContractViolation(
                f"expected {self.basis.n_states} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ContractViolation("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def eigenstate(cls, basis: EigenBasis, index: int) -> "QuantumState":
        """The ``index``-th eigenstate (1-based)."""
        c = np.zeros(basis.n_states, dtype=complex)
        c[index - 1] = 1.0
        return cls(basis, c)

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.coeffs, self.coeffs).real)

    def normalized(self) -> "QuantumState":
        n2 = self.norm2
        if n2 <= 0:
            raise ContractViolation("cannot normalise a zero state")
        return QuantumState(self.basis, self.coeffs / math.sqrt(n2), self.time_tag, self.leakage)

    def wavefunction(self) -> np.ndarray:
        """Samples of psi(phi) on the basis grid."""
        return self.coeffs @ self.basis.wavefunctions

    def density_matrix(self) -> np.ndarray:
        return np.outer(self.coeffs, self.coeffs.conj())


@dataclass(frozen=True, eq=False)
class CollapseKernel:
    """Matrix of the Gaussian collapse operator in an eigenbasis."""

    basis: EigenBasis
    phi: float
    delta_phi: float
    matrix: np.ndarray = field(repr=False)


def gaussian_packet(basis: EigenBasis, center: float, sigma: float,
                    warn: bool = True) -> QuantumState:
    """Normalised Gaussian packet exp(-(phi - center)^2 / (4 sigma^2)) in ``basis``.

    The projection is renormalised inside the captured subspace; the lost
    fraction is stored as ``leakage`` and a ``TruncationWarning`` is issued
    above 1 %.
    """
    if not sigma > 0:
        raise ContractViolation("sigma must be positive")
    grid = basis.grid
    if not grid.phi_min <= center <= grid.phi_max:
        raise ContractViolation("packet centre must lie inside the grid")
    x = grid.points
    g = np.exp(-(x - center) ** 2 / (4 * sigma ** 2))
    total = float(np.sum(grid.weights * g * g))
    c = basis.project(g)
    captured = float(np.sum(c * c))
    leakage = max(0.0, 1.0 - captured / total)
    if warn and leakage > 0.01:
        warnings.warn(f"packet leaks {leakage:.3%} of its norm outside the basis",
                      TruncationWarning, stacklevel=2)
    return QuantumState(basis, c / math.sqrt(captured), 0.0, leakage)


def _gaussian_weight_matrix(basis: EigenBasis, profile: np.ndarray) -> np.ndarray:
    psi = basis.wavefunctions
    m = (psi * (basis.grid.weights * profile)) @ psi.T
    return 0.5 * (m + m.T)


def collapse_matrix(basis: EigenBasis, phi: float, delta_phi: float) -> CollapseKernel:
    """W_ij = int psi_i(x) exp(-(x - phi)^2 / (2 delta_phi^2)) psi_j(x) dx (trapezoid).

    Kernels are memoised on the basis; populating the cache is idempotent.
    """
    if not delta_phi > 0:
        raise ContractViolation("delta_phi must be positive")
    key = ("collapse", float(phi), float(delta_phi))
    kernel = basis.cache.get(key)
    if kernel is None:
        x = basis.grid.points
        if math.isinf(delta_phi):
            profile = np.ones_like(x)
        else:
            profile = np.exp(-(x - phi) ** 2 / (2 * delta_phi ** 2))
        w = _gaussian_weight_matrix(basis, profile)
        w.setflags(write=False)
        kernel = CollapseKernel(basis, float(phi), float(delta_phi), w)
        basis.cache[key] = kernel
    return kernel


def squared_collapse_matrix(basis: EigenBasis, phi: float, delta_phi: float) -> np.ndarray:
    """Matrix of w^2 evaluated on the grid, i.e. without truncating between the factors."""
    key = ("collapse2", float(phi), float(delta_phi))
    m = basis.cache.get(key)
    if m is None:
        x = basis.grid.points
        m = _gaussian_weight_matrix(basis, np.exp(-(x - phi) ** 2 / delta_phi ** 2))
        m.setflags(write=False)
        basis.cache[key] = m
    return m


def apply_collapse(state: QuantumState, kernel: CollapseKernel) -> QuantumState:
    """coeffs <- W coeffs; the norm is left unnormalised."""
    if kernel.basis is not state.basis:
        raise ContractViolation("kernel and state are built on different bases")
    return QuantumState(state.basis, kernel.matrix @ state.coeffs, state.time_tag, state.leakage)


def collapse_leakage(state: QuantumState, kernel: CollapseKernel) -> float:
    """Fraction of ||w psi||^2 that the truncated kernel drops."""
    exact = float(np.real(np.vdot(state.coeffs,
                                  squared_collapse_matrix(state.basis, kernel.phi,
                                                          kernel.delta_phi) @ state.coeffs)))
    kept = float(np.sum(np.abs(kernel.matrix @ state.coeffs) ** 2))
    if exact <= 0:
        return 0.0
    return max(0.0, 1.0 - kept / exact)


def free_evolve(state: QuantumState, dt: float) -> QuantumState:
    """c_j <- c_j exp(-i E_j dt) (hbar = 1)."""
    if not dt >= 0:
        raise ContractViolation("dt must be non-negative")
    if dt == 0:
        return state
    phases = np.exp(-1j * state.basis.energies * dt)
    return QuantumState(state.basis, phases * state.coeffs, state.time_tag + dt, state.leakage)


@dataclass(frozen=True)
class Measure:
    """Impulsive measurement with a recorded outcome."""

    at: float
    outcome: float
    delta_phi: float


@dataclass(frozen=True)
class SignMeasure:
    """Measurement whose outcome is only known to lie in a half-line.

    ``sign`` is +1 (outcome above threshold), -1 (below) or 0 (outcome not
    recorded; the whole line).
    """

    at: float
    sign: int
    delta_phi: float

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ContractViolation("sign must be -1, 0 or +1")

    @property
    def label(self) -> str:
        return {1: "+", -1: "-", 0: "*"}[self.sign]


@dataclass(frozen=True)
class SequenceSpec:
    """Time-ordered measurement events."""

    events: tuple

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        times = [e.at for e in events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ContractViolation("event times must be strictly increasing")
        for e in events:
            if not e.delta_phi > 0:
                raise ContractViolation("every event needs delta_phi > 0")

    def __len__(self):
        return len(self.events)

    @classmethod
    def identical_outcomes(cls, n_events: int, outcome: float, delta_phi: float, dt: float,
                           start: float = 0.0, final_outcome: float | None = None) -> "SequenceSpec":
        """``n_events`` equally spaced measurements, all returning ``outcome``.

        ``final_outcome`` replaces the last outcome when given.
        """
        if n_events < 1:
            raise ContractViolation("need at least one event")
        if not dt > 0 and n_events > 1:
            raise ContractViolation("quiescent time must be positive")
        events = [Measure(start + k * dt, outcome, delta_phi) for k in range(n_events)]
        if final_outcome is not None:
            events[-1] = Measure(events[-1].at, final_outcome, delta_phi)
        return cls(tuple(events))

    @property
    def binned(self) -> bool:
        return any(isinstance(e, SignMeasure) for e in self.events)


@dataclass(frozen=True)
class SequenceResult:
    final: QuantumState
    weight: float
    leakage: float


def run_sequence(state0: QuantumState, seq: SequenceSpec) -> SequenceResult:
    """Alternate free evolution and collapse through every event of ``seq``.

    ``weight`` is the squared norm of the final unnormalised state and
    ``leakage`` the largest per-event truncation loss.
    """
    if seq.binned:
        raise ContractViolation("run_sequence needs concrete outcomes; use correlation_probability")
    state = state0
    worst = 0.0
    for event in seq.events:
        if event.at < state.time_tag - 1e-12 * max(1.0, abs(event.at)):
            raise ContractViolation(f"event at t={event.at} precedes the state time {state.time_tag}")
        state = free_evolve(state, max(0.0, event.at - state.time_tag))
        kernel = collapse_matrix(state.basis, event.outcome, event.delta_phi)
        worst = max(worst, collapse_leakage(state, kernel))
        state = apply_collapse(state, kernel)
    return SequenceResult(state, state.norm2, worst)


def transfer_matrix(basis: EigenBasis, phi0: float, phi_final: float, dt: float,
                    n: int, delta_phi: float) -> np.ndarray:
    """B = W(phi_final) (D W(phi0))^n with D = diag(exp(-i E_j dt)).

    This is the matrix mapping the initial coefficients onto the state after
    n + 1 collapses (n at ``phi0``, the last at ``phi_final``) separated by
    ``dt``.  The intermediate sums run over the ``basis.n_states`` retained
    levels only.
    """
    if n < 1:
        raise ContractViolation("n must be at least 1")
    w0 = collapse_matrix(basis, phi0, delta_phi).matrix
    wn = collapse_matrix(basis, phi_final, delta_phi).matrix
    d = np.exp(-1j * basis.energies * dt)
    step = d[:, None] * w0
    return wn @ np.linalg.matrix_power(step, n)
