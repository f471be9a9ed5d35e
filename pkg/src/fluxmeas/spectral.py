"""Eigenbases of the bistable flux potentials.

Two model potentials are supported: a hard-wall box of half width ``half_width``
with a delta barrier at the centre, and the quartic double well
``V(phi) = -mu/2 phi^2 + lam/4 phi^4``.  The Hamiltonian in code units
(hbar = 1) is ``H = -kappa d^2/dphi^2 + V(phi)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate, linalg, optimize

from .errors import (
    AccuracyWarning,
    ContractViolation,
    DegenerateError,
    OrthogonalTrialError,
    OutOfDomainError,
    SolverFailure,
    StagnationWarning,
)

DEFAULT_N_STATES = 32
DEGENERACY_FLOOR = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [phi_min, phi_max] including both end points."""

    n_points: int
    phi_min: float
    phi_max: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise ContractViolation(f"n_points must be an integer >= 3, got {self.n_points}")
        if not (math.isfinite(self.phi_min) and math.isfinite(self.phi_max)):
            raise ContractViolation("grid bounds must be finite")
        if self.phi_max <= self.phi_min:
            raise ContractViolation("phi_max must exceed phi_min")

    @property
    def spacing(self) -> float:
        return (self.phi_max - self.phi_min) / (self.n_points - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.phi_min, self.phi_max, self.n_points)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        w = np.full(self.n_points, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    def inner(self, f, g) -> complex:
        """Trapezoid inner product <f|g>."""
        return np.sum(self.weights * np.conj(f) * g)

    def refined(self, factor: int) -> "Grid":
        return Grid((self.n_points - 1) * factor + 1, self.phi_min, self.phi_max)

    @property
    def is_symmetric(self) -> bool:
        return abs(self.phi_min + self.phi_max) <= 1e-12 * (self.phi_max - self.phi_min)


@dataclass(frozen=True)
class DeltaBarrierWell:
    """Box on [-half_width, half_width] with V0*delta(phi) at the centre."""

    half_width: float = 1.0
    barrier_strength: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if not self.half_width > 0:
            raise ContractViolation("half_width must be positive")
        if not self.barrier_strength >= 0:
            raise ContractViolation("barrier_strength must be non-negative")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ContractViolation("kappa must be positive")

    @property
    def kind(self) -> str:
        return "delta"

    @property
    def well_center(self) -> float:
        """Middle of the right half-well."""
        return 0.5 * self.half_width


@dataclass(frozen=True)
class QuarticDoubleWell:
    """V(phi) = -mu/2 phi^2 + lam/4 phi^4; barrier top at V = 0."""

    mu: float
    lam: float
    kappa: float = 1.0

    def __post_init__(self):
        for name in ("mu", "lam", "kappa"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ContractViolation(f"{name} must be positive and finite")

    @property
    def kind(self) -> str:
        return "quartic"

    @property
    def well_center(self) -> float:
        """Location of the right minimum, sqrt(mu/lam)."""
        return math.sqrt(self.mu / self.lam)

    @property
    def barrier_height(self) -> float:
        """Height of the central barrier above the well minima."""
        return self.mu ** 2 / (4 * self.lam)

    @property
    def minimum_energy(self) -> float:
        return -self.barrier_height


PotentialSpec = Union[DeltaBarrierWell, QuarticDoubleWell]


def evaluate_potential(spec: PotentialSpec, phi):
    """Potential energy at ``phi``.

    For the delta well only the flat box interior is returned; the delta
    term is never evaluated pointwise.
    """
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise OutOfDomainError("phi must be finite")
    if isinstance(spec, QuarticDoubleWell):
        out = -0.5 * spec.mu * phi ** 2 + 0.25 * spec.lam * phi ** 4
    elif isinstance(spec, DeltaBarrierWell):
        if np.any(np.abs(phi) > spec.half_width):
            raise OutOfDomainError(
                f"phi outside the box [-{spec.half_width}, {spec.half_width}]")
        out = np.zeros_like(phi)
    else:
        raise ContractViolation(f"unknown potential {spec!r}")
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Truncated orthonormal eigenbasis sampled on a grid.

    ``wavefunctions`` has shape (n_states, n_points).  Instances are treated
    as immutable; ``cache`` only memoises derived matrices.
    """

    spec: PotentialSpec
    grid: Grid
    energies: np.ndarray
    wavefunctions: np.ndarray
    method: str = "grid"
    diagnostics: tuple = ()
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.energies.setflags(write=False)
        self.wavefunctions.setflags(write=False)

    def __getstate__(self):
        state = {k: getattr(self, k) for k in
                 ("spec", "grid", "energies", "wavefunctions", "method", "diagnostics")}
        return state

    def __setstate__(self, state):
        for k, v in state.items():
            object.__setattr__(self, k, v)
        object.__setattr__(self, "cache", {})

    @property
    def n_states(self) -> int:
        return len(self.energies)

    @property
    def kappa(self) -> float:
        return self.spec.kappa

    def gram(self) -> np.ndarray:
        w = self.grid.weights
        return (self.wavefunctions * w) @ self.wavefunctions.T

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.gram() - np.eye(self.n_states))))

    def parities(self) -> np.ndarray:
        """+1 for even, -1 for odd eigenfunctions (grid must be symmetric)."""
        psi = self.wavefunctions
        even = np.linalg.norm(psi + psi[:, ::-1], axis=1)
        odd = np.linalg.norm(psi - psi[:, ::-1], axis=1)
        return np.where(even >= odd, 1, -1)

    def sub_barrier_count(self) -> int:
        """Number of levels strictly below the central barrier top.

        Only meaningful for the quartic well, whose barrier top sits at E = 0.
        """
        if not isinstance(self.spec, QuarticDoubleWell):
            raise ContractViolation("sub-barrier count is defined for the quartic well only")
        return int(np.sum(self.energies < 0.0))

    def project(self, values) -> np.ndarray:
        """Coefficients <psi_j|f> of grid samples ``values``."""
        return self.wavefunctions @ (self.grid.weights * np.asarray(values))


def _fix_signs(psi: np.ndarray, rel: float = 1e-6) -> np.ndarray:
    """Make the leftmost non-negligible lobe of every row positive."""
    for row in psi:
        amp = np.max(np.abs(row))
        idx = np.flatnonzero(np.abs(row) > rel * amp)
        if idx.size and row[idx[0]] < 0:
            row *= -1
    return psi


def _lowdin(psi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Symmetric orthonormalisation under the trapezoid inner product."""
    s = (psi * weights) @ psi.T
    vals, vecs = np.linalg.eigh(s)
    s_inv_half = (vecs / np.sqrt(vals)) @ vecs.T
    return s_inv_half @ psi


def default_grid(spec: PotentialSpec, n_states: int = DEFAULT_N_STATES,
                 n_points: int = 2049, span: float | None = None) -> Grid:
    """A grid suited to ``spec``.

    For the box this is exactly [-half_width, half_width].  For the quartic
    well the half-span is chosen so that the potential at the edge exceeds a
    generous WKB-style estimate of the highest requested level.
    """
    if isinstance(spec, DeltaBarrierWell):
        return Grid(n_points, -spec.half_width, spec.half_width)
    if span is None:
        span = _quartic_span(spec, n_states)
    return Grid(n_points, -span, span)


def _quartic_span(spec: QuarticDoubleWell, n_states: int) -> float:
    # Pure quartic semiclassics: E_n ~ c (n+1/2)^{4/3} (kappa^2 lam)^{1/3}; the
    # constant 1.38 is a slight overestimate for the symmetric double well.
    e_max = 1.38 * (n_states + 0.5) ** (4 / 3) * (spec.kappa ** 2 * spec.lam) ** (1 / 3)
    e_max = max(e_max, 0.0) + spec.barrier_height
    # edge where V exceeds e_max by a decay margin of several local wavelengths
    phi = math.sqrt(spec.mu / spec.lam)
    while evaluate_potential(spec, phi) < e_max:
        phi *= 1.05
    return 1.6 * phi


def solve_delta_well(spec: DeltaBarrierWell, n_states: int = DEFAULT_N_STATES,
                     grid: Grid | None = None, n_points: int = 2049) -> EigenBasis:
    """Analytic eigenpairs of the box with a central delta barrier.

    Odd levels sit at k = n pi / a.  Even levels solve
    2 kappa k cos(k a) + V0 sin(k a) = 0 on ((n - 1/2) pi / a, n pi / a],
    which is the derivative-jump condition psi'(0+) - psi'(0-) = V0 psi(0) / kappa.
    Energies are kappa k^2.
    """
    a = spec.half_width
    kap = spec.kappa
    v0 = spec.barrier_strength
    if grid is None:
        grid = default_grid(spec, n_states, n_points)
    if abs(grid.phi_min + a) > 1e-12 * a or abs(grid.phi_max - a) > 1e-12 * a:
        raise ContractViolation("grid must span exactly [-half_width, half_width]")
    if grid.n_points % 2 == 0:
        raise ContractViolation("grid needs an odd number of points so phi = 0 is a node")

    def matching(k):
        if math.isinf(v0):
            return math.sin(k * a)
        return 2 * kap * k * math.cos(k * a) + v0 * math.sin(k * a)

    ks, parity = [], []
    n_doublets = (n_states + 1) // 2
    for n in range(1, n_doublets + 1):
        lo, hi = (n - 0.5) * math.pi / a, n * math.pi / a
        f_lo, f_hi = matching(lo), matching(hi)
        if math.isinf(v0):
            # impenetrable barrier: the even level joins its odd partner
            k_even = hi
        elif abs(f_lo) <= 1e-13 * (2 * kap * lo + v0):
            k_even = lo
        elif abs(f_hi) <= 1e-13 * (2 * kap * hi + v0):
            k_even = hi
        elif np.sign(f_lo) == np.sign(f_hi):
            raise SolverFailure(
                f"even level {n}: no sign change on bracket [{lo}, {hi}] "
                f"(f={f_lo:.3e}, {f_hi:.3e})")
        else:
            k_even = optimize.brentq(matching, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        resid = 0.0 if math.isinf(v0) else abs(matching(k_even)) / (2 * kap * k_even + v0)
        if resid > 1e-12:
            raise SolverFailure(f"even level {n}: residual {resid:.3e} above 1e-12")
        ks += [k_even, hi]
        parity += [1, -1]
    ks = np.array(ks[:n_states])
    parity = np.array(parity[:n_states])
    energies = kap * ks ** 2

    x = grid.points
    psi = np.empty((n_states, grid.n_points))
    for i, (k, p) in enumerate(zip(ks, parity)):
        if p > 0:
            psi[i] = np.sin(k * (a - np.abs(x)))
        else:
            psi[i] = np.sin(k * x)
    psi[:, 0] = psi[:, -1] = 0.0
    # the sampled analytic functions are orthogonal only up to O(h^2) under the
    # trapezoid rule; a symmetric orthonormalisation removes that residue
    psi /= np.sqrt((psi ** 2) @ grid.weights)[:, None]
    psi = _lowdin(psi, grid.weights)
    psi = _fix_signs(psi)
    order = np.argsort(energies, kind="stable")
    return EigenBasis(spec, grid, energies[order], psi[order].copy(), method="analytic")


def _grid_hamiltonian(spec: PotentialSpec, grid: Grid):
    """Diagonal and off-diagonal of the interior finite-difference Hamiltonian."""
    h = grid.spacing
    x = grid.points
    if isinstance(spec, DeltaBarrierWell):
        if grid.n_points % 2 == 0:
            raise ContractViolation("grid needs an odd number of points so phi = 0 is a node")
        if abs(grid.phi_min + spec.half_width) > 1e-12 or abs(grid.phi_max - spec.half_width) > 1e-12:
            raise ContractViolation("grid must span exactly [-half_width, half_width]")
        v = np.zeros(grid.n_points)
        v[grid.n_points // 2] = spec.barrier_strength / h
    else:
        v = evaluate_potential(spec, x)
    diag = 2 * spec.kappa / h ** 2 + v[1:-1]
    off = np.full(grid.n_points - 3, -spec.kappa / h ** 2)
    return diag, off, v


def solve_on_grid(spec: PotentialSpec, grid: Grid | None = None,
                  n_states: int = DEFAULT_N_STATES, n_points: int = 2049) -> EigenBasis:
    """Lowest eigenpairs of the three-point finite-difference Hamiltonian.

    Dirichlet walls at the grid ends; the delta barrier is V0/h on the centre
    node.  A boundary-decay shortfall is reported as an ``AccuracyWarning``
    and recorded in ``diagnostics``.
    """
    if grid is None:
        grid = default_grid(spec, n_states, n_points)
    if not n_states < grid.n_points / 4:
        raise ContractViolation(
            f"n_states={n_states} must be below n_points/4={grid.n_points / 4:g}")
    diag, off, _ = _grid_hamiltonian(spec, grid)
    try:
        energies, vecs = linalg.eigh_tridiagonal(
            diag, off, select="i", select_range=(0, n_states - 1), lapack_driver="stemr")
    except (linalg.LinAlgError, ValueError) as exc:
        raise SolverFailure(f"tridiagonal diagonalization failed: {exc}") from exc
    psi = np.zeros((n_states, grid.n_points))
    psi[:, 1:-1] = vecs.T / math.sqrt(grid.spacing)
    psi = _fix_signs(psi)
    diagnostics = []
    if isinstance(spec, QuarticDoubleWell):
        edge = np.max(np.abs(psi[:, [1, -2]]), axis=1) / np.max(np.abs(psi), axis=1)
        worst = float(np.max(edge))
        if worst > 1e-8:
            msg = (f"eigenfunctions reach {worst:.2e} of their peak at the grid edge; "
                   "widen the grid")
            warnings.warn(msg, AccuracyWarning, stacklevel=2)
            diagnostics.append(msg)
    return EigenBasis(spec, grid, energies, psi, method="grid", diagnostics=tuple(diagnostics))


def build_basis(spec: PotentialSpec, n_states: int = DEFAULT_N_STATES,
                n_points: int = 2049, solver: str = "auto", span: float | None = None) -> EigenBasis:
    """Convenience constructor choosing the analytic solver for the box when possible."""
    grid = default_grid(spec, n_states, n_points, span)
    if solver == "auto":
        solver = "analytic" if isinstance(spec, DeltaBarrierWell) else "grid"
    if solver == "analytic":
        if not isinstance(spec, DeltaBarrierWell):
            raise ContractViolation("the analytic solver handles the delta-barrier box only")
        return solve_delta_well(spec, n_states, grid)
    if solver == "grid":
        return solve_on_grid(spec, grid, n_states)
    raise ContractViolation(f"unknown solver {solver!r}")


def _half_well_action(spec: QuarticDoubleWell, energy: float) -> float:
    """Integral of p dphi between the right-well turning points at ``energy``."""
    phi_min = spec.well_center
    outer_edge = math.sqrt(2 * spec.mu / spec.lam)

    def excess(phi):
        return energy - evaluate_potential(spec, phi)

    inner = optimize.bisect(excess, 0.0, phi_min, xtol=1e-15) if energy < 0 else 0.0
    outer = optimize.bisect(excess, phi_min, 2 * outer_edge, xtol=1e-15)
    if outer - inner <= 0:
        return 0.0

    # E - V vanishes linearly at both turning points; the algebraic weight
    # (phi - inner)^(1/2) (outer - phi)^(1/2) absorbs the square-root endpoints
    def smooth(phi):
        denom = (phi - inner) * (outer - phi)
        if denom <= 0:
            return 0.0
        return math.sqrt(max(excess(phi), 0.0) / denom)

    value, _ = integrate.quad(smooth, inner, outer, weight="alg", wvar=(0.5, 0.5),
                              epsabs=1e-13, epsrel=1e-12, limit=200)
    return value / math.sqrt(spec.kappa)


def wkb_levels(spec: PotentialSpec, n_max: int = 16) -> list[float]:
    """Bohr-Sommerfeld estimates of the sub-barrier levels, as doublets.

    Quantises one half-well with  integral p dphi = pi (n + 1/2)  between the
    turning points, p = sqrt((E - V)/kappa).  Each single-well level is
    returned twice (degenerate doublet estimate).  Levels at or above the
    barrier top E = 0 are excluded.
    """
    if not isinstance(spec, QuarticDoubleWell):
        raise ContractViolation("WKB estimates are implemented for the quartic well only")
    e_min = spec.minimum_energy
    top_action = _half_well_action(spec, 0.0)
    levels: list[float] = []
    for n in range(n_max):
        target = math.pi * (n + 0.5)
        if top_action <= target * (1 + 1e-12):
            break
        energy = optimize.brentq(lambda e: _half_well_action(spec, e) - target,
                                 e_min * (1 - 1e-14), 0.0, xtol=1e-13, rtol=1e-13)
        if not energy < 0.0:
            break
        levels += [energy, energy]
    return levels


def characteristic_time(basis: EigenBasis, i: int, j: int) -> float:
    """Reformation time 2 pi / |E_i - E_j| (1-based level indices, hbar = 1)."""
    n = basis.n_states
    if not (1 <= i <= n and 1 <= j <= n):
        raise ContractViolation(f"level indices must lie in 1..{n}")
    if i == j:
        raise DegenerateError("characteristic time needs two distinct levels")
    gap = abs(basis.energies[i - 1] - basis.energies[j - 1])
    if gap < DEGENERACY_FLOOR:
        raise DegenerateError(f"levels {i} and {j} are degenerate (gap {gap:.3e})")
    return 2 * math.pi / gap


@dataclass(frozen=True)
class RelaxationResult:
    state: "object"
    energy: float
    variance: float
    variances: tuple


def relax_eigenstate(trial, target_energy: float, energy_width: float,
                     n_iter: int = 20) -> RelaxationResult:
    """Refine ``trial`` toward the eigenstate nearest ``target_energy``.

    Each iteration applies the energy-collapse filter
    exp(-(H - E)^2 / (2 dE^2)) in the eigenbasis and renormalises.
    """
    from .measurement import QuantumState  # local import: measurement depends on this module

    if not isinstance(trial, QuantumState):
        raise ContractViolation("trial must be a QuantumState")
    if not energy_width > 0:
        raise ContractViolation("energy_width must be positive")
    energies = trial.basis.energies
    coeffs = np.array(trial.coeffs, dtype=complex)
    norm = np.linalg.norm(coeffs)
    if norm == 0:
        raise OrthogonalTrialError("trial state has zero norm")
    coeffs /= norm
    if math.isinf(energy_width):
        damp = np.ones_like(energies)
    else:
        damp = np.exp(-(energies - target_energy) ** 2 / (2 * energy_width ** 2))

    def variance(c):
        p = np.abs(c) ** 2
        mean = p @ energies
        return float(p @ (energies - mean) ** 2)

    variances = [variance(coeffs)]
    for _ in range(n_iter):
        coeffs = damp * coeffs
        norm = np.linalg.norm(coeffs)
        if norm < 1e-12:
            raise OrthogonalTrialError(
                f"filtered norm {norm:.3e} fell below 1e-12; trial has no weight near "
                f"E = {target_energy:g}")
        coeffs /= norm
        variances.append(variance(coeffs))
    floor = 1e-20 * max(1.0, float(np.max(np.abs(energies)))) ** 2
    if n_iter and variances[-1] > floor and variances[-1] >= variances[0]:
        warnings.warn("energy variance did not decrease under relaxation", StagnationWarning,
                      stacklevel=2)
    p = np.abs(coeffs) ** 2
    state = QuantumState(trial.basis, coeffs, trial.time_tag)
    return RelaxationResult(state, float(p @ energies), variances[-1], tuple(variances))


def relaxed_levels(basis: EigenBasis, estimates, energy_width: float | None = None,
                   n_iter: int = 40) -> list[RelaxationResult]:
    """Refine WKB level estimates by relaxing localized trial packets.

    Trial states are right-well Gaussians (even and odd combinations are
    reached through the basis overlap); each one is filtered around its
    estimate.  Distinct estimates within a doublet pick the two doublet
    members via parity-adapted trials.
    """
    from .measurement import gaussian_packet

    spec = basis.spec
    center = spec.well_center
    results = []
    estimates = list(estimates)
    for idx, e in enumerate(estimates):
        width = energy_width
        if width is None:
            gaps = np.diff(np.unique(np.round(estimates, 12)))
            width = 0.25 * float(np.min(gaps)) if gaps.size else 1.0
        packet = gaussian_packet(basis, center, 0.25 * center, warn=False)
        coeffs = np.array(packet.coeffs)
        if basis.grid.is_symmetric:
            par = basis.parities()
            want = 1 if idx % 2 == 0 else -1
            coeffs = np.where(par == want, coeffs, 0)
        trial = type(packet)(basis, coeffs, 0.0)
        results.append(relax_eigenstate(trial, e, width, n_iter))
    return results
