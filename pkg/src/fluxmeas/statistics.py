"""Outcome densities, effective uncertainties, scans and sign-binned correlations.

The probability density of the next measurement result is

    p(Phi) ∝ ∫ rho(x, x) exp(-(x - Phi)^2 / delta_phi^2) dx

(the squared norm of w_Phi psi for a pure state), evaluated directly on the
basis grid.  The effective uncertainty is the second moment about the most
probable outcome, ``sqrt(2 ∫ (Phi - Phi_mode)^2 p dPhi)``.

Sign-binned measurements (outcome only known to be above or below a
threshold) are propagated as density matrices with the branch map

    rho <- (1 / (sqrt(pi) delta_phi)) ∫_bin w_Phi rho w_Phi dPhi,

integrated with Gauss-Legendre quadrature.  The branch probability itself is
taken from the exact half-line effect operator  E(x) = erfc(±(x - thr)/delta_phi)/2.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks
from scipy.special import erfc

from .errors import (AccuracyWarning, AmbiguousMaximumWarning, ContractViolation,
                     DegenerateError, ImpossibleConditionError, UnderflowWarning)
from .measurement import (Measure, QuantumState, SequenceSpec, SignMeasure, apply_collapse,
                          collapse_leakage, collapse_matrix, free_evolve, gaussian_packet)
from .spectral import (DeltaBarrierWell, EigenBasis, PotentialSpec, QuarticDoubleWell,
                       build_basis, characteristic_time)

DEFAULT_OUTCOME_POINTS = 401
OUTCOME_MARGIN = 6.0        # in units of delta_phi, beyond the basis grid
UNDERFLOW = 1e-300


# --------------------------------------------------------------------------- states

@dataclass(frozen=True, eq=False)
class MixedState:
    """Unnormalised density matrix over an eigenbasis; the trace is the weight."""

    basis: EigenBasis
    rho: np.ndarray
    time_tag: float = 0.0

    def __post_init__(self):
        r = np.array(self.rho, dtype=complex)
        n = self.basis.n_states
        if r.shape != (n, n):
            raise ContractViolation(f"expected a {n}x{n} density matrix")
        r = 0.5 * (r + r.conj().T)
        r.setflags(write=False)
        object.__setattr__(self, "rho", r)

    @classmethod
    def from_pure(cls, state: QuantumState) -> "MixedState":
        return cls(state.basis, state.density_matrix(), state.time_tag)

    @property
    def trace(self) -> float:
        return float(np.trace(self.rho).real)

    def evolve(self, dt: float) -> "MixedState":
        if not dt >= 0:
            raise ContractViolation("dt must be non-negative")
        if dt == 0:
            return self
        d = np.exp(-1j * self.basis.energies * dt)
        return MixedState(self.basis, d[:, None] * self.rho * d.conj()[None, :], self.time_tag + dt)

    def grid_density(self) -> np.ndarray:
        """rho(x, x) sampled on the basis grid."""
        psi = self.basis.wavefunctions
        return np.einsum("kx,kl,lx->x", psi, self.rho, psi, optimize=True).real


def _grid_probability(state) -> np.ndarray:
    if isinstance(state, QuantumState):
        return np.abs(state.wavefunction()) ** 2
    if isinstance(state, MixedState):
        return state.grid_density()
    raise ContractViolation(f"unsupported state type {type(state).__name__}")


# --------------------------------------------------------------------------- densities

@dataclass(frozen=True)
class OutcomeDensity:
    outcome_grid: np.ndarray
    weights: np.ndarray
    normalization_residual: float
    total_weight: float

    @property
    def spacing(self) -> float:
        return float(self.outcome_grid[1] - self.outcome_grid[0])


def default_outcome_grid(basis: EigenBasis, delta_phi: float,
                         n_points: int = DEFAULT_OUTCOME_POINTS) -> np.ndarray:
    g = basis.grid
    pad = OUTCOME_MARGIN * delta_phi
    return np.linspace(g.phi_min - pad, g.phi_max + pad, n_points)


def _trapz(y: np.ndarray, h: float) -> float:
    return float(h * (np.sum(y) - 0.5 * (y[0] + y[-1])))


def _outcome_kernel(basis: EigenBasis, outcome_grid: np.ndarray, delta_phi: float) -> np.ndarray:
    key = ("outcome", float(delta_phi), outcome_grid.size,
           float(outcome_grid[0]), float(outcome_grid[-1]))
    k = basis.cache.get(key)
    if k is None:
        x = basis.grid.points
        k = np.exp(-(outcome_grid[:, None] - x[None, :]) ** 2 / delta_phi ** 2) * basis.grid.weights
        k.setflags(write=False)
        basis.cache[key] = k
    return k


def outcome_density(state, delta_phi: float, outcome_grid: np.ndarray | None = None,
                    method: str = "grid") -> OutcomeDensity:
    """Normalised probability density of the next measurement outcome.

    ``method="grid"`` integrates rho(x, x) against the squared Gaussian on the
    basis grid; ``method="kernel"`` evaluates ||W_Phi c||^2 with one collapse
    matrix per outcome point (pure states only, slower, truncation-limited).
    """
    if not delta_phi > 0:
        raise ContractViolation("delta_phi must be positive")
    basis = state.basis
    if outcome_grid is None:
        outcome_grid = default_outcome_grid(basis, delta_phi)
    outcome_grid = np.asarray(outcome_grid, dtype=float)
    if outcome_grid.ndim != 1 or outcome_grid.size < 3:
        raise ContractViolation("outcome grid needs at least 3 points")
    steps = np.diff(outcome_grid)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps[0]:
        raise ContractViolation("outcome grid must be uniform and increasing")

    if method == "grid":
        raw = _outcome_kernel(basis, outcome_grid, delta_phi) @ _grid_probability(state)
    elif method == "kernel":
        if not isinstance(state, QuantumState):
            raise ContractViolation("kernel method needs a pure state")
        raw = np.array([np.sum(np.abs(collapse_matrix(basis, f, delta_phi).matrix @ state.coeffs) ** 2)
                        for f in outcome_grid])
    else:
        raise ContractViolation(f"unknown method {method!r}")

    raw = np.clip(raw, 0.0, None)
    h = float(steps[0])
    total = _trapz(raw, h)
    if not total > 0 or not np.isfinite(total):
        raise DegenerateError("outcome density vanishes everywhere")
    weights = raw / total
    residual = abs(_trapz(weights, h) - 1.0)
    weights.setflags(write=False)
    outcome_grid = outcome_grid.copy()
    outcome_grid.setflags(write=False)
    return OutcomeDensity(outcome_grid, weights, residual, total)


def _parabolic_vertex(x: np.ndarray, y: np.ndarray, i: int) -> float:
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = y0 - 2 * y1 + y2
    if denom >= 0:
        return float(x[i])
    shift = 0.5 * (y0 - y2) / denom
    return float(x[i] + shift * (x[i + 1] - x[i]))


def most_probable_outcome(density: OutcomeDensity) -> float:
    """Mode of the density, refined by a parabola through log p.

    Exact ties resolve to the leftmost maximum.  An ``AmbiguousMaximumWarning``
    is issued when the maximum is a plateau covering more than 10 % of the grid.
    """
    p = density.weights
    x = density.outcome_grid
    pmax = float(p.max())
    i = int(np.flatnonzero(p >= pmax * (1 - 1e-12))[0])
    flat = p >= pmax * (1 - 1e-9)
    lo = i
    while lo > 0 and flat[lo - 1]:
        lo -= 1
    hi = i
    while hi < p.size - 1 and flat[hi + 1]:
        hi += 1
    if hi - lo + 1 > 0.1 * p.size:
        warnings.warn("most probable outcome is not unique (flat maximum)",
                      AmbiguousMaximumWarning, stacklevel=2)
        return float(x[i])
    if i == 0 or i == p.size - 1:
        return float(x[i])
    trio = p[i - 1:i + 2]
    if np.all(trio > 0):
        return _parabolic_vertex(x, np.log(p), i)
    return _parabolic_vertex(x, p, i)


def effective_uncertainty(density: OutcomeDensity, center: float | None = None) -> float:
    """sqrt(2 ∫ (Phi - center)^2 p(Phi) dPhi); ``center`` defaults to the mode."""
    if center is None:
        center = most_probable_outcome(density)
    x = density.outcome_grid
    m2 = _trapz((x - center) ** 2 * density.weights, density.spacing)
    return math.sqrt(2.0 * max(m2, 0.0))


# --------------------------------------------------------------------------- repeated measurements

@dataclass(frozen=True)
class AsymptoticResult:
    series: np.ndarray          # series[n-1]: uncertainty after n preparing collapses
    modes: np.ndarray
    asymptote: float
    converged: bool
    n_converged: int | None
    leakage: float


def initial_state(basis: EigenBasis, mode: str = "ground", center: float | None = None,
                  sigma: float | None = None) -> QuantumState:
    """Starting state before the preparing collapses.

    ``"ground"`` is the lowest eigenstate; ``"packet"`` a Gaussian of width
    ``sigma`` at ``center`` (defaults: the right-well centre and the width of
    the corresponding half-well ground state).
    """
    if mode == "ground":
        return QuantumState.eigenstate(basis, 1)
    if mode == "packet":
        spec = basis.spec
        if center is None:
            center = spec.well_center
        if sigma is None:
            sigma = default_packet_sigma(spec)
        return gaussian_packet(basis, center, sigma)
    raise ContractViolation(f"unknown initial mode {mode!r}")


def default_packet_sigma(spec: PotentialSpec) -> float:
    if isinstance(spec, DeltaBarrierWell):
        # position spread of sin(pi x / L) on a box of length L = half_width
        return spec.half_width * math.sqrt(1.0 / 12.0 - 1.0 / (2.0 * math.pi ** 2))
    # harmonic approximation at the minimum: V'' = 2 mu, mass 1/(2 kappa)
    return (spec.kappa / (4.0 * spec.mu)) ** 0.25


def asymptotic_uncertainty(basis: EigenBasis, phi0: float, delta_phi: float, dt: float,
                           n_max: int, initial: QuantumState | None = None,
                           outcome_grid: np.ndarray | None = None,
                           tolerance: float = 0.01) -> AsymptoticResult:
    """Effective uncertainty of the next outcome after n = 1..n_max collapses at ``phi0``.

    Each collapse is followed by a free evolution ``dt``; the state is
    renormalised after every step (only the shape matters for the next
    outcome).  The asymptote is the mean of the last three values.
    """
    if n_max < 1:
        raise ContractViolation("n_max must be at least 1")
    if not dt > 0:
        raise ContractViolation("quiescent time must be positive")
    state = QuantumState.eigenstate(basis, 1) if initial is None else initial
    if state.basis is not basis:
        raise ContractViolation("initial state lives on a different basis")
    state = state.normalized()
    kernel = collapse_matrix(basis, phi0, delta_phi)
    series, modes = [], []
    worst = state.leakage
    for _ in range(n_max):
        worst = max(worst, collapse_leakage(state, kernel))
        state = apply_collapse(state, kernel)
        weight = state.norm2
        if weight < UNDERFLOW:
            warnings.warn("sequence weight underflow; rescaling", UnderflowWarning, stacklevel=2)
            if weight == 0:
                raise DegenerateError("collapse annihilated the state")
        state = free_evolve(state.normalized(), dt)
        dens = outcome_density(state, delta_phi, outcome_grid)
        mode = most_probable_outcome(dens)
        modes.append(mode)
        series.append(effective_uncertainty(dens, mode))
    series = np.array(series)
    tail = series[-3:]
    asymptote = float(np.mean(tail))
    converged = bool(series.size >= 3 and np.ptp(tail) <= tolerance * asymptote)
    n_conv = None
    close = np.abs(series - asymptote) <= tolerance * asymptote
    if converged:
        n_conv = int(series.size)
        while n_conv > 1 and close[n_conv - 2]:
            n_conv -= 1
    return AsymptoticResult(series, np.array(modes), asymptote, converged, n_conv, float(worst))


@dataclass(frozen=True)
class UncertaintyCurve:
    parameter: str
    values: np.ndarray
    delta_phi_eff: np.ndarray
    leakage: np.ndarray
    n_converged: tuple
    fingerprint: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.values) == len(self.delta_phi_eff) == len(self.leakage)
                == len(self.n_converged)):
            raise ContractViolation("curve columns have different lengths")
        if np.any(np.asarray(self.delta_phi_eff) < 0):
            raise ContractViolation("effective uncertainties must be non-negative")


def _quiescent_point(args):
    basis, phi0, delta_phi, dt, n_max, initial = args
    res = asymptotic_uncertainty(basis, phi0, delta_phi, dt, n_max, initial=initial)
    return res.asymptote, res.leakage, res.n_converged


def _initial_for(basis: EigenBasis, initial) -> QuantumState | None:
    if initial is None or isinstance(initial, QuantumState):
        return initial
    return initial_state(basis, initial)


def scan_quiescent(basis: EigenBasis, phi0: float, delta_phi: float, n_max: int,
                   dt_values: Sequence[float], initial="ground",
                   workers: int | None = None) -> UncertaintyCurve:
    """Asymptotic uncertainty for each quiescent time; results in input order.

    ``workers > 1`` distributes points over a process pool.  Every point is an
    independent deterministic computation, so the output does not depend on
    the evaluation order.
    """
    dt_values = np.asarray(dt_values, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AccuracyWarning)
        init = _initial_for(basis, initial)
    jobs = [(basis, phi0, delta_phi, float(dt), n_max, init) for dt in dt_values]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_quiescent_point, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        rows = [_quiescent_point(j) for j in jobs]
    return UncertaintyCurve(
        "dt", dt_values,
        np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
        tuple(r[2] for r in rows),
        {"potential": repr(basis.spec), "delta_phi": delta_phi, "phi0": phi0, "N": n_max,
         "initial": initial if isinstance(initial, str) else "custom"})


def scan_barrier(half_width: float, delta_phi: float, v0_values: Sequence[float],
                 kappa: float = 1.0, n_max: int = 10, phi0: float | None = None,
                 initial: str = "packet", n_states: int = 32, n_points: int = 2049,
                 dt_rule=(2, 6)) -> UncertaintyCurve:
    """Asymptotic uncertainty versus barrier strength at ΔT = T_ij of each basis."""
    out, leak, nconv = [], [], []
    for v0 in v0_values:
        spec = DeltaBarrierWell(half_width, float(v0), kappa)
        basis = build_basis(spec, n_states=n_states, n_points=n_points)
        dt = characteristic_time(basis, *dt_rule)
        center = spec.well_center if phi0 is None else phi0
        res = asymptotic_uncertainty(basis, center, delta_phi, dt, n_max,
                                     initial=initial_state(basis, initial, center=center))
        out.append(res.asymptote)
        leak.append(res.leakage)
        nconv.append(res.n_converged)
    return UncertaintyCurve("V0", np.asarray(v0_values, dtype=float), np.array(out),
                            np.array(leak), tuple(nconv),
                            {"half_width": half_width, "kappa": kappa, "delta_phi": delta_phi,
                             "N": n_max, "dt_rule": f"T_{dt_rule[0]}{dt_rule[1]}",
                             "initial": initial})


def significant_minima(x: Sequence[float], y: Sequence[float],
                       rel_prominence: float = 0.5) -> np.ndarray:
    """Locations of local minima whose prominence exceeds a fraction of the curve's range.

    Positions are refined by a parabola through the three points around each
    sampled minimum.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    span = float(np.ptp(y))
    if span == 0 or y.size < 3:
        return np.array([])
    idx, _ = find_peaks(-y, prominence=rel_prominence * span)
    return np.array([_refine_minimum(x, y, i) for i in idx])


def _refine_minimum(x: np.ndarray, y: np.ndarray, i: int) -> float:
    if 0 < i < y.size - 1 and y[i - 1] - 2 * y[i] + y[i + 1] > 0:
        xs = x[i - 1:i + 2]
        a = np.polyfit(xs - xs[1], y[i - 1:i + 2], 2)
        return float(xs[1] - a[1] / (2 * a[0]))
    return float(x[i])


def ranked_minima(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """All interior local minima ordered by decreasing prominence.

    Returns (locations, prominences relative to the curve's range); locations
    are parabola-refined.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    span = float(np.ptp(y))
    if span == 0 or y.size < 3:
        return np.array([]), np.array([])
    idx, props = find_peaks(-y, prominence=0.0)
    order = np.argsort(-props["prominences"], kind="stable")
    locs = np.array([_refine_minimum(x, y, idx[k]) for k in order])
    return locs, props["prominences"][order] / span


# --------------------------------------------------------------------------- sign-binned events

def _sign_effect(x: np.ndarray, sign: int, threshold: float, delta_phi: float) -> np.ndarray:
    if sign == 0:
        return np.ones_like(x)
    return 0.5 * erfc(sign * (threshold - x) / delta_phi)


def branch_probability(state: MixedState, sign: int, delta_phi: float,
                       threshold: float = 0.0) -> float:
    """Tr(E rho) for the exact half-line effect operator of a sign-binned outcome."""
    grid = state.basis.grid
    e = _sign_effect(grid.points, sign, threshold, delta_phi)
    return float(np.sum(grid.weights * e * state.grid_density()))


def _bin_limits(basis: EigenBasis, sign: int, delta_phi: float, threshold: float):
    g = basis.grid
    lo = g.phi_min - 8.0 * delta_phi
    hi = g.phi_max + 8.0 * delta_phi
    if sign > 0:
        return threshold, hi
    if sign < 0:
        return lo, threshold
    return lo, hi


def _branch_quadrature(state: MixedState, sign: int, delta_phi: float, threshold: float,
                       n_nodes: int) -> np.ndarray:
    basis = state.basis
    a, b = _bin_limits(basis, sign, delta_phi, threshold)
    nodes, wts = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (b - a)
    out = np.zeros_like(state.rho)
    for t, wq in zip(nodes, wts):
        w = collapse_matrix(basis, float(a + half * (t + 1.0)), delta_phi).matrix
        out += (wq * half) * (w @ state.rho @ w)
    return out / (math.sqrt(math.pi) * delta_phi)


def apply_sign_measurement(state: MixedState, event: SignMeasure, threshold: float = 0.0,
                           n_nodes: int = 64, check: bool = True) -> tuple[MixedState, float]:
    """Branch map for one sign-binned event; returns (branch state, probability).

    The returned state's trace equals the exact branch probability times the
    input trace.  With ``check`` the quadrature is repeated with twice the
    nodes and an ``AccuracyWarning`` is raised if the branch trace moves by
    more than 1e-4.
    """
    if event.at < state.time_tag - 1e-12 * max(1.0, abs(event.at)):
        raise ContractViolation("sign event precedes the state time")
    state = state.evolve(max(0.0, event.at - state.time_tag))
    rho = _branch_quadrature(state, event.sign, event.delta_phi, threshold, n_nodes)
    if check:
        fine = _branch_quadrature(state, event.sign, event.delta_phi, threshold, 2 * n_nodes)
        scale = max(abs(state.trace), 1e-300)
        if abs(np.trace(fine - rho).real) / scale > 1e-4:
            warnings.warn("outcome quadrature not converged; increase n_nodes",
                          AccuracyWarning, stacklevel=2)
        rho = fine
    prob = branch_probability(state, event.sign, event.delta_phi, threshold)
    tr = float(np.trace(rho).real)
    if tr > 0:
        rho = rho * (prob / tr)
    return MixedState(state.basis, rho, state.time_tag), prob


def nonselective_measurement(state: MixedState, delta_phi: float) -> MixedState:
    """Unread measurement: rho(x, y) <- rho(x, y) exp(-(x - y)^2 / (4 delta_phi^2)).

    Evaluated directly on the grid and projected back onto the basis; this is
    the closed form of the full-line branch map.
    """
    basis = state.basis
    psi = basis.wavefunctions
    x = basis.grid.points
    a = psi * basis.grid.weights
    rho_grid = psi.T @ state.rho @ psi
    rho_grid *= np.exp(-(x[:, None] - x[None, :]) ** 2 / (4 * delta_phi ** 2))
    return MixedState(basis, a @ rho_grid @ a.T, state.time_tag)


@dataclass(frozen=True)
class CorrelationTable:
    times: tuple
    threshold: float
    probabilities: dict        # pattern string ("+-", "--", "*+" ...) -> probability
    marginals: tuple           # per event: {"+": p, "-": p}
    leakage: float = 0.0
    pattern: str | None = None

    def __post_init__(self):
        for k, p in self.probabilities.items():
            if not -1e-12 <= p <= 1 + 1e-12:
                raise ContractViolation(f"probability of {k} outside [0, 1]: {p}")

    @property
    def probability(self) -> float:
        if self.pattern is None:
            raise ContractViolation("table has no requested pattern")
        return self.probabilities[self.pattern]

    @property
    def total(self) -> float:
        return float(sum(self.probabilities.values()))

    def correlator(self) -> float:
        """C = P++ + P-- - P+- - P-+ for a two-event table."""
        if len(self.times) != 2:
            raise ContractViolation("correlator needs exactly two events")
        p = self.probabilities
        return p["++"] + p["--"] - p["+-"] - p["-+"]


def _normalized_start(state0) -> MixedState:
    if isinstance(state0, QuantumState):
        state0 = MixedState.from_pure(state0)
    tr = state0.trace
    if not tr > 0:
        raise ContractViolation("initial state has zero norm")
    return MixedState(state0.basis, state0.rho / tr, state0.time_tag)


def correlation_probability(state0, seq: SequenceSpec, threshold: float = 0.0,
                            n_nodes: int = 64, check: bool = True) -> CorrelationTable:
    """Joint probabilities of every sign pattern of the events in ``seq``.

    Events with sign 0 are unread measurements (marked ``*`` in the pattern);
    the requested pattern is the tuple of signs carried by ``seq``.
    """
    events = seq.events
    if not all(isinstance(e, SignMeasure) for e in events):
        raise ContractViolation("every event must carry a sign bin")
    start = _normalized_start(state0)
    choices = [((1, -1) if e.sign != 0 else (0,)) for e in events]
    sym = {1: "+", -1: "-", 0: "*"}
    probs: dict = {}
    leak = 0.0

    def recurse(state: MixedState, k: int, prefix: str, weight: float):
        nonlocal leak
        if k == len(events):
            probs[prefix] = weight
            return
        e = events[k]
        for s in choices[k]:
            branch, p = apply_sign_measurement(state, SignMeasure(e.at, s, e.delta_phi),
                                               threshold, n_nodes, check)
            recurse(branch, k + 1, prefix + sym[s], branch.trace)

    recurse(start, 0, "", 1.0)
    marginals = []
    for k, e in enumerate(events):
        marginals.append({c: float(sum(p for key, p in probs.items() if key[k] == c))
                          for c in ({"+", "-"} if e.sign != 0 else {"*"})})
    requested = "".join(sym[e.sign] for e in events)
    return CorrelationTable(tuple(e.at for e in events), threshold,
                            {k: float(v) for k, v in sorted(probs.items())},
                            tuple(marginals), leak, requested)


@dataclass(frozen=True)
class ConditionalResult:
    delta_phi_eff: float
    probability: float
    mode: float
    density: OutcomeDensity


def conditional_uncertainty(state0, events: Sequence[SignMeasure], final_time: float,
                            final_delta_phi: float, threshold: float = 0.0,
                            n_nodes: int = 64, check: bool = True,
                            outcome_grid: np.ndarray | None = None) -> ConditionalResult:
    """Effective uncertainty of a measurement at ``final_time`` given sign-binned events."""
    seq = SequenceSpec(tuple(events))
    state = _normalized_start(state0)
    prob = 1.0
    for e in seq.events:
        if not isinstance(e, SignMeasure):
            raise ContractViolation("conditioning events must be sign-binned")
        state, p = apply_sign_measurement(state, e, threshold, n_nodes, check)
        prob = state.trace
    if prob <= 1e-12:
        raise ImpossibleConditionError(f"conditioning pattern has probability {prob:.3g}")
    if final_time < state.time_tag:
        raise ContractViolation("final measurement precedes the conditioning events")
    state = state.evolve(final_time - state.time_tag)
    dens = outcome_density(state, final_delta_phi, outcome_grid)
    mode = most_probable_outcome(dens)
    return ConditionalResult(effective_uncertainty(dens, mode), prob, mode, dens)


@dataclass(frozen=True)
class LGResult:
    C_ab: float
    C_bc: float
    C_ac: float
    K: float
    violates: bool


def lg_correlator(ab: CorrelationTable, bc: CorrelationTable, ac: CorrelationTable,
                  tol: float = 1e-9) -> LGResult:
    """K = C_ab + C_bc - C_ac from three pair tables; ``violates`` is K > 1."""
    for t in (ab, bc, ac):
        if len(t.times) != 2:
            raise ContractViolation("each table must cover exactly two events")
    ta, tb = ab.times
    tb2, tc = bc.times
    ta2, tc2 = ac.times

    def same(u, v):
        return abs(u - v) <= tol * max(1.0, abs(u), abs(v))

    if not (same(ta, ta2) and same(tb, tb2) and same(tc, tc2)):
        raise ContractViolation("pair tables refer to inconsistent event times")
    if not ta < tb < tc:
        raise ContractViolation("events must be ordered t_a < t_b < t_c")
    c_ab, c_bc, c_ac = ab.correlator(), bc.correlator(), ac.correlator()
    k = c_ab + c_bc - c_ac
    return LGResult(c_ab, c_bc, c_ac, k, bool(k > 1.0))


# --------------------------------------------------------------------------- conditioned landscapes

def prepared_state(basis: EigenBasis, phi0: float, delta_phi: float, period: float,
                   n_prep: int = 10, initial: QuantumState | None = None) -> QuantumState:
    """State right after ``n_prep`` identical-outcome collapses spaced by ``period``."""
    state = QuantumState.eigenstate(basis, 1) if initial is None else initial
    kernel = collapse_matrix(basis, phi0, delta_phi)
    for k in range(n_prep):
        if k:
            state = free_evolve(state, period)
        state = apply_collapse(state, kernel).normalized()
    return QuantumState(basis, state.coeffs, 0.0, state.leakage)


@dataclass(frozen=True)
class Landscape:
    dt_ab: np.ndarray
    dt_bc: np.ndarray
    delta_phi_eff: np.ndarray      # shape (len(dt_ab), len(dt_bc)); nan where impossible
    probability: np.ndarray        # joint probability of the conditioning + final sign pattern
    pattern_sum: np.ndarray        # sum of the four joint sign-pattern probabilities
    pattern: str
    t_a: float

    @property
    def impossible(self) -> np.ndarray:
        return np.isnan(self.delta_phi_eff)


def conditioned_landscape(state0: QuantumState, pattern: str, t_a: float,
                          dt_ab: Sequence[float], dt_bc: Sequence[float], delta_phi: float,
                          threshold: float = 0.0, n_nodes: int = 64) -> Landscape:
    """Conditional uncertainty over a grid of (Δt_ab, Δt_bc).

    ``pattern="ac--"``: condition on a negative outcome at t_a, final
    measurement at t_c = t_a + Δt_ab + Δt_bc (no measurement at t_b).
    ``pattern="bc+-"``: no measurement at t_a, condition on a positive outcome
    at t_b = t_a + Δt_ab, final measurement at t_c.  ``probability`` is the
    joint probability of both signs in the pattern; ``pattern_sum`` adds the
    three complementary patterns of the same two events.
    """
    if pattern not in ("ac--", "bc+-"):
        raise ContractViolation(f"unsupported landscape pattern {pattern!r}")
    dt_ab = np.asarray(dt_ab, dtype=float)
    dt_bc = np.asarray(dt_bc, dtype=float)
    first = -1 if pattern == "ac--" else 1
    last = -1
    start = _normalized_start(state0)
    phi_eff = np.full((dt_ab.size, dt_bc.size), np.nan)
    prob = np.zeros_like(phi_eff)
    total = np.zeros_like(phi_eff)
    memo: dict = {}
    checked = [False]

    def branches(t_cond):
        key = round(t_cond, 12)
        if key not in memo:
            pair = []
            for s in (first, -first):
                st, _ = apply_sign_measurement(start, SignMeasure(t_cond, s, delta_phi),
                                               threshold, n_nodes, check=not checked[0])
                pair.append(st)
            checked[0] = True
            memo[key] = tuple(pair)
        return memo[key]

    final_memo: dict = {}
    for i, a in enumerate(dt_ab):
        t_cond = t_a if pattern == "ac--" else t_a + a
        cond, other = branches(t_cond)
        for j, b in enumerate(dt_bc):
            t_c = t_a + a + b
            key = (round(t_cond, 12), round(t_c, 12))
            if key not in final_memo:
                eff = np.nan
                st = cond.evolve(t_c - cond.time_tag)
                if cond.trace > 1e-12:
                    eff = effective_uncertainty(outcome_density(st, delta_phi))
                joint = branch_probability(st, last, delta_phi, threshold)
                rest = branch_probability(st, -last, delta_phi, threshold)
                ot = other.evolve(t_c - other.time_tag)
                rest += (branch_probability(ot, last, delta_phi, threshold)
                         + branch_probability(ot, -last, delta_phi, threshold))
                final_memo[key] = (eff, joint, joint + rest)
            phi_eff[i, j], prob[i, j], total[i, j] = final_memo[key]
    return Landscape(dt_ab, dt_bc, phi_eff, prob, total, pattern, t_a)


def landscape_sum_curve(land: Landscape) -> tuple[np.ndarray, np.ndarray]:
    """Project the landscape onto Δt_ab + Δt_bc, keeping the smallest value per sum."""
    sums = land.dt_ab[:, None] + land.dt_bc[None, :]
    keys = np.round(sums.ravel(), 9)
    vals = land.delta_phi_eff.ravel()
    uniq = np.unique(keys)
    curve = np.array([np.nanmin(vals[keys == u]) for u in uniq])
    return uniq, curve


__all__ = [
    "MixedState", "OutcomeDensity", "default_outcome_grid", "outcome_density",
    "most_probable_outcome", "effective_uncertainty", "AsymptoticResult", "initial_state",
    "default_packet_sigma", "asymptotic_uncertainty", "UncertaintyCurve", "scan_quiescent",
    "scan_barrier", "significant_minima", "ranked_minima", "branch_probability", "apply_sign_measurement",
    "nonselective_measurement", "CorrelationTable", "correlation_probability",
    "ConditionalResult", "conditional_uncertainty", "LGResult", "lg_correlator",
    "prepared_state", "Landscape", "conditioned_landscape", "landscape_sum_curve",
    "Measure",
]
