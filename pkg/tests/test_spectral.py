import math
import pickle
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxmeas.errors import (AccuracyWarning, ContractViolation, DegenerateError,
                             OrthogonalTrialError, OutOfDomainError, StagnationWarning)
from fluxmeas.measurement import QuantumState
from fluxmeas.spectral import (DeltaBarrierWell, Grid, QuarticDoubleWell, build_basis,
                               characteristic_time, default_grid, evaluate_potential,
                               relax_eigenstate, relaxed_levels, solve_delta_well,
                               solve_on_grid, wkb_levels)

# Reference roots of 2 k cos k + 500 sin k = 0 (half width 1, kappa 1), obtained
# with an independent 30-digit root finder.
E_EVEN_500 = [9.791122866453008, 39.16454033086895, 88.12039885184261]


class TestGrid:
    def test_points_and_weights(self):
        g = Grid(5, -1.0, 1.0)
        assert np.allclose(g.points, [-1, -0.5, 0, 0.5, 1])
        assert g.spacing == 0.5
        assert np.isclose(g.weights.sum(), 2.0)
        assert g.is_symmetric

    def test_inner_product_of_constant(self):
        g = Grid(101, 0.0, 2.0)
        f = np.ones(101)
        assert np.isclose(g.inner(f, f), 2.0)

    def test_invalid(self):
        with pytest.raises(ContractViolation):
            Grid(2, 0, 1)
        with pytest.raises(ContractViolation):
            Grid(10, 1, 0)


class TestPotentials:
    def test_quartic_shape(self):
        q = QuarticDoubleWell(9.6, 4.382)
        assert math.isclose(q.well_center, math.sqrt(9.6 / 4.382))
        assert math.isclose(q.barrier_height, 9.6 ** 2 / (4 * 4.382))
        assert math.isclose(evaluate_potential(q, q.well_center), q.minimum_energy)
        assert evaluate_potential(q, 0.0) == 0.0

    def test_box_zero_inside_and_domain(self):
        s = DeltaBarrierWell(1.0, 50.0)
        assert evaluate_potential(s, 0.3) == 0.0
        with pytest.raises(OutOfDomainError):
            evaluate_potential(s, 1.5)

    def test_invalid_parameters(self):
        with pytest.raises(ContractViolation):
            DeltaBarrierWell(-1.0, 1.0)
        with pytest.raises(ContractViolation):
            QuarticDoubleWell(-1.0, 1.0)
        with pytest.raises(ContractViolation):
            DeltaBarrierWell(1.0, 1.0, kappa=0.0)


class TestDeltaWellSpectrum:
    def test_free_box_levels(self):
        b = solve_delta_well(DeltaBarrierWell(1.0, 0.0), n_states=10)
        n = np.arange(1, 11)
        assert np.allclose(b.energies, (n * np.pi / 2) ** 2, rtol=1e-12)

    def test_barrier_500_against_reference(self):
        b = solve_delta_well(DeltaBarrierWell(1.0, 500.0), n_states=6)
        assert np.allclose(b.energies[0::2], E_EVEN_500, rtol=1e-10)
        assert np.allclose(b.energies[1::2], [(k * np.pi) ** 2 for k in (1, 2, 3)], rtol=1e-12)

    def test_impenetrable_barrier_gives_degenerate_pairs(self):
        b = solve_delta_well(DeltaBarrierWell(1.0, math.inf), n_states=6)
        assert np.allclose(b.energies[0::2], b.energies[1::2], rtol=1e-12)

    def test_levels_ordered_and_parity_alternates(self, box500):
        assert np.all(np.diff(box500.energies) > 0)
        par = box500.parities()
        assert np.all(par[0::2] == 1) and np.all(par[1::2] == -1)

    def test_orthonormal(self, box500):
        assert box500.orthonormality_error() < 1e-8

    @pytest.mark.parametrize("v0", [0.0, 50.0, 500.0])
    def test_grid_agrees_with_analytic(self, v0):
        spec = DeltaBarrierWell(1.0, v0)
        a = solve_delta_well(spec, 8)
        g = solve_on_grid(spec, n_states=8, n_points=4097)
        assert np.max(np.abs(g.energies / a.energies - 1)) < 1e-3

    def test_sign_convention(self, box500):
        psi = box500.wavefunctions
        for row in psi:
            first = np.flatnonzero(np.abs(row) > 1e-6 * np.abs(row).max())[0]
            assert row[first] > 0

    @settings(max_examples=15, deadline=None)
    @given(v0=st.floats(0.0, 2000.0), width=st.floats(0.3, 3.0))
    def test_energies_grow_with_barrier(self, v0, width):
        lo = solve_delta_well(DeltaBarrierWell(width, v0), 4).energies
        hi = solve_delta_well(DeltaBarrierWell(width, v0 + 10.0), 4).energies
        assert np.all(hi[0::2] >= lo[0::2] - 1e-12)
        assert np.allclose(hi[1::2], lo[1::2])


class TestGridSolver:
    def test_quartic_reference_levels(self, quartic_slow):
        # independent sinc-DVR diagonalization on [-5, 5] with 801 points
        ref = [-4.19292323, -4.19286826, -2.20733314, -2.20163762, -0.59343048, -0.43488837]
        assert np.allclose(quartic_slow.energies[:6], ref, atol=2e-4)
        assert quartic_slow.sub_barrier_count() == 6
        t12 = characteristic_time(quartic_slow, 1, 2)
        assert abs(t12 / 114299.37 - 1) < 1e-3

    def test_quartic_kappa_one(self, quartic_fast):
        ref = [-2.58555605, -2.29939174, 1.29740889, 3.69057715]
        assert np.allclose(quartic_fast.energies[:4], ref, atol=1e-3)
        assert quartic_fast.sub_barrier_count() == 2

    def test_boundary_decay(self, quartic_slow):
        edge = np.abs(quartic_slow.wavefunctions[:, [1, -2]]).max(axis=1)
        peak = np.abs(quartic_slow.wavefunctions).max(axis=1)
        assert np.all(edge / peak < 1e-8)
        assert quartic_slow.diagnostics == ()

    def test_narrow_grid_warns(self):
        with pytest.warns(AccuracyWarning):
            b = solve_on_grid(QuarticDoubleWell(9.6, 4.382), Grid(401, -2.0, 2.0), n_states=12)
        assert b.diagnostics

    def test_too_many_states(self):
        with pytest.raises(ContractViolation):
            solve_on_grid(DeltaBarrierWell(1.0, 5.0), n_states=40, n_points=101)

    def test_even_grid_rejected_for_delta(self):
        with pytest.raises(ContractViolation):
            solve_on_grid(DeltaBarrierWell(1.0, 5.0), Grid(100, -1.0, 1.0), n_states=4)

    def test_default_grid(self):
        assert default_grid(DeltaBarrierWell(2.0, 1.0)).phi_max == 2.0
        q = QuarticDoubleWell(9.6, 4.382, 0.125)
        g = default_grid(q, 32)
        assert g.phi_max > 2 * q.well_center


class TestBasisObject:
    def test_immutable_arrays(self, box0):
        with pytest.raises(ValueError):
            box0.energies[0] = 1.0

    def test_pickle_drops_cache(self, small_box):
        small_box.cache["x"] = 1
        clone = pickle.loads(pickle.dumps(small_box))
        assert clone.cache == {}
        assert np.array_equal(clone.energies, small_box.energies)

    def test_project_eigenfunction(self, small_box):
        c = small_box.project(small_box.wavefunctions[3])
        assert abs(c[3] - 1) < 1e-10
        assert np.abs(np.delete(c, 3)).max() < 1e-10

    def test_sub_barrier_only_for_quartic(self, box0):
        with pytest.raises(ContractViolation):
            box0.sub_barrier_count()

    def test_build_basis_solver_choice(self):
        assert build_basis(DeltaBarrierWell(1.0, 1.0), 4, 257).method == "analytic"
        assert build_basis(DeltaBarrierWell(1.0, 1.0), 4, 257, solver="grid").method == "grid"
        with pytest.raises(ContractViolation):
            build_basis(QuarticDoubleWell(1.0, 1.0), 4, 257, solver="analytic")


class TestCharacteristicTime:
    def test_free_box(self, box0):
        t12 = characteristic_time(box0, 1, 2)
        assert math.isclose(t12, 2 * math.pi / (box0.energies[1] - box0.energies[0]))
        assert characteristic_time(box0, 2, 1) == t12

    def test_box500(self, box500):
        assert abs(characteristic_time(box500, 1, 2) - 80.0594093412) < 1e-6

    def test_degenerate(self, box0):
        with pytest.raises(DegenerateError):
            characteristic_time(box0, 2, 2)
        inf_box = solve_delta_well(DeltaBarrierWell(1.0, math.inf), 4)
        with pytest.raises(DegenerateError):
            characteristic_time(inf_box, 1, 2)


class TestWKB:
    def test_doublets_track_grid_levels(self, quartic_slow):
        levels = wkb_levels(quartic_slow.spec)
        assert len(levels) == 6
        assert levels[0::2] == levels[1::2]
        grid_means = 0.5 * (quartic_slow.energies[0:6:2] + quartic_slow.energies[1:6:2])
        spacing = np.diff(grid_means).min()
        assert np.all(np.abs(np.array(levels[0::2]) - grid_means) < 0.1 * spacing)

    def test_only_quartic(self):
        with pytest.raises(ContractViolation):
            wkb_levels(DeltaBarrierWell(1.0, 1.0))

    def test_relaxed_levels_converge(self, quartic_slow):
        est = wkb_levels(quartic_slow.spec)[:4]
        res = relaxed_levels(quartic_slow, est)
        for r in res:
            assert r.variance < 1e-4
        got = sorted(r.energy for r in res)
        assert np.allclose(got, quartic_slow.energies[:4], atol=1e-6)


class TestRelaxation:
    def test_filter_picks_nearest_level(self, small_box):
        c = np.ones(small_box.n_states) / math.sqrt(small_box.n_states)
        trial = QuantumState(small_box, c)
        r = relax_eigenstate(trial, small_box.energies[4] + 0.1, 5.0, n_iter=50)
        assert abs(r.energy - small_box.energies[4]) < 1e-6
        assert r.variances[-1] < r.variances[0]

    def test_orthogonal_trial(self, small_box):
        trial = QuantumState.eigenstate(small_box, 1)
        with pytest.raises(OrthogonalTrialError):
            relax_eigenstate(trial, small_box.energies[-1], 1e-3, n_iter=5)

    def test_stagnation_warning(self, small_box):
        c = np.zeros(small_box.n_states)
        c[[0, 1]] = 1 / math.sqrt(2)
        trial = QuantumState(small_box, c)
        mid = 0.5 * (small_box.energies[0] + small_box.energies[1])
        with pytest.warns(StagnationWarning):
            relax_eigenstate(trial, mid, 1.0, n_iter=3)


class TestSpectralExamples:
    def test_unit_gap_gives_unit_time(self):
        b = solve_delta_well(DeltaBarrierWell(1.0, 0.0), 2)
        # E2 - E1 = 3 pi^2 / 4 for the free box; rescale kappa so the gap is 2 pi
        kappa = 2 * math.pi / (b.energies[1] - b.energies[0])
        b2 = solve_delta_well(DeltaBarrierWell(1.0, 0.0, kappa), 2)
        assert math.isclose(characteristic_time(b2, 1, 2), 1.0, rel_tol=1e-12)

    def test_doublet_splitting_shrinks_with_barrier(self):
        gaps = []
        for v0 in (50, 100, 200, 500, 1000):
            e = solve_delta_well(DeltaBarrierWell(1.0, v0), 2).energies
            gaps.append(e[1] - e[0])
        assert np.all(np.diff(gaps) < 0)

    def test_spectrum_continuous_in_barrier(self):
        base = solve_delta_well(DeltaBarrierWell(1.0, 200.0), 8).energies
        diffs = [np.max(np.abs(solve_delta_well(DeltaBarrierWell(1.0, 200.0 + d), 8).energies - base))
                 for d in (1e-1, 1e-3, 1e-5)]
        assert diffs[0] > diffs[1] > diffs[2] and diffs[2] < 1e-6

    def test_free_box_grid_ground_state(self):
        b = solve_on_grid(DeltaBarrierWell(1.0, 0.0), n_states=4, n_points=2049)
        assert abs(b.energies[0] / (math.pi / 2) ** 2 - 1) < 1e-4

    def test_analytic_box_vanishes_at_walls(self, box500):
        psi = box500.wavefunctions
        assert np.all(np.abs(psi[:, [0, -1]]) <= 1e-8 * np.abs(psi).max(axis=1)[:, None])

    def test_quartic_splitting_refinement(self):
        q = QuarticDoubleWell(9.6, 4.382, 1.0)
        gaps = []
        for n in (2049, 4097):
            e = build_basis(q, 8, n).energies
            gaps.append(e[1] - e[0])
        assert abs(gaps[1] / gaps[0] - 1) < 0.01

    def test_wkb_harmonic_consistency(self):
        q = QuarticDoubleWell(9.6, 4.382, 1.0)
        # mass 1/(2 kappa) and V'' = 2 mu at the minimum: omega = sqrt(2 kappa V'')
        harmonic = q.minimum_energy + 0.5 * math.sqrt(2 * q.kappa * 2 * q.mu)
        lowest = wkb_levels(q)[0]
        assert abs(lowest - harmonic) < 0.15 * abs(harmonic)

    def test_wkb_kappa_one_against_grid(self, quartic_fast):
        lowest = wkb_levels(quartic_fast.spec)[0]
        mean = 0.5 * (quartic_fast.energies[0] + quartic_fast.energies[1])
        assert abs(lowest / mean - 1) < 0.10

    @pytest.mark.parametrize("kappa", [1.0, 0.5, 0.125, 0.05])
    def test_wkb_count_bounded_by_grid(self, kappa):
        q = QuarticDoubleWell(9.6, 4.382, kappa)
        b = build_basis(q, 32, 2049)
        assert len(wkb_levels(q, 40)) <= b.sub_barrier_count() + 2

    def test_level_at_barrier_top_is_excluded(self, monkeypatch):
        import fluxmeas.spectral as sp

        q = QuarticDoubleWell(9.6, 4.382)
        e_min = q.minimum_energy
        # linear action reaching exactly 3 pi / 2 at the barrier top
        monkeypatch.setattr(sp, "_half_well_action",
                            lambda spec, e: 1.5 * math.pi * (e - e_min) / (-e_min))
        levels = sp.wkb_levels(q)
        assert len(levels) == 2
        assert math.isclose(levels[0], e_min / 1.5, rel_tol=1e-9)

    def test_no_level_below_barrier(self):
        assert wkb_levels(QuarticDoubleWell(0.1, 10.0, 1.0)) == []

    def test_relax_identity_filter(self, small_box, rng):
        c = rng.normal(size=small_box.n_states) + 1j * rng.normal(size=small_box.n_states)
        trial = QuantumState(small_box, c)
        with pytest.warns(StagnationWarning):
            r = relax_eigenstate(trial, 0.0, math.inf, n_iter=5)
        assert np.allclose(r.state.coeffs, c / np.linalg.norm(c), atol=1e-14)

    def test_relax_two_level_mixture(self, small_box):
        c = np.zeros(small_box.n_states)
        c[[0, 2]] = 1 / math.sqrt(2)
        e1, e3 = small_box.energies[0], small_box.energies[2]
        r = relax_eigenstate(QuantumState(small_box, c), e1, (e3 - e1) / 4, n_iter=20)
        assert abs(r.state.coeffs[0]) ** 2 > 1 - 1e-8

    def test_relax_orthogonal_to_target(self, box500):
        trial = QuantumState.eigenstate(box500, 2)
        e1, e3 = box500.energies[0], box500.energies[2]
        # E_2 - E_1 ~ 0.08, so resolve it with a much narrower filter
        with pytest.raises(OrthogonalTrialError):
            relax_eigenstate(trial, e1 - 50 * 0.08, 0.08, n_iter=200)
