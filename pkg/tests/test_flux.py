"""Static clustering predictor: flux, envelope labels, subgroups, thresholds."""

import math

import numpy as np
import pytest

from stickyalign import (
    AllToAll,
    Ensemble,
    Exponential,
    Forecast,
    PowerLaw,
    Regime,
    RegionLabel,
    Zero,
    analyze,
    build_flux,
    flocking_thresholds,
    predicted_partition,
    separation_bound,
    simulate,
)
from tests.conftest import ensemble_with_psi, random_scenario

QUARTERS = [0.25, 0.25, 0.25, 0.25]


def test_build_flux_nodes_and_values():
    ens = ensemble_with_psi([0.5, 0.5], [-1.0, 1.0], [1.0, -1.0], Zero())
    A = build_flux(ens)
    np.testing.assert_allclose(A.nodes, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(A.values, [0.0, 0.5, 0.0], atol=1e-15)


class TestHeadOnTent:
    """psi = (1, -1): the flux is a tent, everything is supercritical."""

    def analysis(self, kernel):
        return analyze(ensemble_with_psi([0.5, 0.5], [-1.0, 1.0], [1.0, -1.0],
                                         kernel), kernel)

    def test_labels_and_regions(self):
        an = self.analysis(Zero())
        assert an.cell_labels == (RegionLabel.SUPERCRITICAL,) * 2
        assert len(an.regions) == 1
        reg = an.regions[0]
        assert (reg.m_lo, reg.m_hi, reg.label) == (0.0, 1.0, RegionLabel.SUPERCRITICAL)

    def test_envelope_is_chord(self):
        an = self.analysis(Zero())
        np.testing.assert_allclose(an.A_star_star.nodes, [0.0, 1.0])
        np.testing.assert_allclose(an.A_star_star.values, [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(an.envelope_slopes_per_cell, [0.0, 0.0], atol=1e-14)

    def test_single_subgroup_finite_time(self):
        an = self.analysis(Zero())
        assert len(an.subgroups) == 1
        sg = an.subgroups[0]
        assert sg.cells == (0, 2)
        assert sg.psi == pytest.approx(0.0, abs=1e-15)
        # fully supercritical: collapses in finite time under any kernel
        assert sg.forecast is Forecast.FINITE_TIME_CLUSTER
        an2 = self.analysis(Exponential(1.0))
        assert an2.subgroups[0].forecast is Forecast.FINITE_TIME_CLUSTER

    def test_partition(self):
        kernel = Zero()
        ens = ensemble_with_psi([0.5, 0.5], [-1.0, 1.0], [1.0, -1.0], kernel)
        assert predicted_partition(analyze(ens, kernel), ens) == [(0, 2)]


def test_critical_pair_linear_kernel():
    # head-on raw velocities under the linear kernel give psi = (0, 0): the
    # flux is flat, the pair is critical, and aggregation takes forever
    kernel = AllToAll(1.0)
    ens = Ensemble.from_particles([0.5, 0.5], [-1.0, 1.0], [1.0, -1.0], kernel)
    np.testing.assert_allclose(ens.psi, [0.0, 0.0], atol=1e-15)
    an = analyze(ens, kernel)
    assert an.cell_labels == (RegionLabel.CRITICAL,) * 2
    assert len(an.subgroups) == 1
    assert an.subgroups[0].forecast is Forecast.INFINITE_TIME_CLUSTER
    # the singular-origin kernel instead promises a finite-time collapse
    k2 = PowerLaw(1.0, 0.5, 1.0)
    e2 = ensemble_with_psi([0.5, 0.5], [-1.0, 1.0], [0.0, 0.0], k2)
    assert analyze(e2, k2).subgroups[0].forecast is Forecast.FINITE_TIME_CLUSTER


def test_increasing_psi_is_all_subcritical():
    kernel = Exponential(1.0)
    ens = ensemble_with_psi(QUARTERS, [-3.0, -1.0, 1.0, 3.0],
                            [-2.0, -1.0, 1.0, 2.0], kernel)
    an = analyze(ens, kernel)
    assert an.cell_labels == (RegionLabel.SUBCRITICAL,) * 4
    assert [sg.forecast for sg in an.subgroups] == [Forecast.NO_CLUSTER] * 4
    assert [sg.cells for sg in an.subgroups] == [(0, 1), (1, 2), (2, 3), (3, 4)]
    assert predicted_partition(an, ens) == [(0, 1), (1, 2), (2, 3), (3, 4)]


def test_repeated_slope_makes_critical_run():
    # psi = (1, 1, 3): the first two cells share one envelope segment
    kernel = Exponential(1.0)
    ens = ensemble_with_psi([1 / 3, 1 / 3, 1 / 3], [-1.0, 0.0, 1.0],
                            [1.0, 1.0, 3.0], kernel, normalize=True)
    an = analyze(ens, kernel)
    assert an.cell_labels == (RegionLabel.CRITICAL, RegionLabel.CRITICAL,
                              RegionLabel.SUBCRITICAL)
    assert len(an.subgroups) == 2
    sg1, sg2 = an.subgroups
    assert sg1.cells == (0, 2) and sg1.psi == pytest.approx(1.0)
    assert sg1.forecast is Forecast.INFINITE_TIME_CLUSTER
    assert sg2.cells == (2, 3) and sg2.psi == pytest.approx(3.0)
    assert sg2.forecast is Forecast.NO_CLUSTER
    np.testing.assert_allclose(an.envelope_slopes_per_cell, [1.0, 1.0, 3.0],
                               atol=1e-13)


class TestMixedScenario:
    """psi = (2, -1, 0, 3): a three-cell supercritical block, then a loner."""

    def analysis(self, kernel=Zero()):
        ens = ensemble_with_psi(QUARTERS, [-0.6, -0.2, 0.2, 0.6],
                                [2.0, -1.0, 0.0, 3.0], kernel)
        return analyze(ens, kernel), ens

    def test_labels(self):
        an, _ = self.analysis()
        assert an.cell_labels == (RegionLabel.SUPERCRITICAL,) * 3 + (RegionLabel.SUBCRITICAL,)
        assert [(r.m_lo, r.m_hi, r.label) for r in an.regions] == [
            (0.0, 0.75, RegionLabel.SUPERCRITICAL),
            (0.75, 1.0, RegionLabel.SUBCRITICAL),
        ]

    def test_subgroups(self):
        an, _ = self.analysis()
        assert [sg.cells for sg in an.subgroups] == [(0, 3), (3, 4)]
        assert an.subgroups[0].psi == pytest.approx(1 / 3)
        assert an.subgroups[0].forecast is Forecast.FINITE_TIME_CLUSTER

    def test_partition(self):
        an, ens = self.analysis()
        assert predicted_partition(an, ens) == [(0, 3), (3, 4)]

    def test_subgroup_at(self):
        an, _ = self.analysis()
        assert an.subgroup_at(0.0).cells == (0, 3)
        assert an.subgroup_at(0.74).cells == (0, 3)
        assert an.subgroup_at(0.75).cells == (3, 4)
        assert an.subgroup_at(1.0).cells == (3, 4)
        with pytest.raises(ValueError):
            an.subgroup_at(1.5)

    def test_simulation_realizes_forecast(self):
        kernel = PowerLaw(1.0, 0.5, 1.0)
        ens = ensemble_with_psi(QUARTERS, [-0.6, -0.2, 0.2, 0.6],
                                [2.0, -1.0, 0.0, 3.0], kernel)
        an = analyze(ens, kernel)
        rec = simulate(ens, kernel, 10.0, 2.5)
        assert rec.partition_at(10.0) == predicted_partition(an, ens)


def test_initial_clusters_stay_bonded():
    # two coincident particles with otherwise increasing psi: the pre-merged
    # bond survives in the forecast even though the flux says subcritical
    kernel = Zero()
    ens = Ensemble.from_particles([0.25, 0.25, 0.5], [0.0, 0.0, 1.0],
                                  [-1.0, 0.0, 1.0], kernel)
    an = analyze(ens, kernel)
    assert predicted_partition(an, ens) == [(0, 2), (2, 3)]


def test_galilean_shift_invariance(rng):
    for _ in range(10):
        ens, kernel = random_scenario(rng, 15)
        shifted = Ensemble.from_particles(ens.cell_masses, ens.cell_positions,
                                          ens.cell_velocities + 2.5, kernel)
        a1 = analyze(ens, kernel)
        a2 = analyze(shifted, kernel)
        assert a1.cell_labels == a2.cell_labels
        assert [sg.cells for sg in a1.subgroups] == [sg.cells for sg in a2.subgroups]
        for s1, s2 in zip(a1.subgroups, a2.subgroups):
            assert s2.psi - s1.psi == pytest.approx(2.5, abs=1e-12)


def test_envelope_slopes_match_isotonic(rng):
    from stickyalign import project_monotone
    for _ in range(10):
        ens, kernel = random_scenario(rng, 20)
        an = analyze(ens, kernel)
        iso = project_monotone(ens.cell_psi, weights=ens.cell_masses)
        np.testing.assert_allclose(an.envelope_slopes_per_cell, iso,
                                   rtol=1e-9, atol=1e-12)


def test_analysis_uses_cells_not_clusters(rng):
    """The predictor reads frozen initial data, so a later snapshot of the
    run yields the identical flux."""
    ens, kernel = random_scenario(rng, 12)
    rec = simulate(ens, kernel, 2.0, 1.0)
    A0 = build_flux(ens)
    A2 = build_flux(rec.snapshot_at(2.0))
    np.testing.assert_array_equal(A0.nodes, A2.nodes)
    np.testing.assert_array_equal(A0.values, A2.values)


def test_eps_env_override():
    kernel = Zero()
    ens = ensemble_with_psi([0.5, 0.5], [-1.0, 1.0], [1.0, -1.0], kernel)
    an = analyze(ens, kernel, eps_env=10.0)  # swallow the whole tent
    assert RegionLabel.SUPERCRITICAL not in an.cell_labels


# -- separation bound ----------------------------------------------------


def test_separation_bound_branches():
    kernel = Exponential(1.0)
    ens = ensemble_with_psi([0.5, 0.5], [-2.0, 2.0], [-1.0, 1.0], kernel)
    an = analyze(ens, kernel)
    q = ens.to_quantile()
    # sigma = 1, eta = 2 Phi^{-1}(1/2) = 2 ln 2 < initial gap 4
    assert separation_bound(an, q, 0.25, 0.75) == pytest.approx(2.0 * math.log(2.0))
    near = ensemble_with_psi([0.5, 0.5], [-0.1, 0.1], [-1.0, 1.0], kernel)
    assert separation_bound(analyze(near, kernel), near.to_quantile(),
                            0.25, 0.75) == pytest.approx(0.2)


def test_separation_bound_vanishing_kernel_keeps_initial_gap():
    kernel = Zero()
    ens = ensemble_with_psi([0.5, 0.5], [-1.5, 1.5], [-1.0, 1.0], kernel)
    out = separation_bound(analyze(ens, kernel), ens.to_quantile(), 0.0, 1.0)
    assert out == pytest.approx(3.0)


def test_separation_bound_needs_distinct_subgroups():
    kernel = Exponential(1.0)
    ens = ensemble_with_psi([0.5, 0.5], [-1.0, 1.0], [1.0, -1.0], kernel)
    an = analyze(ens, kernel)  # one subgroup: slopes equal
    with pytest.raises(ValueError, match="increasing"):
        separation_bound(an, ens.to_quantile(), 0.25, 0.75)


# -- flocking thresholds -------------------------------------------------


def test_thin_tail_rate():
    kernel = Exponential(1.0)  # l1 norm 2
    ens = ensemble_with_psi([0.5, 0.5], [-1.0, 1.0], [-1.5, 1.5], kernel)
    th = flocking_thresholds(analyze(ens, kernel), 0, 1)
    assert th.regime is Regime.THIN_TAIL_DIVERGE
    assert th.rate == pytest.approx(1.0)
    assert th.lower is None and th.upper is None


def test_fat_tail_band():
    kernel = AllToAll(1.0)
    ens = Ensemble.from_particles([0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5], kernel)
    np.testing.assert_allclose(ens.psi, [-1.0, 1.0], atol=1e-15)
    th = flocking_thresholds(analyze(ens, kernel), 0, 1)
    assert th.regime is Regime.FAT_TAIL_BOUND
    assert th.rate is None
    assert th.upper == pytest.approx(2.0)  # Phi^{-1}(gap / mass span)
    assert th.lower == pytest.approx(2.0)  # 2 Phi^{-1}(gap / 2)


def test_bounded_regime_out_of_range_threshold():
    kernel = Exponential(1.0)  # sup Phi = 1
    ens = ensemble_with_psi([0.5, 0.5], [-1.0, 1.0], [-0.75, 0.75], kernel)
    th = flocking_thresholds(analyze(ens, kernel), 0, 1)
    assert th.regime is Regime.FAT_TAIL_BOUND
    assert th.upper is None  # gap / span = 1.5 exceeds sup Phi
    assert th.lower == pytest.approx(2.0 * -math.log1p(-0.75))


def test_flocking_thresholds_argument_checks():
    kernel = Exponential(1.0)
    ens = ensemble_with_psi([0.5, 0.5], [-1.0, 1.0], [-1.0, 1.0], kernel)
    an = analyze(ens, kernel)
    with pytest.raises(ValueError):
        flocking_thresholds(an, 1, 0)
    with pytest.raises(ValueError):
        flocking_thresholds(an, 0, 5)
