"""Counting budget, scan geometry, and Poisson spectrum generation."""

import numpy as np
import pytest

from sawmoss import specgen
from sawmoss.errors import InputError
from sawmoss.physics import ScanParams


class TestBudget:
    def test_detected_fraction_matches_published_chain(self):
        budget = specgen.compute_budget()
        # 0.998 * 0.89 * 1/(1+8.56) * 3.2e-5 * 0.42 = 1.25e-6, quoted as 1.3e-6
        assert budget.detected_fraction_14kev == pytest.approx(1.3e-6, rel=0.05)
        assert budget.detected_fraction_14kev == pytest.approx(
            0.998 * 0.89 / 9.56 * 3.2e-5 * 0.42, rel=1e-12
        )

    def test_total_rate_near_published(self):
        budget = specgen.compute_budget()
        assert budget.total_rate_hz == pytest.approx(2.1e3, rel=0.05)
        assert budget.per_bin_rate_hz == pytest.approx(2.2, rel=0.05)

    def test_ten_days_of_two_hertz_bins(self):
        budget = specgen.compute_budget()
        mean_counts = budget.per_bin_rate_hz * budget.duration_s
        assert mean_counts == pytest.approx(1.9e6, rel=0.05)
        assert 1.0 / np.sqrt(mean_counts) == pytest.approx(7e-4, rel=0.05)

    def test_zero_solid_angle_kills_all_rates(self):
        budget = specgen.compute_budget(solid_angle_fraction=0.0)
        assert budget.resonant_rate_hz == 0.0
        assert budget.compton_rate_hz == 0.0
        assert budget.total_rate_hz == 0.0

    def test_removing_single_factors_scales_inversely(self):
        reference = specgen.compute_budget().detected_fraction_14kev
        cases = {
            "ec_branching": 0.998,
            "transition_probability": 0.89,
            "solid_angle_fraction": 3.2e-5,
            "substrate_transmission": 0.42,
        }
        for key, value in cases.items():
            removed = specgen.compute_budget(**{key: 1.0}).detected_fraction_14kev
            assert removed / reference == pytest.approx(1.0 / value, rel=1e-12)
        no_ic = specgen.compute_budget(internal_conversion_coeff=0.0).detected_fraction_14kev
        assert no_ic / reference == pytest.approx(1.0 + 8.56, rel=1e-12)

    def test_budget_consistency_enforced(self):
        with pytest.raises(ValueError):
            specgen.CountingBudget(
                source_activity_bq=1e9,
                detected_fraction_14kev=1e-6,
                resonant_rate_hz=1000.0,
                compton_rate_hz=380.0,
                mismatch_rate_hz=360.0,
                total_rate_hz=2000.0,
                per_bin_rate_hz=2.0,
                duration_s=1.0,
            )


class TestScanMap:
    def test_monotone_and_extremes(self):
        scan = ScanParams(n_channels=1000)
        v = specgen.channel_velocities(scan)
        assert np.all(np.diff(v) > 0)
        width = 38.0 / 1000
        assert v[0] == pytest.approx(-19 + width / 2, rel=1e-12)
        assert v[-1] == pytest.approx(19 - width / 2, rel=1e-12)

    def test_mid_channel_near_zero(self):
        scan = ScanParams(n_channels=1024)
        v = specgen.channel_velocities(scan)
        width = 38.0 / 1024
        assert abs(v[512]) <= width / 2

    def test_decelerating_half_is_mirrored(self):
        both = specgen.acceleration_to_channel_map(ScanParams(n_channels=256))
        assert np.allclose(both["decelerating"], both["accelerating"][::-1])
        assert np.all(np.diff(both["decelerating"]) < 0)


class TestBaseline:
    def test_normalized_coordinate_spans_unit_interval(self):
        t = specgen.normalized_channel_coordinate(1000)
        assert t[0] == pytest.approx(-1 + 1e-3)
        assert t[-1] == pytest.approx(1 - 1e-3)

    def test_polynomial_shape(self):
        t = np.array([-1.0, 0.0, 1.0])
        shape = specgen.baseline_polynomial([0.1, 0.2], t)
        assert np.allclose(shape, [1 - 0.1 + 0.2, 1.0, 1 + 0.1 + 0.2])

    def test_rejects_sixth_order(self):
        with pytest.raises(InputError):
            specgen.baseline_polynomial([1, 2, 3, 4, 5, 6], np.zeros(3))


def small_budget(rate=50.0, duration=100.0):
    return specgen.CountingBudget(
        source_activity_bq=1e9,
        detected_fraction_14kev=1e-6,
        resonant_rate_hz=1000.0,
        compton_rate_hz=380.0,
        mismatch_rate_hz=360.0,
        total_rate_hz=1740.0,
        per_bin_rate_hz=rate,
        duration_s=duration,
    )


class TestGenerateCounts:
    def test_deterministic_per_seed(self):
        scan = ScanParams(n_channels=512)
        spectrum = np.zeros(512)
        a = specgen.generate_counts(spectrum, small_budget(), [0.01], 0.03, 99, scan)
        b = specgen.generate_counts(spectrum, small_budget(), [0.01], 0.03, 99, scan)
        c = specgen.generate_counts(spectrum, small_budget(), [0.01], 0.03, 100, scan)
        assert np.array_equal(a.counts, b.counts)
        assert not np.array_equal(a.counts, c.counts)

    def test_zero_contrast_flat_statistics(self):
        scan = ScanParams(n_channels=10000)
        budget = small_budget(rate=100.0, duration=10.0)
        spec = specgen.generate_counts(np.zeros(10000), budget, [], 0.0, 7, scan)
        expected = 1000.0
        z = (spec.counts.mean() - expected) / np.sqrt(expected / 10000)
        assert abs(z) < 3

    def test_three_percent_contrast_dip_depth(self):
        scan = ScanParams(n_channels=2048)
        spectrum = np.zeros(2048)
        spectrum[1024] = 1.0  # deepest resonance, normalized scale
        budget = small_budget(rate=2.2, duration=864000.0)
        spec = specgen.generate_counts(spectrum, budget, [], 0.03, 5, scan)
        baseline = np.median(spec.counts).astype(float)
        depth = 1.0 - spec.counts[1024] / baseline
        assert depth == pytest.approx(0.03, abs=3 * 1.0 / np.sqrt(baseline))

    def test_mean_convergence_one_over_sqrt_k(self):
        scan = ScanParams(n_channels=256)
        budget = small_budget(rate=40.0, duration=10.0)
        t = specgen.normalized_channel_coordinate(256)
        spectrum = np.exp(-(((t) / 0.2) ** 2))  # arbitrary smooth dip
        expected = budget.duration_s * budget.per_bin_rate_hz * (1 - 0.05 * spectrum)
        k = 100
        seeds = specgen.derive_spectrum_seeds(2024, k)
        total = np.zeros(256)
        for seed in seeds:
            total += specgen.generate_counts(spectrum, budget, [], 0.05, seed, scan).counts
        mean = total / k
        z = (mean - expected) * np.sqrt(k) / np.sqrt(expected)
        assert abs(z.mean()) < 3 / np.sqrt(256)
        assert 0.85 < z.std() < 1.15

    def test_invalid_inputs(self):
        scan = ScanParams(n_channels=8)
        with pytest.raises(InputError):
            specgen.generate_counts(np.zeros(8), small_budget(), [], 1.0, 0, scan)
        with pytest.raises(InputError):
            specgen.generate_counts(np.zeros(8), small_budget(), [], -0.1, 0, scan)
        with pytest.raises(InputError):
            specgen.generate_counts(np.full(8, 2.0), small_budget(), [], 0.03, 0, scan)
        with pytest.raises(InputError):
            specgen.generate_counts(np.zeros(7), small_budget(), [], 0.03, 0, scan)
        with pytest.raises(InputError):
            # baseline that goes negative drives expected counts below zero
            specgen.generate_counts(np.zeros(8), small_budget(), [-2.0], 0.03, 0, scan)


class TestSeeds:
    def test_spawned_streams_are_stable_and_distinct(self):
        seeds = specgen.derive_spectrum_seeds(123, 8)
        assert seeds == specgen.derive_spectrum_seeds(123, 8)
        assert len(set(seeds)) == 8
        # prefix stability: adding spectra keeps earlier streams unchanged
        assert specgen.derive_spectrum_seeds(123, 4) == seeds[:4]
