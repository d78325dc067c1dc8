"""Channel-to-velocity calibration against the reference line pattern."""

import numpy as np
import pytest

from conftest import modulation_model, synthesize_counts
from sawmoss import calib, physics, specfit
from sawmoss.errors import CalibrationError

SPACING = specfit.sideband_spacing_mm_s(2 * np.pi * 97.9e6)


def make_fit(scan, mod_index=2.17, positions=None, sigma_channels=0.05, scheme=None):
    """Fabricate a SpectrumFit with prescribed positions and uncertainties."""
    scheme = scheme or physics.default_alpha_fe_scheme()
    model = specfit.build_fit_model(scheme, modulation_model(mod_index), scan)
    params = np.empty(model.n_params)
    params[0] = 1e6
    params[1:6] = 0.0
    params[model.slice_amplitudes] = model.initial_amplitudes
    params[model.slice_positions] = (
        model.initial_positions if positions is None else np.asarray(positions, float)
    )
    params[model.index_linewidth] = model.initial_linewidth
    covariance = np.zeros((model.n_params, model.n_params))
    pos = np.arange(model.slice_positions.start, model.slice_positions.stop)
    covariance[pos, pos] = sigma_channels**2
    return specfit.SpectrumFit(
        model=model,
        params=params,
        covariance=covariance,
        chi2_reduced=1.0,
        residuals=np.zeros(scan.n_channels),
        converged=True,
        singular_covariance=False,
        n_iterations=1,
    )


def true_map(scan):
    width = (scan.v_max_mm_s - scan.v_min_mm_s) / scan.n_channels
    slope = width if scan.direction == "accelerating" else -width
    intercept = (
        scan.v_min_mm_s + width / 2
        if scan.direction == "accelerating"
        else scan.v_max_mm_s - width / 2
    )
    return slope, intercept


class TestExactRoundTrip:
    def test_affine_map_recovered_exactly(self, scan_2048):
        slope, intercept = true_map(scan_2048)
        fit = make_fit(scan_2048)
        positions = (np.array([g.velocity_mm_s for g in fit.model.groups]) - intercept) / slope
        fit = make_fit(scan_2048, positions=positions)
        result = calib.calibrate(fit, fit.model.scheme, SPACING)
        assert result.slope_mm_s_per_channel == pytest.approx(slope, rel=1e-12)
        assert result.intercept_mm_s == pytest.approx(intercept, rel=1e-12)
        assert np.max(np.abs(result.residuals_mm_s)) < 1e-12

    def test_channel_shift_absorbed_by_intercept(self, scan_2048):
        slope, intercept = true_map(scan_2048)
        base = make_fit(scan_2048)
        positions = (np.array([g.velocity_mm_s for g in base.model.groups]) - intercept) / slope
        shifted = make_fit(scan_2048, positions=positions + 40.0)
        result = calib.calibrate(shifted, shifted.model.scheme, SPACING)
        assert result.slope_mm_s_per_channel == pytest.approx(slope, rel=1e-12)
        assert result.intercept_mm_s == pytest.approx(intercept - 40.0 * slope, rel=1e-9)


class TestNoisyRecovery:
    def test_three_sigma_round_trip(self, scan_2048):
        slope, intercept = true_map(scan_2048)
        rng = np.random.default_rng(17)
        fit0 = make_fit(scan_2048)
        exact = (np.array([g.velocity_mm_s for g in fit0.model.groups]) - intercept) / slope
        sigma_ch = 0.3
        fit = make_fit(scan_2048, positions=exact + sigma_ch * rng.standard_normal(exact.size),
                       sigma_channels=sigma_ch)
        result = calib.calibrate(fit, fit.model.scheme, SPACING)
        assert abs(result.slope_mm_s_per_channel - slope) < 3 * result.slope_uncertainty
        assert abs(result.intercept_mm_s - intercept) < 3 * result.intercept_uncertainty

    def test_no_quadratic_trend_on_synthetic_data(self, scan_2048):
        spectrum = synthesize_counts(2.17, scan_2048, seed=6)
        model = specfit.build_fit_model(
            physics.default_alpha_fe_scheme(), modulation_model(2.17), scan_2048
        )
        fit = specfit.fit_spectrum(spectrum, model)
        result = calib.calibrate(fit, model.scheme, SPACING)
        # weighted quadratic coefficient consistent with zero at 95%
        ch = result.matched_channels
        sigma = np.maximum(np.abs(result.residuals_mm_s), 1e-6)
        design = np.column_stack([ch**2, ch, np.ones_like(ch)])
        w = 1.0 / np.var(result.residuals_mm_s)
        normal = design.T @ design * w
        coeff = np.linalg.solve(normal, design.T @ result.residuals_mm_s * w)
        cov = np.linalg.inv(normal)
        t_stat = abs(coeff[0]) / np.sqrt(cov[0, 0])
        assert t_stat < 1.96

    def test_full_range_linearity(self, scan_2048):
        spectrum = synthesize_counts(2.17, scan_2048, seed=9)
        model = specfit.build_fit_model(
            physics.default_alpha_fe_scheme(), modulation_model(2.17), scan_2048
        )
        fit = specfit.fit_spectrum(spectrum, model)
        result = calib.calibrate(fit, model.scheme, SPACING)
        assert result.rms_mm_s < 0.05
        assert result.matched_channels.size >= 12


class TestDriftDetection:
    def test_two_percent_slope_drift_detected(self, scan_2048):
        slope, intercept = true_map(scan_2048)
        results = []
        rng = np.random.default_rng(23)
        for factor in (1.0, 1.02):
            fit0 = make_fit(scan_2048)
            exact = (np.array([g.velocity_mm_s for g in fit0.model.groups]) - intercept) / (
                slope * factor
            )
            sigma_ch = 0.05
            fit = make_fit(
                scan_2048,
                positions=exact + sigma_ch * rng.standard_normal(exact.size),
                sigma_channels=sigma_ch,
            )
            results.append(calib.calibrate(fit, fit.model.scheme, SPACING))
        for result, factor in zip(results, (1.0, 1.02)):
            assert abs(result.slope_mm_s_per_channel - slope * factor) < 3 * result.slope_uncertainty
        separation = abs(
            results[0].slope_mm_s_per_channel - results[1].slope_mm_s_per_channel
        ) / np.sqrt(results[0].slope_uncertainty ** 2 + results[1].slope_uncertainty ** 2)
        assert separation > 3.0


class TestFailureModes:
    def test_ambiguous_matching_raises(self, scan_2048):
        slope, intercept = true_map(scan_2048)
        fit0 = make_fit(scan_2048)
        exact = (np.array([g.velocity_mm_s for g in fit0.model.groups]) - intercept) / slope
        # collapse two neighboring peaks onto one position
        exact[3] = exact[4]
        fit = make_fit(scan_2048, positions=exact)
        with pytest.raises(CalibrationError, match="ambiguous"):
            calib.calibrate(fit, fit.model.scheme, SPACING)

    def test_residual_gate_enforced(self, scan_2048):
        slope, intercept = true_map(scan_2048)
        rng = np.random.default_rng(3)
        fit0 = make_fit(scan_2048)
        exact = (np.array([g.velocity_mm_s for g in fit0.model.groups]) - intercept) / slope
        noisy = exact + 10.0 * rng.standard_normal(exact.size)
        fit = make_fit(scan_2048, positions=noisy, sigma_channels=10.0)
        with pytest.raises(CalibrationError):
            calib.calibrate(fit, fit.model.scheme, SPACING, match_radius_mm_s=60.0)

    def test_velocity_application(self, scan_2048):
        slope, intercept = true_map(scan_2048)
        fit0 = make_fit(scan_2048)
        exact = (np.array([g.velocity_mm_s for g in fit0.model.groups]) - intercept) / slope
        fit = make_fit(scan_2048, positions=exact)
        result = calib.calibrate(fit, fit.model.scheme, SPACING)
        assert result.velocity(np.array([0.0]))[0] == pytest.approx(intercept, rel=1e-9)
