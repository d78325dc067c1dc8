"""Sideband weights, amplitude statistics, and spectrum synthesis."""

import math

import numpy as np
import pytest
from scipy import special

from sawmoss import floquet, physics
from sawmoss.errors import DomainError

OMEGA_SAW = 2 * np.pi * 97.9e6
GAMMA = physics.DEFAULT_CONSTANTS.photon_wavenumber_m * 0.2434e-3  # ~11.7 neV FWHM


def series_bessel(n, z, terms=50):
    """Independent oracle: ascending power series, 50 terms."""
    total = 0.0
    for k in range(terms):
        total += (-1) ** k * (z / 2.0) ** (n + 2 * k) / (math.factorial(k) * math.factorial(n + k))
    return total


def modulation(mod_index, alpha=0.36, **kw):
    return floquet.ModulationModel(
        mod_index=mod_index,
        reflection=alpha,
        saw_angular_freq_rad_s=kw.get("saw", OMEGA_SAW),
        linewidth_rad_s=kw.get("gamma", GAMMA),
        scheme=kw.get("scheme"),
        max_order=kw.get("max_order"),
    )


class TestBessel:
    def test_j0_at_zero(self):
        assert floquet.bessel_j(0, 0.0) == 1.0

    def test_higher_orders_vanish_at_zero(self):
        for n in range(1, 13):
            assert floquet.bessel_j(n, 0.0) == 0.0

    def test_against_series_oracle(self):
        assert floquet.bessel_j(1, 2.0) == pytest.approx(series_bessel(1, 2.0), abs=1e-12)
        for n in (0, 2, 5, 12):
            for z in (0.3, 1.7, 4.0, 9.5):
                assert floquet.bessel_j(n, z) == pytest.approx(series_bessel(n, z), abs=1e-12)

    def test_against_scipy_across_envelope(self):
        rng = np.random.default_rng(11)
        for n in (0, 1, 3, 8, 12, 30, 64):
            z = np.concatenate([rng.uniform(0, 30, 100), rng.uniform(30, 200, 50)])
            assert np.max(np.abs(floquet.bessel_j(n, z) - special.jv(n, z))) < 1e-12

    def test_sum_rule(self):
        # The true tail beyond ceil(z)+10 orders reaches ~5e-9 at z = 20;
        # four more orders push it below 1e-10.
        for z in (0.5, 5.0, 12.0, 20.0):
            n10 = math.ceil(z) + 10
            total = floquet.bessel_j(0, z) ** 2 + 2 * sum(
                floquet.bessel_j(n, z) ** 2 for n in range(1, n10 + 1)
            )
            assert abs(1.0 - total) < 1e-8
            n14 = math.ceil(z) + 14
            total = floquet.bessel_j(0, z) ** 2 + 2 * sum(
                floquet.bessel_j(n, z) ** 2 for n in range(1, n14 + 1)
            )
            assert abs(1.0 - total) < 1e-10

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            floquet.bessel_j(-1, 1.0)
        with pytest.raises(DomainError):
            floquet.bessel_j(0, -0.5)
        with pytest.raises(DomainError):
            floquet.bessel_j(floquet.BESSEL_MAX_ORDER + 1, 1.0)
        with pytest.raises(DomainError):
            floquet.bessel_j(0, floquet.BESSEL_MAX_ARG + 1)


class TestEnvelope:
    def test_no_reflection_is_flat(self):
        x = np.linspace(0, 1e-4, 64)
        assert np.all(floquet.standing_wave_envelope(x, 0.0, 2e5) == 1.0)

    def test_maximum_at_origin(self):
        assert floquet.standing_wave_envelope(0.0, 0.25, 2e5) == pytest.approx(1.25, rel=1e-15)

    def test_quarter_period_value(self):
        # 2*k*x = pi/2 -> f = sqrt(1 + alpha^2)
        k = 2 * np.pi / 32e-6
        x = np.pi / (4 * k)
        assert floquet.standing_wave_envelope(x, 0.36, k) == pytest.approx(
            np.sqrt(1 + 0.36**2), rel=1e-12
        )

    def test_bounds_and_periodicity(self):
        k = 2 * np.pi / 32e-6
        x = np.linspace(0, 64e-6, 4001)
        f = floquet.standing_wave_envelope(x, 0.36, k)
        assert np.all(f <= 1.36 + 1e-12) and np.all(f >= 0.64 - 1e-12)
        assert np.allclose(
            f, floquet.standing_wave_envelope(x + np.pi / k, 0.36, k), atol=1e-12
        )


class TestAmplitudePdf:
    def test_matches_arcsine_cdf_derivative(self):
        # oracle: CDF(y) = arcsin((y^2-1-alpha^2)/(2 alpha))/pi + 1/2
        alpha = 0.36
        cdf = lambda y: np.arcsin((y**2 - 1 - alpha**2) / (2 * alpha)) / np.pi + 0.5
        for y in np.linspace(1 - alpha + 0.05, 1 + alpha - 0.05, 15):
            h = 1e-6
            oracle = (cdf(y + h) - cdf(y - h)) / (2 * h)
            assert floquet.amplitude_pdf(y, alpha) == pytest.approx(oracle, rel=1e-6)

    def test_normalization(self):
        from scipy import integrate

        alpha = 0.36
        total, err = integrate.quad(
            lambda y: floquet.amplitude_pdf(y, alpha), 1 - alpha, 1 + alpha, limit=200
        )
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_midpoint_closed_form(self):
        alpha = 0.36
        y = np.sqrt(1 + alpha**2)
        assert floquet.amplitude_pdf(y, alpha) == pytest.approx(
            2 * y / (np.pi * 2 * alpha), rel=1e-12
        )

    def test_degenerate_limit_concentrates_at_one(self):
        from scipy import integrate

        alpha = 1e-3
        mean, _ = integrate.quad(
            lambda y: y * floquet.amplitude_pdf(y, alpha), 1 - alpha, 1 + alpha, limit=200
        )
        assert mean == pytest.approx(1.0, abs=1e-3)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            floquet.amplitude_pdf(0.64, 0.36)  # at the lower endpoint
        with pytest.raises(DomainError):
            floquet.amplitude_pdf(1.5, 0.36)
        with pytest.raises(DomainError):
            floquet.amplitude_pdf(1.0, 0.0)


class TestSidebandPower:
    def test_zero_drive(self):
        assert floquet.sideband_power(0, 0.0, 0.36) == 1.0
        for n in (1, 2, 5):
            assert floquet.sideband_power(n, 0.0, 0.36) == 0.0

    def test_traveling_wave_reduces_to_squared_bessel(self):
        for n, m0 in [(0, 0.7), (1, 2.0), (2, 4.34)]:
            assert floquet.sideband_power(n, m0, 0.0) == pytest.approx(
                special.jv(n, m0) ** 2, abs=1e-14
            )

    def test_against_spatial_riemann_oracle(self):
        # oracle: 1e6-point Riemann average of J_n(m0 f(x))^2 over one
        # standing-wave period, with scipy Bessel functions
        n, m0, alpha = 1, 2.0, 0.36
        theta = (np.arange(1_000_000) + 0.5) * np.pi / 1_000_000
        y = np.sqrt(1 + alpha**2 + 2 * alpha * np.cos(theta))
        oracle = float(np.mean(special.jv(n, m0 * y) ** 2))
        assert floquet.sideband_power(n, m0, alpha) == pytest.approx(oracle, abs=1e-6)

    def test_symmetric_in_order(self):
        assert floquet.sideband_power(-2, 3.0, 0.36) == floquet.sideband_power(2, 3.0, 0.36)

    def test_weights_sum_to_one(self):
        for m0 in (0.5, 2.0, 5.0):
            for alpha in (0.0, 0.36, 0.7):
                n_max = floquet.default_order_cutoff(m0, alpha) + 8
                total = floquet.sideband_power(0, m0, alpha) + 2 * sum(
                    floquet.sideband_power(n, m0, alpha) for n in range(1, n_max + 1)
                )
                assert total == pytest.approx(1.0, abs=1e-8)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            floquet.sideband_power(0, -1.0, 0.3)
        with pytest.raises(DomainError):
            floquet.sideband_power(0, 1.0, 1.0)


class TestModulationModel:
    def test_default_cutoff_keeps_weight(self):
        model = modulation(5.0)
        weights = floquet.sideband_weights(model)
        assert float(weights.weights.sum()) >= 1 - 1e-6
        assert weights.orders.tolist() == list(range(-model.max_order, model.max_order + 1))

    def test_truncation_rejected(self):
        with pytest.raises(ValueError):
            modulation(5.0, max_order=2)

    def test_validation(self):
        with pytest.raises(ValueError):
            modulation(-1.0)
        with pytest.raises(ValueError):
            modulation(1.0, alpha=1.0)


def count_local_maxima(values):
    interior = (values[1:-1] > values[:-2]) & (values[1:-1] > values[2:])
    return int(np.sum(interior))


class TestSynthesize:
    def test_unmodulated_sextet_has_six_peaks(self):
        v = np.linspace(-19, 19, 8001)
        spectrum = floquet.synthesize_spectrum(modulation(0.0), v)
        assert count_local_maxima(spectrum) == 6
        assert np.all(spectrum >= 0)

    def test_driven_spectrum_shows_18_peaks(self):
        v = np.linspace(-19, 19, 8001)
        spectrum = floquet.synthesize_spectrum(modulation(2.17), v)
        assert count_local_maxima(spectrum) == 18

    def test_exact_overlap_merges_30_components_into_18_peaks(self):
        # Drive frequency tuned so sidebands land exactly on other lines:
        # spacing = (outer + middle) distance from the centroid.
        scheme = physics.default_alpha_fe_scheme()
        v_lines = np.array(scheme.line_velocities_mm_s) - scheme.centroid_mm_s
        spacing = v_lines[5] + v_lines[4]
        k0 = physics.DEFAULT_CONSTANTS.photon_wavenumber_m
        saw = k0 * spacing * 1e-3
        v = np.linspace(-19, 19, 20001)
        narrow = k0 * 0.15e-3  # resolve would-be splittings
        model = floquet.ModulationModel(
            mod_index=2.0, reflection=0.36, saw_angular_freq_rad_s=saw, linewidth_rad_s=narrow
        )
        assert count_local_maxima(floquet.synthesize_spectrum(model, v)) == 18
        # detuned weak drive with all 6 x 5 order <= 2 components in the
        # window and mutually resolved (narrow lines keep the faintest
        # sidebands above the tail slopes of their neighbors)
        v_fine = np.linspace(-19, 19, 40001)
        model_off = floquet.ModulationModel(
            mod_index=0.24,
            reflection=0.36,
            saw_angular_freq_rad_s=k0 * 6.5e-3,
            linewidth_rad_s=k0 * 0.05e-3,
            max_order=2,
        )
        assert count_local_maxima(floquet.synthesize_spectrum(model_off, v_fine)) == 30

    def test_mirror_symmetry_about_centroid(self):
        scheme = physics.default_alpha_fe_scheme()
        u = np.linspace(-18, 18, 4097)
        spectrum = floquet.synthesize_spectrum(modulation(1.5), scheme.centroid_mm_s + u)
        assert np.allclose(spectrum, spectrum[::-1], rtol=1e-9)

    def test_integral_independent_of_drive(self):
        v = np.arange(-250.0, 250.0, 0.025)
        integrals = []
        for m0 in (0.0, 2.0, 5.0):
            spectrum = floquet.synthesize_spectrum(modulation(m0), v)
            integrals.append(np.trapezoid(spectrum, v))
        assert np.max(np.abs(np.array(integrals) / integrals[0] - 1)) < 1e-3
