"""Batch pipeline stages: synth -> fit -> calibrate -> extract -> globalfit.

Each stage reads its predecessor's files from the output directory and
writes its own, so stages can be re-run individually. All randomness
derives from the config seed; outputs are byte-stable for a fixed seed.
"""

from __future__ import annotations

import os

import numpy as np

from . import calib as calib_mod
from . import extract as extract_mod
from . import floquet, globalfit, idt, specfit, specgen
from .config import RunSetup, dumps_config
from .errors import InputError
from .fileio import read_csv, read_json, write_csv, write_json

__all__ = [
    "synth",
    "fit_stage",
    "calibrate_stage",
    "extract_stage",
    "globalfit_stage",
    "idt_model_stage",
    "idt_fit_stage",
    "run_pipeline",
]


def _spectra_dir(out_dir):
    return os.path.join(out_dir, "spectra")


def _label(power_index: int, direction: str) -> str:
    return f"p{power_index:02d}_{direction}"


def synth(setup: RunSetup, out_dir: str) -> list:
    """Generate the count spectra for the configured power grid.

    Includes a zero-power reference spectrum (index 0) per scan half; all
    spectra of one run share the normalization that puts the deepest
    zero-drive resonance at the configured contrast.
    """
    powers = [0.0] + setup.drive_powers_w()
    m = setup.config["modulation"]["m_per_sqrt_w"]
    budget = specgen.compute_budget(**setup.config["budget"])
    baseline = setup.config["baseline_coeffs"]
    contrast = setup.config["contrast"]

    entries = []
    seeds = specgen.derive_spectrum_seeds(setup.seed, len(powers) * len(setup.halves))
    seed_index = 0
    for direction in setup.halves:
        scan = setup.scan(direction)
        velocities = specgen.channel_velocities(scan)
        reference_max = float(
            np.max(floquet.synthesize_spectrum(setup.modulation_model(0.0), velocities, setup.constants))
        )
        for index, power in enumerate(powers):
            label = _label(index, direction)
            model = setup.modulation_model(m * np.sqrt(power))
            spectrum_values = (
                floquet.synthesize_spectrum(model, velocities, setup.constants) / reference_max
            )
            spectrum = specgen.generate_counts(
                spectrum_values,
                budget,
                baseline,
                contrast,
                seeds[seed_index],
                scan,
                drive_power_w=power,
                label=label,
            )
            seed_index += 1
            write_csv(
                os.path.join(_spectra_dir(out_dir), f"{label}.csv"),
                {"channel": spectrum.channels, "counts": spectrum.counts},
            )
            meta = {
                "label": label,
                "direction": direction,
                "drive_power_w": power,
                "power_index": index,
                "seed": spectrum.seed,
                "duration_s": spectrum.duration_s,
                "scan": {
                    "v_min_mm_s": scan.v_min_mm_s,
                    "v_max_mm_s": scan.v_max_mm_s,
                    "n_channels": scan.n_channels,
                    "direction": direction,
                },
            }
            write_json(os.path.join(_spectra_dir(out_dir), f"{label}.meta.json"), meta)
            entries.append(meta)
    write_json(os.path.join(_spectra_dir(out_dir), "manifest.json"), {"spectra": entries})
    return entries


def _load_spectrum(setup: RunSetup, out_dir: str, meta: dict) -> specgen.CountSpectrum:
    table = read_csv(os.path.join(_spectra_dir(out_dir), f"{meta['label']}.csv"))
    if "counts" not in table or "channel" not in table:
        raise InputError(f"spectrum file for {meta['label']} lacks channel/counts columns")
    scan = setup.scan(meta["direction"])
    return specgen.CountSpectrum(
        channels=table["channel"].astype(int),
        counts=table["counts"],
        scan=scan,
        drive_power_w=meta["drive_power_w"],
        seed=meta["seed"],
        duration_s=meta["duration_s"],
        label=meta["label"],
    )


def _manifest(out_dir: str) -> list:
    return read_json(os.path.join(_spectra_dir(out_dir), "manifest.json"))["spectra"]


def _fit_to_document(fit: specfit.SpectrumFit, meta: dict) -> dict:
    model = fit.model
    return {
        "label": meta["label"],
        "direction": meta["direction"],
        "drive_power_w": meta["drive_power_w"],
        "spacing_mm_s": model.spacing_mm_s,
        "grouping_tol_mm_s": model.grouping_tol_mm_s,
        "groups": [
            {
                "members": [list(member) for member in g.members],
                "velocity_mm_s": g.velocity_mm_s,
                "amp_group": g.amp_group,
                "y_index": g.y_index,
                "composition": [list(c) for c in g.composition],
            }
            for g in model.groups
        ],
        "n_amp_groups": model.n_amp_groups,
        "initial_positions": model.initial_positions.tolist(),
        "initial_amplitudes": model.initial_amplitudes.tolist(),
        "initial_linewidth": model.initial_linewidth,
        "params": fit.params.tolist(),
        "parameter_names": model.parameter_names(),
        "covariance": fit.covariance.tolist(),
        "chi2_reduced": fit.chi2_reduced,
        "converged": fit.converged,
        "singular_covariance": fit.singular_covariance,
        "n_iterations": fit.n_iterations,
        "flags": list(fit.flags),
        "residuals": fit.residuals.tolist(),
        "runs_test": dict(zip(("z", "p_value"), specfit.runs_test(fit.residuals))),
    }


def _fit_from_document(setup: RunSetup, doc: dict) -> specfit.SpectrumFit:
    groups = tuple(
        specfit.PeakGroup(
            members=tuple(tuple(member) for member in g["members"]),
            velocity_mm_s=g["velocity_mm_s"],
            amp_group=g["amp_group"],
            y_index=g["y_index"],
            composition=tuple(tuple(c) for c in g["composition"]),
        )
        for g in doc["groups"]
    )
    model = specfit.FitModel(
        scan=setup.scan(doc["direction"]),
        scheme=setup.scheme,
        spacing_mm_s=doc["spacing_mm_s"],
        groups=groups,
        initial_positions=np.array(doc["initial_positions"]),
        initial_amplitudes=np.array(doc["initial_amplitudes"]),
        initial_linewidth=doc["initial_linewidth"],
        n_amp_groups=doc["n_amp_groups"],
        grouping_tol_mm_s=doc["grouping_tol_mm_s"],
    )
    return specfit.SpectrumFit(
        model=model,
        params=np.array(doc["params"]),
        covariance=np.array(doc["covariance"]),
        chi2_reduced=doc["chi2_reduced"],
        residuals=np.array(doc["residuals"]),
        converged=doc["converged"],
        singular_covariance=doc["singular_covariance"],
        n_iterations=doc["n_iterations"],
        flags=list(doc["flags"]),
    )


def fit_stage(setup: RunSetup, out_dir: str) -> list:
    """Fit every generated spectrum with its peak template."""
    fit_cfg = setup.config["fit"]
    template_m = setup.template_m()
    documents = []
    for meta in _manifest(out_dir):
        spectrum = _load_spectrum(setup, out_dir, meta)
        model = specfit.build_fit_model(
            setup.scheme,
            setup.modulation_model(template_m * np.sqrt(meta["drive_power_w"])),
            spectrum.scan,
            constants=setup.constants,
            contrast_guess=fit_cfg["contrast_guess"],
            visibility_threshold=fit_cfg["visibility_threshold"],
            grouping_tol_mm_s=fit_cfg["grouping_tol_mm_s"],
        )
        fit = specfit.fit_spectrum(
            spectrum,
            model,
            max_iterations=fit_cfg["max_iterations"],
            chi2_rtol=fit_cfg["chi2_rtol"],
            step_tol=fit_cfg["step_tol"],
            min_position_snr=fit_cfg["min_position_snr"],
        )
        doc = _fit_to_document(fit, meta)
        write_json(os.path.join(out_dir, "fits", f"{meta['label']}.fit.json"), doc)
        documents.append(doc)
    return documents


def calibrate_stage(setup: RunSetup, out_dir: str) -> list:
    """Calibrate each fitted spectrum and write velocity-tagged normalized data."""
    calib_cfg = setup.config["calib"]
    spacing = setup.sideband_spacing_mm_s()
    reports = []
    for meta in _manifest(out_dir):
        label = meta["label"]
        doc = read_json(os.path.join(out_dir, "fits", f"{label}.fit.json"))
        fit = _fit_from_document(setup, doc)
        result = calib_mod.calibrate(
            fit,
            setup.scheme,
            spacing,
            residual_gate_mm_s=calib_cfg["residual_gate_mm_s"],
            match_radius_mm_s=calib_cfg["match_radius_mm_s"],
        )
        report = {
            "label": label,
            "slope_mm_s_per_channel": result.slope_mm_s_per_channel,
            "intercept_mm_s": result.intercept_mm_s,
            "slope_uncertainty": result.slope_uncertainty,
            "intercept_uncertainty": result.intercept_uncertainty,
            "rms_mm_s": result.rms_mm_s,
            "residuals_mm_s": result.residuals_mm_s.tolist(),
            "reference_velocities_mm_s": result.reference_velocities_mm_s.tolist(),
            "matched_channels": result.matched_channels.tolist(),
        }
        write_json(os.path.join(out_dir, "calib", f"{label}.calib.json"), report)

        spectrum = _load_spectrum(setup, out_dir, meta)
        normalized = specfit.normalize_by_baseline(spectrum, fit).with_velocity(
            result.velocity(spectrum.channels)
        )
        write_csv(
            os.path.join(out_dir, "fits", f"{label}.normalized.csv"),
            {
                "channel": normalized.channels,
                "velocity_mm_s": normalized.velocity_mm_s,
                "normalized": normalized.values,
                "sigma": normalized.sigma,
            },
        )
        reports.append(report)
    return reports


def extract_stage(setup: RunSetup, out_dir: str) -> dict:
    """Integrate peaks and invert the overlap matrix for every spectrum."""
    min_cpl = setup.config["extract"]["min_channels_per_linewidth"]
    metas = _manifest(out_dir)
    references = {}
    for meta in metas:
        if meta["power_index"] == 0:
            doc = read_json(os.path.join(out_dir, "fits", f"{meta['label']}.fit.json"))
            references[meta["direction"]] = extract_mod.reference_intensities(
                _fit_from_document(setup, doc)
            )
    if not references:
        raise InputError("extraction requires a zero-power reference spectrum per half")

    rows = {
        "power_index": [],
        "half": [],
        "drive_power_w": [],
        "p0": [],
        "p1": [],
        "p2": [],
        "sigma_p0": [],
        "sigma_p1": [],
        "sigma_p2": [],
        "cov_p0_p1": [],
        "cov_p0_p2": [],
        "cov_p1_p2": [],
    }
    details = []
    for meta in metas:
        label = meta["label"]
        fit = _fit_from_document(setup, read_json(os.path.join(out_dir, "fits", f"{label}.fit.json")))
        table = read_csv(os.path.join(out_dir, "fits", f"{label}.normalized.csv"))
        normalized = specfit.NormalizedSpectrum(
            channels=table["channel"],
            values=table["normalized"],
            sigma=table["sigma"],
            velocity_mm_s=table["velocity_mm_s"],
        )
        cal = read_json(os.path.join(out_dir, "calib", f"{label}.calib.json"))
        gamma_v = fit.linewidth_channels * abs(cal["slope_mm_s_per_channel"])
        integrals = extract_mod.integrate_peaks(
            normalized, fit, gamma_v, min_channels_per_linewidth=min_cpl
        )
        abc = references[meta["direction"]]
        matrix = extract_mod.build_overlap_matrix(*abc)
        powers = extract_mod.invert_for_powers(
            integrals.y, integrals.sigma_y, matrix, drive_power_w=meta["drive_power_w"]
        )
        rows["power_index"].append(meta["power_index"])
        rows["half"].append(0 if meta["direction"] == "accelerating" else 1)
        rows["drive_power_w"].append(meta["drive_power_w"])
        for i in range(3):
            rows[f"p{i}"].append(powers.p[i])
            rows[f"sigma_p{i}"].append(np.sqrt(powers.covariance[i, i]))
        rows["cov_p0_p1"].append(powers.covariance[0, 1])
        rows["cov_p0_p2"].append(powers.covariance[0, 2])
        rows["cov_p1_p2"].append(powers.covariance[1, 2])
        details.append(
            {
                "label": label,
                "y": integrals.y.tolist(),
                "sigma_y": integrals.sigma_y.tolist(),
                "flags": list(integrals.flags),
                "reference_intensities_inner_middle_outer": list(abc),
            }
        )
    write_csv(os.path.join(out_dir, "extract", "sideband_powers.csv"), rows)
    write_json(os.path.join(out_dir, "extract", "details.json"), {"spectra": details})
    return rows


def globalfit_stage(setup: RunSetup, out_dir: str) -> dict:
    """Fit (m, alpha) across the power grid and derive C_perp."""
    gcfg = setup.config["globalfit"]
    table = read_csv(os.path.join(out_dir, "extract", "sideband_powers.csv"))
    points = []
    for i in range(table["drive_power_w"].size):
        cov = np.array(
            [
                [table["sigma_p0"][i] ** 2, table["cov_p0_p1"][i], table["cov_p0_p2"][i]],
                [table["cov_p0_p1"][i], table["sigma_p1"][i] ** 2, table["cov_p1_p2"][i]],
                [table["cov_p0_p2"][i], table["cov_p1_p2"][i], table["sigma_p2"][i] ** 2],
            ]
        )
        points.append(
            extract_mod.SidebandPowers(
                p=np.array([table["p0"][i], table["p1"][i], table["p2"][i]]),
                covariance=cov,
                drive_power_w=float(table["drive_power_w"][i]),
            )
        )
    result = globalfit.fit_global(
        points,
        eta=gcfg["eta"],
        constants=setup.constants,
        init_m=gcfg["init_m"],
        init_alpha=gcfg["init_alpha"],
        init_norm=gcfg["init_norm"],
        alpha_max=gcfg["alpha_max"],
        log_m=gcfg["log_m"],
    )
    report = {
        "m_per_sqrt_w": result.m_per_sqrt_w,
        "m_uncertainty": result.m_uncertainty,
        "alpha": result.alpha,
        "alpha_uncertainty": result.alpha_uncertainty,
        "norm": result.norm,
        "norm_uncertainty": result.norm_uncertainty,
        "chi2_reduced": result.chi2_reduced,
        "c_perp_m_per_sqrt_w": result.c_perp_m_per_sqrt_w,
        "c_perp_uncertainty": result.c_perp_uncertainty,
        "eta": gcfg["eta"],
        "photon_wavenumber_m": setup.constants.photon_wavenumber_m,
        "n_points": result.n_points,
        "converged": result.converged,
        "alpha_pinned": result.alpha_pinned,
        "residuals": result.residuals.tolist(),
    }
    write_json(os.path.join(out_dir, "globalfit", "report.json"), report)

    x_data = np.sqrt(np.asarray(table["drive_power_w"]))
    x_grid = np.linspace(0.0, float(x_data.max()) * 1.05, 201)
    curves = globalfit.model_curves(result, x_grid)
    write_csv(
        os.path.join(out_dir, "globalfit", "model_curves.csv"),
        {
            "sqrt_power_sqrt_w": x_grid,
            "model_p0": curves[:, 0],
            "model_p1": curves[:, 1],
            "model_p2": curves[:, 2],
        },
    )
    return report


def idt_model_stage(setup: RunSetup, out_dir: str) -> dict:
    """Write model S-parameter traces; with trace_noise > 0 also a noisy copy."""
    cfg = setup.config["idt"]
    design = setup.idt_design()
    omega = design.center_freq_rad_s + 2.0 * np.pi * np.linspace(
        -cfg["sweep_half_width_hz"], cfg["sweep_half_width_hz"], cfg["sweep_points"]
    )
    sparams = idt.device_sparams(omega, design)
    freq_hz = omega / (2.0 * np.pi)
    for name, values in (("s11", sparams.s11), ("s12", sparams.s12)):
        write_csv(
            os.path.join(out_dir, "idt", f"{name}.csv"),
            {"freq_hz": freq_hz, "re": values.real, "im": values.imag},
        )
    if cfg["trace_noise"] > 0:
        rng = np.random.default_rng(np.random.SeedSequence(setup.seed, spawn_key=(101,)))
        for name, values in (("s11", sparams.s11), ("s12", sparams.s12)):
            noisy = np.abs(values) * (1.0 + cfg["trace_noise"] * rng.standard_normal(omega.size))
            write_csv(
                os.path.join(out_dir, "idt", f"{name}_measured.csv"),
                {"freq_hz": freq_hz, "re": noisy, "im": np.zeros_like(noisy)},
            )
    derived = idt.derive_eta_alpha(design)
    report = {"model_eta": derived.eta, "model_alpha": derived.alpha}
    write_json(os.path.join(out_dir, "idt", "model_summary.json"), report)
    return report


def idt_fit_stage(setup: RunSetup, out_dir: str) -> dict:
    """Fit the IDT model to trace files and derive eta and alpha."""
    cfg = setup.config["idt"]
    s11_path = cfg["trace_s11_csv"] or os.path.join(out_dir, "idt", "s11_measured.csv")
    s12_path = cfg["trace_s12_csv"] or os.path.join(out_dir, "idt", "s12_measured.csv")
    s11 = read_csv(s11_path)
    s12 = read_csv(s12_path)
    if not np.array_equal(s11["freq_hz"], s12["freq_hz"]):
        raise InputError("s11 and s12 traces must share a frequency grid")
    freq_rad_s = 2.0 * np.pi * s11["freq_hz"]
    mag11 = np.hypot(s11["re"], s11["im"])
    mag12 = np.hypot(s12["re"], s12["im"])
    noise = max(cfg["trace_noise"], 1e-6)
    sigma = noise * np.concatenate([np.maximum(mag11, 1e-12), np.maximum(mag12, 1e-12)])
    report_fit = idt.fit_sparam_traces(freq_rad_s, mag11, mag12, setup.idt_design(), sigma=sigma)
    derived = idt.derive_eta_alpha(report_fit.design)
    report = {
        "parameters": dict(zip(report_fit.free_parameters, report_fit.values.tolist())),
        "uncertainties": dict(zip(report_fit.free_parameters, report_fit.uncertainties.tolist())),
        "residual_norm": report_fit.residual_norm,
        "chi2_reduced": report_fit.chi2_reduced,
        "converged": report_fit.converged,
        "n_iterations": report_fit.n_iterations,
        "eta": derived.eta,
        "alpha": derived.alpha,
    }
    write_json(os.path.join(out_dir, "idt", "fit_report.json"), report)
    return report


def run_pipeline(setup: RunSetup, out_dir: str) -> dict:
    """All stages in order; returns the global-fit report."""
    from .fileio import atomic_write_text

    atomic_write_text(os.path.join(out_dir, "resolved_config.json"), dumps_config(setup.config) + "\n")
    synth(setup, out_dir)
    fit_stage(setup, out_dir)
    calibrate_stage(setup, out_dir)
    extract_stage(setup, out_dir)
    report = globalfit_stage(setup, out_dir)
    idt_model_stage(setup, out_dir)
    idt_report = idt_fit_stage(setup, out_dir)
    report["idt_eta"] = idt_report["eta"]
    report["idt_alpha"] = idt_report["alpha"]
    return report
