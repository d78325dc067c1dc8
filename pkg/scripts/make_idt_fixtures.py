#!/usr/bin/env python3
"""Regenerate the bundled IDT S-parameter trace fixtures.

Traces come from the fitted device model over +-2 MHz around band center,
with 1% multiplicative Gaussian noise on the magnitudes (seed fixed).
Writes fixtures/idt/s11_measured.csv and s12_measured.csv.
"""

import os

import numpy as np

from sawmoss import idt
from sawmoss.fileio import write_csv

SEED = 4257
N_POINTS = 801
HALF_WIDTH_HZ = 2.0e6
NOISE = 0.01


def main():
    design = idt.paper_fitted_design()
    omega = design.center_freq_rad_s + 2.0 * np.pi * np.linspace(
        -HALF_WIDTH_HZ, HALF_WIDTH_HZ, N_POINTS
    )
    sparams = idt.device_sparams(omega, design)
    rng = np.random.default_rng(SEED)
    out_dir = os.path.join(os.path.dirname(__file__), "..", "fixtures", "idt")
    for name, values in (("s11", sparams.s11), ("s12", sparams.s12)):
        magnitude = np.abs(values) * (1.0 + NOISE * rng.standard_normal(omega.size))
        write_csv(
            os.path.join(out_dir, f"{name}_measured.csv"),
            {
                "freq_hz": omega / (2.0 * np.pi),
                "re": magnitude,
                "im": np.zeros_like(magnitude),
            },
        )
    print(f"fixtures written to {os.path.abspath(out_dir)}")


if __name__ == "__main__":
    main()
