"""Command-line front-end for the batch analysis pipeline.

Exit codes: 0 success, 2 configuration error, 3 convergence/analysis
failure, 4 I/O error. Failures also emit a machine-readable JSON error
document on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import config as config_mod
from . import pipeline
from .errors import (
    CalibrationError,
    ConfigError,
    ConvergenceError,
    DomainError,
    ExtractionError,
    InputError,
    QuadratureError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4

_STAGES = {
    "synth": pipeline.synth,
    "fit": pipeline.fit_stage,
    "calibrate": pipeline.calibrate_stage,
    "extract": pipeline.extract_stage,
    "globalfit": pipeline.globalfit_stage,
    "idt-model": pipeline.idt_model_stage,
    "idt-fit": pipeline.idt_fit_stage,
    "pipeline": pipeline.run_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sawmoss",
        description=(
            "Forward modeling and inverse analysis of SAW-modulated "
            "Mossbauer absorption spectra."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "synth": "generate Poisson count spectra over the drive-power grid",
        "fit": "fit baseline + Lorentzian-comb models to the spectra",
        "calibrate": "calibrate channel-to-velocity maps from fitted peaks",
        "extract": "integrate peaks and invert for sideband powers",
        "globalfit": "fit (m, alpha) across powers and derive C_perp",
        "idt-model": "write model S-parameter traces for the transducers",
        "idt-fit": "fit the transducer model to S-parameter traces",
        "pipeline": "run all stages in order",
    }
    for name, help_text in descriptions.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="JSON run configuration (defaults used if omitted)")
        cmd.add_argument("--out-dir", default="out", help="output directory (default: ./out)")
        cmd.add_argument("--seed", type=int, default=None, help="override the configured seed")
        cmd.add_argument(
            "--dry-run",
            action="store_true",
            help="print the fully resolved configuration and exit",
        )
    return parser


def _error_document(stage: str, exc: Exception) -> str:
    return json.dumps(
        {"error": {"stage": stage, "type": type(exc).__name__, "message": str(exc)}},
        sort_keys=True,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = args.command
    try:
        overrides = {"seed": args.seed} if args.seed is not None else None
        setup = config_mod.resolve(args.config, overrides)
        if args.dry_run:
            print(config_mod.dumps_config(setup.config))
            return EXIT_OK
        result = _STAGES[stage](setup, args.out_dir)
        if stage in ("globalfit", "pipeline"):
            print(
                "C_perp = ({:.3e} +/- {:.1e}) m/sqrt(W)   "
                "m = {:.4f} +/- {:.4f} /sqrt(W)   alpha = {:.4f} +/- {:.4f}".format(
                    result["c_perp_m_per_sqrt_w"],
                    result["c_perp_uncertainty"],
                    result["m_per_sqrt_w"],
                    result["m_uncertainty"],
                    result["alpha"],
                    result["alpha_uncertainty"],
                )
            )
        elif stage == "idt-fit":
            print(f"eta = {result['eta']:.4f}   alpha = {result['alpha']:.4f}")
        else:
            print(f"{stage}: done")
        return EXIT_OK
    except ConfigError as exc:
        print(_error_document(stage, exc), file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, CalibrationError, ExtractionError, QuadratureError, DomainError) as exc:
        print(_error_document(stage, exc), file=sys.stderr)
        return EXIT_CONVERGENCE
    except (InputError, OSError) as exc:
        print(_error_document(stage, exc), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
