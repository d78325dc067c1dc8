"""Forward modeling and inverse analysis of SAW-modulated Mossbauer spectra.

Subpackages follow the analysis chain: ``physics`` (constants, unit
conversions, hyperfine scheme), ``floquet`` (sideband forward model),
``specgen`` (synthetic counting data), ``specfit`` (baseline + Lorentzian
comb fits), ``calib`` (velocity calibration), ``extract`` (sideband-power
extraction), ``globalfit`` (drive-power global fit), and ``idt``
(transducer electromechanics). The ``cli`` module wires them into a batch
pipeline.
"""

from . import calib, config, extract, fileio, floquet, globalfit, idt, physics, pipeline, specfit, specgen
from .errors import (
    CalibrationError,
    ConfigError,
    ConvergenceError,
    DomainError,
    ExtractionError,
    InputError,
    QuadratureError,
    SawmossError,
)

__version__ = "0.1.0"

__all__ = [
    "calib",
    "config",
    "extract",
    "fileio",
    "floquet",
    "globalfit",
    "idt",
    "physics",
    "pipeline",
    "specfit",
    "specgen",
    "SawmossError",
    "ConfigError",
    "InputError",
    "DomainError",
    "QuadratureError",
    "ConvergenceError",
    "CalibrationError",
    "ExtractionError",
    "__version__",
]
