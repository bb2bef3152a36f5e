"""Transmission of a waveguide-coupled two-level emitter with a Fano background."""
__version__ = "0.1.0"

from .lineshape import (  # noqa: E402
    DomainError,
    DrivePoint,
    EmitterParams,
    FanoBackground,
    ResidualPeak,
    SpectrumModelParams,
    critical_photon_number,
    fano_transmission,
    rt_linewidth,
    steady_state_amplitudes,
    total_transmission,
    transmission_on_resonance,
)
from .fitting import (  # noqa: E402
    FitConfig,
    FitError,
    FitResult,
    Spectrum,
    fit_fano_spectrum,
    fit_lorentzian,
)

__all__ = [
    "__version__", "DomainError", "DrivePoint", "EmitterParams", "FanoBackground", "ResidualPeak",
    "SpectrumModelParams", "critical_photon_number", "fano_transmission", "rt_linewidth",
    "steady_state_amplitudes", "total_transmission", "transmission_on_resonance",
    "FitConfig", "FitError", "FitResult", "Spectrum", "fit_fano_spectrum", "fit_lorentzian",
]
