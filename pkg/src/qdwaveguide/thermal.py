"""Temperature series: per-temperature spectral fits and the band-edge shift model."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import constants

from .fitting import FitConfig, FitError, FitResult, Spectrum, _run_fit, dip_summary, fit_fano_spectrum
from .lineshape import DomainError

K_B = 0.0861733  # meV / K
GHZ_TO_MEV = constants.h / constants.e * 1e9 * 1e3


@dataclass(frozen=True)
class BandEdgeParams:
    e_g0: float = 0.0  # meV
    eta: float = 0.0
    phonon_energy: float = 1.0  # meV

    def __post_init__(self):
        if self.eta < 0:
            raise DomainError(f"eta must be >= 0, got {self.eta}")
        if not self.phonon_energy > 0:
            raise DomainError(f"mean phonon energy must be > 0, got {self.phonon_energy}")


def band_edge_shift(T, params: BandEdgeParams):
    """Thermal shift eta*<hw>*(coth(<hw>/2kT) - 1) in meV (always >= 0)."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise DomainError("temperature must be > 0 K")
    x = params.phonon_energy / (2.0 * K_B * T)
    # coth(x) - 1 = 2 / (exp(2x) - 1); overflow at tiny T correctly gives 0
    with np.errstate(over="ignore"):
        shift = params.eta * params.phonon_energy * 2.0 / np.expm1(2.0 * x)
    return shift if shift.ndim else float(shift)


def band_edge(T, params: BandEdgeParams):
    return params.e_g0 + band_edge_shift(T, params)


@dataclass
class BandEdgeFit:
    params: BandEdgeParams
    covariance: np.ndarray
    chi_squared: float
    result: FitResult

    @property
    def stderr(self):
        return dict(zip(("e_g0", "eta", "phonon_energy"), np.sqrt(np.diag(self.covariance))))


class _Points:
    def __init__(self, x, y, sigma=None):
        self.x, self.y, self.sigma = x, y, sigma

    def __len__(self):
        return len(self.x)


def fit_band_edge(temperatures, shifts, sigma=None, *, fit_offset=True, initial=None) -> BandEdgeFit:
    """Least-squares fit of the coth band-edge model to (T, shift) points."""
    T = np.asarray(temperatures, dtype=float)
    E = np.asarray(shifts, dtype=float)
    if T.shape != E.shape or T.size < 4:
        raise ValueError("need at least 4 (temperature, shift) points")
    if np.any(T <= 0):
        raise DomainError("temperatures must be > 0 K")
    if T.max() < 3.0 * T.min():
        raise FitError(
            f"non-identifiable: temperatures span {T.min():g}-{T.max():g} K, need a factor >= 3"
        )
    order = np.argsort(T)
    T, E = T[order], E[order]
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)[order]

    def model(t, v):
        return band_edge(t, BandEdgeParams(v["e_g0"], v["eta"], v["phonon_energy"]))

    if initial is None:
        initial = _band_edge_guess(T, E, fit_offset)
    cfg = FitConfig(frozen={} if fit_offset else {"e_g0": 0.0}, rtol_params=1e-12, rtol_chi2=1e-14)
    lower = {"e_g0": -np.inf, "eta": 0.0, "phonon_energy": 1e-6}
    upper = {"e_g0": np.inf, "eta": 1e3, "phonon_energy": 1e3}
    res = _run_fit(model, ("e_g0", "eta", "phonon_energy"), initial, _Points(T, E, sigma), cfg,
                   lower, upper, min_extra=1)
    cov = np.zeros((3, 3))
    idx = [("e_g0", "eta", "phonon_energy").index(n) for n in res.free]
    cov[np.ix_(idx, idx)] = res.covariance
    p = BandEdgeParams(res.params["e_g0"], res.params["eta"], res.params["phonon_energy"])
    return BandEdgeFit(p, cov, res.chi_squared, res)


def _band_edge_guess(T, E, fit_offset):
    """Best of a coarse phonon-energy scan with the linear parameters solved exactly."""
    best = None
    for hw in np.geomspace(0.05, 100.0, 200):
        with np.errstate(over="ignore"):
            basis = 2.0 * hw / np.expm1(hw / (K_B * T))
        A = np.column_stack([np.ones_like(T), basis]) if fit_offset else basis[:, None]
        coef, *_ = np.linalg.lstsq(A, E, rcond=None)
        chi = float(np.sum((A @ coef - E) ** 2))
        eta = coef[-1]
        if eta >= 0 and (best is None or chi < best[0]):
            best = (chi, coef[0] if fit_offset else 0.0, eta, hw)
    if best is None:
        return {"e_g0": float(E[0]) if fit_offset else 0.0, "eta": 0.1, "phonon_energy": 5.0}
    return {"e_g0": float(best[1]), "eta": float(best[2]), "phonon_energy": float(best[3])}


@dataclass
class ThermalEntry:
    temperature: float
    spectrum: Spectrum


@dataclass
class ThermalSeries:
    entries: list

    def __post_init__(self):
        if not self.entries:
            raise ValueError("empty temperature series")
        temps = [e.temperature for e in self.entries]
        if any(not t > 0 for t in temps):
            raise ValueError("temperatures must be > 0 K")
        if any(b <= a for a, b in zip(temps, temps[1:])):
            raise ValueError("temperatures must be strictly increasing")


@dataclass
class ThermalRow:
    temperature: float
    linewidth: float = math.nan
    dephasing: float = math.nan
    t_min: float = math.nan
    center: float = math.nan
    beta: float = math.nan
    xi: float = math.nan
    masked: bool = False
    failed: bool = False
    message: str = ""


def _thermal_one(entry, config):
    row = ThermalRow(entry.temperature)
    x = entry.spectrum.x
    row.masked = any(hi >= x[0] and lo <= x[-1] for lo, hi in config.mask) or bool(config.residual_peaks)
    try:
        res = fit_fano_spectrum(entry.spectrum, config)
        dip = dip_summary(res)
    except (FitError, ValueError, RuntimeError) as exc:
        row.failed, row.message = True, str(exc)
        return row
    p = res.params
    row.linewidth = dip["fwhm"]
    row.dephasing = p["dephasing"]
    row.t_min = dip["t_min"]
    row.center = p["center"]
    row.beta = p["beta"]
    row.xi = p["xi"]
    if not res.converged:
        row.failed, row.message = True, res.message
    return row


def analyze_thermal_series(series: ThermalSeries, config: FitConfig = FitConfig(), workers=None):
    """Fano fit at every temperature; the homogeneous linewidth should be frozen in ``config``."""
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda e: _thermal_one(e, config), series.entries))
    return [_thermal_one(e, config) for e in series.entries]


def resonance_shifts(rows):
    """Red shift (meV) of each fitted resonance relative to the coldest usable row."""
    ok = [r for r in rows if not r.failed]
    if not ok:
        raise FitError("no usable rows")
    ref = ok[0].center
    return [(r.temperature, (ref - r.center) * GHZ_TO_MEV) for r in ok]
