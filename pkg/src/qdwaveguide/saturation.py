"""Power-series analysis: per-power spectral fits and the saturation fit."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from .fitting import (
    FitConfig,
    FitError,
    Spectrum,
    _run_fit,
    dip_summary,
    fit_fano_spectrum,
    invert_extinction,
)
from .lineshape import EmitterParams, critical_photon_number, transmission_on_resonance


class NonIdentifiableError(FitError):
    pass


@dataclass
class PowerEntry:
    power: float  # W
    spectrum: Spectrum
    excluded: bool = False


@dataclass
class PowerSeries:
    entries: list

    def __post_init__(self):
        powers = [e.power for e in self.entries]
        if any(not p > 0 for p in powers):
            raise ValueError("input powers must be > 0")
        if len(set(powers)) != len(powers):
            raise ValueError("input powers must be distinct")
        self.entries = sorted(self.entries, key=lambda e: e.power)


@dataclass
class PowerRow:
    power: float
    t_min: float = math.nan
    t_resonant: float = math.nan
    linewidth: float = math.nan
    xi: float = math.nan
    beta: float = math.nan
    dephasing: float = math.nan
    excluded: bool = False
    failed: bool = False
    message: str = ""


@dataclass
class PowerTable:
    rows: list
    xi_mean: float
    xi_std: float

    def usable(self):
        return [r for r in self.rows if not (r.excluded or r.failed)]


def _analyze_one(entry: PowerEntry, config: FitConfig) -> PowerRow:
    row = PowerRow(entry.power, excluded=entry.excluded)
    try:
        res = fit_fano_spectrum(entry.spectrum, config)
        dip = dip_summary(res)
    except (FitError, ValueError, RuntimeError) as exc:
        row.failed, row.message = True, str(exc)
        return row
    p = res.params
    row.t_min = dip["t_min"]
    row.linewidth = dip["fwhm"]
    row.xi = p["xi"]
    row.beta = p["beta"]
    row.dephasing = p["dephasing"]
    em = EmitterParams(p["linewidth"], p["dephasing"], p["beta"])
    row.t_resonant = transmission_on_resonance(em, p["saturation"])
    if not res.converged:
        row.failed, row.message = True, res.message
    return row


def analyze_power_series(series: PowerSeries, config: FitConfig = FitConfig(), workers=None) -> PowerTable:
    """Fit every spectrum of the series; failures are flagged, never raised.

    ``t_min`` is the minimum of the fitted dip, ``t_resonant`` the on-resonance
    value with the cavity phase removed, ``linewidth`` the numeric FWHM.
    """
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda e: _analyze_one(e, config), series.entries))
    else:
        rows = [_analyze_one(e, config) for e in series.entries]
    xis = np.array([r.xi for r in rows if not r.failed])
    xi_mean = float(xis.mean()) if xis.size else math.nan
    xi_std = float(xis.std(ddof=1)) if xis.size > 1 else math.nan
    return PowerTable(rows, xi_mean, xi_std)


@dataclass
class SaturationFit:
    beta_eff: float
    critical_input_power: float  # W
    gamma_r: float
    n_c: float
    covariance: np.ndarray
    chi_squared: float
    powers: np.ndarray = field(default_factory=lambda: np.empty(0))
    waveguide_critical_power: float | None = None
    alpha: float | None = None

    @property
    def stderr(self):
        return {"beta_eff": float(np.sqrt(self.covariance[0, 0])),
                "critical_input_power": float(np.sqrt(self.covariance[1, 1]))}

    def transmission(self, power):
        em = EmitterParams(1.0, self.gamma_r, self.beta_eff)
        return transmission_on_resonance(em, np.asarray(power, dtype=float) / self.critical_input_power)

    def predicted_linewidth(self, power, linewidth):
        """Power-broadened width from the saturation fit (not fitted to widths)."""
        s = np.asarray(power, dtype=float) / self.critical_input_power
        return linewidth * (1.0 + 2.0 * self.gamma_r) * np.sqrt(1.0 + s)


def waveguide_power(n_photons, transition_frequency_thz, gamma_per_ns):
    """Optical power carrying ``n_photons`` per emitter lifetime (W)."""
    if n_photons < 0 or transition_frequency_thz <= 0 or gamma_per_ns <= 0:
        raise ValueError("photon number must be >= 0, frequency and rate > 0")
    omega = 2.0 * math.pi * transition_frequency_thz * 1e12
    return constants.hbar * omega * n_photons * gamma_per_ns * 1e9


def coupling_efficiency(p_waveguide_critical, p_input_critical):
    if p_input_critical <= 0 or p_waveguide_critical < 0:
        raise ValueError("powers must be positive")
    alpha = p_waveguide_critical / p_input_critical
    if alpha > 1.0:
        raise ValueError(f"unphysical accounting: alpha = {alpha:.3g} > 1")
    return alpha


def fit_saturation(table, gamma_r, *, use="t_min", transition_frequency_thz=None,
                   gamma_per_ns=None) -> SaturationFit:
    """Fit T_min(P) with free (beta_eff, critical input power) at fixed gamma_r.

    ``table`` is a ``PowerTable`` or a sequence of ``(power, t_min)`` pairs.
    """
    if isinstance(table, PowerTable):
        pts = [(r.power, getattr(r, use)) for r in table.usable()]
    else:
        pts = [tuple(map(float, pt)) for pt in table]
    if len(pts) < 4:
        raise ValueError(f"saturation fit needs >= 4 usable rows, got {len(pts)}")
    P = np.array([p for p, _ in pts])
    T = np.array([t for _, t in pts])
    scale = float(np.median(P))

    def model(x, v):
        return 1.0 + (v["beta"] - 2.0) * v["beta"] / ((1.0 + 2.0 * gamma_r) * (1.0 + x / v["pc"]))

    depth = 1.0 - T
    ratio = depth[0] / np.maximum(depth, 1e-12) - 1.0
    ok = ratio > 0.05
    pc0 = float(np.median(P[ok] / ratio[ok])) / scale if np.any(ok) else 1.0
    # undo the saturation already present at the lowest power
    beta0 = max(invert_extinction(1.0 - depth[0] * (1.0 + P[0] / (pc0 * scale)), gamma_r), 1e-3)
    spec = _PointSet(P / scale, T)
    res = _run_fit(model, ("beta", "pc"), {"beta": beta0, "pc": pc0}, spec, FitConfig(),
                   {"beta": 1e-9, "pc": 1e-12}, {"beta": 1.0, "pc": 1e12},
                   check_degenerate=False, min_extra=2)
    beta, pc = res.params["beta"], res.params["pc"] * scale
    cov = res.covariance * np.array([[1.0, scale], [scale, scale * scale]])
    rel_pc = math.sqrt(max(cov[1, 1], 0.0)) / pc
    if pc < P.min() / 50.0 or pc > P.max() * 50.0 or not rel_pc < 1.0 or not np.isfinite(rel_pc):
        where = "below" if pc > P.max() else "above"
        raise NonIdentifiableError(
            f"critical power is not identifiable: all powers lie far {where} it "
            f"(fit gave {pc:.3g} W, relative error {rel_pc:.2g})"
        )
    n_c = critical_photon_number(EmitterParams(1.0, gamma_r, beta))
    fit = SaturationFit(beta, pc, gamma_r, n_c, cov, res.chi_squared, P)
    if transition_frequency_thz is not None and gamma_per_ns is not None:
        fit.waveguide_critical_power = waveguide_power(n_c, transition_frequency_thz, gamma_per_ns)
        fit.alpha = coupling_efficiency(fit.waveguide_critical_power, pc)
    return fit


class _PointSet:
    """Minimal stand-in for ``Spectrum`` without its length/ordering rules."""

    def __init__(self, x, y):
        order = np.argsort(x)
        self.x, self.y, self.sigma = x[order], y[order], None

    def __len__(self):
        return len(self.x)
