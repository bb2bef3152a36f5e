"""
Steady-state transmission model of a two-level emitter coupled to a waveguide
with a weak residual-cavity (Fano) background.

All rates and detunings are linear frequencies in GHz. The expressions are
homogeneous of degree zero in the rate unit, so the angular/linear factor of
2*pi cancels everywhere in this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize


class DomainError(ValueError):
    """A model parameter lies outside its physical domain."""


@dataclass(frozen=True)
class EmitterParams:
    """Homogeneous linewidth, pure dephasing (both GHz) and beta-factor."""

    linewidth: float
    dephasing: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.linewidth) or self.linewidth <= 0:
            raise DomainError(f"linewidth must be > 0, got {self.linewidth}")
        if not np.isfinite(self.dephasing) or self.dephasing < 0:
            raise DomainError(f"dephasing must be >= 0, got {self.dephasing}")
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError(f"beta must lie in [0, 1], got {self.beta}")

    @classmethod
    def from_relative(cls, linewidth, gamma_r, beta):
        return cls(linewidth, gamma_r * linewidth, beta)

    @property
    def gamma_r(self):
        """Pure dephasing relative to the homogeneous linewidth."""
        return self.dephasing / self.linewidth

    @property
    def gamma_wg(self):
        return self.beta * self.linewidth

    @property
    def gamma_rad(self):
        return self.linewidth - self.gamma_wg


@dataclass(frozen=True)
class FanoBackground:
    """Residual-cavity phase factor xi.

    When built from a cavity detuning ``delta`` and linewidth ``kappa`` the
    phase is the value of ``(delta - detuning) / kappa`` at the emitter line.
    """

    xi: float = 0.0
    delta: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.xi):
            raise DomainError(f"xi must be finite, got {self.xi}")
        if (self.delta is None) != (self.kappa is None):
            raise DomainError("delta and kappa must be given together")
        if self.kappa is not None and not self.kappa > 0:
            raise DomainError(f"kappa must be > 0, got {self.kappa}")

    @classmethod
    def from_cavity(cls, delta, kappa):
        if not kappa > 0:
            raise DomainError(f"kappa must be > 0, got {kappa}")
        return cls(delta / kappa, delta, kappa)


@dataclass(frozen=True)
class DrivePoint:
    """Drive strength, either as saturation S = n_tau / n_c or as n_tau.

    ``n_c`` here is always the on-resonance critical photon number of the
    emitter (no cavity, zero detuning).
    """

    saturation: float | None = 0.0
    photon_number: float | None = None
    input_power: float | None = None

    def __post_init__(self):
        if self.saturation is None and self.photon_number is None:
            raise DomainError("drive needs saturation or photon_number")
        if self.saturation is not None and self.saturation < 0:
            raise DomainError(f"saturation must be >= 0, got {self.saturation}")
        if self.photon_number is not None and self.photon_number < 0:
            raise DomainError(f"photon_number must be >= 0, got {self.photon_number}")

    def photons_per_lifetime(self, emitter: EmitterParams) -> float:
        if self.photon_number is not None:
            return float(self.photon_number)
        if self.saturation == 0 or emitter.beta == 0:
            return 0.0
        return self.saturation * critical_photon_number(emitter)

    def saturation_for(self, emitter: EmitterParams) -> float:
        if self.saturation is not None:
            return float(self.saturation)
        if emitter.beta == 0:
            return 0.0
        return self.photon_number / critical_photon_number(emitter)


@dataclass(frozen=True)
class ResidualPeak:
    """Additive Lorentzian on top of the transmission; amplitude < 0 is a dip."""

    center: float
    width: float
    amplitude: float

    def __post_init__(self):
        if not self.width > 0:
            raise DomainError(f"residual peak width must be > 0, got {self.width}")
        if not np.isfinite(self.amplitude):
            raise DomainError("residual peak amplitude must be finite")

    def __call__(self, x):
        hw2 = (0.5 * self.width) ** 2
        return self.amplitude * hw2 / ((np.asarray(x) - self.center) ** 2 + hw2)


@dataclass(frozen=True)
class SpectrumModelParams:
    emitter: EmitterParams
    fano: FanoBackground = field(default_factory=FanoBackground)
    drive: DrivePoint = field(default_factory=DrivePoint)
    center: float = 0.0
    residual_peaks: tuple[ResidualPeak, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "residual_peaks", tuple(self.residual_peaks))


@dataclass
class ScatteringAmplitudes:
    """Output fields normalised to the input amplitude, plus emitter state.

    The four power fractions ``abs(t)**2``, ``abs(r)**2``, ``coherent_loss``
    and ``p_incoherent`` add up to one.
    """

    t: np.ndarray
    r: np.ndarray
    s_minus: np.ndarray
    s_z: np.ndarray
    coherent_loss: np.ndarray
    p_incoherent: np.ndarray

    @property
    def fractions_sum(self):
        return abs(self.t) ** 2 + abs(self.r) ** 2 + self.coherent_loss + self.p_incoherent


# --- closed forms ------------------------------------------------------------


def _check_saturation(S):
    S = np.asarray(S, dtype=float)
    if np.any(S < 0) or not np.all(np.isfinite(S)):
        raise DomainError("saturation must be finite and >= 0")
    return S


def transmission_on_resonance(emitter: EmitterParams, S=0.0):
    """Resonant transmission 1 + (beta - 2) beta / ((1 + 2 gamma_r)(1 + S))."""
    S = _check_saturation(S)
    b = emitter.beta
    T = 1.0 + (b - 2.0) * b / ((1.0 + 2.0 * emitter.gamma_r) * (1.0 + S))
    return T if T.ndim else float(T)


def critical_photon_number(emitter: EmitterParams) -> float:
    """Photons per lifetime that bring the excited-state population to 1/4."""
    if emitter.beta == 0:
        raise DomainError("critical photon number diverges for beta = 0")
    return (1.0 + 2.0 * emitter.gamma_r) / (4.0 * emitter.beta ** 2)


def rt_linewidth(emitter: EmitterParams, S=0.0):
    """Power-broadened FWHM of the transmission dip (GHz)."""
    S = _check_saturation(S)
    w = (emitter.linewidth + 2.0 * emitter.dephasing) * np.sqrt(1.0 + S)
    return w if w.ndim else float(w)


def bare_transmission(fano: FanoBackground) -> complex:
    return 1.0 / (1.0 + 1j * fano.xi)


def fano_transmission(emitter: EmitterParams, xi, detuning):
    """Weak-drive transmission with a constant cavity phase ``xi``."""
    g, gd, b = emitter.linewidth, emitter.dephasing, emitter.beta
    d = np.asarray(detuning, dtype=float)
    L = g + 2.0 * gd
    d2 = 4.0 * d * d
    num = (L * ((b - 1.0) ** 2 * g + 2.0 * gd) + d2) * (1.0 + xi * xi)
    den = L * L + d2 + 4.0 * b * g * d * xi + (((b - 1.0) * g - 2.0 * gd) ** 2 + d2) * xi * xi
    T = num / den
    return T if T.ndim else float(T)


def lorentzian_limit_transmission(emitter: EmitterParams, detuning):
    g, gd, b = emitter.linewidth, emitter.dephasing, emitter.beta
    d = np.asarray(detuning, dtype=float)
    L = g + 2.0 * gd
    T = 1.0 + (b - 2.0) * b * g * L / (L * L + 4.0 * d * d)
    return T if T.ndim else float(T)


def quantum_efficiency_bound(gamma_enhanced: float, gamma_inhibited: float) -> float:
    """Lower bound on internal quantum efficiency from enhanced/inhibited rates."""
    if not gamma_inhibited >= 0 or not gamma_enhanced >= gamma_inhibited or gamma_enhanced <= 0:
        raise DomainError(
            f"need gamma_enhanced >= gamma_inhibited >= 0, got {gamma_enhanced}, {gamma_inhibited}"
        )
    return (gamma_enhanced - gamma_inhibited) / gamma_enhanced


# --- full steady state ---------------------------------------------------------


def steady_state_amplitudes(params: SpectrumModelParams, detuning) -> ScatteringAmplitudes:
    """Coherent/incoherent output of the driven emitter at scan position ``detuning``.

    ``detuning`` is on the scan axis; the laser-emitter detuning is
    ``detuning - params.center``. The sign of ``t`` is chosen so that
    ``t == t0`` without an emitter.
    """
    em = params.emitter
    x = np.asarray(detuning, dtype=float)
    dw = x - params.center
    t0 = bare_transmission(params.fano)

    g_wg, g_rad, g_d = em.gamma_wg, em.gamma_rad, em.dephasing
    if g_wg == 0:
        t = np.full(dw.shape, t0, dtype=complex)
        zero = np.zeros(dw.shape)
        return ScatteringAmplitudes(
            t=t, r=np.full(dw.shape, 1.0 - t0, dtype=complex),
            s_minus=zero.astype(complex), s_z=zero - 0.5,
            coherent_loss=zero, p_incoherent=zero,
        )

    # complex coherence decay including the cavity-modified waveguide channel
    D = g_wg * t0 + g_rad + 2.0 * g_d - 2j * dw
    pop_decay = g_rad + g_wg * t0.real
    omega_c2 = abs(D) ** 2 * pop_decay / (8.0 * abs(t0) ** 2 * (pop_decay + 2.0 * g_d))
    # n_tau / n_c(dw) written so beta cancels (no overflow for tiny beta)
    S = params.drive.saturation_for(em)
    sat = 1.0 + S * (1.0 + 2.0 * em.gamma_r) * em.linewidth ** 2 / (8.0 * omega_c2)
    s_z = -0.5 / sat

    # s_minus per unit input amplitude; Omega = a_in * sqrt(g_wg / 2)
    s_per_a = -4j * np.sqrt(g_wg / 2.0) * t0 * s_z / D
    scattered = -1j * np.sqrt(g_wg / 2.0) * t0 * s_per_a
    t = t0 - scattered
    r = (1.0 - t0) + scattered
    coherent_loss = g_rad * abs(s_per_a) ** 2
    # incoherent emission from the emitter itself: population decay minus its
    # coherent part, per unit input flux (rho_ee / a_in^2 = g_wg / (4 Omega_c^2 sat));
    # computed independently so that the four fractions summing to 1 is a real check
    p_inc = pop_decay * (g_wg / (4.0 * omega_c2 * sat) - abs(s_per_a) ** 2)
    if params.drive.photon_number is not None:
        a_in = np.sqrt(params.drive.photon_number * g_wg)
    else:
        a_in = np.sqrt(S * (1.0 + 2.0 * em.gamma_r) * em.linewidth / (4.0 * em.beta))
    return ScatteringAmplitudes(
        t=t, r=r, s_minus=s_per_a * a_in, s_z=s_z,
        coherent_loss=coherent_loss, p_incoherent=p_inc,
    )


def emitter_transmission(params: SpectrumModelParams, detuning):
    """Normalised transmission without the residual peaks."""
    amp = steady_state_amplitudes(params, detuning)
    t0 = bare_transmission(params.fano)
    T = (abs(amp.t) ** 2 + 0.5 * params.emitter.beta * amp.p_incoherent) / abs(t0) ** 2
    return T if np.ndim(T) else float(T)


def total_transmission(params: SpectrumModelParams, detuning):
    T = emitter_transmission(params, detuning)
    for peak in params.residual_peaks:
        T = T + peak(detuning)
    return T


# --- numeric dip characterisation --------------------------------------------------


def dip_minimum(curve, center, scale):
    """Locate the minimum of ``curve`` near ``center`` (within a few ``scale``)."""
    xs = center + scale * np.linspace(-3.0, 3.0, 601)
    i = int(np.argmin(curve(xs)))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    res = optimize.minimize_scalar(curve, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * max(scale, 1.0)})
    return float(res.x), float(res.fun)


def dip_fwhm(curve, center, scale, baseline=1.0):
    """Full width of a dip at half depth below ``baseline``.

    Returns ``(fwhm, x_min, y_min)``.
    """
    x_min, y_min = dip_minimum(curve, center, scale)
    half = 0.5 * (baseline + y_min)

    def f(x):
        return curve(x) - half

    def edge(direction):
        step = 0.5 * scale
        a = x_min
        b = x_min + direction * step
        for _ in range(200):
            if f(b) > 0:
                break
            a, b = b, b + direction * step
            step *= 1.5
        else:
            raise RuntimeError("half-depth crossing not found")
        return optimize.brentq(f, min(a, b), max(a, b), xtol=1e-14 * max(scale, 1.0), rtol=1e-15)

    return edge(+1) - edge(-1), x_min, y_min


def emitter_dip(params: SpectrumModelParams):
    """Numeric FWHM, position and depth of the emitter dip (residual peaks ignored)."""
    scale = rt_linewidth(params.emitter, params.drive.saturation_for(params.emitter))

    def curve(x):
        return emitter_transmission(params, x)

    return dip_fwhm(curve, params.center, scale)
