"""
Per-mode beta-factors and Purcell factor from field samples along a waveguide.

Field lines come from an external electromagnetic solver: the dominant
polarisation component sampled on a uniform grid along the propagation axis
through the emitter position, plus the field value at the dipole itself.
Guided modes are separated in spatial-frequency space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants, optimize

MIN_SAMPLES = 64
FAR_WAVELENGTHS = 5.0


class UnphysicalFieldError(ValueError):
    pass


@dataclass
class ModeFieldLine:
    """Complex field ``ex`` sampled at uniformly spaced ``z`` (nm).

    ``dipole_value`` is the field at the dipole (position ``dipole_position``)
    and ``frequency`` the optical frequency in THz.
    """

    z: np.ndarray
    ex: np.ndarray
    dipole_value: complex
    frequency: float
    dipole_position: float = 0.0
    label: str = ""

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.ex = np.asarray(self.ex, dtype=complex)
        if self.z.ndim != 1 or self.z.shape != self.ex.shape:
            raise ValueError("z and ex must be 1-D and of equal length")
        if self.z.size < MIN_SAMPLES:
            raise ValueError(f"field line needs >= {MIN_SAMPLES} samples, got {self.z.size}")
        dz = np.diff(self.z)
        if np.any(dz <= 0) or not np.allclose(dz, dz[0], rtol=1e-9, atol=0):
            raise ValueError("z must be uniformly spaced and increasing")
        if not (np.all(np.isfinite(self.ex)) and np.isfinite(self.dipole_value)):
            raise ValueError("field samples must be finite")

    @property
    def dz(self):
        return float(self.z[1] - self.z[0])

    def wavenumbers(self, n=None):
        return 2.0 * np.pi * np.fft.fftfreq(n or self.z.size, d=self.dz)

    def energy(self):
        return float(np.sum(np.abs(self.ex) ** 2))


@dataclass(frozen=True)
class ModeBand:
    """Spatial-frequency window ``|k - k_center| <= k_halfwidth`` (rad/nm)."""

    k_center: float
    k_halfwidth: float
    label: str = ""

    def __post_init__(self):
        if not self.k_halfwidth > 0:
            raise ValueError(f"band {self.label!r}: halfwidth must be > 0")

    def contains(self, k):
        return np.abs(np.asarray(k) - self.k_center) <= self.k_halfwidth

    def overlaps(self, other: "ModeBand"):
        return abs(self.k_center - other.k_center) <= self.k_halfwidth + other.k_halfwidth


def check_bands(bands):
    for i, a in enumerate(bands):
        for b in bands[i + 1:]:
            if a.overlaps(b):
                raise ValueError(f"bands {a.label!r} and {b.label!r} overlap")


def dipole_radiated_power(dipole_value, frequency_thz):
    """Relative power (omega/2) Im(E) radiated by a unit dipole."""
    im = float(np.imag(dipole_value))
    if im < 0:
        raise UnphysicalFieldError(f"unphysical field sample: Im(E) = {im:g} < 0")
    return 0.5 * 2.0 * math.pi * frequency_thz * 1e12 * im


def homogeneous_dipole_field(frequency_thz, refractive_index):
    """Field at a unit (1 C m) dipole in a uniform medium; only Im is finite.

    Im(E) = n k0^3 / (6 pi eps0), the reference for the Purcell factor.
    """
    k0 = 2.0 * math.pi * frequency_thz * 1e12 / constants.c
    return 1j * refractive_index * k0 ** 3 / (6.0 * math.pi * constants.epsilon_0)


def purcell_factor(nano_dipole_value, hom_dipole_value):
    num, den = float(np.imag(nano_dipole_value)), float(np.imag(hom_dipole_value))
    if num <= 0 or den <= 0:
        if abs(den) < 1e-300:
            raise ZeroDivisionError("homogeneous reference field has vanishing Im(E)")
        raise UnphysicalFieldError("both Im(E) values must be positive")
    return num / den


def _check_resolvable(line: ModeFieldLine, band: ModeBand):
    k_nyq = math.pi / line.dz
    if abs(band.k_center) >= k_nyq:
        raise ValueError(f"band {band.label!r} centre lies beyond the Nyquist wavenumber {k_nyq:.4g} rad/nm")


def mode_filter(line: ModeFieldLine, band: ModeBand) -> ModeFieldLine:
    """Component of the line whose DFT bins fall inside ``band``."""
    _check_resolvable(line, band)
    F = np.fft.fft(line.ex)
    F[~band.contains(line.wavenumbers())] = 0.0
    return replace(line, ex=np.fft.ifft(F), label=band.label or line.label)


def partition_energy(line: ModeFieldLine, bands):
    """Energy per band and of the out-of-band remainder (they sum to the total)."""
    check_bands(bands)
    k = line.wavenumbers()
    F = np.fft.fft(line.ex)
    n = line.z.size
    out = {}
    used = np.zeros(n, dtype=bool)
    for b in bands:
        _check_resolvable(line, b)
        m = b.contains(k)
        used |= m
        out[b.label] = float(np.sum(np.abs(F[m]) ** 2) / n)
    out["remainder"] = float(np.sum(np.abs(F[~used]) ** 2) / n)
    return out


def k_spectrum(line: ModeFieldLine, pad=4):
    """Zero-padded spatial-frequency power spectrum ``(k, |F|^2)``, sorted by k."""
    n = pad * line.z.size
    F = np.fft.fft(line.ex, n)
    k = line.wavenumbers(n)
    order = np.argsort(k)
    return k[order], np.abs(F[order]) ** 2


@dataclass
class ModeCoupling:
    betas: dict
    wavenumbers: dict
    amplitudes: dict
    window: tuple
    warnings: list = field(default_factory=list)

    @property
    def total(self):
        return float(sum(self.betas.values()))


def far_field_window(line: ModeFieldLine, exclusion):
    """Longer side of the line beyond ``exclusion`` nm from the dipole.

    Returns ``(s, field)`` with ``s = |z - z0|`` increasing.
    """
    s = line.z - line.dipole_position
    fwd = s >= exclusion
    bwd = s <= -exclusion
    if np.count_nonzero(fwd) >= np.count_nonzero(bwd):
        return s[fwd], line.ex[fwd]
    return -s[bwd][::-1], line.ex[bwd][::-1]


def _basis(s, k):
    return np.exp(1j * np.outer(s - s[0], k))


def _refine_wavenumbers(s, f, k0):
    """Least-squares line frequencies with the amplitudes projected out.

    Returns ``(k, a)`` with amplitudes referred to the window start.
    """

    def resid(k):
        B = _basis(s, k)
        a, *_ = np.linalg.lstsq(B, f, rcond=None)
        r = B @ a - f
        return np.concatenate([r.real, r.imag])

    dk = 2.0 * np.pi / (s[-1] - s[0])
    k0 = np.asarray(k0, dtype=float)
    sol = optimize.least_squares(resid, k0, x_scale=dk, xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                 bounds=(k0 - dk, k0 + dk))
    k = sol.x
    a, *_ = np.linalg.lstsq(_basis(s, k), f, rcond=None)
    return k, a


def beta_per_mode(line: ModeFieldLine, bands, *, exclusion=None, content_floor=1e-20) -> ModeCoupling:
    """beta_m = Im(a_m) / Im(E(z0)) with a_m the mode amplitude traced back to the dipole.

    Each band's line in the far-field window is located on a 4x zero-padded
    DFT and refined by a joint least-squares fit of complex exponentials, so
    the amplitudes do not depend on the window holding whole periods. Bands
    are taken strongest first, each located on the residual of the previous
    fit.
    """
    bands = list(bands)
    check_bands(bands)
    for b in bands:
        _check_resolvable(line, b)
    im0 = float(np.imag(line.dipole_value))
    if im0 <= 0:
        raise UnphysicalFieldError(f"unphysical field sample: Im(E) at the dipole = {im0:g}")
    warnings = []
    k_guided = max(abs(b.k_center) for b in bands)
    wavelength = 2.0 * np.pi / k_guided
    if exclusion is None:
        exclusion = FAR_WAVELENGTHS * wavelength
    s, f = far_field_window(line, exclusion)
    if s.size < 8:
        raise ValueError("far-field window is empty; the line is too short")
    span = s[-1] - s[0]
    if span < FAR_WAVELENGTHS * wavelength:
        warnings.append(f"far-field window spans {span / wavelength:.2f} guided wavelengths (< 5)")

    # peel lines off one at a time, strongest band first, so a weak mode is
    # located on the residual rather than on a strong neighbour's sidelobe
    n = 4 * s.size
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=line.dz)
    total = float(np.sum(np.abs(np.fft.fft(f, n)) ** 2))
    present, kk, aa = [], np.empty(0), np.empty(0, dtype=complex)
    remaining = list(bands)
    resid = f
    while remaining:
        F = np.fft.fft(resid, n)
        content = [float(np.sum(np.abs(F[b.contains(k)]) ** 2)) for b in remaining]
        j = int(np.argmax(content))
        if content[j] <= content_floor * total:
            break
        b = remaining.pop(j)
        idx = np.flatnonzero(b.contains(k))
        present.append(b)
        kk, aa = _refine_wavenumbers(s, f, np.append(kk, k[idx[np.argmax(np.abs(F[idx]))]]))
        resid = f - _basis(s, kk) @ aa

    betas = {b.label: 0.0 for b in bands}
    ks = {b.label: math.nan for b in bands}
    amps = {b.label: 0j for b in bands}
    aa = aa * np.exp(-1j * kk * s[0])  # amplitudes referred to the dipole (s = 0)
    for b, kb, ab in zip(present, kk, aa):
        if not b.contains(kb):
            warnings.append(f"refined wavenumber of {b.label!r} left its band")
        betas[b.label] = float(np.imag(ab)) / im0
        ks[b.label] = float(kb)
        amps[b.label] = complex(ab)
    if sum(betas.values()) > 1.0 + 1e-6:
        warnings.append(f"sum of beta-factors {sum(betas.values()):.6f} exceeds 1 (lossy or noisy data?)")
    return ModeCoupling(betas, ks, amps, (float(s[0]), float(s[-1])), warnings)
