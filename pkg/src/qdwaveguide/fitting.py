"""
Least-squares estimation for transmission spectra, Lorentzian lines, decay
histograms and linear axis calibration.

The minimiser is a box-projected Levenberg-Marquardt loop with a
forward-difference Jacobian. Every accepted step lowers chi^2; the history is
kept on the result so callers (and tests) can check it.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .lineshape import (
    DrivePoint,
    EmitterParams,
    FanoBackground,
    ResidualPeak,
    SpectrumModelParams,
    emitter_dip,
    total_transmission,
)

MIN_POINTS = 8


class FitError(RuntimeError):
    pass


class DegenerateFitError(FitError):
    """Two free parameters (or one alone) leave the residuals unchanged."""

    def __init__(self, names):
        self.names = tuple(names)
        if len(self.names) == 1:
            msg = f"singular Jacobian: parameter {self.names[0]!r} has no effect on the model"
        else:
            msg = "singular Jacobian: parameters {!r} and {!r} are degenerate".format(*self.names)
        super().__init__(msg)


class NoResonanceError(FitError):
    def __init__(self, detail=""):
        super().__init__("no resonance found" + (f": {detail}" if detail else ""))


@dataclass
class Spectrum:
    """Samples of normalised transmission (or counts) along a scan axis.

    ``x_kind`` is ``"detuning"`` (GHz) or ``"voltage"`` (V); voltage spectra
    must be calibrated before fitting.
    """

    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None
    x_kind: str = "detuning"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
        if self.x_kind not in ("detuning", "voltage"):
            raise ValueError(f"x_kind must be 'detuning' or 'voltage', got {self.x_kind!r}")
        if self.x.ndim != 1 or self.x.shape != self.y.shape:
            raise ValueError("x and y must be 1-D arrays of equal length")
        if len(self.x) < MIN_POINTS:
            raise ValueError(f"spectrum needs at least {MIN_POINTS} points, got {len(self.x)}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("spectrum contains non-finite values")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("x must be strictly increasing")
        if self.sigma is not None:
            if self.sigma.shape != self.x.shape:
                raise ValueError("sigma must match x in length")
            if not np.all(self.sigma > 0) or not np.all(np.isfinite(self.sigma)):
                raise ValueError("sigma must be finite and > 0")

    def __len__(self):
        return len(self.x)

    def select(self, keep):
        keep = np.asarray(keep, dtype=bool)
        return Spectrum(self.x[keep], self.y[keep],
                        None if self.sigma is None else self.sigma[keep], self.x_kind)


@dataclass(frozen=True)
class FitConfig:
    """Knobs for a single fit.

    ``frozen`` maps parameter names to fixed values; ``initial`` overrides the
    automatic starting point; ``bounds`` maps names to ``(lower, upper)``.
    ``mask`` lists ``(lo, hi)`` windows excluded from the residuals and
    ``residual_peaks`` seeds extra co-fitted Lorentzians as
    ``(center, width, amplitude)``.
    """

    max_iterations: int = 200
    rtol_params: float = 1e-8
    rtol_chi2: float = 1e-10
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    frozen: Mapping[str, float] = field(default_factory=dict)
    initial: Mapping[str, float] = field(default_factory=dict)
    mask: Sequence[tuple[float, float]] = ()
    residual_peaks: Sequence[tuple[float, float, float]] = ()

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.rtol_params > 0 and self.rtol_chi2 > 0):
            raise ValueError("tolerances must be > 0")
        for name, (lo, hi) in self.bounds.items():
            if not lo < hi:
                raise ValueError(f"bounds for {name!r} are not ordered: {lo} >= {hi}")
        for lo, hi in self.mask:
            if not lo < hi:
                raise ValueError(f"mask window ({lo}, {hi}) is not ordered")

    def apply_mask(self, spectrum: Spectrum) -> Spectrum:
        if not self.mask:
            return spectrum
        keep = np.ones(len(spectrum), dtype=bool)
        for lo, hi in self.mask:
            keep &= ~((spectrum.x >= lo) & (spectrum.x <= hi))
        return spectrum.select(keep)


@dataclass
class FitResult:
    params: dict
    free: list
    covariance: np.ndarray
    chi_squared: float
    iterations: int
    converged: bool
    residuals: np.ndarray
    message: str = ""
    warnings: list = field(default_factory=list)
    chi2_history: list = field(default_factory=list)

    @property
    def stderr(self):
        err = dict.fromkeys(self.params, 0.0)
        diag = np.diag(self.covariance)
        for name, var in zip(self.free, diag):
            err[name] = float(np.sqrt(var)) if var >= 0 else float("nan")
        return err

    def __getitem__(self, name):
        return self.params[name]


# --- minimiser ------------------------------------------------------------------


@dataclass
class _LMOutcome:
    p: np.ndarray
    chi2: float
    jac: np.ndarray
    resid: np.ndarray
    iterations: int
    converged: bool
    message: str
    history: list


def _jacobian(fun, p, r0, lower, upper, project):
    J = np.empty((r0.size, p.size))
    for j in range(p.size):
        h = max(1e-6 * abs(p[j]), 1e-9)
        if p[j] + h > upper[j]:
            h = -h
        q = p.copy()
        q[j] += h
        q = project(q)
        step = q[j] - p[j]
        if step == 0:
            J[:, j] = 0.0
            continue
        J[:, j] = (fun(q) - r0) / step
    return J


def levenberg_marquardt(fun, p0, lower, upper, *, project=None, max_iterations=200,
                        rtol_chi2=1e-10, rtol_params=1e-8) -> _LMOutcome:
    """Minimise ``sum(fun(p)**2)`` inside the box ``[lower, upper]``.

    Damping is multiplied by 10 on a rejected step and divided by 10 on an
    accepted one.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)

    def box(q):
        q = np.clip(q, lower, upper)
        return project(q) if project is not None else q

    p = box(np.asarray(p0, dtype=float))
    r = fun(p)
    chi2 = float(r @ r)
    history = [chi2]
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    J = _jacobian(fun, p, r, lower, upper, box)
    while it < max_iterations:
        it += 1
        if chi2 == 0.0:
            converged, message = True, "exact fit"
            break
        A = J.T @ J
        g = J.T @ r
        scale = np.diag(A).copy()
        scale[scale == 0] = 1.0
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(scale), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            q = box(p + step)
            rq = fun(q)
            chi2_q = float(rq @ rq)
            if np.isfinite(chi2_q) and chi2_q < chi2:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged, message = True, "no further descent possible"
            break
        lam = max(lam / 10.0, 1e-12)
        dchi = (chi2 - chi2_q) / chi2
        dp = np.max(np.abs(q - p) / np.maximum(np.abs(q), 1e-12))
        p, r, chi2 = q, rq, chi2_q
        history.append(chi2)
        J = _jacobian(fun, p, r, lower, upper, box)
        if dchi < rtol_chi2:
            converged, message = True, "relative chi2 change below tolerance"
            break
        if dp < rtol_params:
            converged, message = True, "relative parameter change below tolerance"
            break
    return _LMOutcome(p, chi2, J, r, it, converged, message, history)


def _degenerate_pair(J, names):
    norms = np.linalg.norm(J, axis=0)
    for name, n in zip(names, norms):
        if n == 0.0:
            return (name,)
    U = J / norms
    C = np.abs(U.T @ U)
    np.fill_diagonal(C, 0.0)
    i, j = np.unravel_index(np.argmax(C), C.shape)
    if C[i, j] > 1.0 - 1e-10:
        return (names[min(i, j)], names[max(i, j)])
    # forward differences carry ~1e-8 relative error, so judge rank well above that
    _, sv, vt = np.linalg.svd(U, full_matrices=False)
    if sv[-1] < 1e-6 * sv[0]:
        a, b = sorted(np.argsort(np.abs(vt[-1]))[-2:])
        return (names[a], names[b])
    return None


def _covariance(J, chi2, n_points, weighted):
    A = J.T @ J
    try:
        cov = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(A)
    if not weighted:
        dof = max(n_points - J.shape[1], 1)
        cov = cov * (chi2 / dof)
    return 0.5 * (cov + cov.T)


def _run_fit(model, names, values, spectrum, config, lower, upper, project=None,
             check_degenerate=True, min_extra=3):
    """Fit ``model(x, params_dict)`` to ``spectrum`` over the non-frozen names."""
    values = dict(values)
    for name, v in config.frozen.items():
        if name not in values:
            raise KeyError(f"unknown parameter {name!r}")
        values[name] = float(v)
    free = [n for n in names if n not in config.frozen]
    if len(spectrum) < len(free) + min_extra:
        raise FitError(f"{len(spectrum)} points are too few for {len(free)} free parameters")
    lo = np.array([lower[n] for n in free], dtype=float)
    hi = np.array([upper[n] for n in free], dtype=float)
    for n, (a, b) in config.bounds.items():
        if n in free:
            k = free.index(n)
            lo[k], hi[k] = a, b
    w = None if spectrum.sigma is None else 1.0 / spectrum.sigma
    x, y = spectrum.x, spectrum.y

    def unpack(p):
        d = dict(values)
        d.update(zip(free, p))
        return d

    def resid(p):
        r = model(x, unpack(p)) - y
        return r if w is None else r * w

    proj = None
    if project is not None:
        def proj(p):
            return np.array([project(unpack(p))[n] for n in free])

    p0 = np.array([values[n] for n in free], dtype=float)
    out = levenberg_marquardt(resid, p0, lo, hi, project=proj,
                              max_iterations=config.max_iterations,
                              rtol_chi2=config.rtol_chi2, rtol_params=config.rtol_params)
    if check_degenerate and free:
        pair = _degenerate_pair(out.jac, free)
        if pair is not None:
            raise DegenerateFitError(pair)
    cov = _covariance(out.jac, out.chi2, len(x), w is not None)
    params = unpack(out.p)
    for n in config.frozen:
        params[n] = values[n]
    raw = model(x, params) - y
    return FitResult(params=params, free=free, covariance=cov, chi_squared=out.chi2,
                     iterations=out.iterations, converged=out.converged,
                     residuals=raw, message=out.message, chi2_history=out.history)


# --- Fano spectrum ----------------------------------------------------------------

FANO_PARAMS = ("beta", "dephasing", "xi", "center", "linewidth", "saturation")
PEAK_FIELDS = ("center", "width", "amplitude")


def _peak_names(n):
    return [f"peak{i}_{f}" for i in range(n) for f in PEAK_FIELDS]


def model_params_from(values: Mapping[str, float], n_peaks=0) -> SpectrumModelParams:
    """Build ``SpectrumModelParams`` from a flat name->value mapping."""
    peaks = [ResidualPeak(*(values[f"peak{i}_{f}"] for f in PEAK_FIELDS)) for i in range(n_peaks)]
    return SpectrumModelParams(
        emitter=EmitterParams(values["linewidth"], values["dephasing"], values["beta"]),
        fano=FanoBackground(values["xi"]),
        drive=DrivePoint(values.get("saturation", 0.0)),
        center=values["center"],
        residual_peaks=peaks,
    )


def flatten_model_params(params: SpectrumModelParams) -> dict:
    d = {
        "beta": params.emitter.beta,
        "dephasing": params.emitter.dephasing,
        "xi": params.fano.xi,
        "center": params.center,
        "linewidth": params.emitter.linewidth,
        "saturation": params.drive.saturation_for(params.emitter),
    }
    for i, pk in enumerate(params.residual_peaks):
        d.update({f"peak{i}_center": pk.center, f"peak{i}_width": pk.width,
                  f"peak{i}_amplitude": pk.amplitude})
    return d


def fano_model(n_peaks=0):
    def model(x, values):
        return total_transmission(model_params_from(values, n_peaks), x)
    return model


def _noise_rms(y):
    d = np.diff(y)
    return 1.4826 * np.median(np.abs(d - np.median(d))) / math.sqrt(2.0)


def _half_width(x, y, i_min, baseline):
    half = 0.5 * (baseline + y[i_min])
    left = i_min
    while left > 0 and y[left] < half:
        left -= 1
    right = i_min
    while right < len(y) - 1 and y[right] < half:
        right += 1
    return max(x[right] - x[left], 2.0 * np.min(np.diff(x)))


def invert_extinction(t_min, gamma_r=0.0, saturation=0.0):
    """beta from the resonant transmission minimum (inverse of the resonant formula)."""
    arg = 1.0 - (1.0 - t_min) * (1.0 + 2.0 * gamma_r) * (1.0 + saturation)
    return float(np.clip(1.0 - math.sqrt(max(arg, 0.0)), 0.0, 1.0))


def initial_guess(spectrum: Spectrum, frozen_gamma: float, *, gamma_r=0.0, saturation=0.0) -> dict:
    """Starting point for a Fano fit from the shape of the dip."""
    if spectrum.x_kind != "detuning":
        raise ValueError("calibrate the voltage axis before fitting")
    x, y = spectrum.x, spectrum.y
    noise = _noise_rms(y)
    i_min = int(np.argmin(y))
    depth = 1.0 - y[i_min]
    if not depth > 3.0 * noise or depth <= 0:
        raise NoResonanceError(f"depth {depth:.3g} vs noise {noise:.3g}")
    beta = invert_extinction(y[i_min], gamma_r, saturation)
    center = float(x[i_min])
    fwhm = _half_width(x, y, i_min, 1.0)
    dephasing = float(np.clip(0.5 * (fwhm / math.sqrt(1.0 + saturation) - frozen_gamma),
                              0.0, 10.0 * frozen_gamma))
    # odd tail of the Fano dip: T - 1 ~ -beta*Gamma*xi / ((1 + xi^2) * detuning)
    xi = 0.0
    width = frozen_gamma + 2.0 * dephasing
    offsets = x - center
    far = np.abs(offsets) > 2.0 * width
    if beta > 0 and np.count_nonzero(far & (offsets > 0)) > 2 and np.count_nonzero(far & (offsets < 0)) > 2:
        d = offsets[far & (offsets > 0)]
        d = d[d <= -offsets[0]]
        if d.size > 2:
            right = np.interp(center + d, x, y)
            left = np.interp(center - d, x, y)
            k = -np.median(0.5 * (right - left) * d) / (beta * frozen_gamma)
            k = float(np.clip(k, -0.49, 0.49))
            if k != 0:
                xi = (1.0 - math.sqrt(1.0 - 4.0 * k * k)) / (2.0 * k)
    return {"beta": beta, "dephasing": dephasing, "xi": xi, "center": center,
            "linewidth": float(frozen_gamma), "saturation": float(saturation)}


def _fano_bounds(x, n_peaks):
    span = x[-1] - x[0]
    lower = {"beta": 0.0, "dephasing": 0.0, "xi": -1e3, "center": x[0] - span,
             "linewidth": 1e-9, "saturation": 0.0}
    upper = {"beta": 1.0, "dephasing": 1e6, "xi": 1e3,
             "center": x[-1] + span, "linewidth": 1e6, "saturation": 1e9}
    for i in range(n_peaks):
        lower.update({f"peak{i}_center": x[0] - span, f"peak{i}_width": 1e-9,
                      f"peak{i}_amplitude": -1e3})
        upper.update({f"peak{i}_center": x[-1] + span, f"peak{i}_width": 10.0 * span,
                      f"peak{i}_amplitude": 1e3})
    return lower, upper


def _project_dephasing(values):
    # dephasing is bounded by 10 x the current linewidth
    cap = 10.0 * values["linewidth"]
    if values["dephasing"] > cap:
        values = dict(values)
        values["dephasing"] = cap
    return values


def fit_fano_spectrum(spectrum: Spectrum, config: FitConfig = FitConfig()) -> FitResult:
    """Fit the full transmission model (weak-drive form unless ``saturation`` is set).

    Free by default: beta, dephasing, xi, center, linewidth; ``saturation`` is
    frozen at 0 unless given in ``config.frozen``. Freeze ``linewidth`` to a
    value measured from the lifetime for the usual procedure.
    """
    if spectrum.x_kind != "detuning":
        raise ValueError("calibrate the voltage axis before fitting")
    frozen = dict(config.frozen)
    frozen.setdefault("saturation", 0.0)
    config = replace(config, frozen=frozen)
    data = config.apply_mask(spectrum)
    n_peaks = len(config.residual_peaks)
    names = list(FANO_PARAMS) + _peak_names(n_peaks)

    gamma0 = frozen.get("linewidth", config.initial.get("linewidth"))
    if gamma0 is None:
        i_min = int(np.argmin(data.y))
        gamma0 = _half_width(data.x, data.y, i_min, 1.0)
    guess = initial_guess(data, gamma0, saturation=frozen["saturation"])
    for i, pk in enumerate(config.residual_peaks):
        guess.update(zip((f"peak{i}_{f}" for f in PEAK_FIELDS), map(float, pk)))
    guess.update({k: float(v) for k, v in config.initial.items()})

    lower, upper = _fano_bounds(data.x, n_peaks)
    result = _run_fit(fano_model(n_peaks), names, guess, data, config, lower, upper,
                      project=_project_dephasing)
    if len(data) != len(spectrum):
        result.warnings.append(f"{len(spectrum) - len(data)} points masked")
    if not result.converged:
        result.warnings.append("fit did not converge")
    return result


def fitted_model(result: FitResult) -> SpectrumModelParams:
    n_peaks = sum(1 for k in result.params if k.endswith("_width") and k.startswith("peak"))
    return model_params_from(result.params, n_peaks)


def dip_summary(result: FitResult) -> dict:
    """Numeric FWHM, minimum position and minimum of the fitted emitter dip."""
    fwhm, x_min, t_min = emitter_dip(fitted_model(result))
    return {"fwhm": fwhm, "x_min": x_min, "t_min": t_min}


# --- Lorentzian -----------------------------------------------------------------

LORENTZ_PARAMS = ("center", "fwhm", "amplitude", "offset")


def lorentzian(x, center, fwhm, amplitude, offset):
    hw2 = (0.5 * fwhm) ** 2
    return offset + amplitude * hw2 / ((np.asarray(x) - center) ** 2 + hw2)


def fit_lorentzian(spectrum: Spectrum, config: FitConfig = FitConfig()) -> FitResult:
    """Single Lorentzian peak or dip on a constant offset."""
    data = config.apply_mask(spectrum)
    x, y = data.x, data.y
    n_edge = max(len(y) // 10, 2)
    offset = float(np.median(np.concatenate([y[:n_edge], y[-n_edge:]])))
    dev = y - offset
    i_ext = int(np.argmax(np.abs(dev)))
    sign = 1.0 if dev[i_ext] > 0 else -1.0
    fwhm = _half_width(x, -sign * y, i_ext, -sign * offset)
    guess = {"center": float(x[i_ext]), "fwhm": float(fwhm), "amplitude": float(dev[i_ext]),
             "offset": offset}
    guess.update({k: float(v) for k, v in config.initial.items()})
    span = x[-1] - x[0]
    amp_scale = max(np.ptp(y), 1e-300) * 1e3
    lower = {"center": x[0] - span, "fwhm": 1e-12 * span, "amplitude": -amp_scale, "offset": -amp_scale}
    upper = {"center": x[-1] + span, "fwhm": 100.0 * span, "amplitude": amp_scale, "offset": amp_scale}

    def model(xx, v):
        return lorentzian(xx, v["center"], v["fwhm"], v["amplitude"], v["offset"])

    result = _run_fit(model, LORENTZ_PARAMS, guess, data, config, lower, upper)
    if not result.converged:
        result.warnings.append("fit did not converge")
    return result


# --- decay with instrument response --------------------------------------------------


@dataclass
class DecayHistogram:
    """Photon-arrival histogram (time in ps) and the instrument response.

    The IRF is given as ``(irf_time, irf_weight)`` samples and normalised to
    unit area on construction.
    """

    time: np.ndarray
    counts: np.ndarray
    irf_time: np.ndarray
    irf_weight: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        self.irf_time = np.asarray(self.irf_time, dtype=float)
        self.irf_weight = np.asarray(self.irf_weight, dtype=float)
        if self.time.shape != self.counts.shape or self.time.size < MIN_POINTS:
            raise ValueError("time and counts must be equal-length arrays of >= 8 bins")
        dt = np.diff(self.time)
        if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
            raise ValueError("time bins must be uniform and increasing")
        if np.any(self.counts < 0):
            raise ValueError("counts must be >= 0")
        if self.irf_time.shape != self.irf_weight.shape or self.irf_time.size < 1:
            raise ValueError("irf_time and irf_weight must be equal-length")
        if np.any(self.irf_weight < 0):
            raise ValueError("irf weights must be >= 0")
        if self.irf_time.size > 1:
            area = np.trapezoid(self.irf_weight, self.irf_time)
        else:
            area = self.irf_weight.sum()
        if not area > 0:
            raise ValueError("irf has zero area")
        self.irf_weight = self.irf_weight / area

    @property
    def bin_width(self):
        return float(self.time[1] - self.time[0])

    def irf_on_bins(self):
        """IRF resampled onto the histogram bins, normalised to unit sum."""
        if self.irf_time.size == 1:
            h = np.zeros_like(self.time)
            h[int(np.argmin(np.abs(self.time - self.irf_time[0])))] = 1.0
            return h
        h = np.interp(self.time, self.irf_time, self.irf_weight, left=0.0, right=0.0)
        if h.sum() == 0:
            raise ValueError("irf does not overlap the histogram time range")
        return h / h.sum()

    def irf_fwhm(self):
        if self.irf_time.size == 1:
            return 0.0
        w = self.irf_weight
        above = self.irf_time[w >= 0.5 * w.max()]
        return float(above[-1] - above[0])


def decay_model(hist: DecayHistogram):
    """Return ``f(rate_per_ns, amplitude)`` = amplitude * (IRF (*) exp decay)."""
    h = hist.irf_on_bins()
    lag = np.arange(hist.time.size) * hist.bin_width * 1e-3  # ns

    def f(rate, amplitude):
        return amplitude * np.convolve(h, np.exp(-rate * lag))[: h.size]

    return f


def fit_decay(hist: DecayHistogram, config: FitConfig = FitConfig()) -> FitResult:
    """Single exponential convolved with the instrument response.

    Counts are weighted by Poisson errors ``sqrt(max(counts, 1))``. Params:
    ``rate`` (1/ns) and ``amplitude``; the lifetime ``tau_ps`` is added to the
    result.
    """
    f = decay_model(hist)
    t, c = hist.time, hist.counts
    i_pk = int(np.argmax(c))
    tail = (np.arange(c.size) > i_pk) & (c > 0.05 * c[i_pk])
    if np.count_nonzero(tail) >= 3:
        slope = np.polyfit(t[tail] * 1e-3, np.log(c[tail]), 1)[0]
        rate0 = max(-slope, 1e-3)
    else:
        rate0 = 1.0 / ((t[-1] - t[0]) * 1e-3 / 5.0)
    rate0 = float(config.initial.get("rate", rate0))
    shape = f(rate0, 1.0)
    amp0 = float(config.initial.get("amplitude", c.sum() / max(shape.sum(), 1e-300)))
    spec = Spectrum(t, c, np.sqrt(np.maximum(c, 1.0)))

    def model(x, v):
        return f(v["rate"], v["amplitude"])

    lower = {"rate": 1e-6, "amplitude": 0.0}
    upper = {"rate": 1e6, "amplitude": np.inf}
    result = _run_fit(model, ("rate", "amplitude"), {"rate": rate0, "amplitude": amp0},
                      spec, config, lower, upper)
    rate = result.params["rate"]
    result.params["tau_ps"] = 1e3 / rate
    if hist.irf_fwhm() > 10.0 * (1e3 / rate):
        result.warnings.append("ill-conditioned: IRF is more than 10x wider than the decay")
    if (t[-1] - t[0]) < 5.0 * 1e3 / rate:
        result.warnings.append("histogram spans fewer than 5 lifetimes")
    if not result.converged:
        result.warnings.append("fit did not converge")
    return result


# --- calibration -------------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    """Linear map frequency = slope * voltage + intercept (GHz per V, GHz)."""

    slope: float
    intercept: float
    residual_rms: float
    slope_stderr: float = 0.0
    intercept_stderr: float = 0.0

    def __call__(self, voltage):
        return self.slope * np.asarray(voltage, dtype=float) + self.intercept

    def apply(self, spectrum: Spectrum) -> Spectrum:
        if spectrum.x_kind != "voltage":
            raise ValueError("spectrum is already on a detuning axis")
        if self.slope == 0:
            raise ValueError("zero slope cannot map voltage to detuning")
        x = self(spectrum.x)
        order = np.argsort(x)
        sigma = None if spectrum.sigma is None else spectrum.sigma[order]
        return Spectrum(x[order], spectrum.y[order], sigma, "detuning")


def calibrate_voltage_to_frequency(points) -> Calibration:
    """Ordinary least-squares line through ``(voltage, frequency)`` pairs."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (voltage, frequency) points")
    v, f = pts[:, 0], pts[:, 1]
    if np.ptp(v) == 0:
        raise ValueError("rank deficient: all voltages are equal")
    A = np.column_stack([v, np.ones_like(v)])
    (slope, intercept), *_ = np.linalg.lstsq(A, f, rcond=None)
    resid = f - (slope * v + intercept)
    n = v.size
    rms = float(np.sqrt(np.mean(resid ** 2)))
    if n > 2:
        s2 = float(resid @ resid) / (n - 2)
        cov = s2 * np.linalg.inv(A.T @ A)
        se_slope, se_int = float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1]))
    else:
        se_slope = se_int = 0.0
    return Calibration(float(slope), float(intercept), rms, se_slope, se_int)


# --- exhaustive oracle -------------------------------------------------------------


def chi_squared(model, spectrum: Spectrum, values) -> float:
    r = model(spectrum.x, values) - spectrum.y
    if spectrum.sigma is not None:
        r = r / spectrum.sigma
    return float(r @ r)


def grid_search_oracle(spectrum: Spectrum, grid: Mapping[str, Sequence[float]],
                       fixed: Mapping[str, float], model: Callable | None = None):
    """Exhaustive chi^2 minimum over a rectangular grid.

    Ties go to the lowest flattened index (C order over ``grid`` keys).
    Returns ``(best_values, best_chi2, chi2_array)``.
    """
    model = model or fano_model(0)
    names = list(grid)
    axes = [np.asarray(grid[n], dtype=float) for n in names]
    chi = np.empty([a.size for a in axes])
    for idx in itertools.product(*(range(a.size) for a in axes)):
        values = dict(fixed)
        values.update({n: a[i] for n, a, i in zip(names, axes, idx)})
        chi[idx] = chi_squared(model, spectrum, values)
    flat = int(np.argmin(chi))
    best_idx = np.unravel_index(flat, chi.shape)
    best = dict(fixed)
    best.update({n: float(a[i]) for n, a, i in zip(names, axes, best_idx)})
    return best, float(chi.flat[flat]), chi
