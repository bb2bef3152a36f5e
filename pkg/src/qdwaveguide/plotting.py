"""Report figures. Everything renders off-screen to PNG files."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "tight",
}
DATA = "0.35"
MODEL = "#c0392b"
ALT = "#2471a3"


def save(fig, path):
    """Save atomically (temp file + rename) and close the figure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        fig.savefig(tmp, metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def spectrum_fit(x, y, model_x, model_y, residuals=None, title="", xlabel="Detuning (GHz)"):
    with plt.rc_context(STYLE):
        if residuals is None:
            fig, ax = plt.subplots()
            axes = [ax]
        else:
            fig, axes = plt.subplots(2, 1, sharex=True, gridspec_kw={"height_ratios": [3, 1]})
            ax = axes[0]
        ax.plot(x, y, ".", color=DATA, label="data")
        if model_y is not None:
            ax.plot(model_x, model_y, "-", color=MODEL, label="model")
        ax.set_ylabel("Transmission")
        ax.set_title(title)
        ax.legend()
        if residuals is not None:
            axes[1].axhline(0, color="0.7", lw=0.8)
            axes[1].plot(x, residuals, ".", color=DATA)
            axes[1].set_ylabel("Residual")
        axes[-1].set_xlabel(xlabel)
        return fig


def power_series(powers_nw, t_min, widths, fit_p_nw, fit_t, pred_w, excluded=None):
    excluded = np.zeros(len(powers_nw), bool) if excluded is None else np.asarray(excluded, bool)
    with plt.rc_context(STYLE):
        fig, (a, b) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.5))
        for ax, vals in ((a, t_min), (b, widths)):
            vals = np.asarray(vals)
            ax.plot(np.asarray(powers_nw)[~excluded], vals[~excluded], "o", color=DATA, label="per-power fit")
            if excluded.any():
                ax.plot(np.asarray(powers_nw)[excluded], vals[excluded], "o", mfc="none", color=ALT,
                        label="excluded")
        a.plot(fit_p_nw, fit_t, "-", color=MODEL, label="saturation fit")
        b.plot(fit_p_nw, pred_w, "-", color=MODEL, label="predicted")
        a.set_ylabel("Minimum transmission")
        b.set_ylabel("Linewidth (GHz)")
        b.set_xlabel("Input power (nW)")
        b.set_xscale("log")
        a.legend()
        b.legend()
        return fig


def thermal_series(temps, widths, dephasing, t_min, shift_t, shifts, model_t, model_shift):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6.0, 7.0))
        axes[0].plot(temps, widths, "o", color=DATA, label="linewidth")
        axes[0].plot(temps, dephasing, "s", color=ALT, label="dephasing")
        axes[0].set_ylabel("Rate (GHz)")
        axes[0].legend()
        axes[1].plot(temps, t_min, "o", color=DATA)
        axes[1].set_ylabel("Minimum transmission")
        axes[2].plot(shift_t, shifts, "o", color=DATA, label="resonance")
        if model_shift is not None:
            axes[2].plot(model_t, model_shift, "-", color=MODEL, label="band-edge fit")
        axes[2].set_ylabel("Red shift (meV)")
        axes[2].set_xlabel("Temperature (K)")
        axes[2].legend()
        return fig


def beta_map(labels, betas_by_mode, purcell=None, xlabel="Line"):
    x = np.arange(len(labels))
    with plt.rc_context(STYLE):
        nrow = 2 if purcell is not None else 1
        fig, axes = plt.subplots(nrow, 1, sharex=True, squeeze=False, figsize=(6.0, 2.8 * nrow))
        ax = axes[0, 0]
        total = np.zeros(len(labels))
        for mode, vals in betas_by_mode.items():
            ax.plot(x, vals, "o-", label=mode)
            total += np.asarray(vals)
        ax.plot(x, total, "k--", label="sum")
        ax.set_ylabel("beta")
        ax.legend()
        if purcell is not None:
            axes[1, 0].plot(x, purcell, "o-", color=MODEL)
            axes[1, 0].set_ylabel("Purcell factor")
        axes[-1, 0].set_xticks(x, labels)
        axes[-1, 0].set_xlabel(xlabel)
        return fig


def calibration(v, f, slope, intercept):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(v, f, "o", color=DATA)
        vv = np.linspace(np.min(v), np.max(v), 50)
        ax.plot(vv, slope * vv + intercept, "-", color=MODEL)
        ax.set_xlabel("Voltage (V)")
        ax.set_ylabel("Frequency (GHz)")
        return fig


def decay(t, counts, model):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(t, np.maximum(counts, 0.5), ".", color=DATA, label="counts")
        ax.semilogy(t, np.maximum(model, 0.5), "-", color=MODEL, label="fit")
        ax.set_xlabel("Time (ps)")
        ax.set_ylabel("Counts")
        ax.legend()
        return fig
