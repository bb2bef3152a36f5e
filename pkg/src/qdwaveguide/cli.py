"""Command-line entry point: ``qdwg <command> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, io, plotting
from .fitting import (
    DecayHistogram,
    FitError,
    calibrate_voltage_to_frequency,
    decay_model,
    dip_summary,
    fit_decay,
    fit_fano_spectrum,
    fitted_model,
    Calibration,
)
from .lineshape import DomainError, total_transmission
from .modes import ModeBand, beta_per_mode, homogeneous_dipole_field, purcell_factor
from .saturation import PowerEntry, PowerSeries, analyze_power_series, fit_saturation
from .thermal import (
    BandEdgeParams,
    ThermalEntry,
    ThermalSeries,
    analyze_thermal_series,
    band_edge,
    fit_band_edge,
    resonance_shifts,
)

COMMANDS = ("simulate", "fit", "power-series", "temp-series", "beta-map", "calibrate", "lifetime")


def build_parser():
    p = argparse.ArgumentParser(prog="qdwg", description="Waveguide-coupled emitter transmission analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${io.OUTPUT_DIR_ENV} or ./qdwg-out)")
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        return sp

    sp = common(sub.add_parser("simulate", help="generate a synthetic spectrum"))
    sp.add_argument("--params", required=True, help="JSON with model, grid, noise, rng, seed")
    sp.add_argument("--seed", type=int, help="overrides the seed in --params")

    sp = common(sub.add_parser("fit", help="fit the transmission model to one spectrum"))
    sp.add_argument("--spectrum", required=True, help="CSV with header x,y[,sigma]")
    sp.add_argument("--gamma", type=float, help="freeze the homogeneous linewidth (GHz)")
    sp.add_argument("--config", help="JSON fit configuration")
    sp.add_argument("--x-kind", choices=("detuning", "voltage"))

    for name, what in (("power-series", "power"), ("temp-series", "temperature")):
        sp = common(sub.add_parser(name, help=f"analyse a {what} series"))
        sp.add_argument("--manifest", required=True, help=f"JSON array of {{{what}, path}} entries")
        sp.add_argument("--gamma", type=float, help="freeze the homogeneous linewidth (GHz)")
        sp.add_argument("--config", help="JSON configuration")

    sp = common(sub.add_parser("beta-map", help="per-mode beta and Purcell factor from field lines"))
    sp.add_argument("--config", required=True, help="JSON with lines and bands")

    sp = common(sub.add_parser("calibrate", help="voltage-to-frequency calibration"))
    sp.add_argument("--points", required=True, help="CSV with header voltage,frequency")
    sp.add_argument("--spectrum", help="voltage-axis spectrum to convert")

    sp = common(sub.add_parser("lifetime", help="exponential decay fit with instrument response"))
    sp.add_argument("--histogram", required=True, help="CSV with header time_ps,counts")
    sp.add_argument("--irf", required=True, help="CSV with header time_ps,weight")
    sp.add_argument("--config", help="JSON configuration")
    return p


def _config(path, schema):
    return io.load_json(path, schema) if path else io.validate({}, schema)


def _fit_cfg(cfg, gamma):
    fc = io.fit_config_from(cfg.get("fit"))
    if gamma is not None:
        frozen = dict(fc.frozen)
        frozen["linewidth"] = gamma
        fc = dataclasses.replace(fc, frozen=frozen)
    return fc


# --- commands ---------------------------------------------------------------------


def cmd_simulate(args, out):
    cfg = io.load_json(args.params, io.SIMULATE_SCHEMA)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    params = io.model_params_from_config(cfg["model"])
    g = cfg.get("grid", {})
    grid = (g.get("start", -5.0), g.get("stop", 5.0), g.get("num", 201))
    sigma = cfg.get("noise", {}).get("sigma", 0.0)
    rng_name = cfg.get("rng", "PCG64")
    spec = io.simulate_spectrum(params, grid, sigma, seed, rng_name)
    model = total_transmission(params, spec.x)
    rec = io.ResultRecord(
        "simulate", io.digest_files([args.params]), io.digest_obj({"config": cfg, "seed": seed}),
        extra={"seed": seed, "rng": rng_name, "noise_sigma": sigma, "grid": list(grid)},
    )
    io.save_spectrum(out / "simulated.csv", spec)
    io.write_csv(out / "simulated_model.csv", ["x", "model"], zip(spec.x, model))
    rec.save(out / "simulate_record.json")
    if not args.no_plots:
        plotting.save(plotting.spectrum_fit(spec.x, spec.y, spec.x, model, title="simulated"),
                      out / "simulated.png")
    return rec


def cmd_fit(args, out):
    cfg = _config(args.config, io.FIT_COMMAND_SCHEMA)
    x_kind = args.x_kind or cfg.get("x_kind", "detuning")
    spec = io.load_spectrum(args.spectrum, x_kind)
    if x_kind == "voltage":
        if "calibration" not in cfg:
            raise io.ConfigError("voltage spectra need a 'calibration' block {slope, intercept}")
        spec = Calibration(cfg["calibration"]["slope"], cfg["calibration"]["intercept"], 0.0).apply(spec)
    fc = _fit_cfg(cfg, args.gamma)
    res = fit_fano_spectrum(spec, fc)
    dip = dip_summary(res)
    model = total_transmission(fitted_model(res), spec.x)
    rec = io.ResultRecord(
        "fit", io.digest_files([args.spectrum]),
        io.digest_obj({"config": cfg, "gamma": args.gamma, "x_kind": x_kind}),
        parameters=io.param_block(res.params, res.stderr),
        residuals=(spec.y - model).tolist(),
        diagnostics={"chi_squared": res.chi_squared, "iterations": res.iterations,
                     "converged": res.converged, "message": res.message, "warnings": res.warnings,
                     "free": res.free, "covariance": res.covariance.tolist()},
        extra={"dip": dip, "extinction": 1.0 - dip["t_min"]},
    )
    io.write_csv(out / "fit_curve.csv", ["x", "y", "model", "residual"],
                 zip(spec.x, spec.y, model, spec.y - model))
    rec.save(out / "fit_result.json")
    if not args.no_plots:
        xf = np.linspace(spec.x[0], spec.x[-1], 1000)
        plotting.save(plotting.spectrum_fit(spec.x, spec.y, xf, total_transmission(fitted_model(res), xf),
                                            spec.y - model, title=Path(args.spectrum).name),
                      out / "fit.png")
    return rec


def cmd_power_series(args, out):
    cfg = _config(args.config, io.POWER_SCHEMA)
    items = io.load_manifest(args.manifest, "power")
    gamma = args.gamma if args.gamma is not None else cfg.get("linewidth")
    fc = _fit_cfg(cfg, gamma)
    entries = [PowerEntry(it["power_nW"] * 1e-9, io.load_spectrum(it["path"], it.get("x_kind", "detuning")),
                          it.get("excluded", False)) for it in items]
    table = analyze_power_series(PowerSeries(entries), fc, cfg.get("workers"))
    use = cfg.get("use", "t_min")
    gamma_r = cfg.get("gamma_r")
    if gamma_r is None:
        # lowest usable power is closest to the weak-drive limit
        if gamma is None:
            raise io.ConfigError("give gamma_r in the config, or --gamma so it can be taken from the fits")
        usable = table.usable()
        if not usable:
            raise FitError("no usable rows in the power series")
        gamma_r = usable[0].dephasing / gamma
    sat = fit_saturation(table, gamma_r, use=use,
                         transition_frequency_thz=cfg.get("transition_frequency_THz"),
                         gamma_per_ns=cfg.get("decay_rate_per_ns"))
    cols = ["power_nW", "t_min", "t_resonant", "linewidth", "xi", "beta", "dephasing", "excluded", "failed", "message"]
    io.write_csv(out / "power_series.csv", cols,
                 ([r.power * 1e9, r.t_min, r.t_resonant, r.linewidth, r.xi, r.beta, r.dephasing,
                   r.excluded, r.failed, r.message] for r in table.rows))
    P = np.array([r.power for r in table.rows])
    pg = np.geomspace(P.min() / 2, P.max() * 2, 200)
    width0 = gamma if gamma else np.nan
    pred = sat.predicted_linewidth(pg, width0)
    io.write_csv(out / "saturation_curve.csv", ["power_nW", "t_min_model", "linewidth_predicted"],
                 zip(pg * 1e9, sat.transmission(pg), pred))
    params = {"beta_eff": sat.beta_eff, "critical_input_power_nW": sat.critical_input_power * 1e9}
    se = sat.stderr
    rec = io.ResultRecord(
        "power-series", io.digest_files([args.manifest] + [it["path"] for it in items]),
        io.digest_obj({"config": cfg, "gamma": args.gamma}),
        parameters=io.param_block(params, {"beta_eff": se["beta_eff"],
                                           "critical_input_power_nW": se["critical_input_power"] * 1e9}),
        residuals=[float(getattr(r, use) - sat.transmission(r.power)) for r in table.usable()],
        diagnostics={"chi_squared": sat.chi_squared, "used_rows": len(table.usable()),
                     "failed_rows": [r.power * 1e9 for r in table.rows if r.failed]},
        extra={"gamma_r": gamma_r, "n_c": sat.n_c, "xi_mean": table.xi_mean, "xi_std": table.xi_std,
               "waveguide_critical_power_nW": None if sat.waveguide_critical_power is None
               else sat.waveguide_critical_power * 1e9,
               "alpha": sat.alpha, "t_min_source": use},
    )
    rec.save(out / "saturation_fit.json")
    if not args.no_plots:
        fig = plotting.power_series(P * 1e9, [getattr(r, use) for r in table.rows],
                                    [r.linewidth for r in table.rows], pg * 1e9, sat.transmission(pg), pred,
                                    [r.excluded or r.failed for r in table.rows])
        plotting.save(fig, out / "power_series.png")
    return rec


def cmd_temp_series(args, out):
    cfg = _config(args.config, io.THERMAL_SCHEMA)
    items = io.load_manifest(args.manifest, "temperature")
    gamma = args.gamma if args.gamma is not None else cfg.get("linewidth")
    fc = _fit_cfg(cfg, gamma)
    items = sorted(items, key=lambda it: it["temperature_K"])
    series = ThermalSeries([ThermalEntry(it["temperature_K"], io.load_spectrum(it["path"])) for it in items])
    rows = analyze_thermal_series(series, fc, cfg.get("workers"))
    cols = ["temperature_K", "linewidth", "dephasing", "t_min", "center", "beta", "xi", "masked", "failed", "message"]
    io.write_csv(out / "thermal_series.csv", cols,
                 ([r.temperature, r.linewidth, r.dephasing, r.t_min, r.center, r.beta, r.xi, r.masked,
                   r.failed, r.message] for r in rows))
    shifts = resonance_shifts(rows)
    T = np.array([t for t, _ in shifts])
    E = np.array([e for _, e in shifts])
    params, stderr, extra, model_t, model_e = {}, {}, {}, None, None
    try:
        bf = fit_band_edge(T, E, fit_offset=cfg.get("fit_offset", True))
    except (FitError, ValueError) as exc:
        extra["band_edge_error"] = str(exc)
    else:
        params = {"e_g0_meV": bf.params.e_g0, "eta": bf.params.eta, "phonon_energy_meV": bf.params.phonon_energy}
        se = bf.stderr
        stderr = {"e_g0_meV": se["e_g0"], "eta": se["eta"], "phonon_energy_meV": se["phonon_energy"]}
        model_t = np.linspace(T.min(), T.max(), 200)
        model_e = band_edge(model_t, bf.params)
        io.write_csv(out / "band_edge_curve.csv", ["temperature_K", "shift_meV"], zip(model_t, model_e))
    io.write_csv(out / "resonance_shifts.csv", ["temperature_K", "shift_meV"], shifts)
    rec = io.ResultRecord(
        "temp-series", io.digest_files([args.manifest] + [it["path"] for it in items]),
        io.digest_obj({"config": cfg, "gamma": args.gamma}),
        parameters=io.param_block(params, stderr),
        residuals=[] if model_e is None else (E - band_edge(T, bf.params)).tolist(),
        diagnostics={"failed_rows": [r.temperature for r in rows if r.failed],
                     "masked_rows": [r.temperature for r in rows if r.masked]},
        extra=extra,
    )
    rec.save(out / "band_edge.json")
    if not args.no_plots:
        fig = plotting.thermal_series([r.temperature for r in rows], [r.linewidth for r in rows],
                                      [r.dephasing for r in rows], [r.t_min for r in rows], T, E, model_t, model_e)
        plotting.save(fig, out / "thermal_series.png")
    return rec


def cmd_beta_map(args, out):
    cfg = io.load_json(args.config, io.BETA_MAP_SCHEMA)
    base = Path(args.config).parent
    bands = [ModeBand(b["k_center"], b["k_halfwidth"], b["label"]) for b in cfg["bands"]]
    hom = None
    if "homogeneous_dipole" in cfg:
        hom = complex(*cfg["homogeneous_dipole"])
    rows, paths = [], []
    for i, ln in enumerate(cfg["lines"]):
        path = base / ln["path"]
        paths.append(path)
        dip = complex(*ln["dipole"]) if "dipole" in ln else None
        line = io.load_field_line(path, frequency=ln["frequency_THz"], dipole_value=dip,
                                  dipole_position=ln.get("dipole_position_nm", 0.0),
                                  label=ln.get("label", str(i)))
        mc = beta_per_mode(line, bands, exclusion=cfg.get("exclusion_nm"))
        ref = hom
        if ref is None and "refractive_index" in cfg:
            ref = homogeneous_dipole_field(line.frequency, cfg["refractive_index"])
        fp = purcell_factor(line.dipole_value, ref) if ref is not None else float("nan")
        rows.append((line.label, ln.get("displacement_nm", float("nan")), mc, fp))
    labels = [b.label for b in bands]
    io.write_csv(out / "beta_map.csv", ["line", "displacement_nm"] + [f"beta_{m}" for m in labels]
                 + ["beta_sum", "purcell"],
                 ([lab, d] + [mc.betas[m] for m in labels] + [mc.total, fp] for lab, d, mc, fp in rows))
    rec = io.ResultRecord(
        "beta-map", io.digest_files([args.config] + paths), io.digest_obj(cfg),
        extra={"bands": cfg["bands"],
               "lines": [{"label": lab, "betas": mc.betas, "wavenumbers": mc.wavenumbers, "sum": mc.total,
                          "purcell": fp, "window_nm": list(mc.window), "warnings": mc.warnings}
                         for lab, d, mc, fp in rows]},
    )
    rec.save(out / "beta_map.json")
    if not args.no_plots:
        fig = plotting.beta_map([r[0] for r in rows], {m: [r[2].betas[m] for r in rows] for m in labels},
                                None if hom is None and "refractive_index" not in cfg else [r[3] for r in rows])
        plotting.save(fig, out / "beta_map.png")
    return rec


def cmd_calibrate(args, out):
    pts = io.load_points(args.points)
    cal = calibrate_voltage_to_frequency(pts)
    inputs = [args.points]
    if args.spectrum:
        spec = cal.apply(io.load_spectrum(args.spectrum, "voltage"))
        io.save_spectrum(out / "calibrated_spectrum.csv", spec)
        inputs.append(args.spectrum)
    rec = io.ResultRecord(
        "calibrate", io.digest_files(inputs), io.digest_obj({}),
        parameters=io.param_block({"slope": cal.slope, "intercept": cal.intercept},
                                  {"slope": cal.slope_stderr, "intercept": cal.intercept_stderr}),
        residuals=(pts[:, 1] - cal(pts[:, 0])).tolist(),
        diagnostics={"residual_rms": cal.residual_rms},
    )
    rec.save(out / "calibration.json")
    if not args.no_plots:
        plotting.save(plotting.calibration(pts[:, 0], pts[:, 1], cal.slope, cal.intercept), out / "calibration.png")
    return rec


def cmd_lifetime(args, out):
    cfg = _config(args.config, io.LIFETIME_SCHEMA)
    h = io.load_points(args.histogram, ("time_ps", "counts"))
    irf = io.load_points(args.irf, ("time_ps", "weight"))
    hist = DecayHistogram(h[:, 0], h[:, 1], irf[:, 0], irf[:, 1])
    res = fit_decay(hist, io.fit_config_from(cfg.get("fit")))
    model = decay_model(hist)(res.params["rate"], res.params["amplitude"])
    se = res.stderr
    se["tau_ps"] = se["rate"] * res.params["tau_ps"] / res.params["rate"]
    rec = io.ResultRecord(
        "lifetime", io.digest_files([args.histogram, args.irf]), io.digest_obj(cfg),
        parameters=io.param_block(res.params, se),
        residuals=(hist.counts - model).tolist(),
        diagnostics={"chi_squared": res.chi_squared, "converged": res.converged, "warnings": res.warnings},
        extra={"linewidth_GHz": res.params["rate"] / (2 * np.pi)},
    )
    io.write_csv(out / "lifetime_curve.csv", ["time_ps", "counts", "model"], zip(hist.time, hist.counts, model))
    rec.save(out / "lifetime.json")
    if not args.no_plots:
        plotting.save(plotting.decay(hist.time, hist.counts, model), out / "lifetime.png")
    return rec


HANDLERS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "power-series": cmd_power_series,
    "temp-series": cmd_temp_series, "beta-map": cmd_beta_map, "calibrate": cmd_calibrate,
    "lifetime": cmd_lifetime,
}


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = io.output_dir(args.out)
    try:
        HANDLERS[args.command](args, out)
    except (ValueError, FitError, DomainError, OSError, RuntimeError, KeyError) as exc:
        err = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        try:
            with io.atomic_open(out / "error.json", "w") as fh:
                json.dump(err, fh, indent=2, sort_keys=True)
        except OSError:
            pass
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
