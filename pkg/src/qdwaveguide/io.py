"""File formats, result records and synthetic data."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .fitting import FitConfig, Spectrum
from .lineshape import (
    DrivePoint,
    EmitterParams,
    FanoBackground,
    ResidualPeak,
    SpectrumModelParams,
    total_transmission,
)
from .modes import ModeFieldLine

OUTPUT_DIR_ENV = "QDWG_OUTPUT_DIR"
RNG_NAMES = {"PCG64": np.random.PCG64, "PCG64DXSM": np.random.PCG64DXSM,
             "Philox": np.random.Philox, "SFC64": np.random.SFC64, "MT19937": np.random.MT19937}


class DataFormatError(ValueError):
    pass


# --- atomic writes -------------------------------------------------------------


@contextmanager
def atomic_open(path, mode="w", **kw):
    """Write to a temp file in the same directory and rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# --- spectra ---------------------------------------------------------------------


def load_spectrum(path, x_kind="detuning") -> Spectrum:
    """Read a CSV spectrum with header ``x,y`` or ``x,y,sigma``."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header not in (["x", "y"], ["x", "y", "sigma"]):
            raise DataFormatError(f"{path}:1: header must be 'x,y' or 'x,y,sigma', got {','.join(header)!r}")
        ncol = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != ncol:
                raise DataFormatError(f"{path}:{lineno}: expected {ncol} columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataFormatError(f"{path}:{lineno}: non-finite value (row {len(rows)})")
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(-1, ncol)
    if data.shape[0] and np.any(np.diff(data[:, 0]) <= 0):
        bad = int(np.flatnonzero(np.diff(data[:, 0]) <= 0)[0]) + 1
        raise DataFormatError(f"{path}:{bad + 2}: x is not strictly increasing")
    try:
        return Spectrum(data[:, 0], data[:, 1], data[:, 2] if ncol == 3 else None, x_kind)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def save_spectrum(path, spectrum: Spectrum):
    if spectrum.sigma is None:
        write_csv(path, ["x", "y"], zip(spectrum.x, spectrum.y))
    else:
        write_csv(path, ["x", "y", "sigma"], zip(spectrum.x, spectrum.y, spectrum.sigma))


def load_field_line(path, *, frequency, dipole_value=None, dipole_position=0.0, label="") -> ModeFieldLine:
    """CSV with header ``z_nm,Ex_re,Ex_im``.

    Without ``dipole_value`` the sample at ``dipole_position`` is used.
    """
    data = _read_numeric_csv(path, ["z_nm", "Ex_re", "Ex_im"])
    z, ex = data[:, 0], data[:, 1] + 1j * data[:, 2]
    if dipole_value is None:
        hit = np.flatnonzero(np.isclose(z, dipole_position, rtol=0, atol=1e-9))
        if hit.size == 0:
            raise DataFormatError(f"{path}: no sample at the dipole position z = {dipole_position} nm")
        dipole_value = ex[hit[0]]
    return ModeFieldLine(z, ex, complex(dipole_value), float(frequency), float(dipole_position), label)


def _read_numeric_csv(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = [h.strip() for h in next(reader, [])]
        if got != header:
            raise DataFormatError(f"{path}:1: header must be {','.join(header)!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric value") from None
            if len(vals) != len(header) or not all(math.isfinite(v) for v in vals):
                raise DataFormatError(f"{path}:{lineno}: malformed row")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, len(header))


def load_points(path, header=("voltage", "frequency")):
    return _read_numeric_csv(path, list(header))


# --- synthetic data --------------------------------------------------------------


def make_rng(seed, name="PCG64"):
    try:
        bitgen = RNG_NAMES[name]
    except KeyError:
        raise ValueError(f"unknown generator {name!r}; choose from {sorted(RNG_NAMES)}") from None
    return np.random.Generator(bitgen(seed))


def simulate_spectrum(params: SpectrumModelParams, grid, noise=0.0, seed=None, rng_name="PCG64") -> Spectrum:
    """Model samples on ``grid = (start, stop, num)`` plus Gaussian noise of std ``noise``."""
    start, stop, num = grid
    if num < 8:
        raise ValueError("grid needs at least 8 points")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    x = np.linspace(start, stop, int(num))
    y = np.asarray(total_transmission(params, x), dtype=float)
    if noise > 0:
        y = y + make_rng(seed, rng_name).normal(0.0, noise, x.size)
    return Spectrum(x, y, None)


# --- configuration ---------------------------------------------------------------

_NUM = {"type": "number"}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

FIT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "max_iterations": {"type": "integer", "minimum": 1},
        "rtol_params": {"type": "number", "exclusiveMinimum": 0},
        "rtol_chi2": {"type": "number", "exclusiveMinimum": 0},
        "bounds": {"type": "object", "additionalProperties": _PAIR},
        "frozen": {"type": "object", "additionalProperties": _NUM},
        "initial": {"type": "object", "additionalProperties": _NUM},
        "mask": {"type": "array", "items": _PAIR},
        "residual_peaks": {"type": "array", "items": {"type": "array", "items": _NUM,
                                                      "minItems": 3, "maxItems": 3}},
    },
}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["emitter"],
    "properties": {
        "emitter": {
            "type": "object", "additionalProperties": False, "required": ["linewidth", "beta"],
            "properties": {"linewidth": _NUM, "dephasing": _NUM, "gamma_r": _NUM, "beta": _NUM},
        },
        "fano": {
            "type": "object", "additionalProperties": False,
            "properties": {"xi": _NUM, "delta": _NUM, "kappa": _NUM},
        },
        "drive": {
            "type": "object", "additionalProperties": False,
            "properties": {"saturation": _NUM, "photon_number": _NUM},
        },
        "center": _NUM,
        "residual_peaks": {
            "type": "array",
            "items": {"type": "object", "additionalProperties": False,
                      "required": ["center", "width", "amplitude"],
                      "properties": {"center": _NUM, "width": _NUM, "amplitude": _NUM}},
        },
    },
}

SIMULATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": MODEL_SCHEMA,
        "grid": {"type": "object", "additionalProperties": False,
                 "properties": {"start": _NUM, "stop": _NUM, "num": {"type": "integer", "minimum": 8}}},
        "noise": {"type": "object", "additionalProperties": False,
                  "properties": {"sigma": {"type": "number", "minimum": 0}}},
        "rng": {"enum": sorted(RNG_NAMES)},
        "seed": {"type": "integer", "minimum": 0},
    },
}

FIT_COMMAND_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "fit": FIT_SCHEMA,
        "x_kind": {"enum": ["detuning", "voltage"]},
        "calibration": {"type": "object", "additionalProperties": False, "required": ["slope", "intercept"],
                        "properties": {"slope": _NUM, "intercept": _NUM}},
    },
}

POWER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "fit": FIT_SCHEMA,
        "gamma_r": {"type": "number", "minimum": 0},
        "linewidth": {"type": "number", "exclusiveMinimum": 0},
        "use": {"enum": ["t_min", "t_resonant"]},
        "transition_frequency_THz": {"type": "number", "exclusiveMinimum": 0},
        "decay_rate_per_ns": {"type": "number", "exclusiveMinimum": 0},
        "workers": {"type": "integer", "minimum": 1},
    },
}

THERMAL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "fit": FIT_SCHEMA,
        "linewidth": {"type": "number", "exclusiveMinimum": 0},
        "fit_offset": {"type": "boolean"},
        "workers": {"type": "integer", "minimum": 1},
    },
}

BETA_MAP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lines", "bands"],
    "properties": {
        "lines": {
            "type": "array", "minItems": 1,
            "items": {"type": "object", "additionalProperties": False,
                      "required": ["path", "frequency_THz"],
                      "properties": {"path": {"type": "string"}, "frequency_THz": _NUM,
                                     "dipole": _PAIR, "dipole_position_nm": _NUM,
                                     "label": {"type": "string"}, "displacement_nm": _NUM}},
        },
        "bands": {
            "type": "array", "minItems": 1,
            "items": {"type": "object", "additionalProperties": False,
                      "required": ["k_center", "k_halfwidth", "label"],
                      "properties": {"k_center": _NUM, "k_halfwidth": _NUM, "label": {"type": "string"}}},
        },
        "exclusion_nm": {"type": "number", "minimum": 0},
        "homogeneous_dipole": _PAIR,
        "refractive_index": {"type": "number", "exclusiveMinimum": 0},
    },
}

LIFETIME_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"fit": FIT_SCHEMA},
}

MANIFEST_ITEM = {
    "power": {"type": "object", "additionalProperties": False, "required": ["power_nW", "path"],
              "properties": {"power_nW": {"type": "number", "exclusiveMinimum": 0},
                             "path": {"type": "string"}, "excluded": {"type": "boolean"},
                             "x_kind": {"enum": ["detuning", "voltage"]}}},
    "temperature": {"type": "object", "additionalProperties": False, "required": ["temperature_K", "path"],
                    "properties": {"temperature_K": {"type": "number", "exclusiveMinimum": 0},
                                   "path": {"type": "string"}}},
}


class ConfigError(ValueError):
    pass


def validate(obj, schema, what="config"):
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{what}: {where}: {exc.message}") from None
    return obj


def load_json(path, schema=None, what=None):
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return validate(obj, schema, what or str(path)) if schema is not None else obj


def load_manifest(path, kind):
    """JSON array of ``{power_nW|temperature_K, path}``; paths are relative to the manifest."""
    schema = {"type": "array", "minItems": 1, "items": MANIFEST_ITEM[kind]}
    items = load_json(path, schema, f"manifest {path}")
    base = Path(path).parent
    for it in items:
        it["path"] = str((base / it["path"]).resolve()) if not os.path.isabs(it["path"]) else it["path"]
    return items


def fit_config_from(d) -> FitConfig:
    d = dict(d or {})
    for key in ("bounds",):
        if key in d:
            d[key] = {k: tuple(v) for k, v in d[key].items()}
    if "mask" in d:
        d["mask"] = tuple(tuple(w) for w in d["mask"])
    if "residual_peaks" in d:
        d["residual_peaks"] = tuple(tuple(p) for p in d["residual_peaks"])
    return FitConfig(**d)


def model_params_from_config(d) -> SpectrumModelParams:
    em = d["emitter"]
    if "dephasing" in em and "gamma_r" in em:
        raise ConfigError("emitter: give dephasing or gamma_r, not both")
    if "gamma_r" in em:
        emitter = EmitterParams.from_relative(em["linewidth"], em["gamma_r"], em["beta"])
    else:
        emitter = EmitterParams(em["linewidth"], em.get("dephasing", 0.0), em["beta"])
    fa = d.get("fano", {})
    if "delta" in fa or "kappa" in fa:
        if "xi" in fa:
            raise ConfigError("fano: give xi or (delta, kappa), not both")
        fano = FanoBackground.from_cavity(fa["delta"], fa["kappa"])
    else:
        fano = FanoBackground(fa.get("xi", 0.0))
    dr = d.get("drive", {})
    if "photon_number" in dr:
        drive = DrivePoint(saturation=None, photon_number=dr["photon_number"])
    else:
        drive = DrivePoint(dr.get("saturation", 0.0))
    peaks = [ResidualPeak(p["center"], p["width"], p["amplitude"]) for p in d.get("residual_peaks", [])]
    return SpectrumModelParams(emitter, fano, drive, d.get("center", 0.0), peaks)


# --- result records ---------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def digest_files(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(str(p) for p in paths):
        h.update(Path(p).name.encode())
        h.update(b"\0")
        h.update(Path(p).read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def digest_obj(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        t = _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc)
    else:
        t = _dt.datetime.now(tz=_dt.timezone.utc).replace(microsecond=0)
    return t.isoformat()


@dataclass
class ResultRecord:
    command: str
    input_digest: str
    config_digest: str
    parameters: dict = field(default_factory=dict)
    residuals: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    software: str = f"qdwaveguide {__version__}"
    timestamp: str = field(default_factory=timestamp)

    def to_dict(self):
        return json.loads(canonical_json(asdict(self)))

    def content_digest(self):
        d = self.to_dict()
        d.pop("timestamp")
        return digest_obj(d)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        with atomic_open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def param_block(values, stderr=None):
    stderr = stderr or {}
    return {k: {"value": float(v), "stderr": float(stderr.get(k, 0.0))} for k, v in values.items()}


def output_dir(flag=None) -> Path:
    return Path(flag or os.environ.get(OUTPUT_DIR_ENV) or "qdwg-out")
