import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdwaveguide import io
from qdwaveguide.fitting import Spectrum
from qdwaveguide.lineshape import DrivePoint, EmitterParams, FanoBackground, SpectrumModelParams, total_transmission

P = SpectrumModelParams(EmitterParams(0.87, 0.05, 0.51), FanoBackground(0.16), DrivePoint(0.0))


def write(path, text):
    path.write_text(text)
    return path


def test_three_and_two_column(tmp_path):
    s3 = io.load_spectrum(write(tmp_path / "a.csv", "x,y,sigma\n" + "".join(f"{i},{i*i},0.1\n" for i in range(8))))
    assert s3.sigma is not None and np.allclose(s3.sigma, 0.1)
    s2 = io.load_spectrum(write(tmp_path / "b.csv", "x,y\n" + "".join(f"{i},{i}\n" for i in range(8))), "voltage")
    assert s2.sigma is None and s2.x_kind == "voltage"


def test_nan_row_rejected_with_index(tmp_path):
    rows = [f"{i},1.0\n" for i in range(10)]
    rows[4] = "4,nan\n"
    with pytest.raises(io.DataFormatError, match=r":6: non-finite value \(row 4\)"):
        io.load_spectrum(write(tmp_path / "n.csv", "x,y\n" + "".join(rows)))


def test_malformed_row_line_number(tmp_path):
    rows = [f"{i},1.0\n" for i in range(10)]
    rows[2] = "2,abc\n"
    with pytest.raises(io.DataFormatError, match=":4:"):
        io.load_spectrum(write(tmp_path / "m.csv", "x,y\n" + "".join(rows)))
    rows[2] = "2,1,3,4\n"
    with pytest.raises(io.DataFormatError, match=":4: expected 2 columns"):
        io.load_spectrum(write(tmp_path / "m.csv", "x,y\n" + "".join(rows)))


def test_non_monotone_and_header(tmp_path):
    rows = [f"{i},1.0\n" for i in (0, 1, 2, 5, 4, 6, 7, 8)]
    with pytest.raises(io.DataFormatError, match="strictly increasing"):
        io.load_spectrum(write(tmp_path / "u.csv", "x,y\n" + "".join(rows)))
    with pytest.raises(io.DataFormatError, match="header"):
        io.load_spectrum(write(tmp_path / "h.csv", "a,b\n1,2\n"))
    with pytest.raises(io.DataFormatError, match="empty"):
        io.load_spectrum(write(tmp_path / "e.csv", ""))


def test_spectrum_save_load_round_trip(tmp_path):
    s = io.simulate_spectrum(P, (-5, 5, 51), 0.01, 3)
    io.save_spectrum(tmp_path / "s.csv", s)
    back = io.load_spectrum(tmp_path / "s.csv")
    assert np.array_equal(back.x, s.x) and np.array_equal(back.y, s.y)


def test_simulate_zero_noise_exact():
    s = io.simulate_spectrum(P, (-5, 5, 101))
    assert np.array_equal(s.y, total_transmission(P, np.linspace(-5, 5, 101)))


def test_simulate_deterministic():
    a = io.simulate_spectrum(P, (-5, 5, 101), 0.01, 7)
    b = io.simulate_spectrum(P, (-5, 5, 101), 0.01, 7)
    c = io.simulate_spectrum(P, (-5, 5, 101), 0.01, 8)
    assert np.array_equal(a.y, b.y) and not np.array_equal(a.y, c.y)
    d = io.simulate_spectrum(P, (-5, 5, 101), 0.01, 7, "Philox")
    assert not np.array_equal(a.y, d.y)


def test_simulate_noise_rms():
    s = io.simulate_spectrum(P, (-5, 5, 10_000), 0.01, 1)
    rms = np.sqrt(np.mean((s.y - total_transmission(P, s.x)) ** 2))
    assert rms == pytest.approx(0.01, rel=0.03)


def test_simulate_validation():
    with pytest.raises(ValueError):
        io.simulate_spectrum(P, (-5, 5, 7))
    with pytest.raises(ValueError):
        io.simulate_spectrum(P, (-5, 5, 20), -0.1)
    with pytest.raises(ValueError, match="unknown generator"):
        io.make_rng(0, "nope")


def test_field_line_loader(tmp_path):
    z = np.arange(-320, 320, 10.0)
    ex = np.exp(1j * 0.02 * np.abs(z)) * 1j
    text = "z_nm,Ex_re,Ex_im\n" + "".join(f"{a},{b.real},{b.imag}\n" for a, b in zip(z, ex))
    line = io.load_field_line(write(tmp_path / "f.csv", text), frequency=325.0)
    assert line.dipole_value == pytest.approx(1j)
    with pytest.raises(io.DataFormatError, match="dipole position"):
        io.load_field_line(tmp_path / "f.csv", frequency=325.0, dipole_position=5.0)


def test_points_loader_header(tmp_path):
    with pytest.raises(io.DataFormatError, match="header"):
        io.load_points(write(tmp_path / "p.csv", "v,f\n1,2\n"))
    pts = io.load_points(write(tmp_path / "p.csv", "voltage,frequency\n1,2\n3,4\n"))
    assert pts.shape == (2, 2)


# --- config -------------------------------------------------------------------------


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(io.ConfigError, match="Additional properties"):
        io.validate({"fit": {"frozen": {}}, "bogus": 1}, io.FIT_COMMAND_SCHEMA)
    with pytest.raises(io.ConfigError, match="fit/max_iterations"):
        io.validate({"fit": {"max_iterations": 0}}, io.FIT_COMMAND_SCHEMA)
    with pytest.raises(io.ConfigError, match="invalid JSON"):
        io.load_json(write(tmp_path / "c.json", "{nope"))


def test_fit_config_from():
    cfg = io.fit_config_from({"frozen": {"linewidth": 0.87}, "mask": [[1, 2]], "bounds": {"xi": [-1, 1]},
                              "residual_peaks": [[3, 0.5, -0.1]]})
    assert cfg.mask == ((1, 2),) and cfg.bounds["xi"] == (-1, 1)
    assert cfg.residual_peaks == ((3, 0.5, -0.1),)


def test_model_params_from_config():
    p = io.model_params_from_config({"emitter": {"linewidth": 1.0, "gamma_r": 0.06, "beta": 0.4},
                                     "fano": {"delta": 0.3, "kappa": 1.5}, "drive": {"photon_number": 2.0},
                                     "residual_peaks": [{"center": 3, "width": 0.5, "amplitude": -0.1}]})
    assert p.emitter.dephasing == pytest.approx(0.06)
    assert p.fano.xi == pytest.approx(0.2)
    assert p.drive.photon_number == 2.0
    assert len(p.residual_peaks) == 1
    with pytest.raises(io.ConfigError):
        io.model_params_from_config({"emitter": {"linewidth": 1, "gamma_r": 0.1, "dephasing": 0.1, "beta": 0.5}})


def test_manifest_paths_relative(tmp_path):
    (tmp_path / "d").mkdir()
    write(tmp_path / "d" / "m.json", json.dumps([{"power_nW": 1.0, "path": "a.csv"}]))
    items = io.load_manifest(tmp_path / "d" / "m.json", "power")
    assert items[0]["path"] == str((tmp_path / "d" / "a.csv").resolve())
    with pytest.raises(io.ConfigError):
        write(tmp_path / "bad.json", json.dumps([{"power": 1.0, "path": "a.csv"}]))
        io.load_manifest(tmp_path / "bad.json", "power")


# --- records ------------------------------------------------------------------------


def record():
    return io.ResultRecord("fit", "a" * 64, "b" * 64, io.param_block({"beta": 0.5}, {"beta": 0.01}),
                           [0.1, -0.2], {"chi_squared": 1.5, "converged": True}, {"arr": np.arange(3)})


def test_record_round_trip(tmp_path):
    rec = record()
    rec.save(tmp_path / "r.json")
    back = io.ResultRecord.load(tmp_path / "r.json")
    assert back.to_dict() == rec.to_dict()
    back.save(tmp_path / "r2.json")
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_content_digest_ignores_timestamp():
    a, b = record(), record()
    b.timestamp = "2000-01-01T00:00:00+00:00"
    assert a.content_digest() == b.content_digest()
    b.parameters = io.param_block({"beta": 0.6})
    assert a.content_digest() != b.content_digest()


def test_timestamp_honours_source_date_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert io.timestamp() == "1970-01-01T00:00:00+00:00"


def test_digests_reproducible(tmp_path):
    write(tmp_path / "a.csv", "x,y\n")
    assert io.digest_files([tmp_path / "a.csv"]) == io.digest_files([tmp_path / "a.csv"])
    assert io.digest_obj({"a": 1, "b": 2}) == io.digest_obj({"b": 2, "a": 1})


@given(st.dictionaries(st.text(min_size=1, max_size=8), st.floats(allow_nan=False, allow_infinity=False),
                       max_size=5))
def test_record_serialisation_property(params):
    rec = io.ResultRecord("fit", "x", "y", io.param_block(params))
    assert io.ResultRecord.from_dict(json.loads(rec.dumps())).to_dict() == rec.to_dict()


def test_atomic_open_leaves_nothing_on_error(tmp_path):
    target = tmp_path / "out.json"
    with pytest.raises(RuntimeError):
        with io.atomic_open(target) as fh:
            fh.write("partial")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []


def test_atomic_open_keeps_old_file_on_error(tmp_path):
    target = write(tmp_path / "out.json", "old")
    with pytest.raises(RuntimeError):
        with io.atomic_open(target) as fh:
            fh.write("new")
            raise RuntimeError("boom")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.json"]


def test_output_dir(monkeypatch):
    monkeypatch.setenv(io.OUTPUT_DIR_ENV, "/tmp/x")
    assert str(io.output_dir()) == "/tmp/x"
    assert str(io.output_dir("/tmp/y")) == "/tmp/y"
    monkeypatch.delenv(io.OUTPUT_DIR_ENV)
    assert str(io.output_dir()) == "qdwg-out"


def test_csv_repr_floats(tmp_path):
    io.write_csv(tmp_path / "t.csv", ["a", "b"], [(0.1 + 0.2, True)])
    assert (tmp_path / "t.csv").read_text() == "a,b\n0.30000000000000004,1\n"
