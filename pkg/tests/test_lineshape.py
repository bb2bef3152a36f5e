import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qdwaveguide.lineshape import (
    DomainError,
    DrivePoint,
    EmitterParams,
    FanoBackground,
    ResidualPeak,
    SpectrumModelParams,
    bare_transmission,
    critical_photon_number,
    emitter_dip,
    emitter_transmission,
    fano_transmission,
    lorentzian_limit_transmission,
    quantum_efficiency_bound,
    rt_linewidth,
    steady_state_amplitudes,
    total_transmission,
    transmission_on_resonance,
)


def model(beta=0.51, gamma_r=0.06, xi=0.0, S=0.0, linewidth=1.0, center=0.0):
    em = EmitterParams.from_relative(linewidth, gamma_r, beta)
    return SpectrumModelParams(em, FanoBackground(xi), DrivePoint(S), center)


# --- closed forms -------------------------------------------------------------


def test_uncoupled_emitter_is_transparent():
    for gd in (0.0, 0.3):
        for S in (0.0, 1.0, 50.0):
            assert transmission_on_resonance(EmitterParams(1.0, gd, 0.0), S) == 1.0


def test_extinction_anchor():
    dT = 1 - transmission_on_resonance(EmitterParams.from_relative(0.87, 0.06, 0.51), 0.02)
    assert 0.62 <= dT <= 0.70


def test_on_resonance_hand_value():
    # frozen from the independent oracle: 1 + (0.42-2)0.42/(1.12*2)
    T = transmission_on_resonance(EmitterParams.from_relative(1.0, 0.06, 0.42), 1.0)
    assert T == pytest.approx(0.70375, abs=1e-12)


def test_on_resonance_rejects_negative_saturation():
    with pytest.raises(DomainError):
        transmission_on_resonance(EmitterParams(1.0), -0.1)


@pytest.mark.parametrize("beta,gamma_r,expected", [(1.0, 0.0, 0.25), (0.5, 0.0, 1.0)])
def test_critical_photon_number_algebra(beta, gamma_r, expected):
    assert critical_photon_number(EmitterParams.from_relative(1.0, gamma_r, beta)) == pytest.approx(expected)


def test_critical_photon_number_anchor():
    assert critical_photon_number(EmitterParams.from_relative(1.0, 0.06, 0.42)) == pytest.approx(1.6, abs=0.05)


def test_critical_photon_number_uncoupled_is_error():
    with pytest.raises(DomainError):
        critical_photon_number(EmitterParams(1.0, 0.0, 0.0))


def test_rt_linewidth_examples():
    assert rt_linewidth(EmitterParams(0.87), 0.0) == pytest.approx(0.87)
    assert rt_linewidth(EmitterParams(0.87), 3.0) == pytest.approx(1.74)
    em = EmitterParams(0.87, 0.1, 0.5)
    assert rt_linewidth(em, 0.13) / rt_linewidth(em, 0.0) == pytest.approx(math.sqrt(1.13))
    assert rt_linewidth(EmitterParams(0.87, 0.06 * 0.87), 0.02) == pytest.approx(0.984, abs=0.002)


def test_bare_transmission():
    assert bare_transmission(FanoBackground(0.0)) == 1.0
    assert abs(bare_transmission(FanoBackground(1e9))) ** 2 < 1e-17
    assert abs(bare_transmission(FanoBackground(0.16))) ** 2 == pytest.approx(1 / 1.0256, rel=1e-14)


def test_fano_from_cavity_sign():
    assert FanoBackground.from_cavity(0.3, 1.5).xi == pytest.approx(0.2)


def test_quantum_efficiency_bound():
    assert quantum_efficiency_bound(13.5, 1.2) == pytest.approx(0.92, abs=0.01)
    assert quantum_efficiency_bound(5.0, 0.0) == 1.0
    assert quantum_efficiency_bound(5.0, 5.0) == 0.0
    with pytest.raises(DomainError):
        quantum_efficiency_bound(1.0, 2.0)


def test_emitter_params_validation():
    with pytest.raises(DomainError):
        EmitterParams(1.0, 0.0, 1.2)
    with pytest.raises(DomainError):
        EmitterParams(0.0)
    with pytest.raises(DomainError):
        EmitterParams(1.0, -0.1)


# --- steady state --------------------------------------------------------------


def test_perfect_mirror_limit():
    amp = steady_state_amplitudes(model(beta=1.0, gamma_r=0.0), 0.0)
    assert abs(amp.t) < 1e-15
    assert abs(amp.r) ** 2 == pytest.approx(1.0, abs=1e-15)
    assert abs(amp.p_incoherent) < 1e-15


def test_no_emitter_limit():
    p = model(beta=0.0, xi=0.3, S=2.0)
    amp = steady_state_amplitudes(p, np.linspace(-3, 3, 7))
    assert np.allclose(abs(amp.t) ** 2, abs(bare_transmission(p.fano)) ** 2, atol=1e-15)
    assert np.all(amp.s_minus == 0)


def test_component_assembly_matches_closed_form():
    # fractions assembled term by term vs the weak-drive closed form
    T_or, total, P = oracles.assembled(0.51, 1.0, 0.06, 0.0, 0.0, 0.0)
    T = emitter_transmission(model(), 0.0)
    assert T == pytest.approx(oracles.closed_form(0.51, 1.0, 0.06, 0.0, 0.0), abs=1e-12)
    assert T == pytest.approx(T_or, abs=1e-12)
    assert T == pytest.approx(oracles.eq1(0.51, 0.06, 0.0), abs=1e-12)


GRID_BETA = (0.0, 0.25, 0.5, 0.75, 1.0)
GRID_GR = (0.0, 0.06, 0.5)
GRID_XI = (0.0, 0.16, 0.5)
GRID_S = (0.0, 0.02, 1.0, 10.0)
DW = np.linspace(-10, 10, 401)


def test_bookkeeping_grid():
    worst = 0.0
    for b in GRID_BETA:
        for gr in GRID_GR:
            for xi in GRID_XI:
                for S in GRID_S:
                    amp = steady_state_amplitudes(model(b, gr, xi, S), DW)
                    worst = max(worst, float(np.max(np.abs(amp.fractions_sum - 1.0))))
                    assert np.all(amp.p_incoherent > -1e-12)
    assert worst < 1e-12


def test_matches_independent_assembly_at_finite_drive():
    for b in (0.25, 0.51, 0.9):
        for xi in (0.0, 0.16, 0.5):
            for S in (0.02, 1.0, 10.0):
                T_or, _, _ = oracles.assembled(b, 1.0, 0.06, xi, DW, S)
                assert np.max(np.abs(emitter_transmission(model(b, 0.06, xi, S), DW) - T_or)) < 1e-12


def test_eq1_consistency_all_saturations():
    for b in GRID_BETA:
        for gr in GRID_GR:
            for S in GRID_S:
                T = emitter_transmission(model(b, gr, 0.0, S), 0.0)
                assert T == pytest.approx(oracles.eq1(b, gr, S), abs=1e-10)


def test_lorentzian_limit():
    for b in (0.25, 0.51, 1.0):
        for gr in GRID_GR:
            em = EmitterParams.from_relative(1.0, gr, b)
            full = emitter_transmission(model(b, gr, 1e-8, 0.0), DW)
            assert np.max(np.abs(full - lorentzian_limit_transmission(em, DW))) < 1e-6
            assert np.max(np.abs(lorentzian_limit_transmission(em, DW) - oracles.lorentz_limit(b, 1, gr, DW))) < 1e-14


def test_lorentzian_limit_half_depth():
    em = EmitterParams(1.0, 0.06, 0.51)
    t0 = lorentzian_limit_transmission(em, 0.0)
    half = (1.0 + t0) / 2
    assert lorentzian_limit_transmission(em, (1.0 + 0.12) / 2) == pytest.approx(half, abs=1e-14)
    assert lorentzian_limit_transmission(em, 1e6) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("S", [0.0, 0.5, 3.0])
def test_numeric_fwhm_matches_power_broadened_width(S):
    p = model(0.51, 0.06, 0.0, S, linewidth=0.87)
    fwhm, x_min, y_min = emitter_dip(p)
    assert fwhm == pytest.approx(rt_linewidth(p.emitter, S), rel=1e-6)
    assert abs(x_min) < 1e-6


def test_fano_dip_position_and_depth():
    # frozen from a 2e6-point scan of the independent closed form
    p = model(0.51, 0.06, 0.16, 0.0)
    _, x_min, y_min = emitter_dip(p)
    assert x_min == pytest.approx(0.019281, abs=2e-6)
    assert y_min == pytest.approx(0.326450784, abs=1e-8)


def test_asymptotics():
    far = np.array([-1e4, 1e4])
    T = emitter_transmission(model(0.51, 0.06, 0.0, 0.5), far)
    assert np.all(np.abs(T - 1) < 1e-6)
    # with a cavity phase the tail is dispersive: T - 1 ~ -beta xi / (dw (1 + xi^2))
    for xi in (0.16, 0.5):
        T = emitter_transmission(model(0.51, 0.06, xi, 0.5), far)
        assert np.allclose((T - 1) * far, -0.51 * xi / (1 + xi * xi), rtol=1e-3)
        assert np.all(np.abs(emitter_transmission(model(0.51, 0.06, xi, 0.5), far * 100) - 1) < 1e-6)
    assert abs(emitter_transmission(model(0.51, 0.06, 0.16, 1e6), 0.0) - 1) < 1e-4


def test_monotone_in_beta_and_saturation():
    betas = np.linspace(0.01, 0.99, 99)
    T = [emitter_transmission(model(b, 0.06, 0.0, 0.5), 0.0) for b in betas]
    assert np.all(np.diff(T) < 0)
    Ss = np.geomspace(1e-3, 1e3, 60)
    T = [emitter_transmission(model(0.51, 0.06, 0.16, s), 0.0) for s in Ss]
    assert np.all(np.diff(T) > 0)


@given(st.floats(0.01, 1.0), st.floats(0.0, 2.0), st.floats(-2, 2), st.floats(-20, 20), st.floats(1e-3, 1e3))
def test_closed_form_scale_invariant(beta, gd, xi, dw, c):
    em1 = EmitterParams(1.0, gd, beta)
    em2 = EmitterParams(c, c * gd, beta)
    assert fano_transmission(em2, xi, c * dw) == pytest.approx(fano_transmission(em1, xi, dw), abs=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(-1.0, 1.0), st.floats(0, 100), st.floats(-10, 10))
def test_bookkeeping_property(beta, gr, xi, S, dw):
    amp = steady_state_amplitudes(model(beta, gr, xi, S), dw)
    assert abs(amp.fractions_sum - 1) < 1e-12


def test_weak_drive_equals_closed_form_grid():
    for b in GRID_BETA[1:]:
        for gr in GRID_GR:
            for xi in GRID_XI:
                em = EmitterParams.from_relative(1.0, gr, b)
                ref = oracles.closed_form(b, 1.0, gr, xi, DW)
                assert np.max(np.abs(fano_transmission(em, xi, DW) - ref)) < 1e-14
                assert np.max(np.abs(emitter_transmission(model(b, gr, xi, 0.0), DW) - ref)) < 1e-10


def test_drive_photon_number_and_saturation_agree():
    em = EmitterParams.from_relative(1.0, 0.06, 0.42)
    nc = critical_photon_number(em)
    by_n = SpectrumModelParams(em, FanoBackground(0.16), DrivePoint(None, photon_number=2.0 * nc))
    by_s = SpectrumModelParams(em, FanoBackground(0.16), DrivePoint(2.0))
    assert emitter_transmission(by_n, DW) == pytest.approx(emitter_transmission(by_s, DW), abs=1e-14)


def test_residual_peaks_are_additive():
    p = model(0.51, 0.06, 0.16)
    pk = ResidualPeak(3.0, 0.5, -0.2)
    with_peak = SpectrumModelParams(p.emitter, p.fano, p.drive, p.center, (pk,))
    assert np.allclose(total_transmission(with_peak, DW), emitter_transmission(p, DW) + pk(DW), atol=1e-15)
    assert pk(3.0) == pytest.approx(-0.2)
    assert pk(3.25) == pytest.approx(-0.1)


def test_center_shifts_curve():
    a = emitter_transmission(model(xi=0.16, center=0.7), DW + 0.7)
    b = emitter_transmission(model(xi=0.16), DW)
    assert np.allclose(a, b, atol=1e-14)
