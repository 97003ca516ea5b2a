import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from qcoexist.link_model import (
    LinkParams,
    ModelValidityError,
    UndefinedVisibilityError,
    channel_efficiencies,
    coincidence_extrema,
    predict,
    signal_sprs,
    singles,
    snr,
    sweep,
    sweep_from_csv,
    sweep_to_csv,
    visibility,
)
from qcoexist.spectra import ClassicalPlan, ParameterError, Spectrum

LOSS = Spectrum(np.array([1260.0, 1290.0, 1310.0, 1360.0]), np.array([11.5, 10.6, 10.0, 9.12]), "dB")
SPRS = Spectrum(np.array([1260.0, 1290.0, 1310.0, 1360.0]), np.array([9.6, 13.8, 82.8, 418.0]), "counts/s/mW/GHz")

prob = st.floats(min_value=0.0, max_value=1e-2, allow_nan=False)


def hand_visibility(mu, eta_i, eta_s, d_i, d_s, n_s=0.0):
    # written out independently of the package
    s_i = mu * eta_i + d_i
    s_s = mu * eta_s + d_s + n_s
    c_min = s_i * s_s
    c_max = mu * eta_i * eta_s + c_min
    return (c_max - c_min) / (c_max + c_min)


def test_dark_fiber_point_matches_hand_evaluation(dark_link):
    r = predict(dark_link, 1290.0)
    assert r.visibility == pytest.approx(hand_visibility(0.009, 0.03, 0.001, 1.8e-7, 3.8e-7), rel=1e-13)
    assert r.s_i == pytest.approx(2.7018e-4, rel=1e-13)
    assert r.s_s == pytest.approx(9.38e-6, rel=1e-13)


def test_singles_and_extrema(dark_link):
    s_i = singles(dark_link, "idler", 1290.0)
    s_s = singles(dark_link, "signal", 1290.0, n_sprs=1e-6)
    c_max, c_min = coincidence_extrema(dark_link, s_i, s_s)
    assert c_min == s_i * s_s
    assert c_max - c_min == pytest.approx(0.009 * 0.03 * 0.001, rel=1e-13)
    with pytest.raises(ParameterError):
        singles(dark_link, "pump", 1290.0)


def test_signal_efficiency_follows_loss_idler_constant(dark_link):
    eta_i, eta_s = channel_efficiencies(dark_link, 1310.0, LOSS)
    assert eta_i == 0.03
    assert eta_s == pytest.approx(0.001 * 10 ** 0.06, rel=1e-13)
    assert channel_efficiencies(dark_link, 1290.0, LOSS) == (0.03, 0.001)


def test_loss_required_off_reference(dark_link):
    with pytest.raises(ParameterError):
        channel_efficiencies(dark_link, 1300.0, None)


@given(st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1))
def test_visibility_antisymmetric_under_swap(a, b):
    assume(a + b > 0)
    assert visibility(a, b) == pytest.approx(-visibility(b, a), abs=1e-15)


@given(st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1))
def test_visibility_bounded(a, b):
    assume(a + b > 0)
    hi, lo = max(a, b), min(a, b)
    assert 0.0 <= visibility(hi, lo) <= 1.0


def test_visibility_undefined_and_negative():
    with pytest.raises(UndefinedVisibilityError):
        visibility(0.0, 0.0)
    with pytest.raises(ParameterError):
        visibility(-1e-9, 0.0)


@given(prob, prob)
def test_more_noise_never_raises_visibility(n1, n2):
    p = LinkParams(mu=0.009, eta_idler_ref=0.03, eta_signal_ref=0.001, n_dark_idler=1.8e-7, n_dark_signal=3.8e-7)
    lo, hi = sorted((n1, n2))
    v_lo = predict(replace(p, n_sprs_signal_ref=lo), 1290.0).visibility
    v_hi = predict(replace(p, n_sprs_signal_ref=hi), 1290.0).visibility
    assert v_hi <= v_lo + 1e-15


@given(st.floats(min_value=1e-4, max_value=0.1), prob, prob)
def test_matches_hand_evaluation_everywhere(mu, d_i, n_s):
    p = LinkParams(mu=mu, eta_idler_ref=0.05, eta_signal_ref=0.002, n_dark_idler=d_i,
                   n_dark_signal=1e-7, n_sprs_signal_ref=n_s)
    v = predict(p, 1290.0).visibility
    assert v == pytest.approx(hand_visibility(mu, 0.05, 0.002, d_i, 1e-7, n_s), rel=1e-12)


def test_probability_above_one_is_model_error(dark_link):
    p = replace(dark_link, n_dark_signal=0.6)
    with pytest.raises(ModelValidityError):
        singles(p, "signal", 1290.0, n_sprs=0.6)


def test_rare_event_warning(dark_link, caplog):
    singles(replace(dark_link, n_dark_signal=0.2), "signal", 1290.0)
    assert "inaccurate" in caplog.text


@pytest.mark.parametrize(
    "field, value",
    [("mu", -0.1), ("mu", math.inf), ("eta_idler_ref", 1.5), ("n_dark_signal", -1e-9),
     ("window_ps", 0.0), ("rep_rate_hz", 0.0), ("window_ps", 2500.0)],
)
def test_link_params_validation(dark_link, field, value):
    with pytest.raises(ParameterError):
        replace(dark_link, **{field: value})


def test_zero_pairs_gives_zero_visibility(dark_link):
    assert predict(replace(dark_link, mu=0.0), 1290.0).visibility == 0.0


def test_signal_sprs_anchored_and_scaled(dark_link):
    p = replace(dark_link, n_sprs_signal_ref=2e-6, sprs_power_dbm=21.4)
    assert signal_sprs(p, 1290.0, SPRS) == 2e-6
    assert signal_sprs(p, 1310.0, SPRS) == pytest.approx(2e-6 * 6.0, rel=1e-13)
    plan = ClassicalPlan(24.4, (1528.4, 1566.9))
    # +3 dB launch power: factor 10**0.3
    assert signal_sprs(p, 1290.0, SPRS, plan) == pytest.approx(2e-6 * 10 ** 0.3, rel=1e-13)
    assert signal_sprs(p.dark_fiber(), 1310.0, SPRS, plan) == 0.0


def test_snr_anchor_and_scaling(dark_link):
    p = replace(dark_link, n_sprs_signal_ref=2e-6)
    assert snr(p, 1290.0, LOSS, anchor_snr=20.0) == 20.0
    # 1310: eta up by 10**0.06, noise from 2.38e-6 to 3.8e-7 + 1.2e-5
    expect = 20.0 * 10 ** 0.06 * (3.8e-7 + 2e-6) / (3.8e-7 + 1.2e-5)
    assert snr(p, 1310.0, LOSS, n_sprs_s=1.2e-5, anchor_snr=20.0) == pytest.approx(expect, rel=1e-13)
    # without an anchor the intrinsic ratio at the reference is used
    assert snr(p, 1290.0) == pytest.approx(0.009 * 0.001 / 2.38e-6, rel=1e-13)


def test_snr_saturates_without_noise(dark_link, caplog):
    p = replace(dark_link, n_dark_signal=0.0)
    r = predict(p, 1290.0)
    assert r.snr_saturated and math.isinf(r.snr)


def test_sweep_default_grid_and_csv_roundtrip(dark_link):
    p = replace(dark_link, n_sprs_signal_ref=2e-6, sprs_power_dbm=21.4)
    rows = sweep(p, LOSS, SPRS)
    assert len(rows) == 51
    back = sweep_from_csv(sweep_to_csv(rows))
    assert back["V"].tolist() == [r.visibility for r in rows]
    i = [r.wavelength for r in rows].index(1290.0)
    assert rows[i].visibility == predict(p, 1290.0, LOSS, SPRS).visibility


def test_sweep_outside_spectrum_raises(dark_link):
    from qcoexist.spectra import WavelengthRangeError

    with pytest.raises(WavelengthRangeError):
        sweep(dark_link, LOSS, grid=[1250.0])
