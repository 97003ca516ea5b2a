import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcoexist.event_sim import (
    LOCAL,
    REMOTE,
    ClockModel,
    ConfigError,
    EstimationError,
    EventStream,
    SimConfig,
    StreamOrderError,
    analytic_rates,
    correlate,
    count_coincidences,
    events_from_csv,
    events_to_csv,
    extract_jitter,
    fringe_from_events,
    gated_counts,
    quadrature_difference,
    read_events,
    simulate,
    simulate_timing_pair,
    write_events,
)
from qcoexist.link_model import LinkParams
from qcoexist.quantum_state import AnalyzerSetting, fringe_visibility, werner_state

LINK = LinkParams(mu=0.009, eta_idler_ref=0.03, eta_signal_ref=0.001, n_dark_idler=1.8e-7, n_dark_signal=3.8e-7)


def cfg(**kw):
    base = dict(link=LINK, n_pulses=100_000_000, clock=ClockModel(3.5, 3.0), sprs_rate_cps=1e4, seed=1)
    base.update(kw)
    return SimConfig(**base)


def brute_force_coincidences(lt, rt, window, offset):
    return sum(1 for a in lt for b in rt if abs(b - a - offset) <= window / 2)


def test_streams_sorted_and_deterministic():
    a = simulate(cfg())
    b = simulate(cfg())
    for x, y in zip(a, b):
        x.check_order()
        assert np.array_equal(x.t, y.t)
    c = simulate(cfg(seed=2))
    assert not np.array_equal(a[0].t, c[0].t)


def test_pair_events_shared_across_background_changes():
    dark_l, dark_r = simulate(cfg(sprs_rate_cps=0.0))
    coex_l, coex_r = simulate(cfg(sprs_rate_cps=1e6))
    # local background does not depend on the Raman rate
    assert np.array_equal(dark_l.t, coex_l.t)
    assert len(coex_r) > len(dark_r)
    assert np.isin(dark_r.t, coex_r.t).mean() > 0.99


def test_gated_counts_match_rate_model():
    c = cfg(n_pulses=400_000_000)
    g = gated_counts(*simulate(c), c)
    e = analytic_rates(c)
    n = c.n_pulses
    for obs, mean in ((g.singles_local, e.s_local * n), (g.singles_remote, e.s_remote * n),
                      (g.coincidences, e.coincidence * n)):
        assert abs(obs - mean) < 4 * math.sqrt(mean)


def test_thermal_statistics_singles():
    c = cfg(n_pulses=20_000_000, pair_statistics="thermal")
    g = gated_counts(*simulate(c), c)
    e = analytic_rates(c)
    mean = e.s_local * c.n_pulses
    assert abs(g.singles_local - mean) < 4 * math.sqrt(mean)


def test_blocks_cover_all_pulses():
    c = cfg(n_pulses=50_000_000, block_pulses=7_000_000)
    g = gated_counts(*simulate(c), c)
    mean = analytic_rates(c).s_local * c.n_pulses
    assert abs(g.singles_local - mean) < 4 * math.sqrt(mean)


def test_clock_offset_moves_the_peak():
    c = cfg(n_pulses=2_000_000_000, clock=ClockModel(3.5, 3.0, offset_ps=1234.0), sprs_rate_cps=0.0)
    loc, rem = simulate(c)
    hist = correlate(loc, rem, 300.0, 1234.0)
    assert extract_jitter(hist).center_ps == pytest.approx(1234.0, abs=10.0)
    g = gated_counts(loc, rem, c)
    assert g.coincidences > 0.8 * analytic_rates(c).coincidence * c.n_pulses


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(0, 5000), max_size=40),
    st.lists(st.integers(0, 5000), max_size=40),
    st.floats(min_value=1, max_value=800),
    st.floats(min_value=-300, max_value=300),
)
def test_coincidence_count_matches_brute_force(lt, rt, window, offset):
    lt, rt = sorted(lt), sorted(rt)
    n = count_coincidences(EventStream(LOCAL, lt), EventStream(REMOTE, rt), window, offset)
    assert n == brute_force_coincidences(lt, rt, window, offset)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.integers(0, 5000), min_size=1, max_size=60),
    st.lists(st.integers(0, 5000), min_size=1, max_size=60),
    st.floats(min_value=1, max_value=500),
    st.floats(min_value=1, max_value=500),
)
def test_coincidences_monotone_in_window(lt, rt, w1, w2):
    a, b = EventStream(LOCAL, sorted(lt)), EventStream(REMOTE, sorted(rt))
    lo, hi = sorted((w1, w2))
    assert count_coincidences(a, b, lo) <= count_coincidences(a, b, hi)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3000), max_size=50), st.lists(st.integers(0, 3000), max_size=50))
def test_histogram_mirror_symmetry(lt, rt):
    a, b = EventStream(LOCAL, sorted(lt)), EventStream(REMOTE, sorted(rt))
    h_ab = correlate(a, b, 100.0, scan=(-200, 200))
    h_ba = correlate(b, a, 100.0, scan=(-200, 200))
    assert np.array_equal(h_ab.counts, h_ba.counts[::-1])
    assert h_ab.coincidences == h_ba.coincidences
    inside = np.abs(h_ab.dt) <= 50
    assert h_ab.counts[inside].sum() == h_ab.coincidences


def test_correlate_chunking_invariant():
    loc, rem = simulate(cfg(n_pulses=20_000_000))
    full = correlate(loc, rem, 300.0, scan=(-500, 500))
    small = correlate(loc, rem, 300.0, scan=(-500, 500), chunk=97)
    assert np.array_equal(full.counts, small.counts)


def test_unsorted_stream_rejected():
    with pytest.raises(StreamOrderError, match="remote"):
        correlate(EventStream(LOCAL, [1, 2]), EventStream(REMOTE, [5, 3]), 10.0)
    with pytest.raises(ConfigError):
        correlate(EventStream(LOCAL, [1]), EventStream(REMOTE, [1]), 0.0)


def test_jitter_extraction_small_sample():
    clock = ClockModel(3.5, 3.0)
    one = correlate(*simulate_timing_pair(clock, 200_000, seed=3, shared_tdc=True), 300.0, scan=(-60, 60))
    two = correlate(*simulate_timing_pair(clock, 200_000, seed=4), 300.0, scan=(-60, 60))
    j1, j2 = extract_jitter(one), extract_jitter(two)
    # 1 ps binning adds 1/12 ps^2 to the variance of the rounded differences
    assert j1.rms_ps == pytest.approx(math.sqrt(3.5 ** 2 + 1 / 6), abs=0.05)
    assert j2.rms_ps == pytest.approx(math.sqrt(3.5 ** 2 + 3.0 ** 2 + 1 / 6), abs=0.06)


def test_jitter_needs_a_peak():
    rng = np.random.default_rng(0)
    a = np.sort(rng.integers(0, 10**9, 2000))
    b = np.sort(rng.integers(0, 10**9, 2000))
    hist = correlate(EventStream(LOCAL, a), EventStream(REMOTE, b), 100.0, scan=(-100, 100))
    with pytest.raises(EstimationError):
        extract_jitter(hist)


def test_quadrature_difference():
    assert quadrature_difference(5.0, 3.0) == pytest.approx(4.0)
    with pytest.raises(EstimationError):
        quadrature_difference(3.0, 5.0)


def test_event_file_roundtrip(tmp_path):
    loc, rem = simulate(cfg(n_pulses=5_000_000))
    path = tmp_path / "ev.bin"
    write_events(path, loc, rem)
    back = read_events(path)
    assert np.array_equal(back[LOCAL].t, loc.t) and np.array_equal(back[REMOTE].t, rem.t)
    csv_back = events_from_csv(events_to_csv(loc, rem))
    assert np.array_equal(csv_back[REMOTE].t, rem.t)


def test_event_file_corruption(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"XXXX\x01")
    with pytest.raises(ValueError, match="magic"):
        read_events(p)
    p.write_bytes(b"QCEV\x01" + b"\x00" * 7)
    with pytest.raises(ValueError, match="truncated"):
        read_events(p)


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(n_pulses=0)
    with pytest.raises(ConfigError):
        cfg(pair_statistics="binomial")
    with pytest.raises(ConfigError):
        ClockModel(-1.0, 0.0)


def test_event_fringe_follows_state():
    c = cfg(state=werner_state(0.8), sprs_rate_cps=0.0,
            link=replace(LINK, n_dark_idler=0.0, n_dark_signal=0.0))
    thetas = np.linspace(0, 180, 12, endpoint=False)
    recs = fringe_from_events(c, "D", thetas, seconds_per_point=20.0)
    assert fringe_visibility(recs) == pytest.approx(0.8, abs=0.05)


def test_analyzer_settings_scale_pairs():
    c = cfg()
    hh = analytic_rates(c).coincidence
    hv = analytic_rates(replace(c, remote=AnalyzerSetting.basis("V"))).coincidence
    assert hv < 0.05 * hh
