import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcoexist.quantum_state import (
    AnalyzerSetting,
    CountRecord,
    DegenerateDataError,
    StateError,
    TomographyConfigError,
    TwoQubitState,
    bell_phi_plus,
    coincidence_probability,
    fidelity,
    fit_fringe,
    fringe,
    fringe_visibility,
    half_wave_plate,
    marginal_probability,
    maximally_mixed,
    monte_carlo_errors,
    nearest_density_matrix,
    projector,
    pure_state,
    quarter_wave_plate,
    records_from_csv,
    records_to_csv,
    state_from_json,
    state_to_json,
    synthetic_tomography,
    tomography_reconstruct,
    tomography_settings,
    werner_parameter_from_fidelity,
    werner_state,
)

S = 1 / math.sqrt(2)
KETS = {
    "H": np.array([1, 0]), "V": np.array([0, 1]),
    "D": np.array([S, S]), "A": np.array([S, -S]),
    "R": np.array([S, -1j * S]), "L": np.array([S, 1j * S]),
}
THETAS = np.linspace(0.0, 180.0, 36, endpoint=False)


def random_state(rng, rank=4):
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    rho = g @ g.conj().T
    return TwoQubitState(rho / np.trace(rho).real)


@pytest.mark.parametrize("name", list(KETS))
def test_basis_projectors(name):
    k = KETS[name]
    assert np.allclose(projector(AnalyzerSetting.basis(name)), np.outer(k, k.conj()), atol=1e-12)


def test_hwp_at_22_5_selects_diagonal():
    assert np.allclose(projector(AnalyzerSetting(qwp=0.0, hwp=22.5)), np.outer(KETS["D"], KETS["D"]), atol=1e-12)


@given(st.floats(min_value=-360, max_value=360))
def test_waveplates_unitary(theta):
    for u in (half_wave_plate(theta), quarter_wave_plate(theta)):
        assert np.allclose(u @ u.conj().T, np.eye(2), atol=1e-12)


@given(st.floats(min_value=0, max_value=180), st.floats(min_value=0, max_value=180))
def test_ports_are_complementary(q, h):
    a = AnalyzerSetting(q, h)
    assert np.allclose(projector(a) + projector(a.complement()), np.eye(2), atol=1e-12)


def test_angles_canonicalized():
    assert AnalyzerSetting(0.0, 202.5) == AnalyzerSetting(0.0, 22.5)
    with pytest.raises(ValueError):
        AnalyzerSetting(0.0, math.nan)
    with pytest.raises(ValueError):
        AnalyzerSetting(0.0, 0.0, "up")


def test_bell_correlations():
    phi = bell_phi_plus()
    b = AnalyzerSetting.basis
    assert coincidence_probability(phi, b("H"), b("H")) == pytest.approx(0.5)
    assert coincidence_probability(phi, b("H"), b("V")) == pytest.approx(0.0, abs=1e-15)
    assert coincidence_probability(phi, b("D"), b("D")) == pytest.approx(0.5)
    assert coincidence_probability(phi, b("D"), b("A")) == pytest.approx(0.0, abs=1e-15)
    assert coincidence_probability(phi, b("R"), b("L")) == pytest.approx(0.5)


@given(st.floats(min_value=0, max_value=180), st.floats(min_value=0, max_value=180))
def test_bell_marginals_are_half(q, h):
    a = AnalyzerSetting(q, h)
    assert marginal_probability(bell_phi_plus(), a, "local") == pytest.approx(0.5, abs=1e-12)
    assert marginal_probability(bell_phi_plus(), a, "remote") == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize(
    "rho",
    [np.eye(4) / 3.0, np.diag([1.2, -0.2, 0, 0]), np.array([[0.5, 0.1, 0, 0], [0.3, 0.5, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]])],
)
def test_invalid_density_matrices(rho):
    with pytest.raises(StateError):
        TwoQubitState(rho)


def test_fringe_period_is_90_degrees():
    recs = fringe(bell_phi_plus(), "H", THETAS, rate_scale=1000.0)
    y = np.array([r.rate for r in recs])
    residuals = {}
    for period in np.arange(30.0, 181.0, 1.0):
        fit = fit_fringe(THETAS, y, period_deg=period)
        residuals[period] = float(np.sum((fit(THETAS) - y) ** 2))
    best = min(residuals, key=residuals.get)
    assert best == 90.0
    assert residuals[90.0] < 1e-18


@pytest.mark.parametrize("p", [0.0, 0.3, 0.923, 1.0])
def test_werner_visibility_equals_mixing_weight_in_every_basis(p):
    vis = [fringe_visibility(fringe(werner_state(p), b, THETAS, rate_scale=1.0)) for b in "HVDA"]
    assert vis == pytest.approx([p] * 4, abs=1e-10)


@given(st.floats(min_value=0.0, max_value=1.0))
def test_werner_fidelity_closed_form(p):
    f = fidelity(werner_state(p), bell_phi_plus())
    assert f == pytest.approx((3 * p + 1) / 4, abs=1e-12)
    assert werner_parameter_from_fidelity(f) == pytest.approx(p, abs=1e-11)


def test_fringe_fit_recovers_parameters():
    y = 40.0 + 25.0 * np.cos(np.deg2rad(4 * (THETAS - 10.0)))
    fit = fit_fringe(THETAS, y)
    assert (fit.offset, fit.amplitude, fit.phase_deg) == pytest.approx((40.0, 25.0, 10.0), abs=1e-10)
    assert fit.visibility == pytest.approx(25.0 / 40.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_fringe([0, 10], [1, 2])
    with pytest.raises(DegenerateDataError):
        fit_fringe(THETAS, np.zeros_like(THETAS)).visibility


@given(st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1))
def test_fidelity_symmetric_and_bounded(a, b):
    r1, r2 = werner_state(a), random_state(np.random.default_rng(int(b * 1e6)))
    f12, f21 = fidelity(r1, r2), fidelity(r2, r1)
    assert 0.0 <= f12 <= 1.0
    assert f12 == pytest.approx(f21, abs=1e-9)


def test_fidelity_with_pure_state_is_overlap():
    rho = random_state(np.random.default_rng(3))
    psi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    assert fidelity(pure_state(psi), rho) == pytest.approx(float(np.real(psi.conj() @ rho.rho @ psi)), abs=1e-10)
    assert fidelity(rho, rho) == pytest.approx(1.0, abs=1e-10)


def test_tomography_settings_complete():
    s = tomography_settings()
    assert len(s) == 16 and len(set(s)) == 16


@pytest.mark.parametrize("seed", range(5))
def test_noiseless_tomography_is_exact(seed):
    state = random_state(np.random.default_rng(seed), rank=1 + seed % 4)
    rho = tomography_reconstruct(synthetic_tomography(state, pair_rate=1e4, seconds=1.0))
    assert np.allclose(rho.rho, state.rho, atol=1e-10)


def test_accidentals_reconstruct_as_white_noise():
    # uniform accidentals in all 16 settings act as white noise in the estimate
    recs = synthetic_tomography(bell_phi_plus(), pair_rate=1000.0, seconds=1.0, accidental_rate=50.0)
    rho = tomography_reconstruct(recs)
    # rates with pass probability q: 1000 q + 50, so the state is p*phi + (1-p) I/4
    p = 1000.0 / (1000.0 + 4 * 50.0)
    assert np.allclose(rho.rho, werner_state(p).rho, atol=1e-12)


def test_poisson_tomography_error_shrinks_with_counts():
    target = werner_state(0.923)
    errs = []
    for rate in (1e3, 1e5):
        f = [
            fidelity(tomography_reconstruct(
                synthetic_tomography(target, rate, 1.0, np.random.default_rng(s))), bell_phi_plus())
            for s in range(20)
        ]
        errs.append(np.std(np.array(f) - 0.94225))
    assert errs[1] < errs[0] / 3


def test_tomography_rejects_bad_inputs():
    recs = synthetic_tomography(bell_phi_plus(), 100.0, 1.0)
    with pytest.raises(TomographyConfigError):
        tomography_reconstruct(recs[:15])
    same = [recs[0]] * 16
    with pytest.raises(TomographyConfigError):
        tomography_reconstruct(same)
    with pytest.raises(DegenerateDataError):
        tomography_reconstruct([r.with_counts(0.0) for r in recs])


@settings(max_examples=50)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_projection_gives_valid_state(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    h = (h + h.conj().T) / 2
    h = h - (np.trace(h).real - 1) * np.eye(4) / 4
    rho = nearest_density_matrix(h)
    w = np.linalg.eigvalsh(rho)
    assert w.min() >= -1e-12
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    TwoQubitState(rho)


def test_projection_leaves_states_unchanged():
    rho = random_state(np.random.default_rng(7)).rho
    assert np.allclose(nearest_density_matrix(rho), rho, atol=1e-12)


def test_projection_known_case():
    # eigenvalues (0.6, 0.5, -0.05, -0.05): truncation spreads -0.1 over the two survivors
    m = np.diag([0.6, 0.5, -0.05, -0.05]).astype(complex)
    assert np.allclose(np.diag(nearest_density_matrix(m)).real, [0.55, 0.45, 0.0, 0.0], atol=1e-14)


def test_monte_carlo_errors_deterministic_and_sized():
    recs = synthetic_tomography(werner_state(0.9), 1000.0, 1.0, np.random.default_rng(1))
    def est(r):
        return fidelity(tomography_reconstruct(r), bell_phi_plus())
    a = monte_carlo_errors(recs, est, n_replicas=200, seed=5)
    b = monte_carlo_errors(recs, est, n_replicas=200, seed=5)
    assert np.array_equal(a.samples, b.samples)
    assert 0.001 < a.std < 0.05
    with pytest.raises(ValueError):
        monte_carlo_errors(recs, est, n_replicas=50)


def test_count_record_validation_and_csv():
    recs = synthetic_tomography(bell_phi_plus(), 100.0, 2.0, np.random.default_rng(0))
    back = records_from_csv(records_to_csv(recs))
    assert back == recs
    with pytest.raises(ValueError):
        CountRecord(AnalyzerSetting(), AnalyzerSetting(), -1.0, 1.0)
    with pytest.raises(ValueError):
        CountRecord(AnalyzerSetting(), AnalyzerSetting(), 1.0, 0.0)


def test_state_json_roundtrip():
    rho = random_state(np.random.default_rng(11))
    assert np.array_equal(state_from_json(state_to_json(rho)).rho, rho.rho)


def test_state_helpers():
    assert maximally_mixed().purity == pytest.approx(0.25)
    assert bell_phi_plus().element("HH", "VV") == pytest.approx(0.5)
