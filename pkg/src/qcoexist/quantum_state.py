"""Two-qubit polarization states, analyzers, fringes and tomography.

Conventions (fringe phase depends on them, visibility does not):

* Basis order of the 4x4 density matrix is HH, HV, VH, VV with the local
  (idler) photon as the first qubit and the remote (signal) photon second.
* Jones vectors: H = (1, 0), V = (0, 1), D = (H + V)/sqrt2,
  A = (H - V)/sqrt2, R = (H - iV)/sqrt2, L = (H + iV)/sqrt2.
* A half-wave plate at angle t rotates linear polarization by 2t:
  ``[[cos 2t, sin 2t], [sin 2t, -cos 2t]]``.  A quarter-wave plate at t is
  ``R(-t) diag(1, i) R(t)``.
* The photon passes the HWP, then the QWP, then a PBS whose transmit port
  is H.  The reflect port is the complementary projector.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Literal, Sequence

import numpy as np

Port = Literal["transmit", "reflect"]

BASIS_LABELS = ("HH", "HV", "VH", "VV")

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = -1e-10

_SQ2 = math.sqrt(2.0)
KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / _SQ2,
    "A": np.array([1.0, -1.0], dtype=complex) / _SQ2,
    "R": np.array([1.0, -1.0j], dtype=complex) / _SQ2,
    "L": np.array([1.0, 1.0j], dtype=complex) / _SQ2,
}

# (qwp, hwp) in degrees selecting each polarization at the transmit port.
BASIS_ANGLES = {
    "H": (0.0, 0.0),
    "V": (0.0, 45.0),
    "D": (0.0, 22.5),
    "A": (0.0, 67.5),
    "R": (45.0, 0.0),
    "L": (135.0, 0.0),
}

TOMOGRAPHY_BASES = ("H", "V", "D", "R")


class StateError(ValueError):
    """A matrix violates the density-matrix invariants."""


class TomographyConfigError(ValueError):
    """Measurement settings do not determine the state."""


class DegenerateDataError(ValueError):
    """Counts carry no information (all zero or non-positive total)."""


@dataclass(frozen=True, eq=False)
class TwoQubitState:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise StateError(f"density matrix must be 4x4, got {rho.shape}")
        if not np.all(np.isfinite(rho)):
            raise StateError("density matrix has non-finite entries")
        if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
            raise StateError("density matrix is not Hermitian")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise StateError(f"trace is {tr!r}, expected 1")
        w = np.linalg.eigvalsh(rho)
        if w[0] < PSD_TOL:
            raise StateError(f"density matrix has negative eigenvalue {w[0]:.3g}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.rho @ self.rho)))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.rho)

    def element(self, row: str, col: str) -> complex:
        return complex(self.rho[BASIS_LABELS.index(row), BASIS_LABELS.index(col)])


def _as_rho(state) -> np.ndarray:
    return state.rho if isinstance(state, TwoQubitState) else TwoQubitState(state).rho


def pure_state(psi: Sequence[complex]) -> TwoQubitState:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return TwoQubitState(np.outer(psi, psi.conj()))


def bell_phi_plus() -> TwoQubitState:
    return pure_state([1.0, 0.0, 0.0, 1.0])


def maximally_mixed() -> TwoQubitState:
    return TwoQubitState(np.eye(4) / 4.0)


def mix_unpolarized_noise(state: TwoQubitState, p: float) -> TwoQubitState:
    """Werner-type mixture ``p * rho + (1 - p) * I/4``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"mixing weight must lie in [0, 1], got {p}")
    return TwoQubitState(p * _as_rho(state) + (1.0 - p) * np.eye(4) / 4.0)


def werner_state(p: float) -> TwoQubitState:
    return mix_unpolarized_noise(bell_phi_plus(), p)


def apply_local_unitaries(state: TwoQubitState, u_local=None, u_remote=None) -> TwoQubitState:
    """Static polarization rotation on either photon (e.g. residual misalignment)."""
    u = np.kron(np.eye(2) if u_local is None else u_local, np.eye(2) if u_remote is None else u_remote)
    rho = u @ _as_rho(state) @ u.conj().T
    return TwoQubitState((rho + rho.conj().T) / 2)


# --- analyzers ---------------------------------------------------------------

def _rot(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, s], [-s, c]], dtype=complex)


def half_wave_plate(angle_deg: float) -> np.ndarray:
    t = math.radians(2.0 * angle_deg)
    return np.array([[math.cos(t), math.sin(t)], [math.sin(t), -math.cos(t)]], dtype=complex)


def quarter_wave_plate(angle_deg: float) -> np.ndarray:
    t = math.radians(angle_deg)
    return _rot(-t) @ np.diag([1.0, 1.0j]) @ _rot(t)


@dataclass(frozen=True)
class AnalyzerSetting:
    qwp: float = 0.0
    hwp: float = 0.0
    port: Port = "transmit"

    def __post_init__(self):
        if not (math.isfinite(self.qwp) and math.isfinite(self.hwp)):
            raise ValueError("waveplate angles must be finite")
        if self.port not in ("transmit", "reflect"):
            raise ValueError(f"port must be 'transmit' or 'reflect', got {self.port!r}")
        object.__setattr__(self, "qwp", float(self.qwp) % 180.0)
        object.__setattr__(self, "hwp", float(self.hwp) % 180.0)

    @classmethod
    def basis(cls, name: str, port: Port = "transmit") -> "AnalyzerSetting":
        q, h = BASIS_ANGLES[name]
        return cls(q, h, port)

    def complement(self) -> "AnalyzerSetting":
        return AnalyzerSetting(self.qwp, self.hwp, "reflect" if self.port == "transmit" else "transmit")


def projector(a: AnalyzerSetting) -> np.ndarray:
    """Single-qubit projector selected by an analyzer port."""
    jones = quarter_wave_plate(a.qwp) @ half_wave_plate(a.hwp)
    out = KETS["H"] if a.port == "transmit" else KETS["V"]
    v = jones.conj().T @ out
    return np.outer(v, v.conj())


def coincidence_probability(state, local: AnalyzerSetting, remote: AnalyzerSetting) -> float:
    """Joint probability that both photons exit the selected analyzer ports."""
    rho = _as_rho(state)
    p = float(np.real(np.trace(rho @ np.kron(projector(local), projector(remote)))))
    if p < -1e-12 or p > 1 + 1e-12:
        raise StateError(f"projection probability {p} outside [0, 1]")
    return min(max(p, 0.0), 1.0)


def marginal_probability(state, a: AnalyzerSetting, which: Literal["local", "remote"]) -> float:
    rho = _as_rho(state)
    op = np.kron(projector(a), np.eye(2)) if which == "local" else np.kron(np.eye(2), projector(a))
    return min(max(float(np.real(np.trace(rho @ op))), 0.0), 1.0)


# --- count records -----------------------------------------------------------

@dataclass(frozen=True)
class CountRecord:
    """Coincidences for one pair of analyzer settings over ``seconds``.

    Measured counts are integers; modeled (expected) counts may be fractional.
    """

    local: AnalyzerSetting
    remote: AnalyzerSetting
    counts: float
    seconds: float

    def __post_init__(self):
        if not (self.counts >= 0 and math.isfinite(self.counts)):
            raise ValueError(f"counts must be finite and non-negative, got {self.counts}")
        if not self.seconds > 0:
            raise ValueError(f"accumulation time must be positive, got {self.seconds}")

    @property
    def rate(self) -> float:
        return self.counts / self.seconds

    def with_counts(self, counts: float) -> "CountRecord":
        return CountRecord(self.local, self.remote, counts, self.seconds)


RECORD_COLUMNS = (
    "local_qwp", "local_hwp", "local_port",
    "remote_qwp", "remote_hwp", "remote_port",
    "counts", "seconds",
)


def records_to_csv(records: Iterable[CountRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        counts = int(r.counts) if float(r.counts).is_integer() else repr(float(r.counts))
        w.writerow([
            repr(r.local.qwp), repr(r.local.hwp), r.local.port,
            repr(r.remote.qwp), repr(r.remote.hwp), r.remote.port,
            counts, repr(float(r.seconds)),
        ])
    return buf.getvalue()


def records_from_csv(text: str) -> list[CountRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and set(rows[0]) != set(RECORD_COLUMNS):
        raise ValueError(f"count record CSV needs columns {RECORD_COLUMNS}")
    return [
        CountRecord(
            AnalyzerSetting(float(r["local_qwp"]), float(r["local_hwp"]), r["local_port"]),
            AnalyzerSetting(float(r["remote_qwp"]), float(r["remote_hwp"]), r["remote_port"]),
            float(r["counts"]),
            float(r["seconds"]),
        )
        for r in rows
    ]


# --- two-photon interference -------------------------------------------------

def fringe(
    state,
    remote_basis: str,
    thetas: Sequence[float],
    rate_scale: float,
    noise_floor: float = 0.0,
    seconds: float = 1.0,
) -> list[CountRecord]:
    """Expected coincidences versus local HWP angle with the remote analyzer fixed."""
    if len(thetas) == 0:
        raise ValueError("fringe grid is empty")
    remote = AnalyzerSetting.basis(remote_basis)
    out = []
    for th in thetas:
        local = AnalyzerSetting(0.0, th)
        c = rate_scale * coincidence_probability(state, local, remote) + noise_floor
        out.append(CountRecord(local, remote, c, seconds))
    return out


@dataclass(frozen=True)
class FringeFit:
    offset: float
    amplitude: float
    phase_deg: float
    period_deg: float = 90.0

    @property
    def c_max(self) -> float:
        return self.offset + self.amplitude

    @property
    def c_min(self) -> float:
        return max(self.offset - self.amplitude, 0.0)

    @property
    def visibility(self) -> float:
        total = self.c_max + self.c_min
        if total <= 0:
            raise DegenerateDataError("fringe has no counts")
        return (self.c_max - self.c_min) / total

    def __call__(self, theta_deg):
        arg = np.deg2rad(360.0 / self.period_deg * (np.asarray(theta_deg) - self.phase_deg))
        return self.offset + self.amplitude * np.cos(arg)


def fit_fringe(thetas: Sequence[float], rates: Sequence[float], period_deg: float = 90.0) -> FringeFit:
    """Least-squares sinusoid of fixed period (90 deg of HWP rotation)."""
    th = np.deg2rad(np.asarray(thetas, dtype=float) * 360.0 / period_deg)
    y = np.asarray(rates, dtype=float)
    if th.size < 3:
        raise ValueError("need at least 3 fringe points to fit offset, amplitude and phase")
    design = np.column_stack([np.ones_like(th), np.cos(th), np.sin(th)])
    (a, b, c), *_ = np.linalg.lstsq(design, y, rcond=None)
    amp = math.hypot(b, c)
    phase = math.degrees(math.atan2(c, b)) * period_deg / 360.0
    return FringeFit(float(a), amp, phase % period_deg, period_deg)


def fringe_visibility(records: Sequence[CountRecord]) -> float:
    """Visibility from the fitted extrema of a HWP fringe."""
    return fit_fringe([r.local.hwp for r in records], [r.rate for r in records]).visibility


# --- tomography --------------------------------------------------------------

_PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
_PAULI2 = [np.kron(a, b) for a in _PAULI for b in _PAULI]


def tomography_settings() -> list[tuple[AnalyzerSetting, AnalyzerSetting]]:
    """The 16 (local, remote) settings over {H, V, D, R} x {H, V, D, R}."""
    return [
        (AnalyzerSetting.basis(a), AnalyzerSetting.basis(b))
        for a in TOMOGRAPHY_BASES
        for b in TOMOGRAPHY_BASES
    ]


def synthetic_tomography(
    state,
    pair_rate: float,
    seconds: float,
    rng: np.random.Generator | None = None,
    accidental_rate: float = 0.0,
) -> list[CountRecord]:
    """Tomography counts from a known state; Poisson-sampled when ``rng`` is given."""
    out = []
    for local, remote in tomography_settings():
        mean = (pair_rate * coincidence_probability(state, local, remote) + accidental_rate) * seconds
        counts = float(rng.poisson(mean)) if rng is not None else mean
        out.append(CountRecord(local, remote, counts, seconds))
    return out


def nearest_density_matrix(m: np.ndarray) -> np.ndarray:
    """Closest unit-trace PSD matrix in Frobenius norm to a unit-trace Hermitian ``m``.

    Negative eigenvalues are truncated and their weight spread evenly over the
    surviving ones (Smolin, Gambetta & Smith, PRL 108, 070502).
    """
    m = (m + m.conj().T) / 2
    w, v = np.linalg.eigh(m)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    lam = np.zeros_like(w)
    acc, i = 0.0, w.size
    while i > 0 and w[i - 1] + acc / i < 0:
        acc += w[i - 1]
        i -= 1
    lam[:i] = w[:i] + acc / i
    rho = (v * lam) @ v.conj().T
    rho = (rho + rho.conj().T) / 2
    return rho / np.trace(rho).real


def tomography_reconstruct(records: Sequence[CountRecord]) -> TwoQubitState:
    """Linear inversion of coincidence rates followed by projection onto states.

    The unnormalized rate operator M (rates = tr(M P_local x P_remote)) is
    solved by least squares in the two-qubit Pauli basis, so any
    informationally complete set of at least 16 settings works; the total
    pair rate drops out when M is normalized to unit trace.
    """
    if len(records) < 16:
        raise TomographyConfigError(f"need at least 16 settings, got {len(records)}")
    design = np.empty((len(records), 16))
    rates = np.empty(len(records))
    for row, r in enumerate(records):
        proj = np.kron(projector(r.local), projector(r.remote))
        design[row] = [np.real(np.trace(g @ proj)) / 4.0 for g in _PAULI2]
        rates[row] = r.rate
    if np.linalg.matrix_rank(design, tol=1e-9) < 16:
        raise TomographyConfigError("measurement settings are not informationally complete")
    if not np.any(rates > 0):
        raise DegenerateDataError("all tomography counts are zero")
    coeffs, *_ = np.linalg.lstsq(design, rates, rcond=None)
    m = sum(c * g for c, g in zip(coeffs, _PAULI2)) / 4.0
    tr = np.trace(m).real
    if tr <= 0:
        raise DegenerateDataError("reconstructed pair rate is not positive")
    return TwoQubitState(nearest_density_matrix(m / tr))


def _psd_factor(rho: np.ndarray) -> np.ndarray:
    """``A`` with ``rho = A A^dagger``, dropping numerically zero eigenvalues."""
    w, v = np.linalg.eigh(rho)
    keep = w > 1e-13 * max(float(w.max()), 0.0)
    return v[:, keep] * np.sqrt(w[keep])


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``.

    Evaluated as the squared trace norm of ``A^dagger B`` for factors
    ``rho = A A^dagger`` and ``sigma = B B^dagger``, which avoids square roots of
    rounding-level eigenvalues when either state is (nearly) pure.
    """
    a, b = _psd_factor(_as_rho(rho)), _psd_factor(_as_rho(sigma))
    if a.shape[1] == 0 or b.shape[1] == 0:
        return 0.0
    f = float(np.sum(np.linalg.svd(a.conj().T @ b, compute_uv=False)) ** 2)
    return min(f, 1.0)


def werner_parameter_from_fidelity(f_bell: float) -> float:
    """Mixing weight p of a Werner state with Bell fidelity ``f_bell``."""
    return (4.0 * f_bell - 1.0) / 3.0


# --- Poisson Monte Carlo -----------------------------------------------------

@dataclass(frozen=True)
class MonteCarloResult:
    point: float
    mean: float
    std: float
    samples: np.ndarray


def poisson_replicas(records: Sequence[CountRecord], n_replicas: int, seed: int = 0) -> Iterator[list[CountRecord]]:
    """Copies of ``records`` with every count redrawn as Poisson(observed).

    Replica ``k`` uses its own seed stream, so results do not depend on how
    many replicas are consumed.
    """
    counts = np.array([r.counts for r in records])
    for child in np.random.SeedSequence(seed).spawn(n_replicas):
        draw = np.random.default_rng(child).poisson(counts)
        yield [r.with_counts(float(c)) for r, c in zip(records, draw)]


def monte_carlo_errors(
    records: Sequence[CountRecord],
    estimator: Callable[[Sequence[CountRecord]], float],
    n_replicas: int = 1000,
    seed: int = 0,
) -> MonteCarloResult:
    """Mean and spread of ``estimator`` over Poisson replicas of the counts."""
    if n_replicas < 100:
        raise ValueError(f"n_replicas must be >= 100, got {n_replicas}")
    point = estimator(records)
    samples = np.fromiter((estimator(r) for r in poisson_replicas(records, n_replicas, seed)), float, n_replicas)
    return MonteCarloResult(point, float(samples.mean()), float(samples.std(ddof=1)), samples)


# --- serialization -----------------------------------------------------------

def state_to_json(state: TwoQubitState, **extra) -> str:
    rho = state.rho
    doc = {
        "basis": list(BASIS_LABELS),
        "real": [[float(x) for x in row] for row in rho.real],
        "imag": [[float(x) for x in row] for row in rho.imag],
        **extra,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def state_from_json(text: str) -> TwoQubitState:
    doc = json.loads(text)
    if doc.get("basis") != list(BASIS_LABELS):
        raise StateError(f"unexpected basis labels {doc.get('basis')}")
    return TwoQubitState(np.array(doc["real"]) + 1j * np.array(doc["imag"]))
