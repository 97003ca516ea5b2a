"""Event-level Monte Carlo of a two-node entanglement distribution experiment.

Time is integer picoseconds.  Pulse slot ``k`` is centred at
``origin + k * period``; the local node records the idler arm and the remote
node records the signal arm through its own clock (static offset, drift and
synchronization jitter).

Pair emission uses the thinning property of Poisson statistics: with a
Poisson number of pairs per slot, the numbers of pairs that end up detected
on both arms, on the local arm only, or on the remote arm only are
independent Poisson variables.  Only detected photons are ever sampled, so
runtime scales with the number of clicks rather than the number of pulses.
Thermal (single-mode) statistics are not thinnable and fall back to
per-occupied-slot sampling, whose cost scales with ``mu * n_pulses``.

Each random stream is keyed by (block, purpose).  Changing the background
rate therefore leaves the pair events untouched, which makes paired
dark-fiber / coexistence comparisons low-noise.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Literal, NamedTuple, Sequence

import numpy as np

from .link_model import LinkParams, coincidence_extrema, singles
from .quantum_state import (
    AnalyzerSetting,
    CountRecord,
    TwoQubitState,
    bell_phi_plus,
    coincidence_probability,
    marginal_probability,
)

logger = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
LOCAL, REMOTE = 0, 1
NODE_NAMES = {LOCAL: "local", REMOTE: "remote"}
ORIGIN_PS = 1_000_000
DEFAULT_BLOCK_PULSES = 1 << 34

# random stream identifiers within a block
_PAIR_COUNTS, _PAIR_TIMING, _BG_LOCAL, _BG_REMOTE, _JIT_LOCAL, _JIT_REMOTE, _JIT_BG = range(7)


class ConfigError(ValueError):
    pass


class StreamOrderError(ValueError):
    def __init__(self, node: str, index: int, prev: int, cur: int):
        self.index = index
        super().__init__(f"{node} stream not time-ordered at event {index}: {prev} ps followed by {cur} ps")


class EstimationError(ValueError):
    pass


class DetectionEvent(NamedTuple):
    node: int
    channel: int
    t: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered detections of one node (columnar)."""

    node: int
    t: np.ndarray
    channel: np.ndarray | None = None

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        ch = np.zeros(t.size, dtype=np.uint8) if self.channel is None else np.asarray(self.channel, dtype=np.uint8)
        if ch.shape != t.shape:
            raise ValueError("channel and timestamp arrays differ in length")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "channel", ch)

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self) -> Iterator[DetectionEvent]:
        for c, t in zip(self.channel.tolist(), self.t.tolist()):
            yield DetectionEvent(self.node, c, t)

    def check_order(self) -> None:
        bad = np.flatnonzero(np.diff(self.t) < 0)
        if bad.size:
            i = int(bad[0]) + 1
            raise StreamOrderError(NODE_NAMES.get(self.node, str(self.node)), i, int(self.t[i - 1]), int(self.t[i]))
        if self.t.size and self.t[0] < 0:
            raise ValueError("timestamps must be non-negative")

    def select(self, channel: int) -> "EventStream":
        keep = self.channel == channel
        return EventStream(self.node, self.t[keep], self.channel[keep])


@dataclass(frozen=True)
class ClockModel:
    """Timing of the two time taggers.

    ``sigma_tdc_ps`` is the RMS of the difference between two channels of one
    time tagger fed identical signals; each timestamp therefore carries
    ``sigma_tdc_ps / sqrt(2)``.  ``sigma_sync_ps`` is added to every remote
    timestamp on top of the static ``offset_ps`` and ``drift_ps_per_s``.
    """

    sigma_tdc_ps: float = 0.0
    sigma_sync_ps: float = 0.0
    offset_ps: float = 0.0
    drift_ps_per_s: float = 0.0

    def __post_init__(self):
        if self.sigma_tdc_ps < 0 or self.sigma_sync_ps < 0:
            raise ConfigError("jitter values must be non-negative")

    @property
    def sigma_channel_ps(self) -> float:
        return self.sigma_tdc_ps / math.sqrt(2.0)

    @property
    def sigma_combined_ps(self) -> float:
        return math.hypot(self.sigma_tdc_ps, self.sigma_sync_ps)


@dataclass(frozen=True)
class SimConfig:
    """One simulated acquisition.

    Per-pulse dark probabilities in ``link`` are converted to rates through
    the coincidence window.  Raman light is given separately as the rate
    reaching the remote detector before the polarizing analyzer; the analyzer
    passes half of it.  ``link.n_sprs_*`` are not used here.
    """

    link: LinkParams
    n_pulses: int
    clock: ClockModel = field(default_factory=ClockModel)
    pulse_fwhm_ps: float = 70.0
    sprs_rate_cps: float = 0.0
    local: AnalyzerSetting = field(default_factory=AnalyzerSetting)
    remote: AnalyzerSetting = field(default_factory=AnalyzerSetting)
    state: TwoQubitState = field(default_factory=bell_phi_plus)
    seed: int = 0
    spawn_key: tuple[int, ...] = ()
    pair_statistics: Literal["poisson", "thermal"] = "poisson"
    block_pulses: int = DEFAULT_BLOCK_PULSES

    def __post_init__(self):
        if self.n_pulses < 1:
            raise ConfigError(f"n_pulses must be >= 1, got {self.n_pulses}")
        if self.period_ps <= self.link.window_ps:
            raise ConfigError("pulse period must exceed the coincidence window")
        if self.pulse_fwhm_ps < 0 or self.sprs_rate_cps < 0:
            raise ConfigError("pulse width and Raman rate must be non-negative")
        if self.pair_statistics not in ("poisson", "thermal"):
            raise ConfigError(f"unknown pair statistics {self.pair_statistics!r}")
        if self.block_pulses < 1:
            raise ConfigError("block_pulses must be positive")

    @property
    def period_ps(self) -> float:
        return 1e12 / self.link.rep_rate_hz

    @property
    def duration_s(self) -> float:
        return self.n_pulses / self.link.rep_rate_hz

    @property
    def origin_ps(self) -> int:
        return ORIGIN_PS + max(0, int(math.ceil(-self.clock.offset_ps)))

    @property
    def dark_rate_local_cps(self) -> float:
        return self.link.n_dark_idler / (self.link.window_ps * 1e-12)

    @property
    def background_rate_remote_cps(self) -> float:
        dark = self.link.n_dark_signal / (self.link.window_ps * 1e-12)
        return dark + 0.5 * self.sprs_rate_cps

    def detection_probabilities(self) -> tuple[float, float, float]:
        """Per-pair probabilities (both arms, local only, remote only)."""
        eta_i, eta_s = self.link.eta_idler_ref, self.link.eta_signal_ref
        p_joint = coincidence_probability(self.state, self.local, self.remote)
        p_loc = marginal_probability(self.state, self.local, "local")
        p_rem = marginal_probability(self.state, self.remote, "remote")
        both = p_joint * eta_i * eta_s
        return both, max(p_loc * eta_i - both, 0.0), max(p_rem * eta_s - both, 0.0)


def _rng(cfg: SimConfig, block: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(*cfg.spawn_key, block, purpose))
    return np.random.default_rng(ss)


def _pair_slots(cfg: SimConfig, block: int, nb: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slot offsets (within the block) of detected-both, local-only, remote-only pairs."""
    rng = _rng(cfg, block, _PAIR_COUNTS)
    probs = cfg.detection_probabilities()
    mu = cfg.link.mu
    if cfg.pair_statistics == "poisson":
        out = []
        for p in probs:
            k = rng.poisson(mu * p * nb)
            out.append(rng.integers(0, nb, size=k))
        return tuple(out)
    # thermal: geometric pair number, sampled per occupied slot
    q = mu / (1.0 + mu)
    n_occ = rng.binomial(nb, q)
    slots = rng.choice(nb, size=n_occ, replace=False)
    n_pairs = rng.geometric(1.0 - q, size=n_occ)
    cats = rng.multinomial(n_pairs, [*probs, max(1.0 - sum(probs), 0.0)])
    return tuple(np.repeat(slots, cats[:, j]) for j in range(3))


def _poisson_background(rng: np.random.Generator, rate_cps: float, t0: float, t1: float) -> np.ndarray:
    k = rng.poisson(rate_cps * (t1 - t0) * 1e-12)
    return rng.uniform(t0, t1, size=k)


def simulate(cfg: SimConfig) -> tuple[EventStream, EventStream]:
    """Local (idler) and remote (signal) detection streams for ``cfg``."""
    period = cfg.period_ps
    sigma_pulse = cfg.pulse_fwhm_ps * FWHM_TO_SIGMA
    clock = cfg.clock
    local_parts, remote_parts = [], []
    for block, k0 in enumerate(range(0, cfg.n_pulses, cfg.block_pulses)):
        nb = min(cfg.block_pulses, cfg.n_pulses - k0)
        both, l_only, r_only = _pair_slots(cfg, block, nb)
        trng = _rng(cfg, block, _PAIR_TIMING)
        centers_both = cfg.origin_ps + (k0 + both) * period
        emit_both = centers_both + trng.normal(0.0, sigma_pulse, both.size)
        emit_l = cfg.origin_ps + (k0 + l_only) * period + trng.normal(0.0, sigma_pulse, l_only.size)
        emit_r = cfg.origin_ps + (k0 + r_only) * period + trng.normal(0.0, sigma_pulse, r_only.size)

        start = cfg.origin_ps + (k0 - 0.5) * period
        stop = start + nb * period
        bg_l = _poisson_background(_rng(cfg, block, _BG_LOCAL), cfg.dark_rate_local_cps, start, stop)
        bg_r = _poisson_background(_rng(cfg, block, _BG_REMOTE), cfg.background_rate_remote_cps, start, stop)

        jl = _rng(cfg, block, _JIT_LOCAL)
        jr = _rng(cfg, block, _JIT_REMOTE)
        jb = _rng(cfg, block, _JIT_BG)
        pair_local = np.concatenate([emit_both, emit_l])
        pair_remote = np.concatenate([emit_both, emit_r])
        local_t = np.concatenate([
            pair_local + jl.normal(0.0, clock.sigma_channel_ps, pair_local.size),
            bg_l + jb.normal(0.0, clock.sigma_channel_ps, bg_l.size),
        ])
        sig_r = math.hypot(clock.sigma_channel_ps, clock.sigma_sync_ps)
        remote_t = np.concatenate([
            pair_remote + jr.normal(0.0, sig_r, pair_remote.size),
            bg_r + jb.normal(0.0, sig_r, bg_r.size),
        ])
        remote_t = remote_t + clock.offset_ps + clock.drift_ps_per_s * (remote_t - cfg.origin_ps) * 1e-12
        local_parts.append(np.rint(local_t).astype(np.int64))
        remote_parts.append(np.rint(remote_t).astype(np.int64))

    local = np.sort(np.concatenate(local_parts), kind="stable")
    remote = np.sort(np.concatenate(remote_parts), kind="stable")
    return EventStream(LOCAL, local), EventStream(REMOTE, remote)


# --- timing reference (jitter characterization) -------------------------------

def simulate_timing_pair(
    clock: ClockModel,
    n_pulses: int,
    rep_rate_hz: float = 50e6,
    seed: int = 0,
    shared_tdc: bool = False,
) -> tuple[EventStream, EventStream]:
    """Two copies of a periodic reference signal, time-tagged.

    With ``shared_tdc`` both copies land on two channels of the local tagger;
    otherwise the second copy is recorded by the remote tagger through the
    synchronized clock.
    """
    if n_pulses < 1:
        raise ConfigError("n_pulses must be >= 1")
    ss = np.random.SeedSequence(seed)
    ra, rb = (np.random.default_rng(s) for s in ss.spawn(2))
    base = ORIGIN_PS + max(0, int(math.ceil(-clock.offset_ps))) + np.arange(n_pulses) * (1e12 / rep_rate_hz)
    a = base + ra.normal(0.0, clock.sigma_channel_ps, n_pulses)
    if shared_tdc:
        b = base + rb.normal(0.0, clock.sigma_channel_ps, n_pulses)
        node_b, ch_b = LOCAL, 1
    else:
        b = base + rb.normal(0.0, math.hypot(clock.sigma_channel_ps, clock.sigma_sync_ps), n_pulses)
        b = b + clock.offset_ps + clock.drift_ps_per_s * (b - ORIGIN_PS) * 1e-12
        node_b, ch_b = REMOTE, 0
    ta = np.sort(np.rint(a).astype(np.int64))
    tb = np.sort(np.rint(b).astype(np.int64))
    return EventStream(LOCAL, ta), EventStream(node_b, tb, np.full(tb.size, ch_b, dtype=np.uint8))


# --- correlation -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Histogram:
    """Counts of remote-minus-local arrival differences in 1 ps bins from ``lo_ps``."""

    lo_ps: int
    counts: np.ndarray
    window_ps: float
    offset_ps: float
    coincidences: int

    @property
    def dt(self) -> np.ndarray:
        return self.lo_ps + np.arange(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        lines = ["dt_ps,count"]
        lines += [f"{d},{c}" for d, c in zip(self.dt.tolist(), self.counts.tolist())]
        return "\n".join(lines) + "\n"


def _window_bounds(offset: float, window: float) -> tuple[int, int]:
    return int(math.ceil(offset - window / 2.0)), int(math.floor(offset + window / 2.0))


def count_coincidences(local: EventStream, remote: EventStream, window_ps: float, offset_ps: float = 0.0) -> int:
    """Pairs with ``|t_remote - t_local - offset| <= window/2``."""
    lo, hi = _window_bounds(offset_ps, window_ps)
    j0 = np.searchsorted(remote.t, local.t + lo, side="left")
    j1 = np.searchsorted(remote.t, local.t + hi, side="right")
    return int(np.sum(j1 - j0))


def correlate(
    local: EventStream,
    remote: EventStream,
    window_ps: float,
    offset_ps: float = 0.0,
    scan: tuple[int, int] | None = None,
    chunk: int = 1 << 20,
) -> Histogram:
    """Histogram of ``t_remote - t_local`` over ``scan`` (inclusive, 1 ps bins).

    Both streams must be time-ordered.  For every local event the matching
    remote range is located by binary search on the sorted remote stream, so
    the cost is dominated by the number of events plus the number of pairs
    inside the scan range.
    """
    if not window_ps > 0:
        raise ConfigError("coincidence window must be positive")
    local.check_order()
    remote.check_order()
    if scan is None:
        half = int(math.ceil(window_ps))
        scan = (int(math.floor(offset_ps)) - half, int(math.ceil(offset_ps)) + half)
    lo, hi = int(scan[0]), int(scan[1])
    if hi < lo:
        raise ConfigError(f"empty scan range {scan}")
    counts = np.zeros(hi - lo + 1, dtype=np.int64)
    rt = remote.t
    for s in range(0, local.t.size, chunk):
        lt = local.t[s:s + chunk]
        j0 = np.searchsorted(rt, lt + lo, side="left")
        j1 = np.searchsorted(rt, lt + hi, side="right")
        n = j1 - j0
        total = int(n.sum())
        if total == 0:
            continue
        owner = np.repeat(np.arange(lt.size), n)
        start = np.repeat(j0 - np.concatenate(([0], np.cumsum(n)[:-1])), n)
        idx = start + np.arange(total)
        dt = rt[idx] - lt[owner]
        counts += np.bincount(dt - lo, minlength=counts.size)
    return Histogram(lo, counts, window_ps, offset_ps, count_coincidences(local, remote, window_ps, offset_ps))


@dataclass(frozen=True)
class JitterEstimate:
    rms_ps: float
    center_ps: float
    n_events: int
    iterations: int


def extract_jitter(hist: Histogram, initial_sigma_ps: float | None = None, max_iter: int = 100) -> JitterEstimate:
    """RMS width of the coincidence peak.

    The RMS is taken over a region of +-5 sigma around the peak and iterated
    until the width stops changing.
    """
    c = hist.counts.astype(float)
    if c.sum() == 0:
        raise EstimationError("histogram is empty")
    peak = int(np.argmax(c))
    floor = float(np.median(c))
    if c[peak] - floor <= 5.0 * math.sqrt(floor + 1.0):
        raise EstimationError("no discernible peak above the histogram floor")
    x = hist.dt.astype(float)
    if initial_sigma_ps is None:
        above = c >= floor + (c[peak] - floor) / 2.0
        left = peak
        while left > 0 and above[left - 1]:
            left -= 1
        right = peak
        while right < c.size - 1 and above[right + 1]:
            right += 1
        initial_sigma_ps = (right - left + 1) * FWHM_TO_SIGMA
    center, sigma = x[peak], float(initial_sigma_ps)
    for it in range(1, max_iter + 1):
        half = max(5.0 * sigma, 1.0)
        sel = np.abs(x - center) <= half
        w = c[sel]
        new_center = float(np.sum(w * x[sel]) / w.sum())
        new_sigma = float(math.sqrt(np.sum(w * (x[sel] - new_center) ** 2) / w.sum()))
        done = abs(new_sigma - sigma) < 1e-9 and abs(new_center - center) < 1e-9
        center, sigma = new_center, new_sigma
        if done:
            break
    return JitterEstimate(sigma, center, int(w.sum()), it)


def quadrature_difference(combined_ps: float, single_ps: float) -> float:
    """Jitter added between two measurements, sqrt(combined^2 - single^2)."""
    if combined_ps < single_ps:
        raise EstimationError(f"combined jitter {combined_ps} below single-tagger jitter {single_ps}")
    return math.sqrt(combined_ps ** 2 - single_ps ** 2)


# --- pulse-gated statistics ---------------------------------------------------

def gate_slots(stream: EventStream, cfg: SimConfig) -> np.ndarray:
    """Slot index of every event inside its pulse gate of width ``window``; -1 otherwise."""
    t = stream.t.astype(float)
    if stream.node == REMOTE:
        clk = cfg.clock
        t = t - clk.offset_ps
        t = t - clk.drift_ps_per_s * (t - cfg.origin_ps) * 1e-12
    rel = (t - cfg.origin_ps) / cfg.period_ps
    slot = np.rint(rel)
    inside = np.abs(rel - slot) * cfg.period_ps <= cfg.link.window_ps / 2.0
    inside &= (slot >= 0) & (slot < cfg.n_pulses)
    return np.where(inside, slot, -1).astype(np.int64)


@dataclass(frozen=True)
class GatedCounts:
    n_pulses: int
    singles_local: int
    singles_remote: int
    coincidences: int

    def per_pulse(self) -> tuple[float, float, float]:
        n = self.n_pulses
        return self.singles_local / n, self.singles_remote / n, self.coincidences / n


def gated_counts(local: EventStream, remote: EventStream, cfg: SimConfig) -> GatedCounts:
    """Singles inside pulse gates and coincidences between gated events of the same slot."""
    sl = gate_slots(local, cfg)
    sr = gate_slots(remote, cfg)
    sl, sr = sl[sl >= 0], sr[sr >= 0]
    ul, cl = np.unique(sl, return_counts=True)
    ur, cr = np.unique(sr, return_counts=True)
    _, il, ir = np.intersect1d(ul, ur, assume_unique=True, return_indices=True)
    coinc = int(np.sum(cl[il] * cr[ir]))
    return GatedCounts(cfg.n_pulses, int(sl.size), int(sr.size), coinc)


@dataclass(frozen=True)
class ExpectedRates:
    s_local: float
    s_remote: float
    coincidence: float


def analytic_rates(cfg: SimConfig) -> ExpectedRates:
    """First-order rate model evaluated for the analyzer settings of ``cfg``.

    The analyzer pair reduces the effective pair number to ``mu * p`` where
    ``p`` is the marginal (singles) or joint (coincidence) pass probability.
    """
    p = cfg.link
    p_loc = marginal_probability(cfg.state, cfg.local, "local")
    p_rem = marginal_probability(cfg.state, cfg.remote, "remote")
    p_joint = coincidence_probability(cfg.state, cfg.local, cfg.remote)
    n_sprs_post = 0.5 * cfg.sprs_rate_cps * p.window_ps * 1e-12
    s_i = singles(replace(p, mu=p.mu * p_loc), "idler", p.ref_wavelength_nm, n_sprs=0.0)
    s_s = singles(replace(p, mu=p.mu * p_rem), "signal", p.ref_wavelength_nm, n_sprs=n_sprs_post)
    c_max, _ = coincidence_extrema(replace(p, mu=p.mu * p_joint), s_i, s_s)
    return ExpectedRates(s_i, s_s, c_max)


def fringe_from_events(
    cfg: SimConfig,
    remote_basis: str,
    thetas: Sequence[float],
    seconds_per_point: float,
    gated: bool = True,
) -> list[CountRecord]:
    """Simulated coincidences versus local HWP angle with the remote analyzer fixed."""
    if len(thetas) == 0:
        raise ConfigError("fringe grid is empty")
    n = int(round(seconds_per_point * cfg.link.rep_rate_hz))
    remote = AnalyzerSetting.basis(remote_basis)
    out = []
    for i, th in enumerate(thetas):
        point = replace(
            cfg, n_pulses=n, local=AnalyzerSetting(0.0, th), remote=remote,
            spawn_key=(*cfg.spawn_key, i),
        )
        loc, rem = simulate(point)
        if gated:
            c = gated_counts(loc, rem, point).coincidences
        else:
            c = count_coincidences(loc, rem, cfg.link.window_ps, cfg.clock.offset_ps)
        out.append(CountRecord(point.local, remote, float(c), seconds_per_point))
    return out


# --- event files -------------------------------------------------------------

MAGIC = b"QCEV"
VERSION = 1
RECORD = np.dtype([("node", "<u1"), ("channel", "<u1"), ("t", "<u8")])


def merge_streams(*streams: EventStream) -> np.ndarray:
    """All events as one record array, ordered by (t, node, channel)."""
    parts = []
    for s in streams:
        rec = np.empty(len(s), dtype=RECORD)
        rec["node"], rec["channel"], rec["t"] = s.node, s.channel, s.t
        parts.append(rec)
    rec = np.concatenate(parts) if parts else np.empty(0, dtype=RECORD)
    return rec[np.lexsort((rec["channel"], rec["node"], rec["t"]))]


def split_records(rec: np.ndarray) -> dict[int, EventStream]:
    out = {}
    for node in np.unique(rec["node"]).tolist():
        sel = rec[rec["node"] == node]
        out[node] = EventStream(node, sel["t"].astype(np.int64), sel["channel"])
    return out


def write_events(path: str | Path, *streams: EventStream) -> None:
    rec = merge_streams(*streams)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<B", VERSION))
        fh.write(rec.tobytes())


def read_events(path: str | Path) -> dict[int, EventStream]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an event file (bad magic)")
    if data[4] != VERSION:
        raise ValueError(f"{path}: unsupported event file version {data[4]}")
    body = data[5:]
    if len(body) % RECORD.itemsize:
        raise ValueError(f"{path}: truncated record")
    return split_records(np.frombuffer(body, dtype=RECORD))


def events_to_csv(*streams: EventStream) -> str:
    rec = merge_streams(*streams)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("node", "channel", "t_ps"))
    w.writerows(zip(rec["node"].tolist(), rec["channel"].tolist(), rec["t"].tolist()))
    return buf.getvalue()


def events_from_csv(text: str) -> dict[int, EventStream]:
    rows = list(csv.DictReader(io.StringIO(text)))
    rec = np.empty(len(rows), dtype=RECORD)
    for i, r in enumerate(rows):
        rec[i] = (int(r["node"]), int(r["channel"]), int(r["t_ps"]))
    return split_records(rec)
