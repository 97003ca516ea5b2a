"""Wavelength-dependent fiber loss and Raman noise spectra.

A :class:`Spectrum` is a piecewise-linear curve over wavelength.  Loss curves
are kept as total dB over the link; ``dB/km`` input is converted on load when
the fiber length is known.  Raman (SpRS) curves are stored either as raw
counts/s or normalized to counts/s per mW of launch power per GHz of filter
bandwidth, and :func:`scale_sprs` turns the latter into a detector rate for a
given classical plan.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LOSS_DB = "dB"
LOSS_DB_PER_KM = "dB/km"
RATE = "counts/s"
RATE_NORMALIZED = "counts/s/mW/GHz"

UNITS = (LOSS_DB, LOSS_DB_PER_KM, RATE, RATE_NORMALIZED)
LOSS_UNITS = (LOSS_DB, LOSS_DB_PER_KM)
RATE_UNITS = (RATE, RATE_NORMALIZED)

SPEED_OF_LIGHT_NM_GHZ = 299_792_458.0  # c in nm*GHz


class SpectrumError(ValueError):
    """Malformed spectrum or spectrum file."""


class WavelengthRangeError(ValueError):
    """A wavelength falls outside the sampled span of a spectrum."""

    def __init__(self, wavelength: float, span: tuple[float, float]):
        self.wavelength = wavelength
        self.span = span
        super().__init__(
            f"wavelength {wavelength:g} nm outside sampled span "
            f"[{span[0]:g}, {span[1]:g}] nm"
        )


class ParameterError(ValueError):
    """A physical parameter is outside its valid domain."""


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    if mw <= 0:
        raise ParameterError(f"power must be positive to express in dBm, got {mw} mW")
    return 10.0 * math.log10(mw)


def nm_to_ghz(wavelength_nm: float) -> float:
    """Optical frequency in GHz for a vacuum wavelength in nm."""
    return SPEED_OF_LIGHT_NM_GHZ / wavelength_nm


@dataclass(frozen=True)
class Spectrum:
    """Sampled wavelength-indexed curve with linear interpolation between nodes."""

    wavelengths: np.ndarray
    values: np.ndarray
    unit: str
    name: str = ""

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float)
        val = np.asarray(self.values, dtype=float)
        if wl.ndim != 1 or wl.shape != val.shape:
            raise SpectrumError("wavelengths and values must be 1-D arrays of equal length")
        if wl.size < 2:
            raise SpectrumError("a spectrum needs at least 2 points")
        if self.unit not in UNITS:
            raise SpectrumError(f"unknown unit {self.unit!r}; expected one of {UNITS}")
        if not (np.all(np.isfinite(wl)) and np.all(np.isfinite(val))):
            raise SpectrumError("spectrum contains non-finite entries")
        if np.any(np.diff(wl) <= 0):
            i = int(np.argmax(np.diff(wl) <= 0))
            raise SpectrumError(
                f"wavelengths must be strictly increasing (row {i + 1}: {wl[i]:g} -> {wl[i + 1]:g})"
            )
        if np.any(val < 0):
            raise SpectrumError(f"{self.unit} values must be non-negative")
        wl.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_points(cls, points: Iterable[tuple[float, float]], unit: str, name: str = "") -> "Spectrum":
        pts = list(points)
        return cls(np.array([p[0] for p in pts]), np.array([p[1] for p in pts]), unit, name)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.wavelengths[0]), float(self.wavelengths[-1])

    @property
    def is_loss(self) -> bool:
        return self.unit in LOSS_UNITS

    def __call__(self, wavelength):
        return interpolate(self, wavelength)

    def scaled(self, factor: float) -> "Spectrum":
        return Spectrum(self.wavelengths, self.values * factor, self.unit, self.name)

    def to_total_loss(self, length_km: float) -> "Spectrum":
        """Convert a ``dB/km`` curve to total dB over ``length_km``."""
        if self.unit == LOSS_DB:
            return self
        if self.unit != LOSS_DB_PER_KM:
            raise SpectrumError(f"{self.unit} is not a loss unit")
        if not length_km > 0:
            raise ParameterError(f"fiber length must be positive, got {length_km}")
        return Spectrum(self.wavelengths, self.values * length_km, LOSS_DB, self.name)


def interpolate(s: Spectrum, wavelength):
    """Evaluate ``s`` at one wavelength (float) or an array of wavelengths.

    Exact at sample nodes.  Anything outside the sampled span raises
    :class:`WavelengthRangeError`; there is no extrapolation.
    """
    lo, hi = s.span
    wl = np.asarray(wavelength, dtype=float)
    bad = (wl < lo) | (wl > hi) | ~np.isfinite(wl)
    if np.any(bad):
        first = float(wl[bad][0]) if wl.ndim else float(wl)
        raise WavelengthRangeError(first, s.span)
    out = np.interp(wl, s.wavelengths, s.values)
    return float(out) if wl.ndim == 0 else out


def relative_transmission(loss: Spectrum, wavelength, reference: float):
    """Fractional transmission at ``wavelength`` relative to ``reference``.

    ``loss`` must be total dB over the link.  Returns
    ``10**((L(reference) - L(wavelength)) / 10)``, i.e. >1 where the fiber is
    less lossy than at the reference.
    """
    if loss.unit != LOSS_DB:
        raise SpectrumError(f"relative_transmission needs total loss in dB, got {loss.unit}")
    delta = interpolate(loss, reference) - interpolate(loss, wavelength)
    return 10.0 ** (delta / 10.0)


@dataclass(frozen=True)
class ClassicalPlan:
    """Classical traffic sharing the fiber: an aggregate in-band comb plus extra carriers."""

    aggregate_launch_power_dbm: float
    band_span: tuple[float, float]
    extra_channels: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        lo, hi = self.band_span
        if not lo < hi:
            raise ParameterError(f"band_span must be ordered, got {self.band_span}")
        if not math.isfinite(self.aggregate_launch_power_dbm):
            raise ParameterError("aggregate launch power must be finite")
        chans = tuple((float(w), float(p)) for w, p in self.extra_channels)
        for w, p in chans:
            if not (math.isfinite(w) and math.isfinite(p)) or w <= 0:
                raise ParameterError(f"invalid extra channel ({w}, {p})")
        object.__setattr__(self, "band_span", (float(lo), float(hi)))
        object.__setattr__(self, "extra_channels", chans)

    @property
    def aggregate_power_mw(self) -> float:
        return dbm_to_mw(self.aggregate_launch_power_dbm)

    def with_power(self, dbm: float) -> "ClassicalPlan":
        return ClassicalPlan(dbm, self.band_span, self.extra_channels)

    def carrier_wavelengths(self) -> list[float]:
        return [self.band_span[0], self.band_span[1], *(w for w, _ in self.extra_channels)]


def scale_sprs(
    s: Spectrum,
    wavelength,
    plan: ClassicalPlan,
    ref_power_dbm: float,
    filter_bw_ghz: float,
    ref_bw_ghz: float,
):
    """Raman count rate at ``wavelength`` for the launch power of ``plan``.

    The stored curve is taken to have been recorded (or normalized) at
    ``ref_power_dbm`` through a ``ref_bw_ghz`` filter.  The result scales
    linearly with launch power in mW and with filter bandwidth.
    """
    if not filter_bw_ghz > 0 or not ref_bw_ghz > 0:
        raise ParameterError(
            f"filter bandwidths must be positive (filter={filter_bw_ghz}, reference={ref_bw_ghz})"
        )
    if s.unit not in RATE_UNITS:
        raise SpectrumError(f"scale_sprs needs a rate spectrum, got {s.unit}")
    power_ratio = plan.aggregate_power_mw / dbm_to_mw(ref_power_dbm)
    return interpolate(s, wavelength) * power_ratio * (filter_bw_ghz / ref_bw_ghz)


def per_pulse_noise(rate_cps, window_ps: float):
    """Probability of a background count inside one coincidence window."""
    if not window_ps > 0:
        raise ParameterError(f"window must be positive, got {window_ps} ps")
    if np.any(np.asarray(rate_cps) < 0):
        raise ParameterError("count rate must be non-negative")
    p = np.asarray(rate_cps, dtype=float) * window_ps * 1e-12
    if np.any(p > 0.1):
        logger.warning("per-pulse noise %.3g exceeds 0.1; rare-event approximation is poor", float(np.max(p)))
    return float(p) if p.ndim == 0 else p


# --- CSV I/O -----------------------------------------------------------------

def parse_spectrum_csv(text: str, name: str = "", length_km: float | None = None) -> Spectrum:
    """Parse ``wavelength_nm,value,unit`` rows; ``#`` starts a comment.

    A ``dB/km`` curve is converted to total dB when ``length_km`` is given.
    """
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise SpectrumError(f"{name or 'spectrum'}: empty file")
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = [h.strip() for h in next(reader)]
    if header != ["wavelength_nm", "value", "unit"]:
        raise SpectrumError(f"{name or 'spectrum'}: bad header {header}")
    points, units = [], set()
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 3:
            raise SpectrumError(f"{name or 'spectrum'}: row {lineno} has {len(row)} fields")
        try:
            points.append((float(row[0]), float(row[1])))
        except ValueError as exc:
            raise SpectrumError(f"{name or 'spectrum'}: row {lineno}: {exc}") from None
        units.add(row[2].strip())
    if len(units) != 1:
        raise SpectrumError(f"{name or 'spectrum'}: mixed units {sorted(units)}")
    spec = Spectrum.from_points(points, units.pop(), name)
    if spec.unit == LOSS_DB_PER_KM and length_km is not None:
        spec = spec.to_total_loss(length_km)
    return spec


def load_spectrum(path: str | Path, length_km: float | None = None) -> Spectrum:
    path = Path(path)
    return parse_spectrum_csv(path.read_text(), name=path.name, length_km=length_km)


def spectrum_to_csv(s: Spectrum) -> str:
    rows = ["wavelength_nm,value,unit"]
    rows += [f"{float(w)!r},{float(v)!r},{s.unit}" for w, v in zip(s.wavelengths, s.values)]
    return "\n".join(rows) + "\n"


def wavelength_grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive grid; endpoints rounded to 1e-9 nm to absorb float drift."""
    if not step > 0:
        raise ParameterError(f"grid step must be positive, got {step}")
    if stop < start:
        raise ParameterError(f"grid stop {stop} before start {start}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 9)


__all__: Sequence[str] = [
    "ClassicalPlan",
    "LOSS_DB",
    "LOSS_DB_PER_KM",
    "ParameterError",
    "RATE",
    "RATE_NORMALIZED",
    "Spectrum",
    "SpectrumError",
    "WavelengthRangeError",
    "dbm_to_mw",
    "interpolate",
    "load_spectrum",
    "mw_to_dbm",
    "nm_to_ghz",
    "parse_spectrum_csv",
    "per_pulse_noise",
    "relative_transmission",
    "scale_sprs",
    "spectrum_to_csv",
    "wavelength_grid",
]
