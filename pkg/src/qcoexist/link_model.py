"""Per-pulse rate model for an entangled pair link sharing fiber with classical light.

Singles, coincidence extrema, visibility and SNR follow the standard
first-order accidental-coincidence model::

    S(λ)     = mu * eta(λ) + N_dark + N_sprs(λ)
    C_max(λ) = mu * eta_i(λ) * eta_s(λ) + S_i(λ) * S_s(λ)
    C_min(λ) = S_i(λ) * S_s(λ)
    V(λ)     = (C_max - C_min) / (C_max + C_min)

All probabilities are per pump pulse and already include the coincidence
window and the analyzer (post-analyzer values).  The signal photon travels the
fiber, so its efficiency scales with the loss spectrum relative to the
reference wavelength; the idler stays local and its efficiency is constant.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Sequence

import numpy as np

from .spectra import (
    ClassicalPlan,
    ParameterError,
    Spectrum,
    dbm_to_mw,
    interpolate,
    relative_transmission,
    wavelength_grid,
)

logger = logging.getLogger(__name__)

Arm = Literal["signal", "idler"]

RARE_EVENT_LIMIT = 0.1
DEFAULT_GRID = (1260.0, 1360.0, 2.0)


class ModelValidityError(ValueError):
    """Inputs drive a per-pulse probability outside [0, 1]."""


class UndefinedVisibilityError(ValueError):
    """Both coincidence extrema are zero."""


@dataclass(frozen=True)
class LinkParams:
    """Operating point of the link at the reference wavelength.

    ``n_sprs_signal_ref`` is the post-analyzer Raman probability per pulse at
    ``ref_wavelength_nm``.  When ``sprs_power_dbm`` is set it records the
    classical launch power that value belongs to, and sweeps under a
    different :class:`ClassicalPlan` rescale linearly in mW.
    """

    mu: float
    eta_idler_ref: float
    eta_signal_ref: float
    n_dark_idler: float
    n_dark_signal: float
    n_sprs_idler: float = 0.0
    n_sprs_signal_ref: float = 0.0
    window_ps: float = 300.0
    rep_rate_hz: float = 500e6
    ref_wavelength_nm: float = 1290.0
    sprs_power_dbm: float | None = None

    def __post_init__(self):
        probs = {
            "eta_idler_ref": self.eta_idler_ref,
            "eta_signal_ref": self.eta_signal_ref,
            "n_dark_idler": self.n_dark_idler,
            "n_dark_signal": self.n_dark_signal,
            "n_sprs_idler": self.n_sprs_idler,
            "n_sprs_signal_ref": self.n_sprs_signal_ref,
        }
        for name, v in probs.items():
            if not (0.0 <= v <= 1.0):
                raise ParameterError(f"{name} must lie in [0, 1], got {v}")
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise ParameterError(f"mu must be finite and non-negative, got {self.mu}")
        if not self.window_ps > 0:
            raise ParameterError(f"window_ps must be positive, got {self.window_ps}")
        if not self.rep_rate_hz > 0:
            raise ParameterError(f"rep_rate_hz must be positive, got {self.rep_rate_hz}")
        if 1e12 / self.rep_rate_hz <= self.window_ps:
            raise ParameterError("coincidence window must be shorter than the pulse period")
        for arm, eta in (("idler", self.eta_idler_ref), ("signal", self.eta_signal_ref)):
            if self.mu * eta > 1:
                raise ParameterError(f"mu*eta exceeds 1 on the {arm} arm")

    def dark_fiber(self) -> "LinkParams":
        """Same link with no classical light in the fiber."""
        return replace(self, n_sprs_idler=0.0, n_sprs_signal_ref=0.0, sprs_power_dbm=None)


@dataclass(frozen=True)
class RatePrediction:
    wavelength: float
    s_i: float
    s_s: float
    c_max: float
    c_min: float
    visibility: float
    snr: float
    eta_s: float
    n_sprs_s: float

    @property
    def snr_saturated(self) -> bool:
        return math.isinf(self.snr)


def _check_probability(p: float, what: str) -> float:
    if p > 1.0:
        raise ModelValidityError(f"{what} = {p:.4g} exceeds 1")
    if p > RARE_EVENT_LIMIT:
        logger.warning("%s = %.3g > %.1f; linear accidental model is inaccurate", what, p, RARE_EVENT_LIMIT)
    return p


def channel_efficiencies(p: LinkParams, wavelength: float, loss: Spectrum | None) -> tuple[float, float]:
    """(eta_idler, eta_signal) with the signal scaled by relative fiber transmission."""
    if loss is None:
        if wavelength != p.ref_wavelength_nm:
            raise ParameterError("a loss spectrum is required away from the reference wavelength")
        return p.eta_idler_ref, p.eta_signal_ref
    x = relative_transmission(loss, wavelength, p.ref_wavelength_nm)
    return p.eta_idler_ref, _check_probability(x * p.eta_signal_ref, f"eta_signal({wavelength:g} nm)")


def singles(
    p: LinkParams,
    arm: Arm,
    wavelength: float,
    loss: Spectrum | None = None,
    n_sprs: float | None = None,
) -> float:
    """Per-pulse singles probability for one arm.

    ``n_sprs`` is the post-analyzer Raman probability at ``wavelength``; it
    defaults to the arm's reference value from ``p``.
    """
    eta_i, eta_s = channel_efficiencies(p, wavelength, loss)
    if arm == "idler":
        eta, dark = eta_i, p.n_dark_idler
        noise = p.n_sprs_idler if n_sprs is None else n_sprs
    elif arm == "signal":
        eta, dark = eta_s, p.n_dark_signal
        noise = p.n_sprs_signal_ref if n_sprs is None else n_sprs
    else:
        raise ParameterError(f"arm must be 'signal' or 'idler', got {arm!r}")
    if noise < 0:
        raise ParameterError("Raman noise probability must be non-negative")
    return _check_probability(p.mu * eta + dark + noise, f"S_{arm}({wavelength:g} nm)")


def coincidence_extrema(
    p: LinkParams,
    s_i: float,
    s_s: float,
    wavelength: float | None = None,
    loss: Spectrum | None = None,
) -> tuple[float, float]:
    """(C_max, C_min) per pulse from the singles of both arms."""
    wl = p.ref_wavelength_nm if wavelength is None else wavelength
    eta_i, eta_s = channel_efficiencies(p, wl, loss)
    c_min = s_i * s_s
    return p.mu * eta_i * eta_s + c_min, c_min


def visibility(c_max: float, c_min: float) -> float:
    """Fringe visibility (C_max - C_min) / (C_max + C_min).

    Swapping the arguments flips the sign; for C_max >= C_min >= 0 the result
    lies in [0, 1].
    """
    if c_max < 0 or c_min < 0:
        raise ParameterError("coincidence probabilities must be non-negative")
    total = c_max + c_min
    if total == 0:
        raise UndefinedVisibilityError("visibility undefined when C_max = C_min = 0")
    return (c_max - c_min) / total


def signal_sprs(
    p: LinkParams,
    wavelength: float,
    sprs: Spectrum | None,
    plan: ClassicalPlan | None = None,
) -> float:
    """Post-analyzer Raman probability on the signal arm at ``wavelength``.

    The reference value in ``p`` is carried to other wavelengths by the shape
    of ``sprs`` and to other launch powers by ``plan``.
    """
    if p.n_sprs_signal_ref == 0.0:
        return 0.0
    if sprs is None:
        if wavelength != p.ref_wavelength_nm:
            raise ParameterError("a Raman spectrum is required away from the reference wavelength")
        shape = 1.0
    else:
        ref_val = interpolate(sprs, p.ref_wavelength_nm)
        if ref_val == 0:
            raise ParameterError("Raman spectrum is zero at the reference wavelength; cannot anchor")
        shape = interpolate(sprs, wavelength) / ref_val
    power = 1.0
    if plan is not None and p.sprs_power_dbm is not None:
        power = plan.aggregate_power_mw / dbm_to_mw(p.sprs_power_dbm)
    return p.n_sprs_signal_ref * (shape * power)


def snr(
    p: LinkParams,
    wavelength: float,
    loss: Spectrum | None = None,
    n_sprs_s: float | None = None,
    anchor_snr: float | None = None,
    n_sprs_s_ref: float | None = None,
) -> float:
    """Signal-arm SNR normalized to an anchor value at the reference wavelength.

    SNR(λ) = anchor * [eta_s(λ)/eta_s(ref)] * [noise(ref)/noise(λ)], where
    noise is dark plus Raman probability on the signal arm.  Without an anchor
    the model's own ratio mu*eta_s/noise at the reference is used.  Zero noise
    gives ``inf`` (saturated).
    """
    _, eta_s = channel_efficiencies(p, wavelength, loss)
    noise_ref = p.n_dark_signal + (p.n_sprs_signal_ref if n_sprs_s_ref is None else n_sprs_s_ref)
    noise = p.n_dark_signal + (p.n_sprs_signal_ref if n_sprs_s is None else n_sprs_s)
    if anchor_snr is None:
        if noise_ref == 0:
            logger.warning("signal-arm noise is zero; SNR saturated")
            return math.inf
        anchor_snr = p.mu * p.eta_signal_ref / noise_ref
    if noise == 0:
        logger.warning("signal-arm noise is zero at %g nm; SNR saturated", wavelength)
        return math.inf
    return anchor_snr * (eta_s / p.eta_signal_ref) * (noise_ref / noise)


def predict(
    p: LinkParams,
    wavelength: float,
    loss: Spectrum | None = None,
    sprs: Spectrum | None = None,
    plan: ClassicalPlan | None = None,
    anchor_snr: float | None = None,
) -> RatePrediction:
    """Evaluate the full model at one quantum-channel wavelength."""
    n_s = signal_sprs(p, wavelength, sprs, plan)
    n_s_ref = signal_sprs(p, p.ref_wavelength_nm, sprs, plan)
    _, eta_s = channel_efficiencies(p, wavelength, loss)
    s_i = singles(p, "idler", wavelength, loss)
    s_s = singles(p, "signal", wavelength, loss, n_sprs=n_s)
    c_max, c_min = coincidence_extrema(p, s_i, s_s, wavelength, loss)
    return RatePrediction(
        wavelength=float(wavelength),
        s_i=s_i,
        s_s=s_s,
        c_max=c_max,
        c_min=c_min,
        visibility=visibility(c_max, c_min),
        snr=snr(p, wavelength, loss, n_s, anchor_snr, n_sprs_s_ref=n_s_ref),
        eta_s=eta_s,
        n_sprs_s=n_s,
    )


def sweep(
    p: LinkParams,
    loss: Spectrum,
    sprs: Spectrum | None = None,
    plan: ClassicalPlan | None = None,
    grid: Iterable[float] | None = None,
    anchor_snr: float | None = None,
) -> list[RatePrediction]:
    """Model evaluated over a wavelength grid (default 1260-1360 nm, 2 nm)."""
    if grid is None:
        grid = wavelength_grid(*DEFAULT_GRID)
    return [predict(p, float(wl), loss, sprs, plan, anchor_snr) for wl in grid]


SWEEP_COLUMNS = ("wavelength_nm", "S_i", "S_s", "C_max", "C_min", "V", "SNR")


def sweep_to_csv(rows: Sequence[RatePrediction]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([repr(float(v)) for v in (r.wavelength, r.s_i, r.s_s, r.c_max, r.c_min, r.visibility, r.snr)])
    return buf.getvalue()


def sweep_from_csv(text: str) -> np.ndarray:
    """Parse sweep CSV back into a structured array keyed by column name."""
    return np.genfromtxt(io.StringIO(text), delimiter=",", names=True, dtype=float)
