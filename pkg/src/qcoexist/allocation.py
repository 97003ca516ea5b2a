"""Quantum-channel wavelength selection on top of the link model."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

from .link_model import LinkParams, predict
from .spectra import (
    ClassicalPlan,
    ParameterError,
    Spectrum,
    interpolate,
    nm_to_ghz,
    wavelength_grid,
)

Objective = Literal["visibility", "snr"]


class InfeasibleError(ValueError):
    """No candidate wavelength survives the request's constraints."""

    def __init__(self, message: str, constraints: dict[str, int] | None = None):
        self.constraints = constraints or {}
        detail = ", ".join(f"{k}: {v} removed" for k, v in self.constraints.items() if v)
        super().__init__(f"{message}" + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class AllocationRequest:
    band: tuple[float, float]
    step: float
    objective: Objective = "visibility"
    exclusions: tuple[tuple[float, float], ...] = ()
    min_guard_ghz: float = 0.0

    def __post_init__(self):
        lo, hi = self.band
        if not lo < hi:
            raise ParameterError(f"candidate band must be ordered, got {self.band}")
        if not self.step > 0:
            raise ParameterError(f"step must be positive, got {self.step}")
        if self.objective not in ("visibility", "snr"):
            raise ParameterError(f"unknown objective {self.objective!r}")
        if self.min_guard_ghz < 0:
            raise ParameterError("guard band must be non-negative")
        excl = tuple((float(a), float(b)) for a, b in self.exclusions)
        for a, b in excl:
            if not (0 < a <= b < 10_000):
                raise ParameterError(f"implausible exclusion range ({a}, {b}) nm")
        object.__setattr__(self, "exclusions", excl)

    def grid(self):
        return wavelength_grid(self.band[0], self.band[1], self.step)


@dataclass(frozen=True)
class AllocationEntry:
    wavelength: float
    visibility: float
    snr: float
    loss_db: float
    sprs: float
    n_sprs_s: float

    def score(self, objective: Objective) -> float:
        return self.visibility if objective == "visibility" else self.snr


@dataclass(frozen=True)
class AllocationReport:
    objective: Objective
    entries: list[AllocationEntry]
    chosen: float
    removed: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "objective": self.objective,
            "chosen_nm": self.chosen,
            "removed": self.removed,
            "ranking": [asdict(e) for e in self.entries],
        }
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"

    def table(self, limit: int | None = None) -> str:
        head = f"{'rank':>4} {'lambda_nm':>9} {'V':>8} {'SNR':>9} {'loss_dB':>8} {'SpRS':>10}"
        rows = [head]
        for i, e in enumerate(self.entries[:limit], start=1):
            rows.append(
                f"{i:>4} {e.wavelength:>9.2f} {e.visibility:>8.5f} {e.snr:>9.4g} {e.loss_db:>8.3f} {e.sprs:>10.4g}"
            )
        return "\n".join(rows)


def _in_exclusion(wl: float, excl: tuple[float, float]) -> bool:
    return excl[0] <= wl <= excl[1]


def _guard_distance_ghz(wl: float, plan: ClassicalPlan) -> float:
    f = nm_to_ghz(wl)
    f_hi, f_lo = nm_to_ghz(plan.band_span[0]), nm_to_ghz(plan.band_span[1])
    d = 0.0 if f_lo <= f <= f_hi else min(abs(f - f_lo), abs(f - f_hi))
    for w, _ in plan.extra_channels:
        d = min(d, abs(f - nm_to_ghz(w)))
    return d


def feasible_candidates(req: AllocationRequest, plan: ClassicalPlan | None) -> tuple[list[float], dict[str, int]]:
    removed: dict[str, int] = {}
    keep = []
    for wl in req.grid().tolist():
        hit = next((e for e in req.exclusions if _in_exclusion(wl, e)), None)
        if hit is not None:
            key = f"exclusion {hit[0]:g}-{hit[1]:g} nm"
            removed[key] = removed.get(key, 0) + 1
            continue
        if plan is not None and req.min_guard_ghz > 0 and _guard_distance_ghz(wl, plan) < req.min_guard_ghz:
            key = f"guard {req.min_guard_ghz:g} GHz from classical carriers"
            removed[key] = removed.get(key, 0) + 1
            continue
        keep.append(wl)
    return keep, removed


def _entry(p, wl, loss, sprs, plan, anchor_snr) -> AllocationEntry:
    r = predict(p, wl, loss, sprs, plan, anchor_snr)
    return AllocationEntry(
        wavelength=wl,
        visibility=r.visibility,
        snr=r.snr,
        loss_db=interpolate(loss, wl),
        sprs=interpolate(sprs, wl) if sprs is not None else 0.0,
        n_sprs_s=r.n_sprs_s,
    )


def allocate(
    req: AllocationRequest,
    params: LinkParams,
    loss: Spectrum,
    sprs: Spectrum | None = None,
    plan: ClassicalPlan | None = None,
    anchor_snr: float | None = None,
) -> AllocationReport:
    """Rank feasible single quantum channels by the requested objective.

    Ties go to the lower Raman value, then the shorter wavelength.
    """
    cands, removed = feasible_candidates(req, plan)
    if not cands:
        raise InfeasibleError("no candidate wavelength is feasible", removed)
    entries = [_entry(params, wl, loss, sprs, plan, anchor_snr) for wl in cands]
    entries.sort(key=lambda e: (-e.score(req.objective), e.sprs, e.wavelength))
    return AllocationReport(req.objective, entries, entries[0].wavelength, removed)


@dataclass(frozen=True)
class PairEntry:
    signal_nm: float
    idler_nm: float
    objective: float
    mismatch_ghz: float
    signal: AllocationEntry
    idler: AllocationEntry


@dataclass(frozen=True)
class PairReport:
    objective: Objective
    pump_nm: float
    entries: list[PairEntry]

    @property
    def chosen(self) -> tuple[float, float]:
        return self.entries[0].signal_nm, self.entries[0].idler_nm

    def to_json(self) -> str:
        doc = {
            "objective": self.objective,
            "pump_nm": self.pump_nm,
            "chosen_nm": list(self.chosen),
            "ranking": [
                {
                    "signal_nm": e.signal_nm,
                    "idler_nm": e.idler_nm,
                    "objective": e.objective,
                    "mismatch_ghz": e.mismatch_ghz,
                    "signal": asdict(e.signal),
                    "idler": asdict(e.idler),
                }
                for e in self.entries
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def pair_allocate(
    req: AllocationRequest,
    pump_nm: float,
    params: LinkParams,
    loss: Spectrum,
    sprs: Spectrum | None = None,
    plan: ClassicalPlan | None = None,
    anchor_snr: float | None = None,
    pump_guard_ghz: float = 0.0,
    grid_tolerance_ghz: float | None = None,
) -> PairReport:
    """Best energy-conserving (signal, idler) pair around a degenerate pump.

    Each blue-side candidate is matched to the red-side candidate closest to
    its conjugate frequency ``2 f_pump - f_signal``; the match must lie within
    one grid step (or ``grid_tolerance_ghz``).  Both arms are scored as if
    they travelled the fiber: the joint objective is the smaller of the two
    visibilities, or the product of the two SNRs.
    """
    f_p = nm_to_ghz(pump_nm)
    tol = grid_tolerance_ghz
    if tol is None:
        tol = req.step * f_p / pump_nm
    cands, removed = feasible_candidates(req, plan)
    far = [wl for wl in cands if abs(nm_to_ghz(wl) - f_p) >= pump_guard_ghz]
    removed = {**removed, f"pump guard {pump_guard_ghz:g} GHz": len(cands) - len(far)}
    blue = [wl for wl in far if wl < pump_nm]
    red = [wl for wl in far if wl > pump_nm]
    cache: dict[float, AllocationEntry] = {}

    def entry(wl: float) -> AllocationEntry:
        if wl not in cache:
            cache[wl] = _entry(params, wl, loss, sprs, plan, anchor_snr)
        return cache[wl]

    pairs = []
    for s in blue:
        if not red:
            break
        target = 2.0 * f_p - nm_to_ghz(s)
        i = min(red, key=lambda wl: (abs(nm_to_ghz(wl) - target), wl))
        mismatch = abs(nm_to_ghz(i) - target)
        if mismatch > tol:
            continue
        es, ei = entry(s), entry(i)
        if req.objective == "visibility":
            obj = min(es.visibility, ei.visibility)
        else:
            obj = es.snr * ei.snr
        pairs.append(PairEntry(s, i, obj, mismatch, es, ei))
    if not pairs:
        removed["no conjugate partner within tolerance"] = len(blue)
        raise InfeasibleError("no phase-matched pair is feasible", removed)
    pairs.sort(key=lambda e: (-e.objective, e.signal.sprs + e.idler.sprs, e.signal_nm))
    return PairReport(req.objective, pump_nm, pairs)
