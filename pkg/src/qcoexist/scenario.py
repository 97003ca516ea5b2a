"""Scenario files: one YAML document describing fiber, traffic, source, detectors and sync.

Physical parameters have no defaults; only numerical knobs under ``analysis``
(and the ``allocation`` search settings) do.  Unknown keys are rejected and
relative file paths resolve against the scenario file's directory.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .event_sim import ClockModel, SimConfig
from .link_model import LinkParams
from .quantum_state import AnalyzerSetting, TwoQubitState, mix_unpolarized_noise, pure_state
from .spectra import (
    LOSS_UNITS,
    RATE_UNITS,
    ClassicalPlan,
    Spectrum,
    load_spectrum,
    per_pulse_noise,
    scale_sprs,
    wavelength_grid,
)


class ScenarioError(ValueError):
    """The scenario file is missing, malformed or fails validation."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Fiber(_Section):
    length_km: float = Field(gt=0)
    loss_spectrum: str


class ExtraChannel(_Section):
    wavelength_nm: float = Field(gt=0)
    power_dbm: float


class Classical(_Section):
    aggregate_launch_power_dbm: float
    band_span_nm: tuple[float, float]
    extra_channels: list[ExtraChannel] = Field(default_factory=list)
    sprs_spectrum: str
    sprs_reference_power_dbm: float
    sprs_reference_bandwidth_ghz: float = Field(gt=0)

    @field_validator("band_span_nm")
    @classmethod
    def _ordered(cls, v):
        if not v[0] < v[1]:
            raise ValueError("band_span_nm must be ordered")
        return v


class Source(_Section):
    mu: float = Field(ge=0)
    rep_rate_hz: float = Field(gt=0)
    pulse_fwhm_ps: float = Field(ge=0)
    pump_nm: float = Field(gt=0)
    signal_nm: float = Field(gt=0)
    idler_nm: float = Field(gt=0)
    pair_statistics: Literal["poisson", "thermal"]


class Detectors(_Section):
    eta_idler: float = Field(ge=0, le=1)
    eta_signal: float = Field(ge=0, le=1)
    dark_idler_per_pulse: float = Field(ge=0, le=1)
    dark_signal_per_pulse: float = Field(ge=0, le=1)


class Filters(_Section):
    bandwidth_ghz: float = Field(gt=0)
    window_ps: float = Field(gt=0)


class Sync(_Section):
    sigma_tdc_ps: float = Field(ge=0)
    sigma_sync_ps: float = Field(ge=0)
    offset_ps: float
    drift_ps_per_s: float


class StatePrep(_Section):
    bell: Literal["phi+", "phi-", "psi+", "psi-"]
    werner_p: float = Field(ge=0, le=1)


class Analysis(_Section):
    grid_nm: tuple[float, float, float] = (1260.0, 1360.0, 2.0)
    anchor_snr: Optional[float] = Field(default=None, gt=0)
    replicas: int = Field(default=1000, ge=100)
    fringe_points: int = Field(default=16, ge=3)
    fringe_seconds: float = Field(default=8.0, gt=0)
    tomography_seconds: float = Field(default=60.0, gt=0)
    simulate_seconds: float = Field(default=1.0, gt=0)
    jitter_pulses: int = Field(default=1_000_000, ge=1)
    jitter_rep_rate_hz: float = Field(default=50e6, gt=0)
    jitter_scan_ps: int = Field(default=100, gt=0)


class Allocation(_Section):
    objective: Literal["visibility", "snr"] = "visibility"
    band_nm: tuple[float, float] = (1260.0, 1360.0)
    step_nm: float = Field(default=2.0, gt=0)
    exclusions_nm: list[tuple[float, float]] = Field(default_factory=list)
    min_guard_ghz: float = Field(default=0.0, ge=0)
    pump_guard_ghz: float = Field(default=0.0, ge=0)


class ScenarioModel(_Section):
    seed: int = Field(ge=0, lt=2**64)
    fiber: Fiber
    classical: Classical
    source: Source
    detectors: Detectors
    filters: Filters
    sync: Sync
    state: StatePrep
    analysis: Analysis = Field(default_factory=Analysis)
    allocation: Allocation = Field(default_factory=Allocation)

    @model_validator(mode="after")
    def _timing(self):
        if 1e12 / self.source.rep_rate_hz <= self.filters.window_ps:
            raise ValueError("filters.window_ps must be shorter than the pulse period")
        return self


BELL_STATES = {
    "phi+": [1, 0, 0, 1],
    "phi-": [1, 0, 0, -1],
    "psi+": [0, 1, 1, 0],
    "psi-": [0, 1, -1, 0],
}


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


@dataclass(frozen=True)
class Scenario:
    model: ScenarioModel
    base_dir: Path
    config_sha256: str
    power_override_dbm: float | None = None
    dark_fiber: bool = False

    # --- derived physics ---------------------------------------------------

    @cached_property
    def loss(self) -> Spectrum:
        spec = load_spectrum(self._path(self.model.fiber.loss_spectrum), length_km=self.model.fiber.length_km)
        if spec.unit not in LOSS_UNITS:
            raise ScenarioError(f"fiber.loss_spectrum: expected a loss unit, got {spec.unit}")
        return spec

    @cached_property
    def sprs(self) -> Spectrum:
        spec = load_spectrum(self._path(self.model.classical.sprs_spectrum))
        if spec.unit not in RATE_UNITS:
            raise ScenarioError(f"classical.sprs_spectrum: expected a rate unit, got {spec.unit}")
        return spec

    @property
    def plan(self) -> ClassicalPlan:
        c = self.model.classical
        power = c.aggregate_launch_power_dbm if self.power_override_dbm is None else self.power_override_dbm
        return ClassicalPlan(power, c.band_span_nm, tuple((x.wavelength_nm, x.power_dbm) for x in c.extra_channels))

    def sprs_rate_cps(self, wavelength: float | None = None) -> float:
        """Raman rate at the remote detector before the polarizing analyzer."""
        if self.dark_fiber:
            return 0.0
        c = self.model.classical
        wl = self.model.source.signal_nm if wavelength is None else wavelength
        return scale_sprs(
            self.sprs, wl, self.plan, c.sprs_reference_power_dbm,
            self.model.filters.bandwidth_ghz, c.sprs_reference_bandwidth_ghz,
        )

    def link_params(self) -> LinkParams:
        m = self.model
        n_sprs = 0.5 * per_pulse_noise(self.sprs_rate_cps(), m.filters.window_ps)
        return LinkParams(
            mu=m.source.mu,
            eta_idler_ref=m.detectors.eta_idler,
            eta_signal_ref=m.detectors.eta_signal,
            n_dark_idler=m.detectors.dark_idler_per_pulse,
            n_dark_signal=m.detectors.dark_signal_per_pulse,
            n_sprs_signal_ref=n_sprs,
            window_ps=m.filters.window_ps,
            rep_rate_hz=m.source.rep_rate_hz,
            ref_wavelength_nm=m.source.signal_nm,
            sprs_power_dbm=None if self.dark_fiber else self.plan.aggregate_launch_power_dbm,
        )

    @property
    def clock(self) -> ClockModel:
        s = self.model.sync
        return ClockModel(s.sigma_tdc_ps, s.sigma_sync_ps, s.offset_ps, s.drift_ps_per_s)

    @property
    def state(self) -> TwoQubitState:
        st = self.model.state
        return mix_unpolarized_noise(pure_state(BELL_STATES[st.bell]), st.werner_p)

    def sim_config(
        self,
        seconds: float,
        local: AnalyzerSetting | None = None,
        remote: AnalyzerSetting | None = None,
        seed: int | None = None,
    ) -> SimConfig:
        m = self.model
        return SimConfig(
            link=self.link_params(),
            n_pulses=int(round(seconds * m.source.rep_rate_hz)),
            clock=self.clock,
            pulse_fwhm_ps=m.source.pulse_fwhm_ps,
            sprs_rate_cps=self.sprs_rate_cps(),
            local=local or AnalyzerSetting.basis("H"),
            remote=remote or AnalyzerSetting.basis("H"),
            state=self.state,
            seed=m.seed if seed is None else seed,
            pair_statistics=m.source.pair_statistics,
        )

    def grid(self) -> np.ndarray:
        return wavelength_grid(*self.model.analysis.grid_nm)

    def with_overrides(self, power_dbm: float | None = None, dark_fiber: bool | None = None) -> "Scenario":
        return Scenario(
            self.model, self.base_dir, self.config_sha256,
            self.power_override_dbm if power_dbm is None else power_dbm,
            self.dark_fiber if dark_fiber is None else dark_fiber,
        )

    def _path(self, rel: str) -> Path:
        p = Path(rel)
        p = p if p.is_absolute() else self.base_dir / p
        if not p.is_file():
            raise ScenarioError(f"referenced file not found: {p}")
        return p


def parse_scenario(text: str, base_dir: Path, name: str = "<scenario>") -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{name}: invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{name}: top level must be a mapping")
    try:
        model = ScenarioModel.model_validate(doc)
    except ValidationError as exc:
        raise ScenarioError(f"{name}: {_format_validation(exc)}") from None
    sc = Scenario(model, base_dir, hashlib.sha256(text.encode()).hexdigest())
    # touch files so missing or malformed inputs fail at load time
    sc.loss, sc.sprs
    return sc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    return parse_scenario(path.read_text(), path.resolve().parent, path.name)


def reference_scenario_path() -> Path:
    return Path(__file__).resolve().parent / "data" / "reference.yaml"
