"""Command-line entry point.

Each subcommand loads a scenario file, runs one analysis and writes its
artifacts plus a ``manifest.json`` into ``--out``.  Files are written to a
temporary name and renamed into place; if the run fails, everything it wrote
is removed again.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
import tempfile
from dataclasses import replace
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .allocation import AllocationRequest, InfeasibleError, allocate, pair_allocate
from .event_sim import (
    LOCAL,
    REMOTE,
    EstimationError,
    analytic_rates,
    correlate,
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
from .link_model import ModelValidityError, UndefinedVisibilityError, sweep
from .quantum_state import (
    CountRecord,
    DegenerateDataError,
    MonteCarloResult,
    fidelity,
    fringe_visibility,
    monte_carlo_errors,
    poisson_replicas,
    pure_state,
    records_from_csv,
    records_to_csv,
    state_to_json,
    tomography_reconstruct,
    tomography_settings,
)
from .scenario import BELL_STATES, Scenario, load_scenario, reference_scenario_path
from .spectra import interpolate, per_pulse_noise, scale_sprs

log = logging.getLogger("qcoexist")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

FRINGE_BASES = ("H", "V", "D", "A")


class OutputSet:
    """Atomic writer for one run's artifacts."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.written: list[Path] = []

    def write(self, name: str, data: str | bytes) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        raw = data.encode() if isinstance(data, str) else data
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.dir)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(raw)
            final = self.dir / name
            os.replace(tmp, final)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.written.append(final)
        return final

    def write_with(self, name: str, writer: Callable[[Path], None]) -> Path:
        """Let ``writer`` produce a file at a temporary path, then rename it."""
        self.dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.dir)
        os.close(fd)
        try:
            writer(Path(tmp))
            final = self.dir / name
            os.replace(tmp, final)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.written.append(final)
        return final

    def rollback(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)
        self.written.clear()


# --- formatting helpers ------------------------------------------------------

def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _table(columns: Sequence[str], rows: Sequence[Sequence], fmt: str) -> str:
    if fmt == "json":
        return _dumps([dict(zip(columns, r)) for r in rows])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _sub_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0])


def _mc_doc(r: MonteCarloResult) -> dict:
    return {"value": r.point, "mc_mean": r.mean, "mc_std": r.std, "replicas": int(r.samples.size)}


def _versions() -> dict:
    out = {"qcoexist": __version__, "python": platform.python_version()}
    for dist in ("numpy", "pydantic", "PyYAML"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


# --- subcommands ---------------------------------------------------------------

def cmd_sweep(sc: Scenario, args, out: OutputSet) -> None:
    grid = [args.lambda_nm] if args.lambda_nm is not None else sc.grid()
    rows = sweep(sc.link_params(), sc.loss, sc.sprs if not sc.dark_fiber else None,
                 sc.plan, grid, sc.model.analysis.anchor_snr)
    cols = ("wavelength_nm", "S_i", "S_s", "C_max", "C_min", "V", "SNR")
    table = [(r.wavelength, r.s_i, r.s_s, r.c_max, r.c_min, r.visibility, r.snr) for r in rows]
    out.write(f"sweep.{args.format}", _table(cols, table, args.format))
    best = max(rows, key=lambda r: r.visibility)
    print(f"sweep: {len(rows)} wavelengths, max V {best.visibility:.5f} at {best.wavelength:g} nm")


def cmd_sprs_scale(sc: Scenario, args, out: OutputSet) -> None:
    m = sc.model
    grid = np.asarray([args.lambda_nm] if args.lambda_nm is not None else sc.grid(), dtype=float)
    if sc.dark_fiber:
        rate = np.zeros_like(grid)
    else:
        rate = np.asarray(scale_sprs(sc.sprs, grid, sc.plan, m.classical.sprs_reference_power_dbm,
                                     m.filters.bandwidth_ghz, m.classical.sprs_reference_bandwidth_ghz))
    normalized = np.asarray(interpolate(sc.sprs, grid))
    per_pulse = 0.5 * np.asarray(per_pulse_noise(rate, m.filters.window_ps))
    cols = ("wavelength_nm", "sprs_reference", "sprs_rate_cps", "n_sprs_per_pulse")
    table = list(zip(grid.tolist(), normalized.tolist(), rate.tolist(), per_pulse.reshape(-1).tolist()))
    out.write(f"sprs_scaled.{args.format}", _table(cols, table, args.format))
    print(f"sprs-scale: {len(table)} wavelengths at {sc.plan.aggregate_launch_power_dbm:g} dBm launch")


def _jitter_run(local, remote, sc: Scenario, label: str, args, out: OutputSet):
    a = sc.model.analysis
    off = int(round(sc.clock.offset_ps))
    hist = correlate(local, remote, sc.model.filters.window_ps, sc.clock.offset_ps,
                     scan=(off - a.jitter_scan_ps, off + a.jitter_scan_ps))
    cols = ("dt_ps", "count")
    out.write(f"jitter_{label}.{args.format}",
              _table(cols, list(zip(hist.dt.tolist(), hist.counts.tolist())), args.format))
    return extract_jitter(hist)


def cmd_jitter(sc: Scenario, args, out: OutputSet) -> None:
    a = sc.model.analysis
    clock = sc.clock
    single = _jitter_run(*simulate_timing_pair(clock, a.jitter_pulses, a.jitter_rep_rate_hz,
                                               _sub_seed(args.seed, 1), shared_tdc=True),
                         sc, "single_tdc", args, out)
    combined = _jitter_run(*simulate_timing_pair(clock, a.jitter_pulses, a.jitter_rep_rate_hz,
                                                 _sub_seed(args.seed, 2), shared_tdc=False),
                           sc, "two_tdc", args, out)
    added = quadrature_difference(combined.rms_ps, single.rms_ps)

    def stderr(est):
        return est.rms_ps / np.sqrt(2.0 * est.n_events)

    doc = {
        "single_tdc_rms_ps": single.rms_ps,
        "single_tdc_stderr_ps": stderr(single),
        "two_tdc_rms_ps": combined.rms_ps,
        "two_tdc_stderr_ps": stderr(combined),
        "sync_added_rms_ps": added,
        "two_tdc_center_ps": combined.center_ps,
        "pulses": a.jitter_pulses,
        "configured": {"sigma_tdc_ps": clock.sigma_tdc_ps, "sigma_sync_ps": clock.sigma_sync_ps,
                       "expected_two_tdc_ps": clock.sigma_combined_ps},
    }
    out.write("jitter.json", _dumps(doc))
    print(f"jitter: single TDC {single.rms_ps:.3f} ps, two TDCs {combined.rms_ps:.3f} ps, "
          f"sync adds {added:.3f} ps")


def cmd_fringe(sc: Scenario, args, out: OutputSet) -> None:
    a = sc.model.analysis
    thetas = np.linspace(0.0, 180.0, a.fringe_points, endpoint=False).tolist()
    seconds = args.seconds if args.seconds is not None else a.fringe_seconds
    base = sc.sim_config(seconds, seed=args.seed)
    rows, summary = [], {}
    for k, basis in enumerate(FRINGE_BASES):
        cfg = replace(base, spawn_key=(k,))
        recs = fringe_from_events(cfg, basis, thetas, seconds)
        expected = []
        for r in recs:
            point = replace(cfg, local=r.local, remote=r.remote)
            expected.append(analytic_rates(point).coincidence * cfg.n_pulses)
        mc = _mc_visibility(recs, a.replicas, _sub_seed(args.seed, 10 + k))
        exp_v = fringe_visibility([replace(r, counts=e) for r, e in zip(recs, expected)])
        summary[basis] = {"visibility": _mc_doc(mc), "expected_visibility": exp_v}
        for r, e in zip(recs, expected):
            rows.append((basis, r.local.hwp, r.counts, e, r.seconds))
    cols = ("remote_basis", "hwp_deg", "coincidences", "expected", "seconds")
    out.write(f"fringe.{args.format}", _table(cols, rows, args.format))
    summary["mean_visibility"] = float(np.mean([summary[b]["visibility"]["value"] for b in FRINGE_BASES]))
    out.write("fringe_summary.json", _dumps(summary))
    parts = ", ".join(f"{b} {summary[b]['visibility']['value']:.4f}" for b in FRINGE_BASES)
    print(f"fringe: visibilities {parts}")


def _mc_visibility(recs, replicas: int, seed: int) -> MonteCarloResult:
    return monte_carlo_errors(recs, fringe_visibility, replicas, seed)


def _tomography_counts(sc: Scenario, seconds: float, seed: int):
    """Poisson tomography counts from the rate model in all 16 settings."""
    rng = np.random.default_rng(seed)
    base = sc.sim_config(seconds)
    recs = []
    for local, remote in tomography_settings():
        mean = analytic_rates(replace(base, local=local, remote=remote)).coincidence * base.n_pulses
        recs.append(CountRecord(local, remote, float(rng.poisson(mean)), seconds))
    return recs


def _replica_states(recs, n: int, seed: int):
    return [tomography_reconstruct(r) for r in poisson_replicas(recs, n, seed)]


def _mc_from(point: float, samples: Sequence[float]) -> MonteCarloResult:
    s = np.asarray(samples, dtype=float)
    return MonteCarloResult(point, float(s.mean()), float(s.std(ddof=1)), s)


def cmd_tomography(sc: Scenario, args, out: OutputSet) -> None:
    a = sc.model.analysis
    seconds = args.seconds if args.seconds is not None else a.tomography_seconds
    bell = pure_state(BELL_STATES[sc.model.state.bell])
    if args.counts is not None:
        recs = records_from_csv(Path(args.counts).read_text())
    else:
        recs = _tomography_counts(sc, seconds, _sub_seed(args.seed, 20))
    rho = tomography_reconstruct(recs)
    reps = _replica_states(recs, a.replicas, _sub_seed(args.seed, 21))
    f_bell = _mc_from(fidelity(rho, bell), [fidelity(s, bell) for s in reps])
    doc = {"fidelity_bell": _mc_doc(f_bell), "purity": rho.purity, "settings": len(recs)}
    out.write(f"tomography_counts.{args.format}", _records_table(recs, args.format))
    out.write("density_matrix.json", state_to_json(rho))
    if args.counts is None and not sc.dark_fiber:
        dark = sc.with_overrides(dark_fiber=True)
        recs_d = _tomography_counts(dark, seconds, _sub_seed(args.seed, 22))
        rho_d = tomography_reconstruct(recs_d)
        reps_d = _replica_states(recs_d, a.replicas, _sub_seed(args.seed, 23))
        f_d_bell = _mc_from(fidelity(rho_d, bell), [fidelity(s, bell) for s in reps_d])
        f_cross = _mc_from(fidelity(rho, rho_d), [fidelity(x, y) for x, y in zip(reps, reps_d)])
        doc["dark_fiber"] = {"fidelity_bell": _mc_doc(f_d_bell), "purity": rho_d.purity}
        doc["fidelity_to_dark_fiber"] = _mc_doc(f_cross)
        out.write(f"tomography_counts_dark.{args.format}", _records_table(recs_d, args.format))
        out.write("density_matrix_dark.json", state_to_json(rho_d))
    out.write("tomography.json", _dumps(doc))
    msg = f"tomography: Bell fidelity {f_bell.point:.4f} +- {f_bell.std:.4f}"
    if "fidelity_to_dark_fiber" in doc:
        fc = doc["fidelity_to_dark_fiber"]
        msg += f", fidelity to dark-fiber state {fc['value']:.4f} +- {fc['mc_std']:.4f}"
    print(msg)


def _records_table(recs, fmt: str) -> str:
    if fmt == "csv":
        return records_to_csv(recs)
    return _dumps([
        {"local_qwp": r.local.qwp, "local_hwp": r.local.hwp, "remote_qwp": r.remote.qwp,
         "remote_hwp": r.remote.hwp, "counts": r.counts, "seconds": r.seconds}
        for r in recs
    ])


def cmd_allocate(sc: Scenario, args, out: OutputSet) -> None:
    al = sc.model.allocation
    req = AllocationRequest(tuple(al.band_nm), al.step_nm, al.objective,
                            tuple(tuple(e) for e in al.exclusions_nm), al.min_guard_ghz)
    sprs = None if sc.dark_fiber else sc.sprs
    params = sc.link_params()
    anchor = sc.model.analysis.anchor_snr
    single = allocate(req, params, sc.loss, sprs, sc.plan, anchor)
    pair = pair_allocate(req, sc.model.source.pump_nm, params, sc.loss, sprs, sc.plan, anchor,
                         pump_guard_ghz=al.pump_guard_ghz)
    out.write("allocation.json", _dumps({"single": json.loads(single.to_json()),
                                         "pair": json.loads(pair.to_json())}))
    if args.format == "csv":
        cols = ("rank", "wavelength_nm", "V", "SNR", "loss_dB", "sprs")
        rows = [(i, e.wavelength, e.visibility, e.snr, e.loss_db, e.sprs)
                for i, e in enumerate(single.entries, start=1)]
        out.write("allocation.csv", _table(cols, rows, "csv"))
    print(single.table(limit=5))
    s, i = pair.chosen
    print(f"allocate: single channel {single.chosen:g} nm; pair signal {s:g} nm / idler {i:g} nm")


def cmd_simulate(sc: Scenario, args, out: OutputSet) -> None:
    seconds = args.seconds if args.seconds is not None else sc.model.analysis.simulate_seconds
    cfg = sc.sim_config(seconds, seed=args.seed)
    local, remote = simulate(cfg)
    out.write_with("events.bin", lambda p: write_events(p, local, remote))
    if args.format == "csv":
        out.write("events.csv", events_to_csv(local, remote))
    g = gated_counts(local, remote, cfg)
    e = analytic_rates(cfg)
    doc = {
        "pulses": cfg.n_pulses,
        "events": {"local": len(local), "remote": len(remote)},
        "gated": {"singles_local": g.singles_local, "singles_remote": g.singles_remote,
                  "coincidences": g.coincidences},
        "expected": {"singles_local": e.s_local * cfg.n_pulses, "singles_remote": e.s_remote * cfg.n_pulses,
                     "coincidences": e.coincidence * cfg.n_pulses},
    }
    out.write("simulate.json", _dumps(doc))
    print(f"simulate: {cfg.n_pulses} pulses, {len(local)} local / {len(remote)} remote events, "
          f"{g.coincidences} gated coincidences")


def cmd_correlate(sc: Scenario, args, out: OutputSet) -> None:
    path = Path(args.events)
    streams = events_from_csv(path.read_text()) if path.suffix == ".csv" else read_events(path)
    if LOCAL not in streams or REMOTE not in streams:
        raise EstimationError("event file must contain both local and remote events")
    local, remote = streams[LOCAL], streams[REMOTE]
    if args.local_channel is not None:
        local = local.select(args.local_channel)
    if args.remote_channel is not None:
        remote = remote.select(args.remote_channel)
    window = args.window_ps if args.window_ps is not None else sc.model.filters.window_ps
    offset = args.offset_ps if args.offset_ps is not None else sc.clock.offset_ps
    half = args.scan_ps if args.scan_ps is not None else int(np.ceil(window))
    off = int(round(offset))
    hist = correlate(local, remote, window, offset, scan=(off - half, off + half))
    out.write(f"histogram.{args.format}",
              _table(("dt_ps", "count"), list(zip(hist.dt.tolist(), hist.counts.tolist())), args.format))
    doc = {"coincidences": hist.coincidences, "window_ps": window, "offset_ps": offset,
           "local_events": len(local), "remote_events": len(remote)}
    try:
        j = extract_jitter(hist)
        doc["peak"] = {"rms_ps": j.rms_ps, "center_ps": j.center_ps, "events": j.n_events}
    except EstimationError as exc:
        doc["peak"] = None
        log.info("no jitter estimate: %s", exc)
    out.write("correlate.json", _dumps(doc))
    print(f"correlate: {hist.coincidences} coincidences in a {window:g} ps window")


# --- argument parsing ------------------------------------------------------------

def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="scenario YAML (default: the shipped reference scenario)")
    common.add_argument("--seed", type=_u64, default=None, help="override the scenario seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="format of tabular outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    physics = argparse.ArgumentParser(add_help=False)
    physics.add_argument("--power-dbm", type=float, default=None, help="override the classical launch power")
    physics.add_argument("--dark-fiber", action="store_true", help="switch the classical traffic off")

    wavelength = argparse.ArgumentParser(add_help=False)
    wavelength.add_argument("--lambda-nm", type=float, default=None, help="evaluate a single wavelength")

    duration = argparse.ArgumentParser(add_help=False)
    duration.add_argument("--seconds", type=float, default=None, help="override the integration time")

    p = argparse.ArgumentParser(prog="qcoexist", description="Quantum/classical fiber coexistence toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common, physics, wavelength],
                   help="visibility and SNR versus signal wavelength")
    sub.add_parser("sprs-scale", parents=[common, physics, wavelength],
                   help="Raman spectrum rescaled to the configured launch power")
    sub.add_parser("jitter", parents=[common], help="single- and two-tagger timing histograms")
    sub.add_parser("fringe", parents=[common, physics, duration],
                   help="simulated two-photon fringes in four remote bases")
    t = sub.add_parser("tomography", parents=[common, physics, duration],
                       help="density matrix reconstruction with Monte Carlo errors")
    t.add_argument("--counts", type=Path, default=None, help="measured counts CSV instead of synthetic data")
    sub.add_parser("allocate", parents=[common, physics], help="rank quantum channel wavelengths")
    sub.add_parser("simulate", parents=[common, physics, duration], help="write raw time-tag streams")
    c = sub.add_parser("correlate", parents=[common], help="coincidence histogram of an event file")
    c.add_argument("--events", required=True, help="event file (.bin or .csv)")
    c.add_argument("--window-ps", type=float, default=None)
    c.add_argument("--offset-ps", type=float, default=None)
    c.add_argument("--scan-ps", type=int, default=None, help="half-width of the histogram range")
    c.add_argument("--local-channel", type=int, default=None)
    c.add_argument("--remote-channel", type=int, default=None)
    return p


COMMANDS = {
    "sweep": cmd_sweep,
    "sprs-scale": cmd_sprs_scale,
    "jitter": cmd_jitter,
    "fringe": cmd_fringe,
    "tomography": cmd_tomography,
    "allocate": cmd_allocate,
    "simulate": cmd_simulate,
    "correlate": cmd_correlate,
}

_NUMERICAL = (ModelValidityError, UndefinedVisibilityError, EstimationError, DegenerateDataError)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, _NUMERICAL):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValueError, OSError)):
        return EXIT_VALIDATION
    raise exc


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = OutputSet(args.out)
    try:
        config = args.config if args.config is not None else reference_scenario_path()
        sc = load_scenario(config)
        sc = sc.with_overrides(getattr(args, "power_dbm", None), getattr(args, "dark_fiber", False) or None)
        if args.seed is None:
            args.seed = sc.model.seed
        if getattr(args, "seconds", None) is not None and not args.seconds > 0:
            raise ValueError("--seconds must be positive")
        COMMANDS[args.command](sc, args, out)
        outputs = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in out.written}
        manifest = {
            "command": args.command,
            "argv": list(sys.argv[1:] if argv is None else argv),
            "config": str(config),
            "config_sha256": sc.config_sha256,
            "seed": args.seed,
            "versions": _versions(),
            "outputs": outputs,
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        out.write("manifest.json", _dumps(manifest))
    except Exception as exc:
        out.rollback()
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
