"""
Command-line entry point.

    gemsim <subcommand> [--scenario NAME|PATH] [--seed N] [--out DIR] [--override key=value ...]

Every CSV starts with ``#`` comment lines recording the subcommand, seed and
the fully resolved scenario (one JSON line), so each file documents how it
was made.  Errors are reported as one JSON object on stderr.

Exit codes: 0 success, 1 unexpected failure, 2 invalid input (bad flags,
scenario or parameters), 3 a module failed while running (divergence, fit,
malformed stream, ...).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import events, lock, memory, spectral
from .errors import ConfigurationError, GemsimError
from .scenario import Scenario, load_scenario

FIGURES = ("fig1", "fig2", "fig3", "figS3", "figS4", "figS5")
NO_CLONING = 0.5
# chain pairs whose cascade is the coincidence basis
DUAL_ARMS = (("herald", "memory"), ("herald_supplementary", "memory_supplementary"))


# =============================================================================
# Output helpers
# =============================================================================


class Writer:
    def __init__(self, out: Path, command: str, scenario: Scenario, seed: int):
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.header = [
            f"gemsim {command}",
            f"scenario: {scenario.name}",
            f"seed: {seed}",
            "config: " + json.dumps(scenario.data, sort_keys=True, default=str),
        ]
        self.written = []

    def csv(self, name: str, columns: Sequence[str], rows, extra: Iterable[str] = ()) -> Path:
        path = self.out / name
        lines = [f"# {h}" for h in (*self.header, *extra)]
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        path.write_text("\n".join(lines) + "\n")
        self.written.append(str(path))
        return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.10g}"
    return str(v)


# =============================================================================
# Shared pipelines
# =============================================================================


def _spectral_fractions(sc: Scenario) -> list:
    """(label, fraction, aligned) for every filter chain, plus the two-arm cascade."""
    spdc = sc.source()
    rows = []
    for name in sc.chain_names():
        if sc.evaluate_at(name) is not None:
            continue
        r = spectral.central_mode_fraction(spdc, sc.chain(name))
        rows.append((name, r.fraction, r.aligned))
    names = sc.chain_names()
    for a, b in DUAL_ARMS:
        if a in names and b in names:
            r = spectral.central_mode_fraction(spdc, sc.chain(a) + sc.chain(b))
            rows.append((f"{a}+{b}", r.fraction, r.aligned))
    return rows


def _protocol(sc: Scenario, kind: str, storage_time: Optional[float] = None) -> memory.ProtocolResult:
    cfg = sc.memory_config()
    pulse = sc.pulse(kind)
    t = sc.storage_time() if storage_time is None else storage_time
    return memory.run_protocol(cfg, pulse, sc.timing().schedule(pulse.end, t))


def _with_lower(sc: Scenario, storage_time: Optional[float] = None):
    sp = _protocol(sc, "single_photon", storage_time)
    coh = _protocol(sc, "coherent", storage_time)
    return sp.with_lower_window(memory.recall_window(coh), coh), coh


def _summary_row(kind: str, ratio, r: memory.ProtocolResult, t_on: float):
    return (
        kind,
        ratio,
        r.efficiency_lower,
        r.efficiency_reported,
        r.efficiency_upper,
        r.recalled_fraction_time(0.1) - t_on,
        r.peak_power(),
        r.bookkeeping_error,
    )


SUMMARY_COLUMNS = ("kind", "bandwidth_ratio", "eff_lower", "eff_reported", "eff_upper", "t10_after_control_on_s",
                   "peak_power", "bookkeeping_error")


def _counts_pipeline(sc: Scenario, seed: int, tags: Optional[str] = None):
    """Generate (or read) a tag stream and push it through the coincidence analysis."""
    ev = sc.events_section()
    seq = sc.sequence()
    storage = sc.storage_time()
    pulse = sc.pulse("single_photon")
    sp, _ = _with_lower(sc, storage)
    schedule = sc.timing().schedule(pulse.end, storage)
    origin = schedule.decay_origin
    windows = events.herald_windows(schedule, tuple(w - origin for w in sp.windows["lower"]))
    t_on = origin + storage

    if tags is None:
        rt, rp = sp.trace("reported")
        grid = np.linspace(pulse.start, pulse.end, 2001)
        eta = ev.get("memory_efficiency_true")
        truth = events.TruthConfig(
            herald_rate=float(ev["herald_rate"]),
            heralding_efficiency=float(ev["heralding_efficiency"]),
            memory_efficiency_true=sp.efficiency_reported if eta is None else float(eta),
            storage_delay=storage,
            background_rate=float(ev["background_rate"]),
            input_shape=events.Shape(grid - origin, np.abs(pulse(grid)) ** 2),
            recall_shape=events.Shape(rt - t_on, rp),
            control_off_window=storage,
        )
        stream = events.generate_events(
            truth, seq, float(ev.get("duration", seq.period)), seed, float(ev.get("resolution", events.DEFAULT_RESOLUTION))
        )
    else:
        truth = None
        stream = events.read_tags(tags)

    parts = events.sequence_split(stream, seq)
    hw = tuple(float(x) for x in ev.get("histogram_window", (-4e-6, 10e-6)))
    bw = float(ev.get("bin_width", 50e-9))
    first = bool(ev.get("first_only", False))
    hists = {k: events.coincidence_histogram(parts[k], hw, bw, first) for k in ("no_memory", "memory", "no_input")}
    net = events.subtract_background(hists["memory"], hists["no_input"], mode=str(ev.get("scale_mode", "live_time")))
    input_window = (pulse.start - origin, pulse.end - origin + bw)
    eff = events.efficiency_estimate(hists["no_memory"], net, windows, hists["memory"], input_window=input_window)
    return stream, truth, hists, net, eff, windows


def _hist_rows(h: events.CoincidenceHistogram):
    return zip(h.bin_starts, h.counts)


# =============================================================================
# Subcommands
# =============================================================================


def cmd_spectrum(sc: Scenario, w: Writer, args) -> dict:
    if not sc.chain_names():
        raise ConfigurationError("scenario defines no filter chains")
    spdc = sc.source()
    names = sc.chain_names()
    chains = {n: sc.chain(n) for n in names}

    step = spdc.mode_linewidth / 5.0
    half = float(args.zoom_span) / 2.0
    grid = spectral.FrequencyGrid.uniform(2 * half, step, spdc.center_offset)
    dens = spectral.spdc_spectrum(spdc, grid)
    trans = {n: spectral.chain_transmission(c, grid) for n, c in chains.items()}
    cols = ["frequency_hz", "spdc_density"] + [f"T_{n}" for n in names] + [f"filtered_{n}" for n in names]
    rows = np.column_stack([grid.points, dens] + [trans[n] for n in names] + [dens * trans[n] for n in names])
    w.csv("spectrum_zoom.csv", cols, rows)

    extent = 5.0 * spdc.envelope_fwhm if math.isfinite(spdc.envelope_fwhm) else 2 * half
    kmax = int(extent / 2 / spdc.mode_spacing)
    k = np.arange(-kmax, kmax + 1)
    f = spdc.mode_frequency(k)
    mode_rows = np.column_stack([k, f, spdc.envelope_weight(f)] + [spectral.chain_transmission(chains[n], f) for n in names])
    w.csv("spectrum_modes.csv", ["mode_index", "frequency_hz", "envelope_weight"] + [f"T_{n}" for n in names], mode_rows)

    fr = _spectral_fractions(sc)
    supp = [(n, sc.evaluate_at(n), spectral.suppression_db(chains[n], sc.evaluate_at(n))) for n in names
            if sc.evaluate_at(n) is not None]
    w.csv("spectrum_fractions.csv", ["chain", "central_mode_fraction", "aligned"], fr)
    if supp:
        w.csv("spectrum_suppression.csv", ["chain", "frequency_hz", "suppression_db"], supp)
    return {"central_mode_fraction": {n: f for n, f, _ in fr}, "suppression_db": {n: d for n, _, d in supp}}


def cmd_store(sc: Scenario, w: Writer, args) -> dict:
    sp, coh = _with_lower(sc)
    res = sp if args.kind == "single_photon" else coh.with_lower_window(sp.windows["lower"])
    t, p = res.trace()
    g = np.interp(t, res.times, res.gradient)
    c = np.interp(t, res.times, res.control.astype(float)) > 0.5
    eff = dict(lower=res.efficiency_lower, reported=res.efficiency_reported, upper=res.efficiency_upper)
    line = "efficiencies: " + " ".join(f"{k}={v:.6f}" for k, v in eff.items())
    w.csv("store_trace.csv", ["time_s", "output_power", "gradient_sign", "control_on"], zip(t, p, g, c), extra=[line])
    t_on = sc.timing().schedule(sc.pulse().end, sc.storage_time()).events[3].time
    w.csv("store_summary.csv", SUMMARY_COLUMNS, [_summary_row(args.kind, sc.pulse(args.kind).bandwidth_ratio, res, t_on)])
    print(line)
    return {"efficiency": eff, "bookkeeping_error": res.bookkeeping_error}


def _lifetime_runs(sc: Scenario):
    cfg = sc.memory_config()
    return memory.storage_sweep(cfg, sc.pulse("single_photon"), sc.storage_times(), sc.timing(),
                                lower_from=sc.pulse("coherent"))


def _fit_and_crossing(runs):
    data = [(t, r.efficiency_reported) for t, r in runs]
    fit = memory.fit_decay(data)
    lo, hi = min(t for t, _ in data), max(t for t, _ in data)
    try:
        crossing = memory.threshold_crossing(fit, NO_CLONING, lo, hi)
    except ConfigurationError:
        crossing = math.nan
    return fit, crossing


def cmd_lifetime(sc: Scenario, w: Writer, args) -> dict:
    runs = _lifetime_runs(sc)
    fit, crossing = _fit_and_crossing(runs)
    extra = [f"fit: eta0={fit.eta0:.6g} tau_s={fit.tau:.6g} p={fit.p} no_cloning_crossing_s={crossing:.6g}"]
    rows = [(t, r.efficiency_lower, r.efficiency_reported, r.efficiency_upper) for t, r in runs]
    w.csv("lifetime.csv", ["storage_time_s", "eff_lower", "eff_reported", "eff_upper"], rows, extra=extra)
    return {"fit": {"eta0": fit.eta0, "tau_s": fit.tau, "p": fit.p}, "no_cloning_crossing_s": crossing}


def cmd_counts(sc: Scenario, w: Writer, args) -> dict:
    stream, truth, hists, net, eff, windows = _counts_pipeline(sc, args.seed, args.tags)
    if args.write_tags:
        events.write_tags(stream, args.write_tags, args.tag_format)
    for key, name in (("no_memory", "input"), ("memory", "memory"), ("no_input", "no_input")):
        w.csv(f"counts_{name}.csv", ["bin_start_s", "counts"], _hist_rows(hists[key]))
    w.csv("counts_net.csv", ["bin_start_s", "counts", "variance"], zip(net.bin_starts, net.counts, net.variance))
    rows = [(k, e.value, e.sigma, e.interval[0], e.interval[1], e.raw_counts, e.background_counts, e.input_counts)
            for k, e in eff.items()]
    extra = [f"truth_memory_efficiency: {truth.memory_efficiency_true:.6f}"] if truth is not None else []
    w.csv("counts_efficiency.csv", ["window", "efficiency", "sigma", "t_start_s", "t_end_s", "raw_counts",
                                    "background_counts", "input_counts"], rows, extra=extra)
    return {k: {"value": e.value, "sigma": e.sigma} for k, e in eff.items()}


def cmd_lock(sc: Scenario, w: Writer, args) -> dict:
    d = sc.section("lock")
    trace = lock.simulate_lock(sc.landscape(), sc.lock_params(), int(d.get("n_updates", 10000)), args.seed,
                               float(d.get("start_offset", 0.0)))
    rms = trace.rms_error()
    extra = [f"rms_tracking_error_hz: {rms:.6g}", f"capture_losses: {len(trace.capture_losses)}"]
    w.csv("lock.csv", ["t_s", "offset_hz", "peak_hz", "counts"], zip(trace.t, trace.offset, trace.peak, trace.counts),
          extra=extra)
    return {"rms_tracking_error_hz": rms, "capture_losses": len(trace.capture_losses),
            "linewidth_hz": sc.landscape().linewidth}


def _traces_grid(results, step=5e-9):
    lo = min(r.times[0] for r in results)
    hi = min(r.times[-1] for r in results)
    n = int((hi - lo) / step) + 1
    return lo + step * np.arange(n)


def reproduce(sc: Scenario, w: Writer, figure: str, seed: int) -> dict:
    if figure == "fig1":
        sp, coh = _with_lower(sc)
        pulse = sc.pulse()
        grid = _traces_grid([sp, coh])
        t_on = sc.timing().schedule(pulse.end, sc.storage_time()).events[3].time
        w.csv("fig1_traces.csv", ["time_s", "input_power", "output_power_single_photon", "output_power_coherent",
                                  "gradient_sign", "control_on"],
              zip(grid, np.abs(pulse(grid)) ** 2, memory.uniform_trace(sp, grid), memory.uniform_trace(coh, grid),
                  np.interp(grid, sp.times, sp.gradient), np.interp(grid, sp.times, sp.control.astype(float)) > 0.5))
        rows = [_summary_row("single_photon", sc.pulse("single_photon").bandwidth_ratio, sp, t_on),
                _summary_row("coherent", sc.pulse("coherent").bandwidth_ratio,
                             coh.with_lower_window(sp.windows["lower"]), t_on)]
        w.csv("fig1_summary.csv", SUMMARY_COLUMNS, rows)
        return {"single_photon_reported": sp.efficiency_reported, "coherent_reported": coh.efficiency_reported}
    if figure == "fig2":
        rows = []
        for t in sc.storage_times():
            for kind in ("single_photon", "coherent"):
                r = _protocol(sc, kind, t)
                t_on = sc.timing().schedule(sc.pulse(kind).end, t).events[3].time
                lo, hi = r.windows["upper"]
                grid = np.arange(lo, hi, 5e-9)
                for ti, pi in zip(grid - t_on, memory.uniform_trace(r, grid)):
                    rows.append((t, kind, ti, pi))
        w.csv("fig2_traces.csv", ["storage_time_s", "kind", "time_after_control_on_s", "output_power"], rows)
        return {"rows": len(rows)}
    if figure in ("fig3", "figS4"):
        runs = _lifetime_runs(sc)
        fit, crossing = _fit_and_crossing(runs)
        extra = [f"fit: eta0={fit.eta0:.6g} tau_s={fit.tau:.6g} p={fit.p} no_cloning_crossing_s={crossing:.6g}"]
        if figure == "fig3":
            rows = [(t, r.efficiency_reported, r.reference.efficiency_reported) for t, r in runs]
            w.csv("fig3.csv", ["storage_time_s", "eff_reported", "eff_reported_coherent"], rows, extra=extra)
        else:
            rows = [(t, r.efficiency_lower, r.efficiency_reported, r.efficiency_upper) for t, r in runs]
            w.csv("figS4.csv", ["storage_time_s", "eff_lower", "eff_reported", "eff_upper"], rows, extra=extra)
        return {"eff_reported": {f"{t:.3g}": r.efficiency_reported for t, r in runs}, "no_cloning_crossing_s": crossing}
    if figure == "figS3":
        spdc = sc.source()
        herald = sc.chain("herald")
        etalon_only = spectral.FilterChain(tuple(e for e in herald.elements if e.kind == "airy_etalon"), "etalon")
        cavity_only = spectral.FilterChain(tuple(e for e in herald.elements if e.kind == "lorentzian_cavity"), "cavity")
        parts = {"cavity": cavity_only, "etalon": etalon_only, "combined": herald}
        kmax = int(2.5 * spdc.envelope_fwhm / spdc.mode_spacing)
        k = np.arange(-kmax, kmax + 1)
        f = spdc.mode_frequency(k)
        wgt = spdc.envelope_weight(f)
        w.csv("figS3_modes.csv", ["mode_index", "frequency_hz", "unfiltered"] + [f"filtered_{n}" for n in parts],
              np.column_stack([k, f, wgt] + [wgt * spectral.chain_transmission(c, f) for c in parts.values()]))
        grid = spectral.FrequencyGrid.uniform(4 * spdc.mode_spacing, spdc.mode_linewidth / 5.0, spdc.center_offset)
        dens = spectral.spdc_spectrum(spdc, grid)
        w.csv("figS3_zoom.csv", ["frequency_hz", "unfiltered"] + [f"filtered_{n}" for n in parts],
              np.column_stack([grid.points, dens] + [dens * spectral.chain_transmission(c, grid) for c in parts.values()]))
        fr = {n: spectral.central_mode_fraction(spdc, c, extent=None).fraction for n, c in parts.items()
              if c.elements}
        w.csv("figS3_fractions.csv", ["filter", "central_mode_fraction"], fr.items())
        return {"central_mode_fraction": fr}
    if figure == "figS5":
        _, _, hists, net, eff, _ = _counts_pipeline(sc, seed)
        scale = hists["memory"].live_time / hists["no_input"].live_time
        w.csv("figS5.csv", ["bin_start_s", "no_input_scaled", "raw_recall", "net"],
              zip(net.bin_starts, scale * hists["no_input"].counts, hists["memory"].counts, net.counts))
        return {k: {"value": e.value, "sigma": e.sigma} for k, e in eff.items()}
    raise ConfigurationError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")


def cmd_reproduce(sc: Scenario, w: Writer, args) -> dict:
    return reproduce(sc, w, args.figure, args.seed)


# =============================================================================
# Entry point
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", default="paper", help="bundled name, name in $GEMSIM_SCENARIO_DIR, or path")
    common.add_argument("--seed", type=int, default=0, help="RNG seed (u64)")
    common.add_argument("--out", default="gemsim_out", help="output directory")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted scenario key to replace, e.g. memory.grid_z=512")

    parser = argparse.ArgumentParser(prog="gemsim", description="Gradient echo memory and single-photon pipeline simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("spectrum", parents=[common], help="filter-chain spectra and central-mode isolation")
    p.add_argument("--zoom-span", type=float, default=3e9, help="width of the resolved spectrum around the centre (Hz)")
    p.set_defaults(func=cmd_spectrum)
    p = sub.add_parser("store", parents=[common], help="one write/store/recall run")
    p.add_argument("--kind", choices=("single_photon", "coherent"), default="single_photon")
    p.set_defaults(func=cmd_store)
    p = sub.add_parser("lifetime", parents=[common], help="efficiency versus storage time")
    p.set_defaults(func=cmd_lifetime)
    p = sub.add_parser("counts", parents=[common], help="Monte Carlo tags and coincidence analysis")
    p.add_argument("--tags", help="analyse this tag file instead of generating one")
    p.add_argument("--write-tags", help="also write the stream to this tag file")
    p.add_argument("--tag-format", choices=("binary", "text"), default="binary")
    p.set_defaults(func=cmd_counts)
    p = sub.add_parser("lock", parents=[common], help="closed-loop dither lock simulation")
    p.set_defaults(func=cmd_lock)
    p = sub.add_parser("reproduce", parents=[common], help="data behind one figure")
    p.add_argument("figure", choices=FIGURES)
    p.set_defaults(func=cmd_reproduce)
    return parser


def _error(exc: BaseException, code: int) -> int:
    report = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(report), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed < 0 or args.seed >= 2**64:
        return _error(ConfigurationError("--seed must be an unsigned 64-bit integer"), 2)
    try:
        sc = load_scenario(args.scenario, args.override)
        writer = Writer(Path(args.out), args.command + (f" {args.figure}" if args.command == "reproduce" else ""),
                        sc, args.seed)
        summary = args.func(sc, writer, args)
    except GemsimError as exc:
        return _error(exc, exc.exit_code)
    except Exception as exc:  # pragma: no cover - last-resort report
        return _error(exc, 1)
    print(json.dumps({"command": args.command, "outputs": writer.written, "summary": summary}, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
