"""End-to-end runs shared by the CLI and the acceptance checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .engine import (DELTAS, CoincidenceDistribution, EngineConfig, OutcomeCalibration,
                     calibrate, coincidence_distribution)
from .histogram import (Coincidences, Histogram, build_histogram, combine_fits,
                        find_coincidences, fit_visibility, integrate_peaks, net_correction,
                        peak_port_counts)
from .physical import EventStream, StrategyPairModel, accidental_rate, simulate_experiment
from .witness import (BASIS_PEAKS, WITNESS_PEAKS, SMetricReport, StrategyTable, named_strategy,
                      s_from_correlations, s_from_measurements)


class InsufficientStatistics(Exception):
    """A required peak has too few counts for the requested analysis."""


def resolve_strategy(spec: str | None, calibration: OutcomeCalibration) -> StrategyTable | None:
    if spec is None:
        return None
    if spec.lower() in ("a", "b", "c"):
        return named_strategy(spec.lower(), calibration)
    return StrategyTable.parse(spec)


def simulate(cfg: RunConfig, engine: EngineConfig, duration: float, seed,
             strategy: StrategyTable | None = None) -> EventStream:
    model = None if strategy is None else StrategyPairModel(strategy)
    return simulate_experiment(engine, cfg.weights(), cfg.source_params(), cfg.channel_params(),
                               cfg.detector_params("alice"), cfg.detector_params("bob"),
                               duration, seed, model=model, workers=cfg.workers)


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        from .config import ConfigError
        raise ConfigError(["seed: required for simulation subcommands (set it or pass --seed)"])
    return cfg.seed


@dataclass
class HistogramRun:
    stream: EventStream
    coincidences: Coincidences
    histogram: Histogram
    peaks: dict
    port_counts: np.ndarray

    def summary(self, cfg: RunConfig) -> dict:
        total = sum(self.peaks.values())
        return {
            "bin_separation_ns": cfg.engine.bin_separation * 1e9,
            "window_ns": cfg.analysis.window * 1e9,
            "coincidences_in_range": self.histogram.total,
            "coincidences_in_windows": total,
            "peaks": {str(d): {"counts": n, "fraction": (n / total) if total else None}
                      for d, n in self.peaks.items()},
            "populated_peaks": [d for d, n in self.peaks.items() if n > 0],
            "singles_rate": {"A": self.stream.singles_rate(0), "B": self.stream.singles_rate(1)},
            "duration": self.stream.duration,
            "source_mode": cfg.engine.source_mode,
        }


def run_histogram(cfg: RunConfig, strategy: str | None = None) -> HistogramRun:
    seed = _require_seed(cfg)
    engine = cfg.engine_config()
    table = resolve_strategy(strategy, calibrate(engine.phase_a, engine.phase_b, engine.source_mode))
    stream = simulate(cfg, engine, cfg.duration, np.random.SeedSequence([seed, 0]), table)
    a = cfg.analysis
    coinc = find_coincidences(stream, a.histogram_range)
    hist = build_histogram(coinc, a.histogram_bin_width, a.histogram_range)
    peaks = integrate_peaks(hist, engine.bin_separation, a.window)
    counts = peak_port_counts(coinc, engine.bin_separation, a.window)
    return HistogramRun(stream, coinc, hist, peaks, counts)


@dataclass
class PeakFringe:
    """Fits of one peak's four port-pair fringes and their combination."""

    delta: int
    fits: dict                  # (pa, pb) -> VisibilityFit on raw counts
    net_fits: dict              # (pa, pb) -> VisibilityFit after accidental subtraction
    visibility: float
    visibility_err: float
    net_visibility: float
    net_visibility_err: float

    @property
    def phase_offset(self) -> float:
        return self.fits[(0, 0)].phase_offset


@dataclass
class ScanRun:
    phase_b: float
    phases: np.ndarray
    counts: np.ndarray          # [point, delta + 3, pa, pb]
    accidental: np.ndarray      # expected accidental counts per window and port pair, per point
    fringes: dict = field(default_factory=dict)
    singles: np.ndarray = None  # [point, party] rates

    @property
    def coincidences(self) -> int:
        return int(self.counts.sum())

    def peak_counts(self) -> np.ndarray:
        return self.counts.sum(axis=(0, 2, 3))

    def rows(self):
        for i, phi in enumerate(self.phases):
            for d in DELTAS:
                fr = self.fringes.get(d)
                for pa in (0, 1):
                    for pb in (0, 1):
                        fit = None if fr is None else fr.fits[(pa, pb)]
                        yield (float(phi), d, pa, pb, int(self.counts[i, d + 3, pa, pb]),
                               None if fit is None else float(fit.predict([phi])[0]),
                               None if fit is None else fit.visibility,
                               None if fit is None else fit.phase_offset)


def _empty_window_accidentals(counts: np.ndarray, dist: CoincidenceDistribution) -> np.ndarray | None:
    """Mean counts per window and port pair in peaks the engine predicts empty."""
    empty = [d for d in DELTAS if dist.peak_total(d) == 0]
    if not empty:
        return None
    idx = [d + 3 for d in empty]
    return counts[:, idx].sum(axis=(1, 2, 3)) / (4.0 * len(idx))


def singles_accidentals(stream: EventStream, window: float) -> float:
    """Expected accidental counts per window from the measured singles (free-running)."""
    r = accidental_rate(stream.singles_rate(0), stream.singles_rate(1), window)
    return r * stream.duration


def analyse_scan(phases, counts, phase_b, accidental) -> ScanRun:
    run = ScanRun(phase_b, np.asarray(phases, dtype=float), counts, np.asarray(accidental, float))
    for d in DELTAS:
        per = counts[:, d + 3]
        if per.sum() == 0:
            continue
        fits, nets = {}, {}
        for pa in (0, 1):
            for pb in (0, 1):
                y = per[:, pa, pb]
                fits[(pa, pb)] = fit_visibility(np.column_stack([run.phases, y]))
                nets[(pa, pb)] = net_correction(np.column_stack([run.phases, y]),
                                                run.accidental).fit
        v, ve = combine_fits(fits.values())
        nv, nve = combine_fits(nets.values())
        run.fringes[d] = PeakFringe(d, fits, nets, v, ve, nv, nve)
    return run


def run_scan(cfg: RunConfig, phase_b: float, points: int | None = None,
             strategy: StrategyTable | None = None, stream_seed_tag: int = 1) -> ScanRun:
    """Sweep Alice's phase over one period at fixed ``phase_b``."""
    seed = _require_seed(cfg)
    points = points or cfg.analysis.scan_points
    phases = np.linspace(0.0, 2 * math.pi, points, endpoint=False)
    per_point = cfg.duration / points
    base = cfg.engine_config(phase_b=phase_b)
    dist = coincidence_distribution(base, cfg.weights())
    counts = np.zeros((points, 7, 2, 2), dtype=np.int64)
    singles = np.zeros((points, 2))
    acc_singles = np.zeros(points)
    tag = int(round(phase_b * 1e6))
    for i, phi in enumerate(phases):
        seq = np.random.SeedSequence([seed, stream_seed_tag, tag & 0xFFFFFFFF, i])
        stream = simulate(cfg, base.with_phases(phi), per_point, seq, strategy)
        coinc = find_coincidences(stream, cfg.analysis.histogram_range)
        counts[i] = peak_port_counts(coinc, base.bin_separation, cfg.analysis.window)
        singles[i] = stream.singles_rate(0), stream.singles_rate(1)
        acc_singles[i] = singles_accidentals(stream, cfg.analysis.window) / 4.0
    acc = _empty_window_accidentals(counts, dist)
    if acc is None or cfg.bob.mode == "free_running" and cfg.alice.mode == "free_running":
        acc = acc_singles
    run = analyse_scan(phases, counts, phase_b, acc)
    run.singles = singles
    return run


def _require_counts(peak_counts) -> None:
    """The witness needs every peak of T0, T+-1 and T+-2 populated."""
    peak_counts = np.asarray(peak_counts)
    for x in BASIS_PEAKS + WITNESS_PEAKS:
        if peak_counts[x + 3] == 0:
            raise InsufficientStatistics(f"no coincidences in T{x:+d}")


def witness_from_scan(scan: ScanRun, threshold_sigmas: float = 5.0) -> SMetricReport:
    peak_counts = scan.peak_counts()
    _require_counts(peak_counts)
    used = [x for x in BASIS_PEAKS + WITNESS_PEAKS if x in scan.fringes]
    vis = {x: scan.fringes[x].visibility for x in used}
    err = {x: scan.fringes[x].visibility_err for x in used}
    return s_from_measurements(peak_counts, vis, err, threshold_sigmas=threshold_sigmas)


@dataclass
class WitnessRun:
    report: SMetricReport
    scan: ScanRun | None
    port_counts: np.ndarray | None
    strategy: StrategyTable | None


def run_witness(cfg: RunConfig, strategy: str | None = None, method: str | None = None) -> WitnessRun:
    """Simulate and evaluate S; ``direct`` uses port correlations at the fixed phases."""
    engine = cfg.engine_config()
    calibration = calibrate(engine.phase_a, engine.phase_b, engine.source_mode)
    table = resolve_strategy(strategy, calibration)
    method = method or cfg.witness.method
    if method == "auto":
        method = "direct" if table is not None else "visibility"
    k = cfg.witness.threshold_sigmas
    if method == "visibility":
        scan = run_scan(cfg, engine.phase_b, strategy=table)
        # fitted fringes report |V|; scan phase zero is the operating point only if phase_a == 0
        return WitnessRun(witness_from_scan(scan, k), scan, None, table)
    seed = _require_seed(cfg)
    stream = simulate(cfg, engine, cfg.duration, np.random.SeedSequence([seed, 2]), table)
    coinc = find_coincidences(stream, cfg.analysis.histogram_range)
    counts = peak_port_counts(coinc, engine.bin_separation, cfg.analysis.window)
    _require_counts(counts.sum(axis=(1, 2)))
    return WitnessRun(s_from_correlations(counts, calibration, k), None, counts, table)


@dataclass
class QKDRun:
    coincidences: Coincidences
    stream: EventStream
    port_counts: np.ndarray
    report: SMetricReport | None
    strategy: StrategyTable | None
    calibration: OutcomeCalibration


def run_qkd(cfg: RunConfig, strategy: str | None = None) -> QKDRun:
    """Fixed-phase passive run: coincidences for sifting plus the direct witness."""
    seed = _require_seed(cfg)
    engine = cfg.engine_config()
    calibration = calibrate(engine.phase_a, engine.phase_b, engine.source_mode)
    table = resolve_strategy(strategy, calibration)
    stream = simulate(cfg, engine, cfg.duration, np.random.SeedSequence([seed, 3]), table)
    coinc = find_coincidences(stream, cfg.analysis.histogram_range)
    counts = peak_port_counts(coinc, engine.bin_separation, cfg.analysis.window)
    try:
        report = s_from_correlations(counts, calibration, cfg.witness.threshold_sigmas)
    except ValueError:
        report = None
    return QKDRun(coinc, stream, counts, report, table, calibration)
