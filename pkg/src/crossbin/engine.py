"""Exact two-photon amplitude model of the cross time-bin source.

The model follows one emitted pair through the transcriber, the 45 degree
PBS, coincidence post-selection and two equally unbalanced two-port
analyzers (Franson configuration).  Detection paths that end in the same
observable signature (relative delay, Alice port, Bob port) are summed
coherently, weighted by the pairwise overlaps in :class:`CoherenceWeights`.

Time is measured in units of the bin separation.  A relative delay
``delta`` is Bob's detection time minus Alice's.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

SHORT, LONG = 0, 1
DELTAS = tuple(range(-3, 4))
SPEED_OF_LIGHT = 299_792_458.0

SourceMode = Literal["transcribed", "bypass"]


class ConfigurationError(ValueError):
    """Raised when an engine configuration cannot produce coincidences."""


class UndefinedCorrelator(ValueError):
    """Raised when a correlator is requested for a peak with zero probability."""


@dataclass(frozen=True)
class EngineConfig:
    """Phases, delays and coherence parameters of the optical setup.

    Times are in seconds, lengths in meters, phases in radians.
    """

    phase_a: float = 0.0
    phase_b: float = 0.0
    transcriber_phase: float = 0.0
    bin_separation: float = 2e-9
    pump_coherence_time: float = 400e-9
    photon_coherence_time: float = 17e-12
    analyzer_mismatch: float = 0.3e-3
    fiber_group_index: float = 1.468
    source_mode: SourceMode = "transcribed"

    def __post_init__(self):
        for name in ("phase_a", "phase_b", "transcriber_phase"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("bin_separation", "pump_coherence_time",
                     "photon_coherence_time", "fiber_group_index"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.analyzer_mismatch >= 0:
            raise ValueError("analyzer_mismatch must be non-negative")
        if self.source_mode not in ("transcribed", "bypass"):
            raise ValueError(f"unknown source_mode {self.source_mode!r}")

    def with_phases(self, phase_a: float, phase_b: float | None = None) -> "EngineConfig":
        from dataclasses import replace
        return replace(self, phase_a=phase_a,
                       phase_b=self.phase_b if phase_b is None else phase_b)

    @property
    def coherence_length(self) -> float:
        """Single-photon coherence length inside the fiber."""
        return SPEED_OF_LIGHT * self.photon_coherence_time / self.fiber_group_index


@dataclass(frozen=True)
class CoherenceWeights:
    """Overlaps between interfering detection paths.

    ``nu`` applies to same-emission paths whose delays were produced by
    different interferometers (the T0 pair).  ``mu`` is the overlap per bin
    of emission-time difference (T+-1 pairs, bypass central peak).
    """

    nu: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        for name in ("nu", "mu"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name}={value} outside [0, 1]")

    @classmethod
    def from_config(cls, config: EngineConfig) -> "CoherenceWeights":
        nu = math.exp(-(config.analyzer_mismatch / config.coherence_length) ** 2)
        mu = math.exp(-config.bin_separation / config.pump_coherence_time)
        return cls(nu=nu, mu=mu)


IDEAL = CoherenceWeights(1.0, 1.0)


@dataclass(frozen=True)
class PathTerm:
    """One term of the source state: an amplitude and the photons' (party, bin)."""

    amplitude: complex
    photons: tuple[tuple[str, int], ...]

    def bins(self, party: str) -> list[int]:
        return [b for p, b in self.photons if p == party]

    @property
    def is_cross(self) -> bool:
        return len(self.bins("A")) == 1 and len(self.bins("B")) == 1


@dataclass(frozen=True)
class TwoPhotonPathSet:
    """Coherent superposition of photon placements for one emitted pair.

    ``probability`` is the weight of this set relative to the full emitted
    state (1 before post-selection).
    """

    paths: tuple[PathTerm, ...]
    probability: float = 1.0

    @property
    def norm(self) -> float:
        return sum(abs(p.amplitude) ** 2 for p in self.paths)


@dataclass(frozen=True)
class DetectionPath:
    """A fully resolved path: source term, both analyzer arms and ports.

    Times are in bins after emission.
    """

    amplitude: complex
    alice_time: int
    alice_port: int
    bob_time: int
    bob_port: int

    @property
    def delta(self) -> int:
        return self.bob_time - self.alice_time

    @property
    def emission_shift(self) -> int:
        # emission bin relative to an Alice detection at bin 0
        return -self.alice_time


def analyzer_amplitude(arm: int, port: int, phase: float) -> complex:
    """Amplitude for a photon entering an analyzer to leave by ``arm``/``port``.

    The long arm picks up ``phase``; the (port 1, long arm) entry carries the
    minus sign that makes the two-port map unitary.
    """
    sign = -1.0 if (port == 1 and arm == LONG) else 1.0
    return 0.5 * sign * cmath.exp(1j * arm * phase)


def build_source_state(config: EngineConfig) -> TwoPhotonPathSet:
    """State after the transcriber and PBS2 (or after the bypass)."""
    if config.source_mode == "bypass":
        return TwoPhotonPathSet((PathTerm(1.0 + 0j, (("A", SHORT), ("B", SHORT))),))
    # every term holds exactly one long-bin photon, so chi is a common factor
    long_phase = cmath.exp(1j * config.transcriber_phase)
    half = 0.5 * long_phase
    terms = (
        PathTerm(+half, (("A", SHORT), ("A", LONG))),
        PathTerm(+half, (("A", SHORT), ("B", LONG))),
        PathTerm(-half, (("A", LONG), ("B", SHORT))),
        PathTerm(-half, (("B", LONG), ("B", SHORT))),
    )
    return TwoPhotonPathSet(terms)


def postselect_cross(state: TwoPhotonPathSet) -> tuple[TwoPhotonPathSet, float]:
    """Keep one-photon-per-party terms; return the renormalized set and its weight."""
    kept = tuple(p for p in state.paths if p.is_cross)
    if not kept:
        raise ConfigurationError("no one-photon-per-party terms to post-select")
    prob = sum(abs(p.amplitude) ** 2 for p in kept) / state.norm
    scale = 1.0 / math.sqrt(prob * state.norm)
    renorm = tuple(PathTerm(p.amplitude * scale, p.photons) for p in kept)
    return TwoPhotonPathSet(renorm, probability=state.probability * prob), prob


def detection_paths(state: TwoPhotonPathSet, config: EngineConfig) -> list[DetectionPath]:
    """Expand every cross term over both analyzers' arms and ports."""
    out = []
    for term in state.paths:
        if not term.is_cross:
            continue
        (a_bin,), (b_bin,) = term.bins("A"), term.bins("B")
        for alpha in (SHORT, LONG):
            for beta in (SHORT, LONG):
                for pa in (0, 1):
                    for pb in (0, 1):
                        amp = (term.amplitude
                               * analyzer_amplitude(alpha, pa, config.phase_a)
                               * analyzer_amplitude(beta, pb, config.phase_b))
                        out.append(DetectionPath(amp, a_bin + alpha, pa, b_bin + beta, pb))
    return out


def _overlap(p: DetectionPath, q: DetectionPath, weights: CoherenceWeights) -> float:
    if p is q:
        return 1.0
    k = p.alice_time - q.alice_time
    if k == 0:
        return weights.nu
    return weights.mu ** abs(k)


@dataclass(frozen=True)
class CoincidenceDistribution:
    """Probability over (delta, Alice port, Bob port) for post-selected pairs.

    ``table[delta + 3, alice_port, bob_port]``.  ``alice_offsets`` maps a
    delta to the Alice detection time (bins after emission) of its earliest
    contributing path; the simulator uses it to place clicks in time.
    """

    table: np.ndarray
    postselection_probability: float
    config: EngineConfig
    alice_offsets: dict = field(default_factory=dict)

    @property
    def entries(self) -> dict[tuple[int, int, int], float]:
        return {(d, a, b): float(self.table[d + 3, a, b])
                for d in DELTAS for a in (0, 1) for b in (0, 1)}

    def peak_total(self, delta: int) -> float:
        return float(self.table[delta + 3].sum())

    def peak_totals(self) -> np.ndarray:
        return self.table.sum(axis=(1, 2))


def coincidence_distribution(config: EngineConfig,
                             weights: CoherenceWeights | None = None) -> CoincidenceDistribution:
    """Port-resolved coincidence probabilities with partial coherence.

    Each signature's probability is ``sum_ij c_i conj(c_j) O_ij`` over the
    detection paths sharing it.
    """
    if weights is None:
        weights = CoherenceWeights.from_config(config)
    elif not isinstance(weights, CoherenceWeights):
        raise TypeError("weights must be CoherenceWeights")
    state = build_source_state(config)
    if config.source_mode == "transcribed":
        state, ps_prob = postselect_cross(state)
    else:
        ps_prob = 1.0

    groups: dict[tuple[int, int, int], list[DetectionPath]] = {}
    offsets: dict[int, int] = {}
    for path in detection_paths(state, config):
        if abs(path.delta) > 3:
            continue
        groups.setdefault((path.delta, path.alice_port, path.bob_port), []).append(path)
        offsets[path.delta] = min(offsets.get(path.delta, path.alice_time), path.alice_time)

    table = np.zeros((7, 2, 2))
    for (delta, pa, pb), paths in groups.items():
        total = 0.0 + 0j
        for p in paths:
            for q in paths:
                total += p.amplitude * q.amplitude.conjugate() * _overlap(p, q, weights)
        table[delta + 3, pa, pb] = max(total.real, 0.0)
    return CoincidenceDistribution(table, ps_prob, config, offsets)


@dataclass(frozen=True)
class OutcomeCalibration:
    """Per-peak sign applied to the raw port correlation.

    Alice's outcome is +1 for port 0.  Bob's outcome is +1 for port 0 unless
    the peak's sign is -1, in which case his labels are swapped for that
    peak (equivalently, his key bit is flipped in that basis).
    """

    signs: tuple[int, ...] = (1,) * 7

    def sign(self, delta: int) -> int:
        return self.signs[delta + 3]

    def flips_bob(self, delta: int) -> bool:
        return self.signs[delta + 3] < 0


def _raw_correlator(table: np.ndarray, delta: int) -> float:
    peak = table[delta + 3]
    total = peak.sum()
    if total <= 0:
        raise UndefinedCorrelator(f"P(T{delta:+d}) = 0")
    return float((peak[0, 0] + peak[1, 1] - peak[0, 1] - peak[1, 0]) / total)


def calibrate(phase_a: float = 0.0, phase_b: float = 0.0,
              source_mode: SourceMode = "transcribed", tol: float = 1e-9) -> OutcomeCalibration:
    """Signs that make the ideal correlators non-negative at the given phases.

    Peaks T+-2 and T+-3 are never relabeled.
    """
    ideal = coincidence_distribution(
        EngineConfig(phase_a=phase_a, phase_b=phase_b, source_mode=source_mode), IDEAL)
    signs = []
    for delta in DELTAS:
        s = 1
        if abs(delta) <= 1 and ideal.peak_total(delta) > 0:
            if _raw_correlator(ideal.table, delta) < -tol:
                s = -1
        signs.append(s)
    return OutcomeCalibration(tuple(signs))


DEFAULT_CALIBRATION = calibrate(0.0, 0.0)
BYPASS_CALIBRATION = calibrate(0.0, 0.0, "bypass")


def correlator(dist: CoincidenceDistribution, delta: int,
               calibration: OutcomeCalibration | None = None) -> float:
    """Calibrated two-party correlation coefficient for peak ``delta``."""
    if calibration is None:
        calibration = (DEFAULT_CALIBRATION if dist.config.source_mode == "transcribed"
                       else BYPASS_CALIBRATION)
    return calibration.sign(delta) * _raw_correlator(dist.table, delta)


@dataclass(frozen=True)
class FringeScan:
    """Engine rates over a grid of Alice phases: ``rates[i, delta + 3, pa, pb]``."""

    phases: np.ndarray
    phase_b: float
    rates: np.ndarray

    def rows(self) -> Iterable[tuple[float, int, int, int, float]]:
        for i, phi in enumerate(self.phases):
            for d in DELTAS:
                for pa in (0, 1):
                    for pb in (0, 1):
                        yield float(phi), d, pa, pb, float(self.rates[i, d + 3, pa, pb])


def fringe_scan(config: EngineConfig, weights: CoherenceWeights | None,
                phase_grid) -> FringeScan:
    """Sweep Alice's phase over ``phase_grid`` with Bob's phase from ``config``."""
    phases = np.asarray(list(phase_grid), dtype=float)
    if phases.size == 0:
        raise ValueError("phase grid is empty")
    rates = np.stack([coincidence_distribution(config.with_phases(phi), weights).table
                      for phi in phases])
    return FringeScan(phases, config.phase_b, rates)
