"""The S quantumness witness under the trusted beam-splitter assumption.

S rewards high correlation in peaks T0 and T+-1, uncorrelated coincidences
in T+-2 and penalizes any T+-3 event::

    S = sum_{x=0,+-1} P_x E_x + 2 sum_{x=+-2} P_x (1 - |E_x|) - sum_{x=+-3} P_x

A classical source that only cannot choose *when* the analyzers fire is
modeled by a :class:`StrategyTable`.  The table maximum is exactly 1; the
ideal cross time-bin source gives 1.25.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import (DEFAULT_CALIBRATION, DELTAS, IDEAL, CoincidenceDistribution,
                     EngineConfig, OutcomeCalibration, calibrate, coincidence_distribution)

CLASSICAL_BOUND = 1.0
QUANTUM_IDEAL = 1.25
BASIS_PEAKS = (-1, 0, 1)
WITNESS_PEAKS = (-2, 2)
ALARM_PEAKS = (-3, 3)

Outcome = Optional[int]   # +1, -1, or None for a fair coin


class WitnessInputError(ValueError):
    """Raised when the statistics needed for S are missing or undefined."""


@dataclass(frozen=True)
class PeakStatistics:
    """Per-peak coincidence probability and calibrated correlator.

    Arrays are indexed by ``delta + 3``; a correlator is ``nan`` where the
    peak probability is zero.
    """

    probabilities: np.ndarray
    correlators: np.ndarray
    counts: Optional[np.ndarray] = None

    def P(self, delta: int) -> float:
        return float(self.probabilities[delta + 3])

    def E(self, delta: int) -> Optional[float]:
        e = self.correlators[delta + 3]
        return None if np.isnan(e) else float(e)

    @classmethod
    def from_table(cls, table: np.ndarray, calibration: OutcomeCalibration,
                   keep_counts: bool = False) -> "PeakStatistics":
        """Build from a ``[delta + 3, alice_port, bob_port]`` table of counts or probabilities."""
        table = np.asarray(table, dtype=float)
        per_peak = table.sum(axis=(1, 2))
        total = per_peak.sum()
        if total <= 0:
            raise WitnessInputError("no coincidences in the seven windows")
        corr = np.full(7, np.nan)
        for d in DELTAS:
            n = per_peak[d + 3]
            if n > 0:
                t = table[d + 3]
                corr[d + 3] = calibration.sign(d) * (t[0, 0] + t[1, 1] - t[0, 1] - t[1, 0]) / n
        return cls(per_peak / total, corr, per_peak if keep_counts else None)

    @classmethod
    def from_distribution(cls, dist: CoincidenceDistribution,
                          calibration: OutcomeCalibration | None = None) -> "PeakStatistics":
        if calibration is None:
            calibration = calibrate(dist.config.phase_a, dist.config.phase_b,
                                    dist.config.source_mode)
        return cls.from_table(dist.table, calibration)

    def behaviour(self) -> np.ndarray:
        """``(P, P*E)`` stacked; undefined correlators count as zero."""
        return np.stack([self.probabilities,
                         self.probabilities * np.nan_to_num(self.correlators)])


def s_metric(stats: PeakStatistics) -> float:
    """Evaluate the witness on per-peak probabilities and correlators."""
    s = 0.0
    for x in BASIS_PEAKS + WITNESS_PEAKS:
        p = stats.P(x)
        if p == 0:
            continue
        e = stats.E(x)
        if e is None:
            raise WitnessInputError(f"correlator for T{x:+d} is undefined")
        s += p * e if x in BASIS_PEAKS else 2 * p * (1 - abs(e))
    for x in ALARM_PEAKS:
        s -= stats.P(x)
    return s


def s_gradient(stats: PeakStatistics) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of S with respect to each P_x and each E_x."""
    gP = np.zeros(7)
    gE = np.zeros(7)
    for x in DELTAS:
        i = x + 3
        e = 0.0 if stats.E(x) is None else stats.E(x)
        p = stats.P(x)
        if x in BASIS_PEAKS:
            gP[i], gE[i] = e, p
        elif x in WITNESS_PEAKS:
            gP[i], gE[i] = 2 * (1 - abs(e)), -2 * p * (1.0 if e >= 0 else -1.0)
        else:
            gP[i] = -1.0
    return gP, gE


_SYMBOLS = {1: "+", -1: "-", None: "r"}
_PARSE = {"+": 1, "+1": 1, "1": 1, "-": -1, "-1": -1, "r": None, "random": None}


@dataclass(frozen=True)
class StrategyTable:
    """Eve's outcome assignment.

    Bob's signal arrives ``offset`` bins after Alice's.  ``a0``/``a1`` are
    Alice's outcomes for a detection at her arrival time or one bin later;
    ``b0``/``b1`` likewise for Bob.  Outcomes are raw port labels (+1 means
    port 0); ``None`` is a fair coin.
    """

    offset: int
    a0: Outcome
    a1: Outcome
    b0: Outcome
    b1: Outcome

    def __post_init__(self):
        if not -3 <= self.offset <= 3:
            raise ValueError("offset must lie in [-3, 3]")
        for v in (self.a0, self.a1, self.b0, self.b1):
            if v not in (1, -1, None):
                raise ValueError(f"outcome {v!r} must be +1, -1 or None")

    @classmethod
    def parse(cls, text: str) -> "StrategyTable":
        """Parse ``"offset:a0,a1,b0,b1"``, e.g. ``"1:+,+,+,r"``."""
        try:
            off, rest = text.split(":")
            vals = [_PARSE[v.strip().lower()] for v in rest.split(",")]
            if len(vals) != 4:
                raise ValueError
            return cls(int(off), *vals)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"cannot parse strategy table {text!r}") from exc

    def label(self) -> str:
        return f"{self.offset:+d}:" + ",".join(_SYMBOLS[v] for v in (self.a0, self.a1, self.b0, self.b1))


def _product(x: Outcome, y: Outcome) -> float:
    return 0.0 if x is None or y is None else float(x * y)


def strategy_statistics(table: StrategyTable,
                        calibration: OutcomeCalibration | None = None,
                        short_ratio: float = 0.5) -> PeakStatistics:
    """Peak statistics produced by ``table`` when the analyzers pick arms at random."""
    if calibration is None:
        calibration = OutcomeCalibration()
    P = np.zeros(7)
    Q = np.zeros(7)
    arms = ((0, short_ratio), (1, 1.0 - short_ratio))
    for (ia, wa), (ib, wb) in itertools.product(arms, arms):
        d = table.offset + ib - ia
        if abs(d) > 3:
            continue
        a = table.a0 if ia == 0 else table.a1
        b = table.b0 if ib == 0 else table.b1
        P[d + 3] += wa * wb
        Q[d + 3] += wa * wb * _product(a, b)
    total = P.sum()
    E = np.full(7, np.nan)
    nz = P > 0
    E[nz] = Q[nz] / P[nz] * np.array([calibration.sign(d) for d in DELTAS])[nz]
    return PeakStatistics(P / total, E)


def all_strategies(offsets=range(-3, 4)) -> list[StrategyTable]:
    values = (1, -1, None)
    return [StrategyTable(off, *t) for off in offsets for t in itertools.product(values, repeat=4)]


def classical_max(offsets=range(-3, 4), calibration: OutcomeCalibration | None = None,
                  short_ratio: float = 0.5, tol: float = 1e-12) -> tuple[float, list[StrategyTable]]:
    """Exhaustive maximum of S over outcome tables; returns the value and all maximizers."""
    best = -math.inf
    argmax: list[StrategyTable] = []
    for t in all_strategies(offsets):
        s = s_metric(strategy_statistics(t, calibration, short_ratio))
        if s > best + tol:
            best, argmax = s, [t]
        elif abs(s - best) <= tol:
            argmax.append(t)
    return best, argmax


def classical_mixture_max(calibration: OutcomeCalibration | None = None,
                          short_ratio: float = 0.5) -> float:
    """Maximum of S over convex mixtures of deterministic tables (linear program).

    Random entries are themselves mixtures, so the deterministic tables
    span every classical behaviour.  Because of the ``|E|`` in the T+-2
    term this exceeds the single-table maximum.
    """
    from scipy.optimize import linprog

    tables = [StrategyTable(off, *t) for off in range(-3, 4)
              for t in itertools.product((1, -1), repeat=4)]
    beh = [strategy_statistics(t, calibration, short_ratio).behaviour() for t in tables]
    n = len(tables)
    # variables: mixture weights, then u_x >= |Q_x| for x = +-2
    c = np.zeros(n + 2)
    for k, (P, Q) in enumerate(beh):
        c[k] = -(sum(Q[x + 3] for x in BASIS_PEAKS) + 2 * sum(P[x + 3] for x in WITNESS_PEAKS)
                 - sum(P[x + 3] for x in ALARM_PEAKS))
    c[n:] = 2.0
    A, b = [], []
    for j, x in enumerate(WITNESS_PEAKS):
        for sgn in (1.0, -1.0):
            row = np.zeros(n + 2)
            row[:n] = [sgn * Q[x + 3] for _, Q in beh]
            row[n + j] = -1.0
            A.append(row)
            b.append(0.0)
    a_eq = np.zeros((1, n + 2))
    a_eq[0, :n] = 1.0
    res = linprog(c, A_ub=np.array(A), b_ub=b, A_eq=a_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (n + 2), method="highs")
    return float(-res.fun)


# tables fixed by the offsets of Eve's three archetypal strategies
_NAMED_OFFSETS = {"a": 0, "b": 1, "c": 2}


def named_strategy(name: str, calibration: OutcomeCalibration | None = None) -> StrategyTable:
    """Best table for strategy ``a``, ``b`` or ``c`` under ``calibration``.

    Ties go to the first table in enumeration order (+1 before -1 before
    random).  For strategy ``c`` this picks a deterministic table that
    splits T+2 evenly instead of the two coin-flip entries.
    """
    try:
        offset = _NAMED_OFFSETS[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; expected a, b or c") from None
    _, argmax = classical_max([offset], calibration)
    return argmax[0]


def quantum_ideal_s(dist: CoincidenceDistribution | None = None,
                    calibration: OutcomeCalibration | None = None) -> float:
    """S of the ideal source (defaults: unit coherence, both phases zero)."""
    if dist is None:
        dist = coincidence_distribution(EngineConfig(), IDEAL)
    return s_metric(PeakStatistics.from_distribution(dist, calibration))


@dataclass
class SMetricReport:
    S: float
    sigma: float
    n_sigma_above_classical: float
    verdict: str
    per_peak: dict = field(default_factory=dict)
    threshold_sigmas: float = 5.0
    method: str = "visibility"

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "sigma": self.sigma,
            "n_sigma": self.n_sigma_above_classical,
            "verdict": self.verdict,
            "threshold_sigmas": self.threshold_sigmas,
            "method": self.method,
            "per_peak": self.per_peak,
        }


def _report(stats: PeakStatistics, e_err: np.ndarray, n_total: float,
            threshold_sigmas: float, method: str) -> SMetricReport:
    s = s_metric(stats)
    gP, gE = s_gradient(stats)
    P = stats.probabilities
    var_p = (np.sum(gP ** 2 * P) - np.sum(gP * P) ** 2) / n_total
    var_e = np.sum((gE * np.nan_to_num(e_err)) ** 2)
    sigma = math.sqrt(max(var_p, 0.0) + var_e)
    excess = s - CLASSICAL_BOUND
    n_sigma = excess / sigma if sigma > 0 else (math.inf if excess > 0 else -math.inf if excess < 0 else 0.0)
    verdict = "quantum" if excess > threshold_sigmas * sigma else "classical-compatible"
    per_peak = {str(d): {"P": stats.P(d), "E": stats.E(d),
                         "E_err": None if np.isnan(e_err[d + 3]) else float(e_err[d + 3]),
                         "counts": None if stats.counts is None else int(stats.counts[d + 3])}
                for d in DELTAS}
    return SMetricReport(s, sigma, n_sigma, verdict, per_peak, threshold_sigmas, method)


def s_from_measurements(peak_counts, visibilities: dict, uncertainties: dict,
                        signs: dict | None = None, threshold_sigmas: float = 5.0) -> SMetricReport:
    """S from window counts and fitted fringe visibilities.

    ``peak_counts`` has one entry per delta in [-3, 3] (index ``delta + 3``).
    ``visibilities`` and ``uncertainties`` map each delta of T0, T+-1
    and T+-2 to the fitted visibility and its error; ``signs`` gives the
    calibrated correlation sign at the operating phases (default +1).
    """
    counts = np.asarray(peak_counts, dtype=float)
    if counts.shape != (7,):
        raise WitnessInputError("peak_counts needs seven entries (delta -3..3)")
    for x in BASIS_PEAKS + WITNESS_PEAKS:
        if counts[x + 3] <= 0:
            raise WitnessInputError(f"no counts in T{x:+d}")
        if x not in visibilities:
            raise WitnessInputError(f"missing visibility for T{x:+d}")
    signs = signs or {}
    E = np.full(7, np.nan)
    err = np.full(7, np.nan)
    for x in BASIS_PEAKS + WITNESS_PEAKS:
        E[x + 3] = signs.get(x, 1) * visibilities[x]
        err[x + 3] = uncertainties.get(x, 0.0)
    for x in ALARM_PEAKS:
        if counts[x + 3] > 0:
            E[x + 3] = 0.0
    stats = PeakStatistics(counts / counts.sum(), E, counts)
    return _report(stats, err, counts.sum(), threshold_sigmas, "visibility")


def s_from_correlations(port_counts, calibration: OutcomeCalibration = DEFAULT_CALIBRATION,
                        threshold_sigmas: float = 5.0) -> SMetricReport:
    """S with correlators measured directly from port coincidences at fixed phases."""
    table = np.asarray(port_counts, dtype=float)
    for x in BASIS_PEAKS + WITNESS_PEAKS:
        if table[x + 3].sum() <= 0:
            raise WitnessInputError(f"no counts in T{x:+d}")
    stats = PeakStatistics.from_table(table, calibration, keep_counts=True)
    n = table.sum(axis=(1, 2))
    E = np.nan_to_num(stats.correlators)
    err = np.where(n > 0, np.sqrt(np.maximum(1 - E ** 2, 0.0) / np.maximum(n, 1)), np.nan)
    return _report(stats, err, n.sum(), threshold_sigmas, "direct")
