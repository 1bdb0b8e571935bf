"""Arrival-time-difference histograms, peak windows and fringe fits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .engine import DELTAS
from .physical import EventStream

DEFAULT_WINDOW = 1.5e-9
HISTOGRAM_COLUMNS = ("delay_ns", "counts")
SCAN_COLUMNS = ("phase_rad", "peak", "port_a", "port_b", "counts", "fit_counts",
                "visibility", "phase_offset")


@dataclass
class Coincidences:
    """All (Alice click, Bob click) pairs within ``max_delay`` of each other."""

    delay: np.ndarray
    alice_time: np.ndarray
    alice_port: np.ndarray
    bob_port: np.ndarray
    origin_pair: np.ndarray   # 0 photon-photon, 1 involves a dark count
    max_delay: float

    def __len__(self):
        return self.delay.size


def find_coincidences(stream: EventStream, max_delay: float) -> Coincidences:
    """Start-multi-stop pairing: every Alice click with every Bob click in range."""
    a = stream.of(0)
    b = stream.of(1)
    lo = np.searchsorted(b.time, a.time - max_delay, side="left")
    hi = np.searchsorted(b.time, a.time + max_delay, side="right")
    n = hi - lo
    total = int(n.sum())
    if total == 0:
        e = np.zeros(0)
        z = np.zeros(0, dtype=np.int8)
        return Coincidences(e, e.copy(), z, z.copy(), z.copy(), max_delay)
    ai = np.repeat(np.arange(a.time.size), n)
    starts = np.repeat(np.cumsum(n) - n, n)
    bj = lo[ai] + (np.arange(total) - starts)
    return Coincidences(
        delay=b.time[bj] - a.time[ai],
        alice_time=a.time[ai],
        alice_port=a.port[ai],
        bob_port=b.port[bj],
        origin_pair=np.maximum(a.origin[ai], b.origin[bj]),
        max_delay=max_delay,
    )


@dataclass
class Histogram:
    """Counts of Bob-minus-Alice delays on ``[-range, +range]``."""

    bin_width: float
    range: float
    counts: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.range, self.range, self.counts.size + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTOGRAM_COLUMNS)
        for c, n in zip(self.centers, self.counts):
            w.writerow((repr(round(float(c) * 1e9, 9)), int(n)))


def build_histogram(events, bin_width: float, range: float) -> Histogram:
    """Histogram coincidence delays from an :class:`EventStream` or :class:`Coincidences`."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    nbins = max(1, int(round(2 * range / bin_width)))
    if isinstance(events, EventStream):
        events = find_coincidences(events, range)
    delays = events.delay[np.abs(events.delay) <= range]
    counts, _ = np.histogram(delays, bins=nbins, range=(-range, range))
    return Histogram(bin_width, range, counts.astype(np.int64))


def _check_window(bin_separation: float, window: float) -> None:
    if not 0 < window < bin_separation:
        raise ValueError(f"window {window:g} s must be positive and below the "
                         f"bin separation {bin_separation:g} s (windows would overlap)")


def integrate_peaks(h: Histogram, bin_separation: float,
                    window: float = DEFAULT_WINDOW) -> dict[int, int]:
    """Counts in ``±window/2`` around each ``k * bin_separation``, k in [-3, 3]."""
    _check_window(bin_separation, window)
    centers = h.centers
    return {d: int(h.counts[np.abs(centers - d * bin_separation) <= window / 2].sum())
            for d in DELTAS}


def assign_peaks(delay: np.ndarray, bin_separation: float,
                 window: float = DEFAULT_WINDOW) -> np.ndarray:
    """Peak index for each delay, or a value outside [-3, 3] when in no window."""
    _check_window(bin_separation, window)
    k = np.rint(delay / bin_separation).astype(np.int64)
    inside = (np.abs(delay - k * bin_separation) <= window / 2) & (np.abs(k) <= 3)
    return np.where(inside, k, 99)


def peak_port_counts(coinc: Coincidences, bin_separation: float,
                     window: float = DEFAULT_WINDOW) -> np.ndarray:
    """Port-resolved window counts, ``counts[delta + 3, alice_port, bob_port]``."""
    k = assign_peaks(coinc.delay, bin_separation, window)
    sel = np.abs(k) <= 3
    flat = (k[sel] + 3) * 4 + coinc.alice_port[sel].astype(np.int64) * 2 + coinc.bob_port[sel]
    return np.bincount(flat, minlength=28).reshape(7, 2, 2)


@dataclass(frozen=True)
class VisibilityFit:
    """Fit of ``R0 * (1 + V cos(phi + phi0))`` to a fringe."""

    visibility: float
    phase_offset: float
    mean_rate: float
    visibility_err: float
    phase_offset_err: float
    mean_rate_err: float
    chi2: float
    dof: int
    degenerate: bool = False
    clamped: bool = False

    def predict(self, phases) -> np.ndarray:
        phases = np.asarray(phases, dtype=float)
        return self.mean_rate * (1 + self.visibility * np.cos(phases + self.phase_offset))


def _spans_period(phases: np.ndarray) -> bool:
    wrapped = np.sort(np.mod(phases, 2 * math.pi))
    gaps = np.diff(np.concatenate([wrapped, [wrapped[0] + 2 * math.pi]]))
    # an evenly spaced grid over one period leaves a largest gap of 2pi/n
    return (phases.max() - phases.min()) >= 2 * math.pi * (1 - 1 / phases.size) - 1e-9 \
        or gaps.max() <= 2 * math.pi / phases.size + 1e-9


def fit_visibility(scan, poisson: bool = True, variance=None) -> VisibilityFit:
    """Linear least-squares fringe fit to ``[(phase, counts), ...]``.

    With ``poisson`` the points are weighted by ``1/max(counts, 1)`` (or by
    ``1/variance`` when given) and parameter errors follow from counting
    statistics; otherwise the residual scatter sets the error scale.
    """
    data = np.asarray(list(scan), dtype=float)
    if data.ndim != 2 or data.shape[0] < 4:
        raise ValueError("need at least 4 phase points")
    phi, y = data[:, 0], data[:, 1]
    if not _spans_period(phi):
        raise ValueError("phase points must span at least one period")
    X = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    if variance is not None:
        w = 1.0 / np.asarray(variance, dtype=float)
    elif poisson:
        w = 1.0 / np.maximum(y, 1.0)
    else:
        w = np.ones_like(y)
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ y)
    resid = y - X @ beta
    dof = y.size - 3
    chi2 = float(np.sum(w * resid ** 2))
    if not poisson and variance is None:
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
    a, b, c = beta
    h = math.hypot(b, c)
    a_err = math.sqrt(max(cov[0, 0], 0.0))
    if a <= 0 or h <= 1e-12 * max(abs(a), 1e-300):
        return VisibilityFit(0.0, 0.0, float(a), float("inf"), float("inf"), a_err,
                             chi2, dof, degenerate=True)
    vis = h / a
    J_v = np.array([-h / a ** 2, b / (a * h), c / (a * h)])
    J_p = np.array([0.0, c / h ** 2, -b / h ** 2])
    v_err = math.sqrt(max(J_v @ cov @ J_v, 0.0))
    p_err = math.sqrt(max(J_p @ cov @ J_p, 0.0))
    return VisibilityFit(min(vis, 1.0), math.atan2(-c, b), float(a), v_err, p_err, a_err,
                         chi2, dof, clamped=vis > 1.0)


@dataclass(frozen=True)
class NetCorrection:
    counts: np.ndarray
    fit: VisibilityFit
    clamped: bool


def net_correction(scan, accidental) -> NetCorrection:
    """Subtract the flat accidental floor per window, then refit the fringe.

    ``accidental`` is the expected accidental count per window and phase
    point (a scalar or one value per point).  Negative results are clamped to
    zero and flagged.  Errors keep the variance of the uncorrected counts.
    """
    data = np.asarray(list(scan), dtype=float)
    raw = data[:, 1]
    net = raw - np.broadcast_to(np.asarray(accidental, dtype=float), raw.shape)
    clamped = bool((net < 0).any())
    net = np.maximum(net, 0.0)
    fit = fit_visibility(np.column_stack([data[:, 0], net]), variance=np.maximum(raw, 1.0))
    return NetCorrection(net, fit, clamped)


def combine_fits(fits) -> tuple[float, float]:
    """Inverse-variance mean visibility and its error over several fits."""
    v = np.array([f.visibility for f in fits])
    e = np.array([f.visibility_err for f in fits])
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        return float(v.mean()), float(np.sqrt(np.mean(np.where(np.isfinite(e), e, 0) ** 2)))
    w = 1.0 / e ** 2
    return float(np.sum(w * v) / w.sum()), float(1.0 / math.sqrt(w.sum()))
