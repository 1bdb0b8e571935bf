"""Passive QKD post-processing: peak-defined bases, sifting and QBER.

Coincidences in T0 form basis ``T0`` and those in T+-1 form basis ``T1``.
T+-2 events are kept for the witness and T+-3 events raise alarms.  Alice's
bit is her port; Bob's bit is his port, flipped in any basis whose
calibration sign is negative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import DEFAULT_CALIBRATION, DELTAS, OutcomeCalibration
from .histogram import DEFAULT_WINDOW, Coincidences, assign_peaks
from .witness import SMetricReport

BASES = ("T0", "T1")
KEY_COLUMNS = ("basis", "a_bit", "b_bit")


@dataclass
class SiftedKey:
    basis: np.ndarray        # 0 for T0, 1 for T1
    alice_bits: np.ndarray
    bob_bits: np.ndarray
    per_delta: dict = field(default_factory=dict)

    def __len__(self):
        return self.basis.size

    def count(self, basis: str) -> int:
        return int(np.count_nonzero(self.basis == BASES.index(basis)))

    @property
    def witness_events(self) -> int:
        return self.per_delta.get(-2, 0) + self.per_delta.get(2, 0)

    @property
    def alarms(self) -> int:
        return self.per_delta.get(-3, 0) + self.per_delta.get(3, 0)

    @property
    def usable_fraction(self) -> float:
        total = sum(self.per_delta.values())
        return len(self) / total if total else float("nan")

    def write_lines(self, fh) -> None:
        fh.write(" ".join(KEY_COLUMNS) + "\n")
        for b, x, y in zip(self.basis, self.alice_bits, self.bob_bits):
            fh.write(f"{BASES[b]} {int(x)} {int(y)}\n")


def sift(coinc: Coincidences, bin_separation: float, window: float = DEFAULT_WINDOW,
         calibration: OutcomeCalibration = DEFAULT_CALIBRATION) -> SiftedKey:
    """Assign windowed coincidences to bases and extract raw key bits."""
    k = assign_peaks(coinc.delay, bin_separation, window)
    per_delta = {d: int(np.count_nonzero(k == d)) for d in DELTAS}
    key = np.abs(k) <= 1
    kk = k[key]
    flip = np.array([calibration.flips_bob(d) for d in DELTAS])[kk + 3]
    return SiftedKey(
        basis=(kk != 0).astype(np.int8),
        alice_bits=coinc.alice_port[key].astype(np.int8),
        bob_bits=(coinc.bob_port[key].astype(np.int8) ^ flip.astype(np.int8)),
        per_delta=per_delta,
    )


def qber(key: SiftedKey) -> dict[str, float | None]:
    """Fraction of disagreeing bits per basis (``None`` for an empty basis)."""
    out = {}
    for i, name in enumerate(BASES):
        sel = key.basis == i
        n = int(np.count_nonzero(sel))
        out[name] = None if n == 0 else float(np.count_nonzero(
            key.alice_bits[sel] != key.bob_bits[sel]) / n)
    return out


def channel_check(report: SMetricReport, threshold_sigmas: float = 5.0) -> str:
    """``accept`` when S exceeds the classical bound by the given number of sigmas."""
    return "accept" if report.S - 1.0 > threshold_sigmas * report.sigma else "abort"


def summary(key: SiftedKey, report: SMetricReport | None, threshold_sigmas: float) -> dict:
    return {
        "qber": qber(key),
        "counts": {b: key.count(b) for b in BASES},
        "per_delta": {str(d): n for d, n in key.per_delta.items()},
        "usable_fraction": key.usable_fraction,
        "witness_events": key.witness_events,
        "alarms": key.alarms,
        "S": None if report is None else report.S,
        "sigma": None if report is None else report.sigma,
        "verdict": "abort" if report is None else channel_check(report, threshold_sigmas),
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
