"""Stochastic event-stream generation: emission, loss, detectors.

Pairs are emitted by a homogeneous Poisson process.  Each pair's photon
placement is drawn from a *pair model*; the engine-backed model samples
the port-resolved coincidence distribution, the strategy model replays an
eavesdropper's outcome table.  Photons then pass channel loss and detector
efficiency, receive Gaussian timing jitter, and are merged with dark
counts.  Gating and dead time act on the merged, time-ordered stream.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np

from .engine import (CoherenceWeights, CoincidenceDistribution, EngineConfig,
                     coincidence_distribution)

log = logging.getLogger(__name__)

PARTIES = ("A", "B")
ORIGINS = ("photon", "dark")
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
EVENT_COLUMNS = ("party", "port", "time_ns", "origin")


def bandwidth_ghz(width_m: float = 200e-12, wavelength_m: float = 1540e-9) -> float:
    """Optical bandwidth in GHz of a filter of ``width_m`` at ``wavelength_m``."""
    return 299_792_458.0 * width_m / wavelength_m ** 2 * 1e-9


@dataclass(frozen=True)
class SourceParams:
    brightness: float = 2e4          # pairs / s / mW / GHz
    pump_power: float = 2.5          # mW
    bandwidth: float = bandwidth_ghz()
    multipair_budget: float = 0.01   # per detection window

    def __post_init__(self):
        for name in ("brightness", "pump_power", "bandwidth", "multipair_budget"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def pair_rate(self) -> float:
        return self.brightness * self.pump_power * self.bandwidth


# quadrature split of a 0.4 ns FWHM coincidence jitter over two detectors
DEFAULT_JITTER_SIGMA = 0.4e-9 / FWHM_PER_SIGMA / math.sqrt(2.0)


@dataclass(frozen=True)
class DetectorParams:
    """One party's pair of detectors (both ports share these settings).

    In ``gated`` mode the detector is armed only inside a window of
    ``gate_width`` centred ``gate_delay`` after each click of the other
    party (Alice's free-running APD triggers Bob's gated one).
    """

    efficiency: float = 0.20
    dark_rate: float = 1e4
    jitter_sigma: float = DEFAULT_JITTER_SIGMA
    dead_time: float = 0.0
    mode: Literal["free_running", "gated"] = "free_running"
    gate_width: float = 14e-9
    gate_delay: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        for name in ("dark_rate", "jitter_sigma", "dead_time", "gate_width"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.mode not in ("free_running", "gated"):
            raise ValueError(f"unknown detector mode {self.mode!r}")


@dataclass(frozen=True)
class ChannelParams:
    loss_db_alice: float = 2.5
    loss_db_bob: float = 2.5

    def __post_init__(self):
        if self.loss_db_alice < 0 or self.loss_db_bob < 0:
            raise ValueError("losses must be non-negative")

    def transmission(self, party: int) -> float:
        loss = self.loss_db_alice if party == 0 else self.loss_db_bob
        return 10.0 ** (-loss / 10.0)


@dataclass(frozen=True)
class DetectionEvent:
    party: str
    port: int
    time: float
    origin: str


@dataclass
class EventStream:
    """Time-ordered clicks stored column-wise.

    ``party`` is 0 for Alice and 1 for Bob; ``origin`` is 0 for photon
    clicks and 1 for dark counts (diagnostics only).
    """

    party: np.ndarray
    port: np.ndarray
    time: np.ndarray
    origin: np.ndarray
    duration: float

    @classmethod
    def empty(cls, duration: float = 0.0) -> "EventStream":
        z = np.zeros(0, dtype=np.int8)
        return cls(z, z.copy(), np.zeros(0), z.copy(), duration)

    def __len__(self) -> int:
        return len(self.time)

    def __iter__(self) -> Iterator[DetectionEvent]:
        for p, q, t, o in zip(self.party, self.port, self.time, self.origin):
            yield DetectionEvent(PARTIES[p], int(q), float(t), ORIGINS[o])

    def subset(self, mask) -> "EventStream":
        return EventStream(self.party[mask], self.port[mask], self.time[mask],
                           self.origin[mask], self.duration)

    def of(self, party: int) -> "EventStream":
        return self.subset(self.party == party)

    def singles_rate(self, party: int) -> float:
        if self.duration <= 0:
            return 0.0
        return float(np.count_nonzero(self.party == party)) / self.duration

    def to_csv(self, fh) -> None:
        """Write ``party,port,time_ns,origin`` lines with a header row."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for p, q, t, o in zip(self.party, self.port, self.time, self.origin):
            w.writerow((PARTIES[p], int(q), repr(float(t) * 1e9), ORIGINS[o]))

    @classmethod
    def from_csv(cls, fh, duration: float) -> "EventStream":
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return cls.empty(duration)
        if tuple(header) != EVENT_COLUMNS:
            raise ValueError(f"unexpected event header {header}")
        rows = list(reader)
        party = np.array([PARTIES.index(r[0]) for r in rows], dtype=np.int8)
        port = np.array([int(r[1]) for r in rows], dtype=np.int8)
        time = np.array([float(r[2]) * 1e-9 for r in rows])
        origin = np.array([ORIGINS.index(r[3]) for r in rows], dtype=np.int8)
        return cls(party, port, time, origin, duration)

    def to_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def sample_emissions(duration: float, rate: float, seed) -> np.ndarray:
    """Sorted emission times of a homogeneous Poisson process on [0, duration)."""
    rng = np.random.default_rng(seed)
    return _poisson_times(rng, 0.0, duration, rate)


def _poisson_times(rng: np.random.Generator, t0: float, t1: float, rate: float) -> np.ndarray:
    span = t1 - t0
    if rate <= 0 or span <= 0:
        return np.zeros(0)
    n = rng.poisson(rate * span)
    return np.sort(rng.uniform(t0, t1, size=n))


def accidental_rate(singles_a: float, singles_b: float, window: float) -> float:
    """Rate of chance coincidences between two uncorrelated click trains."""
    if min(singles_a, singles_b, window) < 0:
        raise ValueError("inputs must be non-negative")
    return singles_a * singles_b * window


@dataclass
class Photons:
    """Photon placements for a batch of pairs; offsets in bins after emission."""

    pair: np.ndarray
    party: np.ndarray
    port: np.ndarray
    offset: np.ndarray


class EnginePairModel:
    """Draws pair outcomes from the engine's port-resolved distribution.

    Pairs not post-selected (both photons at the same party) are placed as
    two independent photons in bins 0 and 1 at that party.
    """

    def __init__(self, dist: CoincidenceDistribution):
        self.dist = dist
        flat = dist.table.reshape(-1)
        self._cdf = np.cumsum(flat / flat.sum())
        self._offsets = np.zeros(7, dtype=np.int64)
        for delta, off in dist.alice_offsets.items():
            self._offsets[delta + 3] = off

    def draw(self, rng: np.random.Generator, n: int) -> Photons:
        ps = rng.random(n) < self.dist.postselection_probability
        idx = np.flatnonzero(ps)
        k = np.searchsorted(self._cdf, rng.random(idx.size), side="right")
        k = np.minimum(k, self._cdf.size - 1)
        delta = k // 4 - 3
        a_off = self._offsets[delta + 3]
        cross = Photons(
            pair=np.concatenate([idx, idx]),
            party=np.concatenate([np.zeros(idx.size, np.int8), np.ones(idx.size, np.int8)]),
            port=np.concatenate([(k // 2) % 2, k % 2]).astype(np.int8),
            offset=np.concatenate([a_off, a_off + delta]),
        )
        rest = np.flatnonzero(~ps)
        if rest.size == 0:
            return cross
        side = rng.integers(0, 2, size=rest.size).astype(np.int8)
        arms = rng.integers(0, 2, size=(2, rest.size))
        ports = rng.integers(0, 2, size=(2, rest.size)).astype(np.int8)
        same = Photons(
            pair=np.concatenate([rest, rest]),
            party=np.concatenate([side, side]),
            port=np.concatenate([ports[0], ports[1]]),
            offset=np.concatenate([arms[0], 1 + arms[1]]),
        )
        return Photons(*(np.concatenate([getattr(cross, f), getattr(same, f)])
                         for f in ("pair", "party", "port", "offset")))


class StrategyPairModel:
    """Replays a classical outcome table behind trusted beam-splitters.

    Each signal reaches Alice at bin 0 and Bob at bin ``table.offset``; the
    analyzer arm is random (short with probability ``short_ratio``) and the
    port follows the table's outcome for that detection time (+1 is port 0,
    ``None`` is a fair coin).
    """

    def __init__(self, table, short_ratio: float = 0.5):
        self.table = table
        self.short_ratio = short_ratio

    @staticmethod
    def _ports(rng, arm, early, late):
        outcome = np.where(arm == 0, _encode(early), _encode(late))
        coin = rng.integers(0, 2, size=arm.size) * 2 - 1
        outcome = np.where(outcome == 0, coin, outcome)
        return np.where(outcome > 0, 0, 1).astype(np.int8)

    def draw(self, rng: np.random.Generator, n: int) -> Photons:
        t = self.table
        idx = np.arange(n)
        arm_a = (rng.random(n) >= self.short_ratio).astype(np.int64)
        arm_b = (rng.random(n) >= self.short_ratio).astype(np.int64)
        return Photons(
            pair=np.concatenate([idx, idx]),
            party=np.concatenate([np.zeros(n, np.int8), np.ones(n, np.int8)]),
            port=np.concatenate([self._ports(rng, arm_a, t.a0, t.a1),
                                 self._ports(rng, arm_b, t.b0, t.b1)]),
            offset=np.concatenate([arm_a, t.offset + arm_b]),
        )


def _encode(value) -> int:
    return 0 if value is None else int(value)


def _shard(args):
    (seed_seq, t0, t1, rate, model, delta_t, survival, jitter, dark) = args
    rng = np.random.default_rng(seed_seq)
    emissions = _poisson_times(rng, t0, t1, rate)
    parts = []
    if emissions.size:
        ph = model.draw(rng, emissions.size)
        keep = rng.random(ph.pair.size) < survival[ph.party]
        party, port = ph.party[keep], ph.port[keep]
        t = emissions[ph.pair[keep]] + ph.offset[keep] * delta_t
        t = t + rng.normal(0.0, 1.0, size=t.size) * jitter[party]
        parts.append((party, port, t, np.zeros(t.size, np.int8)))
    for party in (0, 1):
        for port in (0, 1):
            td = _poisson_times(rng, t0, t1, dark[party])
            parts.append((np.full(td.size, party, np.int8), np.full(td.size, port, np.int8),
                          td, np.ones(td.size, np.int8)))
    return parts


def _dead_time_mask(times: np.ndarray, dead: float) -> np.ndarray:
    """Non-paralyzable dead time on a sorted click train."""
    keep = np.zeros(times.size, dtype=bool)
    i = 0
    while i < times.size:
        keep[i] = True
        i = int(np.searchsorted(times, times[i] + dead, side="right"))
    return keep


def _apply_dead_time(stream: EventStream, party: int, dead: float) -> np.ndarray:
    keep = np.ones(len(stream), dtype=bool)
    if dead <= 0:
        return keep
    for port in (0, 1):
        sel = np.flatnonzero((stream.party == party) & (stream.port == port))
        keep[sel] = _dead_time_mask(stream.time[sel], dead)
    return keep


def _gate_mask(targets: np.ndarray, triggers: np.ndarray, width: float, delay: float) -> np.ndarray:
    if triggers.size == 0:
        return np.zeros(targets.size, dtype=bool)
    lo = targets - delay - width / 2.0
    j = np.searchsorted(triggers, lo, side="left")
    ok = j < triggers.size
    jj = np.minimum(j, triggers.size - 1)
    return ok & (triggers[jj] <= targets - delay + width / 2.0)


def simulate_experiment(engine: EngineConfig, weights: CoherenceWeights | None,
                        source: SourceParams, channel: ChannelParams,
                        alice: DetectorParams, bob: DetectorParams,
                        duration: float, seed, *, model=None,
                        shard_duration: float = 0.25, workers: int = 1) -> EventStream:
    """Simulate a run of ``duration`` seconds; return the time-ordered clicks.

    ``seed`` is an int or :class:`numpy.random.SeedSequence`.  Shards are
    fixed by ``shard_duration`` so the output does not depend on
    ``workers``.  ``model`` overrides the engine-backed pair model.
    """
    if duration <= 0:
        return EventStream.empty(max(duration, 0.0))
    if model is None:
        model = EnginePairModel(coincidence_distribution(engine, weights))
    delta_t = engine.bin_separation
    rate = source.pair_rate
    lam = rate * delta_t
    if lam > source.multipair_budget:
        log.warning("multi-pair probability %.3g per window exceeds budget %.3g",
                    lam, source.multipair_budget)
    for name, det, other in (("alice", alice, bob), ("bob", bob, alice)):
        if det.mode == "gated" and det.gate_width < math.hypot(det.jitter_sigma, other.jitter_sigma):
            log.warning("%s gate width %.3g s is below the coincidence jitter", name, det.gate_width)
    if alice.mode == "gated" and bob.mode == "gated":
        raise ValueError("at most one party can be gated by the other's clicks")

    survival = np.array([channel.transmission(0) * alice.efficiency,
                         channel.transmission(1) * bob.efficiency])
    jitter = np.array([alice.jitter_sigma, bob.jitter_sigma])
    dark = np.array([alice.dark_rate, bob.dark_rate])

    n_shards = max(1, math.ceil(duration / shard_duration))
    children = np.random.SeedSequence(seed).spawn(n_shards) if not isinstance(
        seed, np.random.SeedSequence) else seed.spawn(n_shards)
    edges = np.linspace(0.0, duration, n_shards + 1)
    jobs = [(children[i], edges[i], edges[i + 1], rate, model, delta_t, survival, jitter, dark)
            for i in range(n_shards)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(_shard, jobs))
    else:
        results = [_shard(j) for j in jobs]

    parts = [p for shard in results for p in shard]
    party = np.concatenate([p[0] for p in parts])
    port = np.concatenate([p[1] for p in parts])
    time = np.concatenate([p[2] for p in parts])
    origin = np.concatenate([p[3] for p in parts])
    inside = (time >= 0.0) & (time < duration)
    order = np.lexsort((origin[inside], port[inside], party[inside], time[inside]))
    stream = EventStream(party[inside][order], port[inside][order], time[inside][order],
                         origin[inside][order], duration)

    dets = (alice, bob)
    for gated in (0, 1):
        if dets[gated].mode != "gated":
            continue
        trigger = 1 - gated
        stream = stream.subset(_apply_dead_time(stream, trigger, dets[trigger].dead_time))
        triggers = stream.time[stream.party == trigger]
        target = stream.party == gated
        keep = np.ones(len(stream), dtype=bool)
        keep[target] = _gate_mask(stream.time[target], triggers,
                                  dets[gated].gate_width, dets[gated].gate_delay)
        stream = stream.subset(keep)
        stream = stream.subset(_apply_dead_time(stream, gated, dets[gated].dead_time))
        return stream
    for party_id in (0, 1):
        stream = stream.subset(_apply_dead_time(stream, party_id, dets[party_id].dead_time))
    return stream
