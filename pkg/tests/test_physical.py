import math

import numpy as np
import pytest
from scipy import stats

from crossbin.engine import IDEAL, EngineConfig, coincidence_distribution
from crossbin.histogram import find_coincidences, peak_port_counts
from crossbin.physical import (ChannelParams, DetectorParams, EventStream, SourceParams,
                               accidental_rate, bandwidth_ghz, sample_emissions,
                               simulate_experiment, _dead_time_mask)
from helpers import noiseless
from crossbin import pipeline

DELTA = 2e-9
WINDOW = 1.5e-9


def test_source_defaults():
    assert bandwidth_ghz() == pytest.approx(25.28, abs=0.01)
    src = SourceParams()
    assert src.pair_rate == pytest.approx(2e4 * 2.5 * src.bandwidth)
    with pytest.raises(ValueError):
        SourceParams(pump_power=-1)
    with pytest.raises(ValueError):
        DetectorParams(efficiency=1.5)


def test_emissions_zero_rate():
    assert sample_emissions(1.0, 0.0, 1).size == 0


def test_emission_count_is_poisson():
    n = sample_emissions(1.0, 1e4, 123).size
    assert abs(n - 1e4) < 5 * 100


def test_emissions_deterministic_and_sorted():
    a = sample_emissions(0.5, 1e4, 42)
    b = sample_emissions(0.5, 1e4, 42)
    assert np.array_equal(a, b)
    assert np.all(np.diff(a) >= 0) and a.min() >= 0 and a.max() < 0.5


def test_accidental_rate_examples():
    assert accidental_rate(1e3, 1e3, 1e-9) == pytest.approx(1e-3)
    assert accidental_rate(5e5, 7e4, 0.0) == 0.0
    with pytest.raises(ValueError):
        accidental_rate(-1, 1, 1e-9)


def _run(cfg, duration=None, seed=None, workers=1, **kw):
    return simulate_experiment(cfg.engine_config(), cfg.weights(), cfg.source_params(),
                               cfg.channel_params(), cfg.detector_params("alice"),
                               cfg.detector_params("bob"), duration or cfg.duration,
                               cfg.seed if seed is None else seed, workers=workers, **kw)


def test_determinism_regardless_of_workers():
    from crossbin.config import RunConfig
    cfg = RunConfig(seed=3, duration=1.3)
    s1 = _run(cfg, workers=1)
    s3 = _run(cfg, workers=3)
    assert len(s1) > 0
    for f in ("party", "port", "time", "origin"):
        assert np.array_equal(getattr(s1, f), getattr(s3, f))
    assert s1.to_text() == _run(cfg).to_text()


def test_stream_is_time_ordered_inside_horizon():
    from crossbin.config import RunConfig
    s = _run(RunConfig(seed=5, duration=0.4))
    assert np.all(np.diff(s.time) >= 0)
    assert s.time.min() >= 0 and s.time.max() < 0.4


def test_zero_loss_coincidences_equal_postselected_pairs():
    cfg = noiseless(pump_power=0.01, duration=4.0)   # about 2.5e3 pairs / s
    s = _run(cfg)
    coinc = find_coincidences(s, 7e-9)
    n_a, n_b, n_c = int((s.party == 0).sum()), int((s.party == 1).sum()), len(coinc)
    # every non-post-selected pair leaves exactly two clicks at one party
    assert (n_a - n_c) % 2 == 0 and (n_b - n_c) % 2 == 0
    n_pairs = n_c + (n_a - n_c) // 2 + (n_b - n_c) // 2
    expected = cfg.source_params().pair_rate * cfg.duration
    assert abs(n_pairs - expected) < 5 * math.sqrt(expected)
    assert abs(n_c - n_pairs / 2) < 5 * math.sqrt(n_pairs / 4)


def _dark_only(rate=1e5, duration=2.0, seed=11):
    cfg = noiseless(pump_power=0.0, duration=duration, seed=seed)
    cfg = cfg.model_copy(update={"alice": cfg.alice.model_copy(update={"dark_rate": rate}),
                                 "bob": cfg.bob.model_copy(update={"dark_rate": rate})})
    return cfg, _run(cfg)


def test_dark_counts_give_flat_accidentals_at_formula_level():
    cfg, s = _dark_only()
    assert (s.origin == 1).all()
    counts = peak_port_counts(find_coincidences(s, 7e-9), DELTA, WINDOW).sum(axis=(1, 2))
    assert stats.chisquare(counts).pvalue > 0.001
    expected = accidental_rate(s.singles_rate(0), s.singles_rate(1), WINDOW) * s.duration
    assert abs(counts.mean() - expected) < 3 * math.sqrt(expected / counts.size)


def test_dark_delays_uniform():
    _, s = _dark_only()
    d = find_coincidences(s, 7e-9).delay
    assert stats.kstest(d, stats.uniform(-7e-9, 14e-9).cdf).pvalue > 0.001


def test_loss_linearity():
    from crossbin.config import RunConfig
    base = RunConfig(seed=9, duration=0.5)
    lossy = base.model_copy(update={"channel": base.channel.model_copy(
        update={"loss_db_alice": 2.5 + 10 * math.log10(2)})})
    r = []
    for cfg in (base, lossy):
        s = _run(cfg)
        r.append(np.count_nonzero((s.party == 0) & (s.origin == 0)))
    ratio = r[1] / r[0]
    assert abs(ratio - 0.5) < 5 * 0.5 * math.sqrt(1 / r[0] + 1 / r[1])


def test_peak_frequencies_match_engine_distribution():
    cfg = noiseless(pump_power=0.08, duration=6.0)
    s = _run(cfg)
    counts = peak_port_counts(find_coincidences(s, 7e-9), DELTA, WINDOW)
    dist = coincidence_distribution(cfg.engine_config(), cfg.weights())
    mask = dist.table > 0
    obs = counts[mask]
    assert obs.sum() >= 1e5
    exp = dist.table[mask] / dist.table[mask].sum() * obs.sum()
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_bob_gate_requires_alice_trigger():
    from crossbin.config import RunConfig
    cfg = RunConfig(seed=2, duration=0.2)
    s = _run(cfg)
    a, b = s.time[s.party == 0], s.time[s.party == 1]
    j = np.searchsorted(a, b - 7e-9)
    assert np.all(a[np.minimum(j, a.size - 1)] <= b + 7e-9)


def test_both_gated_rejected():
    g = DetectorParams(mode="gated")
    with pytest.raises(ValueError):
        simulate_experiment(EngineConfig(), IDEAL, SourceParams(), ChannelParams(), g, g, 0.1, 1)


def test_narrow_gate_warns(caplog):
    a = DetectorParams()
    b = DetectorParams(mode="gated", gate_width=1e-12)
    with caplog.at_level("WARNING"):
        simulate_experiment(EngineConfig(), IDEAL, SourceParams(pump_power=0.01), ChannelParams(),
                            a, b, 0.01, 1)
    assert "gate width" in caplog.text


def test_multipair_budget_warns(caplog):
    with caplog.at_level("WARNING"):
        simulate_experiment(EngineConfig(), IDEAL, SourceParams(pump_power=500), ChannelParams(),
                            DetectorParams(), DetectorParams(), 1e-4, 1)
    assert "multi-pair" in caplog.text


def test_dead_time_is_non_paralyzable():
    t = np.array([0.0, 1.0, 1.5, 2.1, 2.2, 5.0])
    assert _dead_time_mask(t, 1.0).tolist() == [True, False, True, False, False, True]
    s = simulate_experiment(EngineConfig(), IDEAL, SourceParams(), ChannelParams(),
                            DetectorParams(dead_time=50e-9), DetectorParams(dead_time=50e-9), 0.05, 4)
    for party in (0, 1):
        for port in (0, 1):
            tt = s.time[(s.party == party) & (s.port == port)]
            assert np.all(np.diff(tt) > 50e-9)


def test_zero_duration_is_empty():
    s = simulate_experiment(EngineConfig(), IDEAL, SourceParams(), ChannelParams(),
                            DetectorParams(), DetectorParams(), 0.0, 1)
    assert len(s) == 0


def test_event_csv_roundtrip():
    from crossbin.config import RunConfig
    import io
    s = _run(RunConfig(seed=1, duration=0.002))
    buf = io.StringIO(s.to_text())
    back = EventStream.from_csv(buf, s.duration)
    assert np.array_equal(back.party, s.party) and np.array_equal(back.origin, s.origin)
    assert np.allclose(back.time, s.time, rtol=0, atol=1e-18)
    ev = next(iter(s))
    assert ev.party in ("A", "B") and ev.origin in ("photon", "dark")


def test_strategy_model_has_no_phase_dependence():
    from crossbin.witness import StrategyTable
    cfg = noiseless(pump_power=0.05, duration=1.0)
    t = StrategyTable(0, 1, 1, 1, 1)
    run = pipeline.simulate(cfg, cfg.engine_config(), cfg.duration, 1, t)
    counts = peak_port_counts(find_coincidences(run, 7e-9), DELTA, WINDOW)
    # all outcomes +1: every coincidence lands in ports (0, 0)
    assert counts.sum() == counts[:, 0, 0].sum() > 0
