import io
import json
import math

import numpy as np
import pytest

from crossbin import pipeline
from crossbin.engine import DEFAULT_CALIBRATION
from crossbin.histogram import Coincidences
from crossbin.qkd import channel_check, dumps, qber, sift, summary
from crossbin.witness import SMetricReport
from helpers import noiseless

DELTA = 2e-9


def report(S, sigma):
    return SMetricReport(S, sigma, (S - 1) / sigma, "", {})


def test_channel_check_examples():
    assert channel_check(report(1.20, 0.02), 5) == "accept"
    assert channel_check(report(1.00, 0.02), 5) == "abort"
    assert channel_check(report(1.03, 0.02), 5) == "abort"


def _coinc(delays, pa, pb):
    d = np.asarray(delays, float)
    return Coincidences(d, np.zeros(d.size), np.asarray(pa, np.int8), np.asarray(pb, np.int8),
                        np.zeros(d.size, np.int8), 7e-9)


def test_sift_assigns_bases_and_flips_t0():
    c = _coinc([0.0, 2e-9, -2e-9, 4e-9, 6e-9, 1e-9], [0, 1, 0, 1, 0, 0], [1, 1, 0, 0, 1, 0])
    key = sift(c, DELTA, 1.5e-9, DEFAULT_CALIBRATION)
    assert key.basis.tolist() == [0, 1, 1]
    assert key.alice_bits.tolist() == [0, 1, 0]
    assert key.bob_bits.tolist() == [0, 1, 0]   # T0 bit of Bob flipped by calibration
    assert key.witness_events == 1 and key.alarms == 1
    assert key.usable_fraction == pytest.approx(3 / 5)
    assert qber(key) == {"T0": 0.0, "T1": 0.0}
    buf = io.StringIO()
    key.write_lines(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "basis a_bit b_bit" and lines[1] == "T0 0 0" and len(lines) == 4


def test_empty_basis_qber_is_undefined():
    key = sift(_coinc([2e-9], [0], [0]), DELTA)
    assert qber(key)["T0"] is None


def test_random_bits_give_half_qber():
    rng = np.random.default_rng(0)
    n = 20_000
    c = _coinc(rng.choice([-2e-9, 0.0, 2e-9], n), rng.integers(0, 2, n), rng.integers(0, 2, n))
    q = qber(sift(c, DELTA))
    for v in q.values():
        assert abs(v - 0.5) < 5 * math.sqrt(0.25 / (n / 3))


def _qkd(cfg, strategy=None):
    run = pipeline.run_qkd(cfg, strategy)
    key = sift(run.coincidences, cfg.engine.bin_separation, cfg.analysis.window, run.calibration)
    return run, key


def test_ideal_stream_usable_fraction_and_zero_qber():
    run, key = _qkd(noiseless(pump_power=0.02, duration=2.0, nu=1.0, mu=1.0))
    n = sum(key.per_delta.values())
    assert abs(key.usable_fraction - 0.75) < 3 * math.sqrt(0.75 * 0.25 / n)
    assert qber(key)["T0"] <= 5 / key.count("T0")
    assert qber(key)["T1"] <= 5 / key.count("T1")
    assert channel_check(run.report) == "accept"


@pytest.mark.parametrize("nu,mu", [(0.9, 0.8), (0.95, 1.0)])
def test_qber_follows_visibility(nu, mu):
    _, key = _qkd(noiseless(pump_power=0.03, duration=3.0, nu=nu, mu=mu))
    q = qber(key)
    for basis, v in (("T0", nu), ("T1", mu)):
        n = key.count(basis)
        expect = (1 - v) / 2
        assert abs(q[basis] - expect) < 3 * math.sqrt(max(expect * (1 - expect), 1e-4) / n)


def test_dark_only_stream():
    cfg = noiseless(pump_power=0.0, duration=8.0)
    dark = {"dark_rate": 1e5}
    cfg = cfg.model_copy(update={"alice": cfg.alice.model_copy(update=dark),
                                 "bob": cfg.bob.model_copy(update=dark)})
    run, key = _qkd(cfg)
    n = sum(key.per_delta.values())
    assert n > 500
    # three of seven equal windows carry key
    assert abs(key.usable_fraction - 3 / 7) < 3 * math.sqrt((3 / 7) * (4 / 7) / n)
    for basis, v in qber(key).items():
        assert abs(v - 0.5) < 5 * math.sqrt(0.25 / key.count(basis))


def test_strategy_a_leaves_witness_peaks_empty():
    run, key = _qkd(noiseless(pump_power=0.02, duration=0.5), "a")
    assert key.witness_events == 0
    assert run.report is None
    assert summary(key, run.report, 5)["verdict"] == "abort"


def test_summary_json_roundtrip():
    run, key = _qkd(noiseless(pump_power=0.02, duration=0.5))
    s = json.loads(dumps(summary(key, run.report, 5.0)))
    assert set(s) >= {"qber", "usable_fraction", "verdict"}
    assert set(s["qber"]) == {"T0", "T1"}
