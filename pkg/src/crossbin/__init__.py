"""Simulation and analysis toolkit for cross time-bin photon-pair experiments.

The library is layered: :mod:`crossbin.engine` gives exact coincidence
distributions, :mod:`crossbin.physical` turns them into timestamped detector
clicks, :mod:`crossbin.histogram` recovers peaks and fringe visibilities,
:mod:`crossbin.witness` evaluates the S witness and the classical bound, and
:mod:`crossbin.qkd` sifts key bits.  :mod:`crossbin.cli` ties them together.
"""

from .engine import (DEFAULT_CALIBRATION, IDEAL, CoherenceWeights, CoincidenceDistribution,
                     EngineConfig, calibrate, coincidence_distribution, correlator, fringe_scan)
from .witness import (CLASSICAL_BOUND, QUANTUM_IDEAL, PeakStatistics, StrategyTable,
                      classical_max, quantum_ideal_s, s_metric)

__version__ = "0.1.0"

__all__ = [
    "CLASSICAL_BOUND", "QUANTUM_IDEAL", "DEFAULT_CALIBRATION", "IDEAL",
    "CoherenceWeights", "CoincidenceDistribution", "EngineConfig", "PeakStatistics",
    "StrategyTable", "calibrate", "classical_max", "coincidence_distribution",
    "correlator", "fringe_scan", "quantum_ideal_s", "s_metric",
]
