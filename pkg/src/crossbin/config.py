"""Run configuration: a YAML file validated against a strict schema.

Unknown keys are rejected and every error is reported with its field path
and, when available, the line in the file.
"""

from __future__ import annotations

import math
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .engine import CoherenceWeights, EngineConfig
from .physical import ChannelParams, DetectorParams, SourceParams, bandwidth_ghz, DEFAULT_JITTER_SIGMA


class ConfigError(Exception):
    """Invalid configuration; ``messages`` holds one diagnostic per problem."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EngineSection(_Section):
    phase_a: float = 0.0
    phase_b: float = 0.0
    transcriber_phase: float = 0.0
    bin_separation: float = Field(2e-9, gt=0)
    pump_coherence_time: float = Field(400e-9, gt=0)
    photon_coherence_time: float = Field(17e-12, gt=0)
    analyzer_mismatch: float = Field(0.3e-3, ge=0)
    fiber_group_index: float = Field(1.468, gt=0)
    source_mode: Literal["transcribed", "bypass"] = "transcribed"
    # explicit overrides of the overlaps derived from the lengths above
    nu: Optional[float] = Field(None, ge=0, le=1)
    mu: Optional[float] = Field(None, ge=0, le=1)

    @field_validator("phase_a", "phase_b", "transcriber_phase")
    @classmethod
    def _finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v


class SourceSection(_Section):
    brightness: float = Field(2e4, ge=0)
    pump_power: float = Field(2.5, ge=0)
    filter_width: float = Field(200e-12, gt=0)
    wavelength: float = Field(1540e-9, gt=0)
    bandwidth: Optional[float] = Field(None, ge=0)
    multipair_budget: float = Field(0.01, ge=0)


class ChannelSection(_Section):
    loss_db_alice: float = Field(2.5, ge=0)
    loss_db_bob: float = Field(2.5, ge=0)


class DetectorSection(_Section):
    efficiency: float = Field(0.20, ge=0, le=1)
    dark_rate: float = Field(1e4, ge=0)
    jitter_sigma: float = Field(DEFAULT_JITTER_SIGMA, ge=0)
    dead_time: float = Field(0.0, ge=0)
    mode: Literal["free_running", "gated"] = "free_running"
    gate_width: float = Field(14e-9, ge=0)
    gate_delay: float = 0.0


class AnalysisSection(_Section):
    window: float = Field(1.5e-9, gt=0)
    histogram_bin_width: float = Field(20e-12, gt=0)
    histogram_range: float = Field(7e-9, gt=0)
    scan_points: int = Field(16, ge=4)
    scan_phase_b: List[float] = Field(default_factory=lambda: [0.0, math.pi / 2])


class WitnessSection(_Section):
    method: Literal["auto", "visibility", "direct"] = "auto"
    threshold_sigmas: float = Field(5.0, ge=0)


class RunConfig(_Section):
    seed: Optional[int] = None
    duration: float = Field(16.0, ge=0)
    workers: int = Field(1, ge=1)
    output_dir: str = "out"
    engine: EngineSection = Field(default_factory=EngineSection)
    source: SourceSection = Field(default_factory=SourceSection)
    channel: ChannelSection = Field(default_factory=ChannelSection)
    alice: DetectorSection = Field(default_factory=DetectorSection)
    bob: DetectorSection = Field(default_factory=lambda: DetectorSection(mode="gated"))
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)
    witness: WitnessSection = Field(default_factory=WitnessSection)

    # conversions to the library's value types

    def engine_config(self, **overrides) -> EngineConfig:
        d = self.engine.model_dump(exclude={"nu", "mu"})
        d.update(overrides)
        return EngineConfig(**d)

    def weights(self) -> CoherenceWeights:
        derived = CoherenceWeights.from_config(self.engine_config())
        return CoherenceWeights(
            nu=derived.nu if self.engine.nu is None else self.engine.nu,
            mu=derived.mu if self.engine.mu is None else self.engine.mu,
        )

    def source_params(self) -> SourceParams:
        s = self.source
        bw = bandwidth_ghz(s.filter_width, s.wavelength) if s.bandwidth is None else s.bandwidth
        return SourceParams(s.brightness, s.pump_power, bw, s.multipair_budget)

    def channel_params(self) -> ChannelParams:
        return ChannelParams(**self.channel.model_dump())

    def detector_params(self, party: str) -> DetectorParams:
        return DetectorParams(**getattr(self, party).model_dump())


def _line_index(node, path=(), out=None):
    """Map key paths to 1-based line numbers from a composed YAML tree."""
    if out is None:
        out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (k.value,)
            out[p] = k.start_mark.line + 1
            _line_index(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            p = path + (i,)
            out[p] = v.start_mark.line + 1
            _line_index(v, p, out)
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
        tree = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError([f"{where}: invalid YAML: {exc}"]) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError([f"{source}: top level must be a mapping"])
    lines = _line_index(tree) if tree is not None else {}
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            line = None
            for n in range(len(loc), 0, -1):
                if loc[:n] in lines:
                    line = lines[loc[:n]]
                    break
            where = f"{source}:{line}" if line else source
            field = ".".join(str(p) for p in loc) or "<root>"
            msgs.append(f"{where}: {field}: {err['msg']}")
        raise ConfigError(msgs) from None


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from None
    return parse_config(text, path)
