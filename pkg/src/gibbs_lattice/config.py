"""
Experiment configuration: a single versioned JSON document.

The models reject unknown fields and round-trip losslessly through
``model_dump_json`` / ``model_validate_json``.  Builders turn the
declarative sections into library objects.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .lattice import AffineProfile, Box, Domain, Profile
from .potentials import DecayWeights, HypothesisReport, SBVPotential, SobolevPotential, validate
from .sampler import ChainConfig
from .sbv_energy import JumpDatum

__all__ = [
    "SCHEMA_VERSION",
    "ExperimentConfig",
    "ConfigError",
    "load_config",
    "validate_config",
    "config_digest",
]

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WeightsSpec(_Strict):
    d: int = Field(1, ge=1)
    c0: float = Field(1.0, gt=0)
    s: Optional[float] = None
    support: Literal["power", "nearest"] = "nearest"
    mode: Literal["sobolev", "sbv"] = "sobolev"

    def build(self) -> DecayWeights:
        return DecayWeights(self.d, c0=self.c0, s=self.s, support=self.support, mode=self.mode)


class SobolevSpec(_Strict):
    family: Literal["sobolev"] = "sobolev"
    p: float = Field(2.0, ge=1)
    weights: WeightsSpec = WeightsSpec()
    coefficient: Optional[list] = None

    def build(self) -> SobolevPotential:
        return SobolevPotential(self.p, self.weights.build(), self.coefficient)


class SBVSpec(_Strict):
    family: Literal["sbv"]
    weights: WeightsSpec = WeightsSpec(mode="sbv")
    p: float = Field(2.0, ge=1)
    c1: float = Field(1.0, gt=0)
    b: float = Field(1.0, gt=0)
    c2: float = Field(1.0, ge=0)
    alpha: float = Field(0.5, gt=0, le=1)
    tau: float = Field(1.0, gt=0)
    gamma: float = 0.5

    def build(self) -> SBVPotential:
        return SBVPotential(self.weights.build(), p=self.p, c1=self.c1, b=self.b, c2=self.c2,
                            alpha=self.alpha, tau=self.tau, gamma=self.gamma)


class BoxSpec(_Strict):
    lo: List[float]
    hi: List[float]
    closed: bool = False

    @model_validator(mode="after")
    def _shape(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("lo and hi must be nonempty and of equal length")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError("every lo must be below the matching hi")
        return self


class RegionSpec(_Strict):
    boxes: List[BoxSpec] = [BoxSpec(lo=[0.0], hi=[1.0])]
    dim_m: int = Field(1, ge=1)

    def build(self) -> Domain:
        return Domain(tuple(Box(tuple(b.lo), tuple(b.hi), b.closed) for b in self.boxes))


class AffineSpec(_Strict):
    kind: Literal["affine"] = "affine"
    M: List[List[float]] = [[0.0]]
    offset: Optional[List[float]] = None

    def build(self):
        return AffineProfile(self.M, self.offset)


class SineSpec(_Strict):
    """``u(x) = M x + amplitude sin(2 pi k . x + phase)`` for scalar fields."""

    kind: Literal["sine"]
    amplitude: float = 1.0
    wavevector: List[float] = [1.0]
    phase: float = 0.0
    M: Optional[List[float]] = None

    def build(self):
        k = np.asarray(self.wavevector, dtype=float)
        lin = np.zeros_like(k) if self.M is None else np.asarray(self.M, dtype=float)
        A, ph = self.amplitude, self.phase
        return Profile(lambda x: x @ lin + A * np.sin(2 * np.pi * (x @ k) + ph))


class JumpSpec(_Strict):
    kind: Literal["jump"]
    a: List[float]
    b: List[float]
    nu: List[float]
    x0: List[float]
    M: Optional[List[List[float]]] = None

    def datum(self) -> JumpDatum:
        return JumpDatum(tuple(self.a), tuple(self.b), tuple(self.nu), tuple(self.x0))

    def build(self):
        prof = self.datum().profile()
        if self.M is None:
            return prof
        M = np.asarray(self.M, dtype=float)
        return Profile(lambda x: prof(x) + x @ M.T, prof.dim_m)


ProfileSpec = Union[AffineSpec, SineSpec, JumpSpec]


class ConstraintModel(_Strict):
    kappas: List[float] = [0.5]
    p: float = Field(2.0, ge=1)
    mode: Literal["bulk", "pinned", "soft_clamp"] = "pinned"
    r0: float = Field(1.0, gt=0)

    @field_validator("kappas")
    @classmethod
    def _positive(cls, v):
        if not v or any(not (k > 0) for k in v):
            raise ValueError("kappas must be a nonempty list of positive numbers")
        return v


class ScheduleSpec(_Strict):
    epsilons: List[float] = [0.25, 0.125, 0.0625]

    @field_validator("epsilons")
    @classmethod
    def _positive(cls, v):
        if not v or any(not (0 < e < math.inf) for e in v):
            raise ValueError("epsilons must be a nonempty list of positive numbers")
        return v


class SamplerSpec(_Strict):
    steps: int = Field(4000, ge=1)
    burn_in: int = Field(500, ge=0)
    proposal_scale: Optional[float] = None
    chains: int = Field(4, ge=1)
    thin: int = Field(1, ge=1)

    def build(self, seed: int) -> ChainConfig:
        return ChainConfig(self.steps, self.burn_in, self.proposal_scale, seed, self.chains, self.thin)


class VerifySpec(_Strict):
    n_zigzag: int = Field(1000, ge=1)


class OutputSpec(_Strict):
    dir: str = "out"
    results: str = "results.csv"
    manifest: str = "manifest.json"
    summary: str = "summary.json"


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    kind: Literal["free-energy", "homogenize", "sbv-probe", "verify", "scan"]
    seed: int = Field(0, ge=0, lt=2 ** 64)
    potential: Union[SobolevSpec, SBVSpec] = Field(default_factory=SobolevSpec, discriminator="family")
    region: RegionSpec = RegionSpec()
    profile: ProfileSpec = Field(default_factory=AffineSpec, discriminator="kind")
    constraint: ConstraintModel = ConstraintModel()
    schedule: ScheduleSpec = ScheduleSpec()
    sampler: SamplerSpec = SamplerSpec()
    method: Literal["auto", "exact", "ti"] = "auto"
    beta: float = Field(1.0, gt=0)
    cutoff: Optional[float] = None
    verify: VerifySpec = VerifySpec()
    outputs: OutputSpec = OutputSpec()

    def chain(self, seed: Optional[int] = None) -> ChainConfig:
        return self.sampler.build(self.seed if seed is None else seed)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


class ConfigError(ValueError):
    """Invalid configuration; ``diagnostics`` holds ``line/field: message`` strings."""

    def __init__(self, diagnostics: list):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


def _field_line(text: str, loc: tuple) -> Optional[int]:
    """Best-effort line of the last named key of ``loc`` in the JSON text."""
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    needle = f'"{keys[-1]}"'
    for n, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return n
    return None


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        diags = []
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"])
            line = _field_line(text, err["loc"])
            where = f"line {line}, field {loc}" if line else f"field {loc}"
            diags.append(f"{where}: {err['msg']}")
        raise ConfigError(diags) from exc


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_digest(cfg: ExperimentConfig) -> str:
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def validate_config(path) -> dict:
    """Static validation: schema, domain consistency and the potential's hypothesis battery."""
    report = {"path": str(path), "ok": True, "diagnostics": [], "hypotheses": None}
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        report["ok"] = False
        report["diagnostics"] = exc.diagnostics
        return report
    except OSError as exc:
        report["ok"] = False
        report["diagnostics"] = [str(exc)]
        return report
    diags = []
    d = cfg.potential.weights.d
    for k, b in enumerate(cfg.region.boxes):
        if len(b.lo) != d:
            diags.append(f"field region.boxes.{k}: box dimension {len(b.lo)} != potential dimension {d}")
    if cfg.kind == "homogenize" and not isinstance(cfg.profile, AffineSpec):
        diags.append("field profile.kind: homogenize requires an affine profile")
    if cfg.kind == "sbv-probe" and not isinstance(cfg.profile, JumpSpec):
        diags.append("field profile.kind: sbv-probe requires a jump profile")
    if cfg.kind == "sbv-probe" and not isinstance(cfg.potential, SBVSpec):
        diags.append("field potential.family: sbv-probe requires the sbv family")
    try:
        pot = cfg.potential.build()
        rep: HypothesisReport = validate(pot, cfg.schedule.epsilons if isinstance(pot, SBVPotential) else ())
        report["hypotheses"] = rep.as_dict()
        for c in rep.failures():
            diags.append(f"field potential: hypothesis {c.name} failed ({c.violation})")
    except (ValueError, TypeError) as exc:
        diags.append(f"field potential: {exc}")
    report["diagnostics"] = diags
    report["ok"] = not diags
    return report
