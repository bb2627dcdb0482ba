from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from config import settings
from mac_model import AuxStructure, MacChannel, preset_channel


# Solver / Decoder Models
class SolverConfig(BaseModel):
    restarts: int = Field(default_factory=lambda: settings.solver_restarts, ge=0)
    tol: float = Field(default_factory=lambda: settings.solver_tol, gt=0)
    max_iter: int = Field(default_factory=lambda: settings.solver_max_iter, ge=1)
    seed: int = Field(default_factory=lambda: settings.seed, ge=0)


class DecoderConfig(BaseModel):
    """
    Threshold for the collision test. The default schedule scales with
    n^(-1/2) and takes no eta; the constant schedule keeps eta fixed for
    every n.
    """

    eta: Optional[float] = Field(None, ge=0)
    eta_schedule: Literal["default", "constant"] = Field("default", alias="etaSchedule")

    class Config:
        populate_by_name = True

    @model_validator(mode="after")
    def check_eta_schedule(self):
        if self.eta_schedule == "constant" and not (self.eta and self.eta > 0):
            raise ValueError("constant eta schedule needs eta > 0")
        if self.eta_schedule == "default" and self.eta is not None:
            raise ValueError("eta is only read by the constant schedule; set etaSchedule to \"constant\"")
        return self


# Channel / Source Models
class ChannelSpec(BaseModel):
    preset: Optional[str] = None
    x: Optional[int] = Field(None, ge=1)
    y: Optional[int] = Field(None, ge=1)
    z: Optional[int] = Field(None, ge=1)
    kernel: Optional[List[List[List[float]]]] = None

    @model_validator(mode="after")
    def check_channel(self):
        if (self.preset is None) == (self.kernel is None):
            raise ValueError("give either a channel preset or an explicit kernel")
        self.build()
        return self

    def build(self):
        if self.preset is not None:
            return preset_channel(self.preset)
        data = {"x": self.x or len(self.kernel), "y": self.y or len(self.kernel[0]),
                "z": self.z or len(self.kernel[0][0]), "kernel": self.kernel}
        return MacChannel.from_json(data)


class AuxModel(BaseModel):
    p_u: List[float] = Field(default_factory=lambda: [1.0])
    p_x_given_u: List[List[float]]
    p_y_given_u: List[List[float]]

    @model_validator(mode="after")
    def check_aux(self):
        self.build()
        return self

    def build(self):
        return AuxStructure(self.p_u, self.p_x_given_u, self.p_y_given_u)


class SourceModel(BaseModel):
    q: Optional[List[float]] = None
    bernoulli: Optional[float] = Field(None, ge=0, le=1)

    @model_validator(mode="after")
    def check_source(self):
        if (self.q is None) == (self.bernoulli is None):
            raise ValueError("give either q or bernoulli for a source")
        self.build()
        return self

    def build(self):
        from jscc import SourceSpec

        if self.bernoulli is not None:
            return SourceSpec.bernoulli(self.bernoulli)
        return SourceSpec.from_probs(self.q)


class LibraryModel(BaseModel):
    """Codebook library family; kernels are rounded to types for each n"""

    p_u: List[float] = Field(default_factory=lambda: [1.0])
    x_kernels: List[List[List[float]]]
    y_kernels: List[List[List[float]]]
    rates1: List[float]
    rates2: List[float]
    distinct: bool = Field(default_factory=lambda: settings.distinct_codewords)

    @model_validator(mode="after")
    def check_library(self):
        if len(self.x_kernels) != len(self.rates1) or len(self.y_kernels) != len(self.rates2):
            raise ValueError("need one rate per codebook kernel")
        if any(r < 0 for r in self.rates1 + self.rates2):
            raise ValueError("rates must be non-negative")
        return self


class Prop2Model(BaseModel):
    p_x_given_u_k: List[List[float]]
    r1k: float = Field(..., ge=0)
    r2j: float = Field(..., ge=0)
    eta: float = Field(..., gt=0)


# Experiment Model
Subcommand = Literal["exponent", "simulate", "decode", "packing", "jscc", "prop2", "selftest"]

_REQUIRED_SECTIONS = {
    "exponent": ("channel", "aux"),
    "simulate": ("channel", "library"),
    "decode": ("channel",),
    "packing": ("library",),
    "jscc": ("channel", "source1", "source2", "aux"),
    "prop2": ("channel", "aux", "prop2"),
    "selftest": (),
}


class ExperimentConfig(BaseModel):
    subcommand: Subcommand
    seed: int = Field(default_factory=lambda: settings.seed, ge=0)
    channel: Optional[ChannelSpec] = None
    aux: Optional[AuxModel] = None
    source1: Optional[SourceModel] = None
    source2: Optional[SourceModel] = None
    library: Optional[LibraryModel] = None
    library_file: Optional[str] = None
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    prop2: Optional[Prop2Model] = None
    rates: List[Tuple[float, float]] = Field(default_factory=list)
    n_list: List[int] = Field(default_factory=list)
    pair: Tuple[int, int] = (0, 0)
    message: Optional[Tuple[int, int, int, int]] = None
    z: Optional[List[int]] = None
    trials: int = Field(default_factory=lambda: settings.decay_trials, ge=1)
    error_mode: Literal["auto", "exact", "mc"] = "auto"
    jscc_mode: Literal["classical", "type-informed"] = "classical"
    max_tries: int = Field(10, ge=1)
    grid_points: Optional[int] = Field(None, ge=2)
    aux_budget: Optional[int] = Field(None, ge=1)
    equivalence_check: bool = False
    grid_check: bool = False
    target_exponent: bool = False
    expect: Optional[
        Literal["interior-positive", "exterior-zero", "err-d-trend", "err-c-trend", "error-decreasing"]
    ] = None

    @field_validator("n_list")
    @classmethod
    def check_n_list(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("blocklengths must be at least 1")
        return v

    @model_validator(mode="after")
    def check_sections(self):
        for name in _REQUIRED_SECTIONS[self.subcommand]:
            if getattr(self, name) is None:
                raise ValueError(f"subcommand {self.subcommand!r} needs a {name!r} section")
        if self.subcommand == "decode" and self.library is None and self.library_file is None:
            raise ValueError("decode needs a library or a library_file")
        if self.subcommand == "exponent" and not self.rates:
            raise ValueError("exponent needs at least one rate pair")
        if self.subcommand in ("simulate", "packing", "jscc") and not self.n_list:
            raise ValueError(f"subcommand {self.subcommand!r} needs a non-empty n_list")
        if self.subcommand == "decode" and self.library_file is None and not self.n_list:
            raise ValueError("decode from a library section needs n_list for the blocklength")
        if self.library is not None:
            i, j = self.pair
            if not (0 <= i < len(self.library.rates1) and 0 <= j < len(self.library.rates2)):
                raise ValueError(f"pair {self.pair} does not index a codebook of the library")
        if self.library_file is not None and not Path(self.library_file).is_file():
            raise ValueError(f"library_file {self.library_file!r} does not exist")
        return self


# Report Models
class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: Optional[str] = None


class RunReport(BaseModel):
    subcommand: str
    seed: int
    config: Dict[str, Any]
    results: Dict[str, Any]
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# Error Models
class ErrorDetail(BaseModel):
    code: str
    message: str
    details: Optional[str] = None


class ErrorResponse(BaseModel):
    error: ErrorDetail
