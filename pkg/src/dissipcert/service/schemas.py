"""Pydantic request/response models for the certification service."""

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, Field


class ProblemRequest(BaseModel):
    problem_text: str


class ProblemSummary(BaseModel):
    n: int
    m: int
    k: int
    bounded: bool
    lq: bool
    lq_reason: Optional[str] = None


class EquilibriumRequest(BaseModel):
    problem_text: str
    mu: float = Field(0.5, ge=0.0, le=1.0)
    weights: Optional[List[float]] = None   # overrides mu for k > 2


class EquilibriumResponse(BaseModel):
    x: List[float]
    u: List[float]
    nu: List[float]
    kkt_residual: float
    cost_value: float
    regular: bool
    sosc: bool
    interior: bool
    tied: List[List[float]]
    closed_form_gap: Optional[float] = None  # vs scalar LQ formula, if LQ


class CertifyRequest(BaseModel):
    problem_text: str
    mu: Optional[float] = Field(None, ge=0.0, le=1.0)
    grid: Optional[int] = Field(None, ge=2)   # weight grid instead of one mu
    samples_grid: int = Field(200, ge=2)
    samples_random: int = Field(1000, ge=0)
    seed: int = 0
    threads: int = Field(1, ge=1)
    lower_bound: Optional[str] = None        # convex lower bound expression


class CertificateModel(BaseModel):
    status: str
    path: str
    weights: List[float]
    equilibrium: Optional[dict] = None
    storage: Optional[dict] = None
    m1: Optional[float] = None
    m2: Optional[float] = None
    alpha_coefficient: Optional[float] = None
    xu_dissipative: bool = False
    sampled: bool = False
    sample_count: int = 0
    evidence: List[dict] = []
    detail: str = ""


class CertifyResponse(BaseModel):
    certificates: List[CertificateModel]


class SweepRequest(BaseModel):
    problem_text: str
    grid: int = Field(83, ge=3)
    jump_threshold: Optional[float] = Field(None, gt=0.0)
    seed: int = 0


class SweepRecordModel(BaseModel):
    mu: float
    x: Optional[List[float]] = None
    u: Optional[List[float]] = None
    nu: Optional[List[float]] = None
    lam_tilde: Optional[List[float]] = None
    min_rotated_hess_eig: Optional[float] = None
    status: str
    detail: str = ""
    failed: bool = False


class JumpModel(BaseModel):
    mu_lo: float
    mu_hi: float
    size: float


class SweepResponse(BaseModel):
    threshold: float
    records: List[SweepRecordModel]
    jumps: List[JumpModel]


class LqRequest(BaseModel):
    problem_text: str
    grid: int = Field(101, ge=3)
    require_psd: bool = False


class LmiModel(BaseModel):
    cost_index: int
    P: List[List[float]]
    margin: float
    feasible: bool
    psd_P: bool


class NuLinearityModel(BaseModel):
    max_deviation: float
    argmax_mu: float
    nu_1: float
    nu_2: float
    condition_a_eq_1: bool
    condition_qr: bool


class LqResponse(BaseModel):
    lq: bool
    reason: Optional[str] = None
    A: Optional[List[List[float]]] = None
    B: Optional[List[List[float]]] = None
    lmi: List[LmiModel] = []
    nu_linearity: Optional[NuLinearityModel] = None


class ParetoRequest(BaseModel):
    problem_text: str
    x0: List[float]
    horizon: int = Field(10, ge=1)
    grid: int = Field(101, ge=2)
    restarts: int = Field(5, ge=0)
    seed: int = 0
    include_trajectories: bool = False


class ParetoPointModel(BaseModel):
    mu: float
    J1: float
    J2: float
    converged: bool


class ParetoWeightModel(BaseModel):
    mu: float
    J1: Optional[float] = None
    J2: Optional[float] = None
    converged: Optional[bool] = None
    proj_grad: Optional[float] = None
    error: Optional[str] = None
    x: Optional[List[List[float]]] = None
    u: Optional[List[List[float]]] = None


class ParetoResponse(BaseModel):
    front: List[ParetoPointModel]
    per_weight: List[ParetoWeightModel]
