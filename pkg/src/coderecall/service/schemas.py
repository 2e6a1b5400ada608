"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str
    prng: str


class GenerateRequest(BaseModel):
    seed: int = 0
    digits: int = Field(default=2, ge=2, le=6)
    count: int = Field(default=10, ge=1, le=100_000)


class GeneratedTask(BaseModel):
    seed: int
    digits: int
    x: int
    k: int
    assignments: list[list[int]]
    expected: list[int]
    source: str


class GenerateResponse(BaseModel):
    tasks: list[GeneratedTask]


class SnippetIn(BaseModel):
    id: str
    source: str
    input: str | None = None
    output: str | None = None


class AssembleRequest(BaseModel):
    target: SnippetIn
    distractors: list[SnippetIn]
    position_index: int = Field(ge=0)
    positions: int = Field(default=11, ge=2)
    seed: int = 0


class ContextLineOut(BaseModel):
    key: str
    text: str
    origin: str


class AssembleResponse(BaseModel):
    lines: list[ContextLineOut]
    target_span: list[int]
    position_index: int
    positions: int
    n1_tokens: int
    n2_tokens: int
    granularity: float
    granularity_exact: str
    concentration: float
    concentration_exact: str


class ScorePredictionRequest(BaseModel):
    answer: str
    gold: str
    task_type: str = "semtrace_out"


class ScoreRetrievalRequest(BaseModel):
    answer: str
    gold: str
    granularity: str = "function"


class ScoreResponse(BaseModel):
    exact: bool
    partial: float | None
    partial_exact: str | None
    unresolved: bool
    parsed_answer: str | None
    failure_kind: str | None
    deferred: bool


class SensitivityRequest(BaseModel):
    r_full: float
    r_incomplete: list[float]
    epsilon: float = 1e-9


class SensitivityResponse(BaseModel):
    sensitivity: float


class FitPoint(BaseModel):
    x: float
    y: float
    weight: float = 1.0


class FitRequest(BaseModel):
    points: list[FitPoint]


class FitResponse(BaseModel):
    a: float
    b: float
    c: float
    residual_norm: float
    converged: bool
    iterations: int
    note: str | None = None


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatCompletionRequest(BaseModel):
    model: str
    messages: list[ChatMessage]
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int | None = None


class RunSubmission(BaseModel):
    config: dict


class RunStatus(BaseModel):
    run_id: str
    state: str
    detail: str | None = None
    total_instances: int | None = None
    written: int | None = None
    failed: int | None = None
    log_path: str | None = None
