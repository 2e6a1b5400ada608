"""FastAPI service wrapping the harness.

Exposes task generation, context assembly, scoring, sensitivity, and curve
fitting over HTTP, hosts deterministic mock models behind an
OpenAI-compatible ``/v1/chat/completions`` endpoint (so a client can be
pointed at this service for end-to-end validation), and manages background
runs submitted with the same JSON configuration the CLI uses.
"""

from __future__ import annotations

import threading
import time
import uuid
from fractions import Fraction

from fastapi import FastAPI, HTTPException

from .. import __version__, analysis, mixer, semtrace
from ..client import solve_from_prompt, truncate_to_tokens
from ..corpus import estimate_tokens, from_entries
from ..rng import ALGORITHM
from ..runner import ConfigError, config_from_dict, run
from ..scoring import score_prediction, score_retrieval, parse_literal, ParseError
from ..sensitivity import SensitivityError, sensitivity
from .schemas import (
    AssembleRequest,
    AssembleResponse,
    ChatCompletionRequest,
    FitRequest,
    FitResponse,
    GenerateRequest,
    GenerateResponse,
    GeneratedTask,
    HealthResponse,
    RunStatus,
    RunSubmission,
    ScorePredictionRequest,
    ScoreRetrievalRequest,
    ScoreResponse,
    SensitivityRequest,
    SensitivityResponse,
)


class _RunRegistry:
    """In-memory state of background runs, keyed by submission id."""

    def __init__(self):
        self._lock = threading.Lock()
        self._runs: dict[str, dict] = {}

    def create(self) -> str:
        submission_id = uuid.uuid4().hex[:12]
        with self._lock:
            self._runs[submission_id] = {"state": "running"}
        return submission_id

    def finish(self, submission_id: str, **fields) -> None:
        with self._lock:
            self._runs[submission_id] = fields

    def get(self, submission_id: str) -> dict | None:
        with self._lock:
            record = self._runs.get(submission_id)
            return dict(record) if record else None


def create_app() -> FastAPI:
    app = FastAPI(title="coderecall", version=__version__)
    registry = _RunRegistry()

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__, prng=ALGORITHM)

    @app.post("/semtrace/generate", response_model=GenerateResponse)
    def generate(request: GenerateRequest):
        tasks = semtrace.generate_dataset(request.seed, request.digits, request.count)
        return GenerateResponse(
            tasks=[
                GeneratedTask(
                    seed=t.seed,
                    digits=t.digits,
                    x=t.x,
                    k=t.k,
                    assignments=[[i, y] for i, y in t.assignments],
                    expected=list(t.expected),
                    source=semtrace.render(t),
                )
                for t in tasks
            ]
        )

    @app.post("/context/assemble", response_model=AssembleResponse)
    def assemble(request: AssembleRequest):
        target = mixer.TargetSnippet(
            id=request.target.id,
            source=request.target.source,
            input_literal=request.target.input,
            output_literal=request.target.output,
        )
        try:
            corpus = from_entries((d.id, d.source) for d in request.distractors)
            context = mixer.mix(
                target,
                list(corpus.entries),
                request.position_index,
                request.positions,
                request.seed,
            )
        except (mixer.MixError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return AssembleResponse(**mixer.context_to_dict(context))

    @app.post("/score/prediction", response_model=ScoreResponse)
    def score_prediction_endpoint(request: ScorePredictionRequest):
        try:
            gold = parse_literal(request.gold).value
        except ParseError as exc:
            raise HTTPException(status_code=422, detail=f"gold literal: {exc}")
        return ScoreResponse(**score_prediction(request.answer, gold, request.task_type).to_dict())

    @app.post("/score/retrieval", response_model=ScoreResponse)
    def score_retrieval_endpoint(request: ScoreRetrievalRequest):
        return ScoreResponse(**score_retrieval(request.answer, request.gold, request.granularity).to_dict())

    @app.post("/sensitivity/value", response_model=SensitivityResponse)
    def sensitivity_endpoint(request: SensitivityRequest):
        try:
            value = sensitivity(
                Fraction(request.r_full).limit_denominator(10 ** 9),
                [Fraction(r).limit_denominator(10 ** 9) for r in request.r_incomplete],
                Fraction(request.epsilon).limit_denominator(10 ** 15),
            )
        except SensitivityError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return SensitivityResponse(sensitivity=float(value))

    @app.post("/fit/exponential", response_model=FitResponse)
    def fit_endpoint(request: FitRequest):
        try:
            fit = analysis.fit_exponential(
                [(p.x, p.y) for p in request.points],
                [p.weight for p in request.points],
            )
        except analysis.AnalysisError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return FitResponse(
            a=fit.a, b=fit.b, c=fit.c, residual_norm=fit.residual_norm,
            converged=fit.converged, iterations=fit.iterations, note=fit.note,
        )

    @app.post("/v1/chat/completions")
    def chat_completions(request: ChatCompletionRequest):
        """Deterministic mock models behind the standard chat wire format."""
        user_messages = [m for m in request.messages if m.role == "user"]
        if not user_messages:
            raise HTTPException(status_code=422, detail="no user message")
        user_text = user_messages[0].content
        prefill = request.messages[-1].content if request.messages[-1].role == "assistant" else ""

        if request.model == "mock-echo":
            text = prefill
        elif request.model == "mock-oracle":
            text = solve_from_prompt(user_text).text
        elif request.model.startswith("mock-truncating-"):
            try:
                budget = int(request.model.rsplit("-", 1)[1])
            except ValueError:
                raise HTTPException(status_code=422, detail="model must be mock-truncating-<tokens>")
            reply = solve_from_prompt(truncate_to_tokens(user_text, budget))
            text = reply.text if reply.solved else "[]\n```"
        else:
            raise HTTPException(status_code=404, detail=f"unknown mock model {request.model!r}")

        return {
            "id": f"mockcmpl-{uuid.uuid4().hex[:10]}",
            "object": "chat.completion",
            "created": int(time.time()),
            "model": request.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": estimate_tokens(user_text),
                "completion_tokens": estimate_tokens(text),
                "total_tokens": estimate_tokens(user_text) + estimate_tokens(text),
            },
        }

    @app.post("/runs", response_model=RunStatus)
    def submit_run(submission: RunSubmission):
        try:
            config = config_from_dict(submission.config)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        submission_id = registry.create()

        def work():
            from ..pyexec import ProtocolExecutor, SemTraceGrammarExecutor

            executor = (
                ProtocolExecutor(list(config.executor_cmd))
                if config.executor_cmd
                else SemTraceGrammarExecutor()
            )
            try:
                result = run(config, executor=executor, progress=lambda *_: None)
                registry.finish(
                    submission_id,
                    state="done" if result.exit_code == 0 else "partial",
                    total_instances=result.total_instances,
                    written=result.written,
                    failed=result.failed,
                    log_path=str(result.log_path),
                )
            except Exception as exc:
                registry.finish(submission_id, state="failed", detail=str(exc))
            finally:
                executor.close()

        threading.Thread(target=work, daemon=True).start()
        return RunStatus(run_id=submission_id, state="running")

    @app.get("/runs/{submission_id}", response_model=RunStatus)
    def run_status(submission_id: str):
        record = registry.get(submission_id)
        if record is None:
            raise HTTPException(status_code=404, detail="unknown run")
        return RunStatus(run_id=submission_id, **record)

    return app


app = create_app()
