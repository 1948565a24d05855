"""FastAPI backend for mindscape.

Exposes signature selection, signature-conditioned retrieval and the
signature agent over HTTP.
"""

import logging
import os
import time
from datetime import datetime
from typing import Any, Literal, Optional

from fastapi import Depends, FastAPI, Request, status
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from mindscape.runtime import MindscapeRuntime, get_runtime
from mindscape.shared.errors import MindscapeError

logger = logging.getLogger(__name__)

app = FastAPI(
    title="Mindscape API",
    description="Signature-guided retrieval and question answering over long documents",
    version="1.0.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=os.getenv("CORS_ORIGINS", "*").split(","),
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.on_event("startup")
async def startup_event():
    """Loads the indexes so the first request does not pay for it."""
    logger.info("🚀 Starting Mindscape API...")
    try:
        runtime = get_runtime()
        logger.info(f"✅ Mindscape API ready with documents {runtime.doc_ids}")
    except Exception as e:
        logger.warning(f"⚠️ Index not loaded at startup: {e}")


@app.exception_handler(MindscapeError)
async def mindscape_error_handler(request: Request, exc: MindscapeError):
    return JSONResponse(
        status_code=status.HTTP_400_BAD_REQUEST,
        content={"success": False, "error_type": type(exc).__name__, "error_message": str(exc)},
    )


@app.exception_handler(ValueError)
async def value_error_handler(request: Request, exc: ValueError):
    return JSONResponse(
        status_code=status.HTTP_400_BAD_REQUEST,
        content={"success": False, "error_type": type(exc).__name__, "error_message": str(exc)},
    )


@app.exception_handler(Exception)
async def unexpected_error_handler(request: Request, exc: Exception):
    logger.error(f"❌ Unhandled error on {request.url.path}: {exc}")
    return JSONResponse(
        status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
        content={"success": False, "error_type": "InternalError", "error_message": str(exc)},
    )


def runtime_dependency() -> MindscapeRuntime:
    return get_runtime()


# Pydantic models for API requests/responses
class HealthResponse(BaseModel):
    status: str
    timestamp: str
    documents: list[str] = Field(default_factory=list)
    index_loaded: bool
    error_message: Optional[str] = None


class SignatureRequest(BaseModel):
    question: str
    doc_id: Optional[str] = None
    mode: Optional[Literal["coverage", "first-k"]] = None


class SignatureResponse(BaseModel):
    success: bool = True
    doc_id: Optional[str]
    mode: str
    selected: list[int]
    signature: str
    candidate_ids: list[int]
    pool_size: int
    execution_time: float


class RetrieveRequest(BaseModel):
    question: str
    doc_id: Optional[str] = None
    k: Optional[int] = Field(default=None, ge=1)
    alpha: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class Passage(BaseModel):
    chunk_id: int
    score: float
    text: str


class RetrieveResponse(BaseModel):
    success: bool = True
    signature: str
    selected: list[int]
    passages: list[Passage]
    execution_time: float


class AgentRequest(BaseModel):
    question: str
    doc_id: Optional[str] = None
    method: Literal["query-only", "mia-emb", "mia-rag", "agent", "agent-no-sig"] = "agent"
    task_kind: Literal["detective", "open_qa", "claim"] = "open_qa"
    options: Optional[list[str]] = None
    variant: Optional[Literal["chunks", "chunks+sig", "chunks+evi", "chunks+sig+evi"]] = None


class AgentResponse(BaseModel):
    success: bool
    answer: Optional[str]
    raw_answer: str
    trace: dict[str, Any]
    execution_time: float
    timestamp: str
    error_message: Optional[str] = None


@app.get("/", response_model=HealthResponse)
def health_check():
    """Health check endpoint."""
    try:
        runtime = get_runtime()
        return HealthResponse(
            status="healthy",
            timestamp=datetime.now().isoformat(),
            documents=runtime.doc_ids,
            index_loaded=True,
        )
    except Exception as e:
        return HealthResponse(
            status="degraded",
            timestamp=datetime.now().isoformat(),
            index_loaded=False,
            error_message=str(e),
        )


@app.post("/api/signature", response_model=SignatureResponse)
def select_signature(
    request: SignatureRequest, runtime: MindscapeRuntime = Depends(runtime_dependency)
):
    """Step-0 signature of a question."""
    start_time = time.time()
    mode = request.mode or runtime.config.signature.mode
    init = runtime.signature(request.question, request.doc_id, mode=mode)
    return SignatureResponse(
        doc_id=request.doc_id,
        mode=mode,
        selected=list(init.signature.selected),
        signature=init.signature.rendered_text,
        candidate_ids=init.candidates.ids,
        pool_size=init.pool_size,
        execution_time=time.time() - start_time,
    )


@app.post("/api/retrieve", response_model=RetrieveResponse)
def retrieve_passages(
    request: RetrieveRequest, runtime: MindscapeRuntime = Depends(runtime_dependency)
):
    """Signature-conditioned retrieval for a question."""
    start_time = time.time()
    init, ranked = runtime.retrieve(request.question, request.doc_id, request.k, request.alpha)
    index = runtime.retriever(request.doc_id).index
    return RetrieveResponse(
        signature=init.signature.rendered_text,
        selected=list(init.signature.selected),
        passages=[
            Passage(chunk_id=chunk_id, score=score, text=index.chunk(chunk_id).text)
            for chunk_id, score in ranked.entries
        ],
        execution_time=time.time() - start_time,
    )


@app.post("/api/agent", response_model=AgentResponse)
def ask_agent(request: AgentRequest, runtime: MindscapeRuntime = Depends(runtime_dependency)):
    """Answers a question with the signature agent or a static pipeline."""
    start_time = time.time()
    result = runtime.ask(
        request.question,
        request.doc_id,
        method=request.method,
        task_kind=request.task_kind,
        options=request.options,
        variant=request.variant,
    )
    return AgentResponse(
        success=result.answer.error is None,
        answer=result.answer_text,
        raw_answer=result.answer.raw,
        trace=result.trace(),
        execution_time=time.time() - start_time,
        timestamp=datetime.now().isoformat(),
        error_message=result.answer.error,
    )


if __name__ == "__main__":
    import uvicorn

    port = int(os.getenv("PORT", 8001))
    uvicorn.run(app, host="0.0.0.0", port=port)
