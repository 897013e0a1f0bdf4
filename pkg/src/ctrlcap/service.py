"""HTTP service exposing captioning, relevance scoring, and sample browsing.

Highlights cross the wire as character offsets into the server-assembled
context text, so client and server tokenizers never need to agree. Model
sessions are single-writer: a per-controller lock serializes generations and
a bounded worker pool sheds load with 503 instead of queueing unboundedly.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .controllers import (
    pctrl_generate,
    pctrl_generate_cic,
    rctrl_generate,
    rctrl_generate_cic,
)
from .core import Context, CtrlCICSample, HighlightSet, ImageFeature
from .datasets import read_jsonl
from .errors import CtrlCapError, DegenerateEmbedding
from .metrics import highlight_recall  # noqa: F401  (re-exported for clients)
from .modeling.providers import HashEmbeddingProvider, OneHotEmbeddingProvider
from .modeling.train import Checkpoint
from .relevance import score_context_against_caption


class CaptionRequest(BaseModel):
    page_title: str
    section_title: str = ""
    body: str = ""
    aux_captions: list[str] = Field(default_factory=list)
    highlights: list[tuple[int, int]] = Field(default_factory=list)
    image_ref: str | None = None
    image_feature: list[float] | None = None
    controller: Literal["prompting", "recalibration"] = "prompting"
    num_captions: int = Field(default=1, ge=1, le=8)
    seed: int = 0
    alpha: float | None = None


class HighlightOut(BaseModel):
    char_start: int
    char_end: int
    text: str


class CaptionResponse(BaseModel):
    captions: list[str]
    applied_highlights: list[HighlightOut]
    relevance_heatmap: list[float] | None
    assembled_text: str
    model_version: str


class RelevanceRequest(BaseModel):
    page_title: str
    section_title: str = ""
    body: str = ""
    aux_captions: list[str] = Field(default_factory=list)
    caption: str


@dataclass
class ServiceState:
    checkpoints: dict[str, Checkpoint] = field(default_factory=dict)
    provider: object | None = None
    samples: dict[str, CtrlCICSample] = field(default_factory=dict)
    feature_store: dict[str, tuple[float, ...]] = field(default_factory=dict)
    pool_size: int = 4
    default_alpha: float = 0.1

    def __post_init__(self):
        self.pool = threading.Semaphore(self.pool_size)
        self.session_locks = {kind: threading.Lock() for kind in
                              ("prompting", "recalibration")}

    @staticmethod
    def sample_id(sample: CtrlCICSample) -> str:
        return f"{sample.sample_index}-{sample.highlight_index}"

    def add_samples(self, samples) -> None:
        for s in samples:
            if isinstance(s, CtrlCICSample):
                self.samples[self.sample_id(s)] = s
            self.feature_store.setdefault(s.image.source_id, tuple(s.image.vector))


def load_state(config_path: str | Path) -> ServiceState:
    """Build service state from a JSON config file with optional keys:
    checkpoints (kind -> path), dataset (JSONL path), provider
    ("onehot"|"hash"), pool_size, default_alpha."""
    cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
    provider_kind = cfg.get("provider", "onehot")
    provider = (OneHotEmbeddingProvider() if provider_kind == "onehot"
                else HashEmbeddingProvider())
    state = ServiceState(pool_size=cfg.get("pool_size", 4),
                         provider=provider,
                         default_alpha=cfg.get("default_alpha", 0.1))
    for kind, path in cfg.get("checkpoints", {}).items():
        state.checkpoints[kind] = Checkpoint.load(path)
    if cfg.get("dataset"):
        state.add_samples(read_jsonl(cfg["dataset"]))
    return state


def _model_version(ckpt: Checkpoint) -> str:
    import hashlib
    h = hashlib.sha256()
    params = ckpt.model.params if ckpt.model is not None else ckpt.predictor.params
    for name in sorted(params):
        h.update(params[name].tobytes())
    return f"{ckpt.kind}-{h.hexdigest()[:12]}"


def _resolve_context(req) -> Context:
    return Context.build(req.page_title, req.section_title, req.body, req.aux_captions)


def _resolve_spans(context: Context, pairs: list[tuple[int, int]]) -> HighlightSet:
    n = len(context.assembled_text)
    for i, (a, b) in enumerate(pairs):
        if not (0 <= a < b <= n):
            raise HTTPException(status_code=400,
                                detail={"error": "InvalidSpans", "span_index": i,
                                        "span": [a, b], "text_length": n})
    try:
        return HighlightSet.from_offset_pairs(context, pairs)
    except ValueError:
        # overlapping spans: report the first span that collides with a predecessor
        seen: list[tuple[int, int]] = []
        for i, (a, b) in enumerate(sorted(pairs)):
            if any(a < e and s < b for s, e in seen):
                raise HTTPException(status_code=400,
                                    detail={"error": "InvalidSpans", "span_index": i,
                                            "reason": "overlap"})
            seen.append((a, b))
        raise


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="ctrlcap service", version=__version__)

    @app.get("/v1/health")
    def health():
        kinds = sorted(state.checkpoints)
        status = "ok" if {"prompting", "recalibration"} & set(kinds) else "degraded"
        return {
            "status": status,
            "checkpoints": kinds,
            "model_versions": {k: _model_version(c) for k, c in state.checkpoints.items()},
            "providers": [getattr(state.provider, "provider_id", None)]
                         if state.provider else [],
            "num_samples": len(state.samples),
        }

    @app.get("/v1/samples")
    def list_samples():
        return {"ids": sorted(state.samples)}

    @app.get("/v1/samples/{sample_id}")
    def get_sample(sample_id: str):
        sample = state.samples.get(sample_id)
        if sample is None:
            raise HTTPException(status_code=404, detail={"error": "UnknownSample",
                                                         "id": sample_id})
        return sample.to_record()

    @app.post("/v1/relevance")
    def relevance(req: RelevanceRequest):
        if state.provider is None:
            raise HTTPException(status_code=503, detail={"error": "ProviderUnavailable"})
        if not req.caption.strip():
            raise HTTPException(status_code=400, detail={"error": "EmptyCaption"})
        context = _resolve_context(req)
        scores = _word_scores(context, req.caption)
        return {"word_scores": scores,
                "words": [g.text for g in context.word_groups],
                "assembled_text": context.assembled_text}

    def _word_scores(context: Context, caption: str) -> list[float] | None:
        if state.provider is None or not context.word_groups:
            return None
        try:
            rel = score_context_against_caption(
                context,
                state.provider.encode_tokens(context.token_texts()),
                state.provider.encode_tokens(caption.split()),
            )
        except (DegenerateEmbedding, CtrlCapError):
            return None
        return [rel.word_scores[j] for j in range(len(context.word_groups))]

    @app.post("/v1/caption", response_model=CaptionResponse)
    def caption(req: CaptionRequest):
        ckpt = state.checkpoints.get(req.controller)
        if ckpt is None or ckpt.model is None:
            raise HTTPException(status_code=409,
                                detail={"error": "NoCheckpoint",
                                        "controller": req.controller})
        if req.controller == "recalibration":
            predictor_ckpt = state.checkpoints.get("weight_predictor")
            if predictor_ckpt is None or predictor_ckpt.predictor is None:
                raise HTTPException(status_code=409,
                                    detail={"error": "NoCheckpoint",
                                            "controller": "weight_predictor"})

        context = _resolve_context(req)
        highlights = _resolve_spans(context, req.highlights)

        if req.image_feature is not None:
            image = ImageFeature(tuple(float(v) for v in req.image_feature),
                                 source_id="inline")
        elif req.image_ref is not None:
            vec = state.feature_store.get(req.image_ref)
            if vec is None:
                raise HTTPException(status_code=404,
                                    detail={"error": "UnknownImageRef",
                                            "image_ref": req.image_ref})
            image = ImageFeature(vec, source_id=req.image_ref)
        else:
            raise HTTPException(status_code=400,
                                detail={"error": "MissingImage",
                                        "reason": "provide image_ref or image_feature"})

        if not state.pool.acquire(blocking=False):
            raise HTTPException(status_code=503, detail={"error": "Busy"})
        try:
            with state.session_locks[req.controller]:
                captions = _generate(ckpt, req, context, image, highlights)
        except CtrlCapError as exc:
            raise HTTPException(status_code=500,
                                detail={"error": type(exc).__name__, "message": str(exc)})
        finally:
            state.pool.release()

        return CaptionResponse(
            captions=captions,
            applied_highlights=[HighlightOut(char_start=s.char_start,
                                             char_end=s.char_end, text=s.text)
                                for s in highlights],
            relevance_heatmap=_word_scores(context, captions[0]) if captions[0] else None,
            assembled_text=context.assembled_text,
            model_version=_model_version(ckpt),
        )

    def _generate(ckpt, req, context, image, highlights) -> list[str]:
        separator = ckpt.separator
        alpha = req.alpha if req.alpha is not None else state.default_alpha
        captions = []
        for i in range(req.num_captions):
            seed = req.seed + i
            if req.controller == "prompting":
                if highlights:
                    gen = pctrl_generate(ckpt.model, context, image, highlights,
                                         separator=separator, seed=seed)
                else:
                    gen = pctrl_generate_cic(ckpt.model, context, image,
                                             separator=separator, seed=seed)
            else:
                predictor = state.checkpoints["weight_predictor"].predictor
                if highlights:
                    gen = rctrl_generate(ckpt.model, predictor, context, image,
                                         highlights, alpha=alpha, seed=seed)
                else:
                    gen = rctrl_generate_cic(ckpt.model, predictor, context, image,
                                             seed=seed)
            captions.append(gen.caption.text)
        return captions

    app.state.service_state = state
    return app


def serve(config_path: str | Path, host: str = "127.0.0.1", port: int = 8040) -> None:
    import uvicorn

    app = create_app(load_state(config_path))
    uvicorn.run(app, host=host, port=port, log_level="warning")
