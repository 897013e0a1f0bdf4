"""Comparative judge pipeline for controlled captions.

A pluggable multimodal judge scores a candidate caption against the plain
contextual ground-truth caption (the comparative anchor) on four criteria:
Context Relevance (CR), Highlight Relevance (HR), Image Consistency (IC), and
Overall Quality (OQ), each an integer 1..5. Candidate quality is the ratio of
its mark to the anchor mark, aggregated per metric by a geometric mean so
reciprocal ratios cancel. Input order of the two captions is randomized per
sample to offset positional bias, and de-aliased after parsing.

All tests and CI runs use recorded transcripts through ReplayClient; no live
service is ever required.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import Context, CtrlCICSample, HighlightSet, HighlightSpan, normalize_text
from .errors import (
    CtrlCapError,
    JudgeUnavailable,
    MissingSection,
    NonPositiveRatio,
    OutOfRangeScore,
    UnparseableResponse,
)

logger = logging.getLogger(__name__)

METRIC_KEYS = ("CR", "HR", "IC", "OQ")

_METRIC_LABELS = {
    "CR": "Relevance with Context",
    "HR": "Relevance with Highlight",
    "IC": "Consistency with Image",
    "OQ": "Overall Quality",
}

DEFAULT_CRITERIA = {
    "CR": ("This metric rates how relevant the caption is to the given context. "
           "It assesses whether the caption pertains to and is appropriate for the "
           "contextual information provided, without necessarily reflecting the entire "
           "context. Captions should be scored based on their pertinence and the degree "
           "to which they relate to the context. Annotators should deduct points for "
           "captions that do not relate to or ignore the context. Higher scores should "
           "be awarded to captions that show a clear and significant relevance to the "
           "context."),
    "HR": ("This metric evaluates how well the caption aligns with the highlighted "
           "segments provided. The caption should accurately reflect the information "
           "contained in the highlighted segments, ensuring that it is relevant and "
           "integrated into the overall caption. Annotators are advised to penalize "
           "captions that fail to address the highlighted segments or do so in a manner "
           "that does not give them adequate prominence or relevance."),
    "IC": ("This metric evaluates the accuracy with which the caption represents "
           "elements or themes that are verifiably present in the image, based on the "
           "provided image descriptions. The caption should not introduce content that "
           "is clearly absent from the image. It needs to maintain a clear and direct "
           "connection to the key elements depicted in the image. Annotators should "
           "deduct points for captions that include inconsistencies or introduce "
           "elements not discernible in the image. Higher scores should be reserved for "
           "captions that are faithful to the image's visible content."),
    "OQ": ("This metric assesses the caption's overall effectiveness in the "
           "controllable contextual captioning task, emphasizing its coherence with the "
           "overall context, alignment with the image, and relevance to the highlighted "
           "segment. A high-quality caption should seamlessly integrate these elements, "
           "providing an accurate, informative, and engaging description of the image "
           "that resonates with the given context and highlights."),
}

HIGHLIGHT_SELECTION_TEMPLATE = """Task:
From the provided context, extract and highlight ten different informative keyphrases (or keywords) that contain valuable and relevant information. The extracted content can be a single word or phrases made up with several words. They should encapsulate key details, descriptive elements, or contextual insights that would be valuable for image captioning tasks. The aim is to ensure that some meaningful caption texts can be generated relevant to these context. Output these extracted keyphrases in one line, splitted by "|" (i.e., in a restricted format as "keyphrase1 | keyphrase2 | ..."; this requirement is very important and must be followed with no excuse) DIRECTLY (without any explanation or details).

Context Section:

{context}

Keyphrase Extraction:
"""

MAX_CANDIDATES = 10


@dataclass(frozen=True)
class EvalScores:
    """Parsed judge marks: per-assistant map over the four metrics."""

    assistant1: dict[str, int]
    assistant2: dict[str, int]


@dataclass(frozen=True)
class ComparativeResult:
    """Per-metric candidate/anchor mark ratios plus which slot held the candidate."""

    ratios: dict[str, float]
    order_flag: int = 1  # 1 when the candidate was ASSISTANT1


@dataclass
class EvalConfig:
    rng_seed: int = 0
    transcript_dir: str | Path | None = None
    criteria: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CRITERIA))


class JudgeClientHandle(Protocol):
    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        ...


class ScriptedJudgeClient:
    """Deterministic client for tests and fixture generation: maps a request
    to a canned response via a callable or a consumable list."""

    def __init__(self, responses: Sequence[str] | Callable[[str], str]):
        self._responses = responses
        self._cursor = 0

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        if callable(self._responses):
            return self._responses(prompt)
        if self._cursor >= len(self._responses):
            raise JudgeUnavailable("scripted client ran out of responses")
        out = self._responses[self._cursor]
        self._cursor += 1
        return out


class ReplayClient:
    """Serve recorded transcripts keyed by prompt hash; never hits a network."""

    def __init__(self, transcript_dir: str | Path):
        self._by_hash: dict[str, str] = {}
        for path in sorted(Path(transcript_dir).glob("*.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            self._by_hash[doc["request_hash"]] = doc["response"]

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        key = request_hash(prompt)
        if key not in self._by_hash:
            raise JudgeUnavailable(f"no recorded transcript for request {key}")
        return self._by_hash[key]


class RetryingClient:
    """Bounded retries with backoff around any judge client; every attempt is
    logged with the request hash."""

    def __init__(self, inner: JudgeClientHandle, max_retries: int = 3,
                 backoff_seconds: float = 0.5):
        self.inner = inner
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        key = request_hash(prompt)
        last: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                logger.info("judge call %s attempt %d", key, attempt + 1)
                return self.inner.complete(prompt, image_ref)
            except JudgeUnavailable as exc:
                last = exc
                time.sleep(self.backoff_seconds * (2 ** attempt))
        raise JudgeUnavailable(f"judge failed after {self.max_retries} attempts: {last}")


def request_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


# --- candidate highlight selection -------------------------------------------


def select_highlight_candidates(context: Context, client: JudgeClientHandle,
                                max_candidates: int = MAX_CANDIDATES) -> list[str]:
    """Ask the judge for candidate keyphrases; parse the pipe-separated line."""
    prompt = HIGHLIGHT_SELECTION_TEMPLATE.format(context=context.assembled_text)
    response = client.complete(prompt)
    parts = [p.strip() for p in response.strip().split("|")]
    candidates = [p for p in parts if p]
    if not candidates:
        raise UnparseableResponse("no keyphrases in response", raw=response)
    return candidates[:max_candidates]


def filter_candidates(candidates: Sequence[str], context: Context) -> HighlightSet:
    """Resolve candidates to their first occurrence in the context, dropping
    ones that are absent or that overlap an earlier-kept span."""
    haystack = context.assembled_text.lower()
    kept: list[HighlightSpan] = []
    for cand in candidates:
        needle = normalize_text(cand).lower()
        if not needle:
            continue
        pos = haystack.find(needle)
        if pos < 0:
            continue
        span = HighlightSpan.from_offsets(context, pos, pos + len(needle))
        if any(span.overlaps(prev) for prev in kept):
            continue
        kept.append(span)
    return HighlightSet.from_spans(kept)


# --- comparative evaluation ---------------------------------------------------

_EVAL_TEMPLATE_HEAD = """We would like to request your feedback on the performance of two AI assistants in response to the controllable contextual image captioning task, where captions for an image will be generated based on the overall context and specific contextual highlights provided.

Evaluation Steps:
1. You will be given the image, [Context Section] and [Highlighted Segments], followed by controllable contextual captions provided by the two assistant [ASSISTANT1 Caption] and [ASSISTANT2 Caption]: The context section will be given as the combination of a page title, a section title, and a section body. The highlighted segments are parts of the section body which will be given as words, phrases, or sentences, separated by line breaks.
2. You will thoroughly read the [Context Section] and [Highlighted Segments] provided, and carefully examine the [Image].
3. You will read the caption generated by the AI assistant.
4. You will evaluate the controllable contextual image captioning quality of the two AI assistants, in terms of 4 aspects (which are "Relevance with Context", "Relevance with Highlight", "Consistency with Image", and "Overall Quality") - see below for individual criteria of these aspects. Each criterion should be considered in isolation to provide a clear and focused evaluation.
5. You will complete the following five sections IN ORDER (namely, [ASSISTANT1-Reasoning], [ASSISTANT2-Reasoning], [Comparison-Reasoning], [ASSISTANT1-Score], and [ASSISTANT2-Score])

Evaluation Criteria:
- Relevance with Context: {cr}
- Relevance with Highlight: {hr}
- Consistency with Image: {ic}
- Overall Quality: {oq}

HINT:
1. [ASSISTANT1-Reasoning] and [ASSISTANT2-Reasoning] will be used to record your reasoning and comments on the controllable contextual image caption generation quality of the two AI assistants, respectively;
2. [Comparison-Reasoning] will be used to record your feedback (with supporting evidence) for comparisions between the two AI assistants, which will be used to support the below two marking sections;
3. [ASSISTANT1-Score] and [ASSISTANT2-Score] will be used to record your controllable contextual image caption scores of the two AI assistants, respectively. Each assistant receives an integer score on a scale of 1 to 5 for each criteria, where a higher score indicates better performance according to the evaluation criteria.
4. Below is an example for requested output format of measuring one of the assistants:

[ASSISTANT1-Reasoning] (*example):
- Relevance with Context: some feedback with supporting evidance...
- Relevance with Highlight: some feedback with supporting evidance...
- Consistency with Image: some feedback with supporting evidance...
- Overall Quality: some feedback with supporting evidance...

[ASSISTANT1-Score] (*example):
- Relevance with Context: 3
- Relevance with Highlight: 1
- Consistency with Image: 4
- Overall: 2

-----------------Evaluation Starts---------------------

[Context Section]:
{context}

[Highlighted Segments]:
{highlights}

[ASSISTANT1 Caption]:
{caption_a}

[ASSISTANT2 Caption]:
{caption_b}

Please make sure you read and understand these instructions carefully, and complete the following five sections IN ORDER: (1) firstly reasons via "[ASSISTANT1-Reasoning]:" and "[ASSISTANT2-Reasoning]:"; (2) secondly compares two assistants via "[Comparison-Reasoning]:"; and (3) finally marks them via "[ASSISTANT1-Score]:" and "[ASSISTANT2-Score]:".
"""


def build_eval_prompt(
    image_ref: str,
    context: Context | str,
    highlights: HighlightSet | Sequence[str],
    caption_a: str,
    caption_b: str,
    metric_criteria: dict[str, str] | None = None,
) -> str:
    """Render the comparative chain-of-thought evaluation prompt. The image
    itself travels out-of-band with the judge call; ``image_ref`` is accepted
    here to keep call sites uniform."""
    if not caption_a or not caption_b:
        raise ValueError("both captions must be nonempty")
    criteria = dict(DEFAULT_CRITERIA)
    criteria.update(metric_criteria or {})
    context_text = context.assembled_text if isinstance(context, Context) else context
    texts = highlights.texts() if isinstance(highlights, HighlightSet) else list(highlights)
    return _EVAL_TEMPLATE_HEAD.format(
        cr=criteria["CR"], hr=criteria["HR"], ic=criteria["IC"], oq=criteria["OQ"],
        context=context_text, highlights="\n".join(texts),
        caption_a=caption_a, caption_b=caption_b,
    )


_SCORE_LINE = {
    "CR": re.compile(r"Relevance with Context\s*:\s*(\d+)"),
    "HR": re.compile(r"Relevance with Highlight\s*:\s*(\d+)"),
    "IC": re.compile(r"Consistency with Image\s*:\s*(\d+)"),
    "OQ": re.compile(r"Overall(?: Quality)?\s*:\s*(\d+)"),
}


def _parse_score_section(text: str, assistant: int) -> dict[str, int]:
    marker = f"[ASSISTANT{assistant}-Score]"
    pos = text.rfind(marker)
    if pos < 0:
        raise MissingSection(f"missing {marker} section")
    tail = text[pos + len(marker):]
    nxt = tail.find("[ASSISTANT")
    section = tail if nxt < 0 else tail[:nxt]
    scores: dict[str, int] = {}
    for key, pattern in _SCORE_LINE.items():
        match = pattern.search(section)
        if match is None:
            raise MissingSection(f"{marker} lacks a {_METRIC_LABELS[key]} line")
        value = int(match.group(1))
        if not 1 <= value <= 5:
            raise OutOfRangeScore(f"{_METRIC_LABELS[key]} score {value} outside 1..5")
        scores[key] = value
    return scores


def parse_eval_response(text: str) -> EvalScores:
    """Extract the four integer marks per assistant, tolerating any amount of
    reasoning text before and between the score sections."""
    return EvalScores(
        assistant1=_parse_score_section(text, 1),
        assistant2=_parse_score_section(text, 2),
    )


def randomize_order(candidate: str, anchor: str, rng: np.random.Generator
                    ) -> tuple[str, str, int]:
    """Uniformly assign the two captions to the assistant slots; the returned
    flag (1 or 2) records where the candidate went."""
    if rng.random() < 0.5:
        return candidate, anchor, 1
    return anchor, candidate, 2


def dealias_scores(scores: EvalScores, order_flag: int) -> tuple[dict[str, int], dict[str, int]]:
    """Map parsed per-slot scores back to (candidate, anchor)."""
    if order_flag == 1:
        return scores.assistant1, scores.assistant2
    return scores.assistant2, scores.assistant1


def comparative_ratios(candidate_scores: dict[str, int], anchor_scores: dict[str, int],
                       order_flag: int = 1) -> ComparativeResult:
    ratios = {k: candidate_scores[k] / anchor_scores[k] for k in METRIC_KEYS}
    return ComparativeResult(ratios=ratios, order_flag=order_flag)


def aggregate_log_mean(ratios: Sequence[float]) -> float:
    """Exponentiated mean of logs (geometric mean): symmetric under r -> 1/r."""
    arr = np.asarray(list(ratios), dtype=np.float64)
    if arr.size == 0:
        raise NonPositiveRatio("cannot aggregate an empty ratio list")
    if np.any(arr <= 0):
        raise NonPositiveRatio("ratios must be strictly positive")
    return float(np.exp(np.mean(np.log(arr))))


def run_evaluation(
    samples: Sequence[CtrlCICSample],
    caption_source: Callable[[CtrlCICSample], str],
    client: JudgeClientHandle,
    config: EvalConfig | None = None,
) -> dict:
    """Judge every sample's candidate caption against its contextual anchor.

    Failed calls or unparseable transcripts are quarantined (raw text kept when
    a transcript directory is configured) and never contribute partial scores.
    """
    config = config or EvalConfig()
    rng = np.random.default_rng(config.rng_seed)
    transcript_dir = Path(config.transcript_dir) if config.transcript_dir else None
    if transcript_dir:
        transcript_dir.mkdir(parents=True, exist_ok=True)

    per_metric: dict[str, list[float]] = {k: [] for k in METRIC_KEYS}
    failures = 0
    for idx, sample in enumerate(samples):
        candidate = caption_source(sample)
        anchor = sample.target_caption.text
        slot1, slot2, flag = randomize_order(candidate, anchor, rng)
        prompt = build_eval_prompt(sample.image.source_id, sample.context,
                                   sample.highlights, slot1, slot2,
                                   metric_criteria=config.criteria)
        record = {
            "sample_index": sample.sample_index,
            "request_hash": request_hash(prompt),
            "order_flag": flag,
            "prompt": prompt,
            "timestamp": time.time(),
        }
        try:
            response = client.complete(prompt, image_ref=sample.image.source_id)
            record["response"] = response
            scores = parse_eval_response(response)
            cand_scores, anchor_scores = dealias_scores(scores, flag)
            result = comparative_ratios(cand_scores, anchor_scores, order_flag=flag)
            record["parsed"] = {"candidate": cand_scores, "anchor": anchor_scores,
                                "ratios": result.ratios}
            for key in METRIC_KEYS:
                per_metric[key].append(result.ratios[key])
        except CtrlCapError as exc:
            failures += 1
            record["error"] = f"{type(exc).__name__}: {exc}"
            logger.warning("sample %d quarantined: %s", idx, record["error"])
        if transcript_dir:
            path = transcript_dir / f"transcript_{idx:04d}.json"
            path.write_text(json.dumps(record, sort_keys=True, indent=2),
                            encoding="utf-8")

    report = {"anchor": 1.0, "num_samples": len(samples) - failures,
              "num_failures": failures}
    for key in METRIC_KEYS:
        report[key] = aggregate_log_mean(per_metric[key]) if per_metric[key] else None
    return report
