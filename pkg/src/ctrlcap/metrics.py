"""Reference-free controllability metrics, simplified lexical metrics for
contextual-captioning smoke tests, and correlation statistics.

All functions are pure; reported values are scaled by 100 to match the usual
table presentation, with raw ratios available from the individual functions.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .core import Context, HighlightSet, normalize_text
from .errors import (
    DegenerateEmbedding,
    DegenerateInput,
    EmptyHighlights,
    GroupSizeError,
    NoHighlightedSentence,
)

DIV_N_GROUP_SIZE = 5


def _norm(text: str) -> str:
    return normalize_text(text).casefold()


def highlight_recall(caption: str, highlights: HighlightSet | Sequence[str]) -> float:
    """Fraction of highlight segments whose normalized text occurs verbatim
    (as a substring) in the normalized caption."""
    texts = highlights.texts() if isinstance(highlights, HighlightSet) else list(highlights)
    if not texts:
        raise EmptyHighlights("recall needs at least one highlight segment")
    cap = _norm(caption)
    hits = sum(1 for t in texts if _norm(t) and _norm(t) in cap)
    return hits / len(texts)


def div_n(captions: Sequence[str], n: int) -> float:
    """Distinct n-grams over total n-gram count across a five-caption group."""
    if len(captions) != DIV_N_GROUP_SIZE:
        raise GroupSizeError(f"expected {DIV_N_GROUP_SIZE} captions, got {len(captions)}")
    if n < 1:
        raise ValueError("n must be >= 1")
    seen = set()
    total = 0
    for caption in captions:
        tokens = _norm(caption).split()
        for i in range(len(tokens) - n + 1):
            seen.add(tuple(tokens[i:i + n]))
            total += 1
    if total == 0:
        raise DegenerateInput(f"no {n}-grams in the caption group")
    return len(seen) / total


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateEmbedding("near-zero norm embedding")
    return float(np.dot(a, b) / (na * nb))


def clip_score(caption_embedding: np.ndarray, image_embedding: np.ndarray) -> float:
    """2.5 * max(cosine, 0) between caption and image embeddings."""
    return 2.5 * max(_cosine(np.asarray(caption_embedding, dtype=np.float64),
                             np.asarray(image_embedding, dtype=np.float64)), 0.0)


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Char spans of sentences: split after '.', '!', '?' followed by
    whitespace or end of text."""
    spans = []
    start = 0
    i = 0
    while i < len(text):
        if text[i] in ".!?" and (i + 1 == len(text) or text[i + 1].isspace()):
            spans.append((start, i + 1))
            i += 1
            while i < len(text) and text[i].isspace():
                i += 1
            start = i
        else:
            i += 1
    if start < len(text):
        spans.append((start, len(text)))
    return spans


def clip_score_sent(caption: str, context: Context, highlights: HighlightSet,
                    provider) -> float:
    """Cosine between the caption embedding and the mean embedding of the
    context sentences that contain (intersect) a highlight span."""
    anchors = []
    for a, b in split_sentences(context.assembled_text):
        for span in highlights:
            if a < span.char_end and span.char_start < b:
                anchors.append(context.assembled_text[a:b])
                break
    if not anchors:
        raise NoHighlightedSentence("no context sentence intersects a highlight")
    anchor = np.mean([provider.encode_sentence(s) for s in anchors], axis=0)
    return _cosine(provider.encode_sentence(caption), anchor)


# --- simplified lexical metrics ----------------------------------------------


def _ngram_counts(tokens: list[str], n: int) -> dict[tuple, int]:
    counts: dict[tuple, int] = {}
    for i in range(len(tokens) - n + 1):
        key = tuple(tokens[i:i + n])
        counts[key] = counts.get(key, 0) + 1
    return counts


def bleu4(candidate: str, reference: str) -> float:
    """Plain BLEU-4 (clipped n-gram precision, brevity penalty, no smoothing),
    scaled by 100. Zero whenever any order has zero matches."""
    cand = _norm(candidate).split()
    ref = _norm(reference).split()
    if not cand or not ref:
        return 0.0
    log_precisions = []
    for n in range(1, 5):
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        total = sum(cand_counts.values())
        if total == 0:
            return 0.0
        clipped = sum(min(c, ref_counts.get(g, 0)) for g, c in cand_counts.items())
        if clipped == 0:
            return 0.0
        log_precisions.append(np.log(clipped / total))
    bp = 1.0 if len(cand) > len(ref) else float(np.exp(1.0 - len(ref) / len(cand)))
    return 100.0 * bp * float(np.exp(np.mean(log_precisions)))


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1 (simplified ROUGE-L), scaled by 100."""
    cand = _norm(candidate).split()
    ref = _norm(reference).split()
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def correlations(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """(Pearson r, Spearman rho, Kendall tau) for paired score vectors."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1 or len(xa) < 3:
        raise DegenerateInput("need two equal-length vectors of >= 3 points")
    if np.ptp(xa) == 0 or np.ptp(ya) == 0:
        raise DegenerateInput("constant vector has undefined correlation")
    pearson = float(stats.pearsonr(xa, ya).statistic)
    spearman = float(stats.spearmanr(xa, ya).statistic)
    kendall = float(stats.kendalltau(xa, ya).statistic)
    return pearson, spearman, kendall


# --- report ----------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    """Aggregate metric table row, values scaled by 100."""

    recall: float
    div_1: float
    div_2: float
    clip_score: float
    clip_score_sent: float
    num_samples: int
    num_groups: int = 0
    cider: float | None = None   # external values, not computed here
    meteor: float | None = None

    def __post_init__(self):
        if self.num_samples <= 0:
            raise ValueError("num_samples must be positive")
        if not 0.0 <= self.recall <= 100.0:
            raise ValueError(f"recall out of range: {self.recall}")

    def to_dict(self) -> dict:
        return {
            "recall": self.recall, "div_1": self.div_1, "div_2": self.div_2,
            "clip_score": self.clip_score, "clip_score_sent": self.clip_score_sent,
            "num_samples": self.num_samples, "num_groups": self.num_groups,
            "cider": self.cider, "meteor": self.meteor,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        keys = list(self.to_dict().keys())
        buf.write(",".join(keys) + "\n")
        buf.write(",".join("" if self.to_dict()[k] is None else str(self.to_dict()[k])
                           for k in keys) + "\n")
        return buf.getvalue()
