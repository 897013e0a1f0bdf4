"""Token- and word-level relevance between a context and its target caption.

The pipeline mirrors the weak-supervision highlight construction: embed both
texts, mean-pool the caption, score each context token by cosine similarity,
average scores over the tokens of each word, then either threshold words into
training highlights or map token scores affinely into recalibration weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Context, HighlightSet, HighlightSpan
from .errors import DegenerateEmbedding, EmptyCaption

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class RelevanceScores:
    """Per-token cosine scores plus their word-level aggregation."""

    token_scores: tuple[float, ...]
    word_scores: dict[int, float]


@dataclass(frozen=True)
class RecalibrationWeights:
    """Per-token weights in [0, 1] and the highlight boost added at inference."""

    token_weights: tuple[float, ...]
    alpha: float = 0.1


def pool_caption_embedding(caption_token_embeddings: np.ndarray) -> np.ndarray:
    """Column-wise mean of the caption token embeddings (the global caption vector)."""
    emb = np.asarray(caption_token_embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise EmptyCaption("caption has no token embeddings to pool")
    if not np.all(np.isfinite(emb)):
        raise DegenerateEmbedding("caption embeddings contain non-finite entries")
    return emb.mean(axis=0)


def token_relevance(context_embeddings: np.ndarray, pooled_caption: np.ndarray) -> tuple[float, ...]:
    """Cosine similarity of every context token embedding against the pooled caption."""
    ctx = np.asarray(context_embeddings, dtype=np.float64)
    tgt = np.asarray(pooled_caption, dtype=np.float64)
    if ctx.ndim != 2 or tgt.ndim != 1 or ctx.shape[1] != tgt.shape[0]:
        raise DegenerateEmbedding(
            f"shape mismatch: context {ctx.shape} vs pooled caption {tgt.shape}"
        )
    ctx_norms = np.linalg.norm(ctx, axis=1)
    tgt_norm = np.linalg.norm(tgt)
    if tgt_norm < _NORM_FLOOR:
        raise DegenerateEmbedding("pooled caption embedding has near-zero norm")
    if np.any(ctx_norms < _NORM_FLOOR):
        bad = int(np.argmin(ctx_norms))
        raise DegenerateEmbedding(f"context embedding row {bad} has near-zero norm")
    scores = (ctx @ tgt) / (ctx_norms * tgt_norm)
    # cosine is mathematically in [-1, 1]; clip float slop only
    scores = np.clip(scores, -1.0, 1.0)
    return tuple(float(s) for s in scores)


def aggregate_word_scores(token_scores, word_groups) -> dict[int, float]:
    """Unweighted mean of token scores over each word group."""
    out: dict[int, float] = {}
    for j, group in enumerate(word_groups):
        chunk = token_scores[group.token_start:group.token_end]
        out[j] = float(sum(chunk) / len(chunk))
    return out


def score_context_against_caption(
    context: Context, context_embeddings: np.ndarray, caption_embeddings: np.ndarray
) -> RelevanceScores:
    """Full relevance pipeline for one (context, caption) pair."""
    pooled = pool_caption_embedding(caption_embeddings)
    token_scores = token_relevance(context_embeddings, pooled)
    word_scores = aggregate_word_scores(token_scores, context.word_groups)
    return RelevanceScores(token_scores=token_scores, word_scores=word_scores)


def derive_training_highlights(
    word_scores: dict[int, float],
    context: Context,
    theta: float = 0.3,
    max_words: int = 40,
) -> HighlightSet:
    """Select words scoring strictly above ``theta`` as training highlights.

    When more than ``max_words`` words qualify, the highest-scoring ones are
    kept (earlier position wins ties). Adjacent selected words merge into one
    contiguous span. An empty result is valid.
    """
    if not -1.0 < theta < 1.0:
        raise ValueError(f"theta must be in (-1, 1), got {theta}")
    if max_words < 1:
        raise ValueError("max_words must be >= 1")

    qualifying = [j for j, s in word_scores.items() if s > theta]
    if len(qualifying) > max_words:
        qualifying.sort(key=lambda j: (-word_scores[j], j))
        qualifying = qualifying[:max_words]
    selected = sorted(qualifying)

    runs: list[list[int]] = []  # [first_word, last_word] inclusive
    for j in selected:
        if runs and j == runs[-1][1] + 1:
            runs[-1][1] = j
        else:
            runs.append([j, j])

    spans = []
    for first, last in runs:
        a, _ = context.word_char_span(first)
        _, b = context.word_char_span(last)
        spans.append(HighlightSpan.from_offsets(context, a, b))
    return HighlightSet.from_spans(spans)


def normalize_to_weights(token_scores, alpha: float = 0.1) -> RecalibrationWeights:
    """Affine map s -> s/2 + 0.5 from cosine scores into unit-interval weights."""
    weights = tuple(float(s) / 2.0 + 0.5 for s in token_scores)
    for w in weights:
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"score outside [-1, 1] produced weight {w}")
    return RecalibrationWeights(token_weights=weights, alpha=alpha)
