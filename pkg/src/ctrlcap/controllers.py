"""The two caption controllers.

The prompting controller conditions generation on a separator-delimited
highlight prefix forced into the decoder; the recalibration controller scales
encoder token embeddings by predicted per-token weights, boosted by ``alpha``
on highlighted tokens. Both fall back to plain contextual captioning when no
highlights are given: the prompting controller self-predicts its prefix and
the recalibration controller follows the predicted weights unmodified.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import CaptionText, Context, HighlightSet, ImageFeature
from .errors import BudgetExceeded, SeparatorCollision, ShapeMismatch
from .modeling.toy import ToyEncoderDecoder, WeightPredictor, fuse_image_token

DEFAULT_SEPARATOR = "<SEP>"


@dataclass(frozen=True)
class PromptPrefix:
    """Highlight texts rendered as ``h1 <SEP> h2 <SEP> ... <SEP> `` — the
    trailing separator marks the prefix/caption boundary, making parsing
    unambiguous for arbitrary caption text."""

    highlight_texts: tuple[str, ...]
    rendered: str
    separator: str = DEFAULT_SEPARATOR

    def word_count(self) -> int:
        return sum(len(t.split()) for t in self.highlight_texts)


@dataclass(frozen=True)
class ControlledGeneration:
    caption: CaptionText
    controller_kind: str  # "prompting" | "recalibration"
    applied_highlights: HighlightSet
    decode_params: dict = field(default_factory=dict)


def assemble_prompt_prefix(
    highlights: HighlightSet,
    max_words: int = 40,
    separator: str = DEFAULT_SEPARATOR,
    scores: Sequence[float] | None = None,
) -> PromptPrefix:
    """Render highlights, in context order, into the decoder prompt prefix.

    Over-budget prefixes are trimmed one highlight at a time: lowest-score
    first when ``scores`` are given (training), last-listed first otherwise.
    """
    texts = list(highlights.texts())
    for t in texts:
        if separator in t:
            raise SeparatorCollision(f"highlight contains separator literal: {t!r}")

    keep = list(range(len(texts)))
    word_count = lambda: sum(len(texts[i].split()) for i in keep)
    while keep and word_count() > max_words:
        if scores is not None:
            drop = min(keep, key=lambda i: (scores[i], -i))
        else:
            drop = keep[-1]
        keep.remove(drop)

    kept = tuple(texts[i] for i in keep)
    rendered = "".join(f"{t} {separator} " for t in kept)
    return PromptPrefix(highlight_texts=kept, rendered=rendered, separator=separator)


def build_pctrl_training_target(
    prefix: PromptPrefix,
    target_caption: str,
    tokenizer=None,
    budget: int = 192,
) -> str:
    """Affix the rendered prefix to the intended caption (training target)."""
    combined = prefix.rendered + target_caption
    count = tokenizer.count(combined) if tokenizer is not None else len(combined.split())
    if count > budget:
        raise BudgetExceeded(f"augmented target is {count} tokens, budget {budget}")
    return combined


def parse_pctrl_output(decoded: str, separator: str = DEFAULT_SEPARATOR
                       ) -> tuple[list[str], str]:
    """Inverse of the prefix construction: every separator-delimited segment
    before the last is a highlight; the final segment is the caption. Total:
    text without separators parses as a bare caption."""
    if separator not in decoded:
        return [], decoded.strip()
    parts = decoded.split(separator)
    caption = parts[-1].strip()
    highlight_texts = [p.strip() for p in parts[:-1] if p.strip()]
    return highlight_texts, caption


def highlight_token_mask(token_spans: Sequence[tuple[int, int]],
                         highlights: HighlightSet) -> np.ndarray:
    """Boolean mask over model tokens whose char spans intersect any highlight."""
    mask = np.zeros(len(token_spans), dtype=bool)
    for i, (a, b) in enumerate(token_spans):
        for span in highlights:
            if a < span.char_end and span.char_start < b:
                mask[i] = True
                break
    return mask


def rctrl_apply_weights(encoder_embeddings: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Scale each embedding row by its weight.

    Row 0 is the fused image token and is never scaled (its weight is pinned
    to 1 regardless of ``weights[0]``).
    """
    emb = np.asarray(encoder_embeddings, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if emb.ndim != 2 or w.ndim != 1 or emb.shape[0] != w.shape[0]:
        raise ShapeMismatch(f"embeddings {emb.shape} vs weights {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    w_eff = w.copy()
    if len(w_eff) > 0:
        w_eff[0] = 1.0
    return emb * w_eff[:, None]


def rctrl_recalibrate(predicted_weights: np.ndarray, highlight_token_mask: np.ndarray,
                      alpha: float) -> np.ndarray:
    """Add ``alpha`` to the predicted weight of every highlighted token.

    No clamping: boosted weights may exceed 1, as the increment rule is stated
    without a ceiling.
    """
    w = np.asarray(predicted_weights, dtype=np.float64)
    mask = np.asarray(highlight_token_mask, dtype=bool)
    if w.shape != mask.shape:
        raise ShapeMismatch(f"weights {w.shape} vs mask {mask.shape}")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("predicted weights must lie in [0, 1]")
    return w + alpha * mask


def _encode_context(model: ToyEncoderDecoder, context: Context, input_budget: int):
    text = context.assembled_text
    ids = model.tokenizer.encode(text)[:input_budget]
    spans = model.tokenizer.spans(text)[:input_budget]
    return ids, spans


def _encoder_states(model: ToyEncoderDecoder, image: ImageFeature,
                    ctx_ids: Sequence[int], token_weights: np.ndarray | None = None
                    ) -> tuple[np.ndarray, list[int]]:
    X_text = model.embed(ctx_ids)
    X = fuse_image_token(image.vector, X_text, model.image_projection)
    if token_weights is not None:
        X = rctrl_apply_weights(X, np.concatenate([[1.0], token_weights]))
    source_ids = [-1] + list(ctx_ids)  # image row never feeds the pointer
    return model.encode(X), source_ids


def pctrl_generate(
    model: ToyEncoderDecoder,
    context: Context,
    image: ImageFeature,
    highlights: HighlightSet,
    max_len: int = 192,
    max_words: int = 40,
    input_budget: int = 512,
    separator: str = DEFAULT_SEPARATOR,
    seed: int = 0,
) -> ControlledGeneration:
    """Prompting-controller inference: force the highlight prefix into the
    decoder and return the parsed post-prefix caption."""
    prefix = assemble_prompt_prefix(highlights, max_words=max_words, separator=separator)
    ctx_ids, _ = _encode_context(model, context, input_budget)
    states, source_ids = _encoder_states(model, image, ctx_ids)
    forced = model.tokenizer.encode(prefix.rendered) if prefix.rendered else []
    out_ids = model.generate(states, forced_decoder_prefix=forced, max_len=max_len,
                             source_token_ids=source_ids)
    _, caption = parse_pctrl_output(model.tokenizer.decode(out_ids), separator)
    return ControlledGeneration(
        caption=CaptionText(caption, token_count=len(caption.split())),
        controller_kind="prompting",
        applied_highlights=highlights,
        decode_params={"max_len": max_len, "strategy": "greedy", "seed": seed},
    )


def pctrl_generate_cic(
    model: ToyEncoderDecoder,
    context: Context,
    image: ImageFeature,
    max_len: int = 192,
    input_budget: int = 512,
    separator: str = DEFAULT_SEPARATOR,
    seed: int = 0,
) -> ControlledGeneration:
    """Contextual captioning with a self-predicted prefix (no forced prompt)."""
    return pctrl_generate(model, context, image, HighlightSet(), max_len=max_len,
                          input_budget=input_budget, separator=separator, seed=seed)


def rctrl_generate(
    model: ToyEncoderDecoder,
    weight_predictor: WeightPredictor,
    context: Context,
    image: ImageFeature,
    highlights: HighlightSet,
    alpha: float = 0.1,
    max_len: int = 128,
    input_budget: int = 512,
    seed: int = 0,
) -> ControlledGeneration:
    """Recalibration-controller inference: predict per-token weights, boost the
    tokens covered by highlight spans by ``alpha``, scale the encoder
    embeddings, and decode."""
    ctx_ids, spans = _encode_context(model, context, input_budget)
    predicted = weight_predictor.predict(
        weight_predictor.tokenizer.encode(context.assembled_text)[:input_budget])
    mask = highlight_token_mask(spans, highlights)
    weights = rctrl_recalibrate(predicted, mask, alpha)
    states, source_ids = _encoder_states(model, image, ctx_ids, token_weights=weights)
    out_ids = model.generate(states, max_len=max_len, source_token_ids=source_ids)
    caption = model.tokenizer.decode(out_ids)
    return ControlledGeneration(
        caption=CaptionText(caption, token_count=len(out_ids)),
        controller_kind="recalibration",
        applied_highlights=highlights,
        decode_params={"max_len": max_len, "strategy": "greedy",
                       "seed": seed, "alpha": alpha},
    )


def rctrl_generate_cic(
    model: ToyEncoderDecoder,
    weight_predictor: WeightPredictor,
    context: Context,
    image: ImageFeature,
    max_len: int = 128,
    input_budget: int = 512,
    seed: int = 0,
) -> ControlledGeneration:
    """Contextual captioning that follows the predicted weights unmodified."""
    return rctrl_generate(model, weight_predictor, context, image, HighlightSet(),
                          alpha=0.0, max_len=max_len, input_budget=input_budget, seed=seed)
