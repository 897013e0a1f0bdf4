"""Domain types, text normalization, and tokenization with character spans.

Highlights are stored as character offsets into a context's assembled text so
they survive re-tokenization by different model tokenizers. All types are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Protocol, Sequence

from .errors import TokenizerFailure


def normalize_text(raw: str) -> str:
    """Unicode-normalize (NFKC) and collapse all whitespace runs to single spaces."""
    return " ".join(unicodedata.normalize("NFKC", raw).split())


class Token(NamedTuple):
    text: str
    char_start: int
    char_end: int


class WordGroup(NamedTuple):
    text: str
    token_start: int  # inclusive token index
    token_end: int    # exclusive token index


class TokenizerHandle(Protocol):
    """Segments text into tokens with character offsets."""

    def spans(self, text: str) -> list[tuple[int, int]]:
        """Return [char_start, char_end) pairs covering the text monotonically."""
        ...


class WhitespaceTokenizer:
    """One token per whitespace-delimited word; punctuation stays attached."""

    def spans(self, text: str) -> list[tuple[int, int]]:
        return _word_spans(text)


class CharacterTokenizer:
    """One token per non-space character. Useful for exercising word grouping."""

    def spans(self, text: str) -> list[tuple[int, int]]:
        return [(i, i + 1) for i, ch in enumerate(text) if not ch.isspace()]


def _word_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                spans.append((start, i))
                start = None
        elif start is None:
            start = i
    if start is not None:
        spans.append((start, len(text)))
    return spans


def tokenize_with_spans(
    text: str, tokenizer: TokenizerHandle
) -> tuple[tuple[Token, ...], tuple[WordGroup, ...]]:
    """Tokenize and group contiguous tokens into whitespace-delimited words.

    Raises TokenizerFailure if a token crosses a word boundary or falls outside
    the text, since word-level aggregation then has no well-defined grouping.
    """
    token_spans = tokenizer.spans(text)
    tokens = []
    prev_start = -1
    for start, end in token_spans:
        if not (0 <= start < end <= len(text)):
            raise TokenizerFailure(f"token span ({start}, {end}) outside text")
        if start < prev_start:
            raise TokenizerFailure("token spans are not monotone")
        prev_start = start
        tokens.append(Token(text[start:end], start, end))

    words = _word_spans(text)
    groups: list[WordGroup] = []
    ti = 0
    for wstart, wend in words:
        first = ti
        while ti < len(tokens) and tokens[ti].char_start >= wstart and tokens[ti].char_end <= wend:
            ti += 1
        if ti > first:
            groups.append(WordGroup(text[wstart:wend], first, ti))
    if ti != len(tokens):
        bad = tokens[ti]
        raise TokenizerFailure(
            f"token {bad.text!r} at ({bad.char_start}, {bad.char_end}) crosses a word boundary"
        )
    return tuple(tokens), tuple(groups)


def assemble_context_text(
    page_title: str, section_title: str, body: str, aux_captions: Sequence[str]
) -> str:
    """Deterministic context assembly: title, section title, body, then the
    captions of the section's other images, single-space separated."""
    parts = [normalize_text(page_title), normalize_text(section_title), normalize_text(body)]
    parts.extend(normalize_text(c) for c in aux_captions)
    return " ".join(p for p in parts if p)


@dataclass(frozen=True)
class Context:
    """Tokenized page text with character spans.

    ``assembled_text`` is derived deterministically from the other text fields;
    every token's span slices it exactly, and ``word_groups`` partition the
    token sequence into contiguous runs covering one word each.
    """

    page_title: str
    section_title: str
    body: str
    aux_captions: tuple[str, ...]
    assembled_text: str
    tokens: tuple[Token, ...]
    word_groups: tuple[WordGroup, ...]

    @classmethod
    def build(
        cls,
        page_title: str,
        section_title: str = "",
        body: str = "",
        aux_captions: Sequence[str] = (),
        tokenizer: TokenizerHandle | None = None,
    ) -> "Context":
        tokenizer = tokenizer or WhitespaceTokenizer()
        assembled = assemble_context_text(page_title, section_title, body, aux_captions)
        tokens, groups = tokenize_with_spans(assembled, tokenizer)
        return cls(
            page_title=normalize_text(page_title),
            section_title=normalize_text(section_title),
            body=normalize_text(body),
            aux_captions=tuple(normalize_text(c) for c in aux_captions),
            assembled_text=assembled,
            tokens=tokens,
            word_groups=groups,
        )

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    @property
    def num_words(self) -> int:
        return len(self.word_groups)

    def word_char_span(self, word_index: int) -> tuple[int, int]:
        """Character span covered by a word group's tokens."""
        group = self.word_groups[word_index]
        return (self.tokens[group.token_start].char_start,
                self.tokens[group.token_end - 1].char_end)

    def token_texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    def to_record(self) -> dict:
        return {
            "page_title": self.page_title,
            "section_title": self.section_title,
            "body": self.body,
            "aux_captions": list(self.aux_captions),
            "assembled_text": self.assembled_text,
            "tokens": [[t.text, t.char_start, t.char_end] for t in self.tokens],
            "word_groups": [[g.text, [g.token_start, g.token_end]] for g in self.word_groups],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Context":
        return cls(
            page_title=rec["page_title"],
            section_title=rec["section_title"],
            body=rec["body"],
            aux_captions=tuple(rec["aux_captions"]),
            assembled_text=rec["assembled_text"],
            tokens=tuple(Token(t[0], t[1], t[2]) for t in rec["tokens"]),
            word_groups=tuple(WordGroup(g[0], g[1][0], g[1][1]) for g in rec["word_groups"]),
        )


@dataclass(frozen=True)
class HighlightSpan:
    """A contiguous, word-aligned character span of a context's assembled text."""

    char_start: int
    char_end: int
    text: str

    @classmethod
    def from_offsets(cls, context: Context, char_start: int, char_end: int) -> "HighlightSpan":
        if not (0 <= char_start < char_end <= len(context.assembled_text)):
            raise ValueError(f"span ({char_start}, {char_end}) outside assembled text")
        return cls(char_start, char_end, context.assembled_text[char_start:char_end])

    def validate_against(self, context: Context) -> None:
        got = context.assembled_text[self.char_start:self.char_end]
        if got != self.text or not self.text:
            raise ValueError(f"span text mismatch: {self.text!r} != {got!r}")

    def overlaps(self, other: "HighlightSpan") -> bool:
        return self.char_start < other.char_end and other.char_start < self.char_end


@dataclass(frozen=True)
class HighlightSet:
    """Ordered, pairwise non-overlapping highlight spans."""

    spans: tuple[HighlightSpan, ...] = ()

    @classmethod
    def from_spans(cls, spans: Sequence[HighlightSpan], merge: bool = False) -> "HighlightSet":
        """Normalize: sort by position and, when ``merge`` is set, coalesce
        overlapping spans (their texts must come from the same context)."""
        ordered = sorted(spans, key=lambda s: (s.char_start, s.char_end))
        if merge:
            merged: list[HighlightSpan] = []
            for s in ordered:
                if merged and s.char_start <= merged[-1].char_end:
                    prev = merged[-1]
                    if s.char_end > prev.char_end:
                        overhang = s.text[prev.char_end - s.char_start:]
                        merged[-1] = HighlightSpan(prev.char_start, s.char_end, prev.text + overhang)
                else:
                    merged.append(s)
            ordered = merged
        for a, b in zip(ordered, ordered[1:]):
            if a.overlaps(b):
                raise ValueError(f"overlapping highlight spans: {a} / {b}")
        return cls(tuple(ordered))

    @classmethod
    def from_offset_pairs(cls, context: Context, pairs: Sequence[tuple[int, int]],
                          merge: bool = False) -> "HighlightSet":
        return cls.from_spans(
            [HighlightSpan.from_offsets(context, a, b) for a, b in pairs], merge=merge
        )

    def texts(self) -> list[str]:
        return [s.text for s in self.spans]

    def offset_pairs(self) -> list[tuple[int, int]]:
        return [(s.char_start, s.char_end) for s in self.spans]

    def __len__(self) -> int:
        return len(self.spans)

    def __iter__(self) -> Iterator[HighlightSpan]:
        return iter(self.spans)

    def __bool__(self) -> bool:
        return bool(self.spans)


@dataclass(frozen=True)
class ImageFeature:
    """A fixed-dimension image feature vector from some provider."""

    vector: tuple[float, ...]
    source_id: str = ""

    def __post_init__(self):
        if not all(abs(v) < float("inf") and v == v for v in self.vector):
            raise ValueError("image feature contains non-finite entries")

    @property
    def dim(self) -> int:
        return len(self.vector)


@dataclass(frozen=True)
class CaptionText:
    text: str
    token_count: int = 0


@dataclass(frozen=True)
class CICSample:
    """(context, image, target caption) triplet."""

    context: Context
    image: ImageFeature
    target_caption: CaptionText

    def to_record(self) -> dict:
        return {
            "context": self.context.to_record(),
            "image": {"vector": list(self.image.vector), "source_id": self.image.source_id},
            "target_caption": {"text": self.target_caption.text,
                               "token_count": self.target_caption.token_count},
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CICSample":
        return cls(
            context=Context.from_record(rec["context"]),
            image=ImageFeature(tuple(rec["image"]["vector"]), rec["image"]["source_id"]),
            target_caption=CaptionText(rec["target_caption"]["text"],
                                       rec["target_caption"]["token_count"]),
        )


@dataclass(frozen=True)
class CtrlCICSample:
    """(context, image, highlight set, target caption) quadruplet.

    ``sample_index`` identifies the context-image pair; ``highlight_index``
    identifies which of that pair's highlight sets this sample carries.
    ``token_weights``, when present, align one-to-one with the context tokens.
    """

    context: Context
    image: ImageFeature
    highlights: HighlightSet
    target_caption: CaptionText
    sample_index: int = 0
    highlight_index: int = 0
    token_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        for span in self.highlights:
            span.validate_against(self.context)
        if self.token_weights is not None and len(self.token_weights) != self.context.num_tokens:
            raise ValueError("token_weights length does not match context tokens")

    def to_record(self) -> dict:
        rec = {
            "context": self.context.to_record(),
            "image": {"vector": list(self.image.vector), "source_id": self.image.source_id},
            "highlights": [[s.char_start, s.char_end] for s in self.highlights],
            "target_caption": {"text": self.target_caption.text,
                               "token_count": self.target_caption.token_count},
            "sample_index": self.sample_index,
            "highlight_index": self.highlight_index,
        }
        if self.token_weights is not None:
            rec["token_weights"] = list(self.token_weights)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "CtrlCICSample":
        context = Context.from_record(rec["context"])
        weights = rec.get("token_weights")
        return cls(
            context=context,
            image=ImageFeature(tuple(rec["image"]["vector"]), rec["image"]["source_id"]),
            highlights=HighlightSet.from_offset_pairs(context, [tuple(p) for p in rec["highlights"]]),
            target_caption=CaptionText(rec["target_caption"]["text"],
                                       rec["target_caption"]["token_count"]),
            sample_index=rec["sample_index"],
            highlight_index=rec["highlight_index"],
            token_weights=tuple(weights) if weights is not None else None,
        )


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters. Defaults are the full-scale values; desk-scale runs
    override ``learning_rate``, ``batch_size``, and ``total_steps``."""

    theta: float = 0.3
    alpha: float = 0.1
    max_prompt_words: int = 40
    input_token_budget: int = 512
    output_token_budget: int = 128  # prompting-controller runs use 192
    learning_rate: float = 5e-5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    batch_size: int = 12
    total_steps: int = 1000
    rng_seed: int = 0
    model_dim: int = 48
    separator: str = "<SEP>"

    def __post_init__(self):
        if not -1.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (-1, 1), got {self.theta}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        for name in ("max_prompt_words", "input_token_budget", "output_token_budget"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "alpha": self.alpha,
            "max_prompt_words": self.max_prompt_words,
            "input_token_budget": self.input_token_budget,
            "output_token_budget": self.output_token_budget,
            "learning_rate": self.learning_rate,
            "adam_betas": list(self.adam_betas),
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "total_steps": self.total_steps,
            "rng_seed": self.rng_seed,
            "model_dim": self.model_dim,
            "separator": self.separator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)
