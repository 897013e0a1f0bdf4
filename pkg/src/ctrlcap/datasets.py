"""Dataset construction: page ingestion, weakly-supervised highlight mining,
the synthetic verification corpus, and JSONL persistence.

Page records arrive pre-extracted (no scraping): one JSON object per page with
sections, each holding text and captioned image references. Every (image,
section) pair becomes one contextual captioning sample whose context excludes
that image's own caption.

The synthetic corpus exists so controllability is checkable by construction:
each context lists K facts, the caption is a fixed template over exactly one
fact, the highlight is that fact's span, and the pseudo image feature hashes
the fact so the image alone disambiguates the uncontrolled caption.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    CaptionText,
    CICSample,
    Context,
    CtrlCICSample,
    HighlightSet,
    HighlightSpan,
    ImageFeature,
    TrainingConfig,
    normalize_text,
)
from .errors import DegenerateEmbedding, MalformedRecord, SchemaViolation
from .modeling.providers import EmbeddingProviderHandle, OneHotEmbeddingProvider
from .relevance import (
    derive_training_highlights,
    normalize_to_weights,
    score_context_against_caption,
)


@dataclass
class BuildReport:
    """Explicit accounting for every dataset build."""

    emitted: int = 0
    dropped: int = 0
    empty_highlight: int = 0
    malformed: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"emitted": self.emitted, "dropped": self.dropped,
                "empty_highlight": self.empty_highlight,
                "malformed": self.malformed, "notes": self.notes}


def hash_feature(key: str, dim: int) -> tuple[float, ...]:
    """Deterministic unit vector derived from a content hash of ``key``."""
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    vec = rng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    return tuple(float(v) for v in vec)


# --- page ingestion ---------------------------------------------------------


def ingest_pages(path: str | Path, image_dim: int = 48,
                 feature_lookup=None) -> tuple[list[CICSample], BuildReport]:
    """Read page records (a JSON list or JSONL) into contextual samples.

    One sample per captioned image in each section: the target caption is the
    image's own caption and the context combines the page title, section
    title, section text, and the captions of the section's other images.
    Image vectors come from ``feature_lookup(image_ref)`` when provided and a
    content hash of the ref otherwise.
    """
    raw = Path(path).read_text(encoding="utf-8")
    stripped = raw.lstrip()
    if stripped.startswith("["):
        pages = json.loads(raw)
    else:
        pages = [json.loads(line) for line in raw.splitlines() if line.strip()]

    report = BuildReport()
    samples: list[CICSample] = []
    for page in pages:
        try:
            page_title = page["page_title"]
            sections = page["sections"]
        except (TypeError, KeyError):
            report.malformed += 1
            continue
        for section in sections:
            try:
                section_title = section.get("section_title", "")
                section_text = section.get("section_text", "")
                images = [img for img in section.get("images", [])
                          if normalize_text(img.get("caption", ""))]
            except (TypeError, AttributeError):
                report.malformed += 1
                continue
            for img in images:
                aux = [other["caption"] for other in images if other is not img]
                context = Context.build(page_title, section_title, section_text, aux)
                if feature_lookup is not None:
                    vector = tuple(float(v) for v in feature_lookup(img["image_ref"]))
                else:
                    vector = hash_feature(img["image_ref"], image_dim)
                caption = normalize_text(img["caption"])
                samples.append(CICSample(
                    context=context,
                    image=ImageFeature(vector, source_id=img["image_ref"]),
                    target_caption=CaptionText(caption, token_count=len(caption.split())),
                ))
                report.emitted += 1
    return samples, report


# --- weak supervision -------------------------------------------------------


def build_ctrlcic_dataset(
    samples: Iterable[CICSample],
    provider: EmbeddingProviderHandle,
    config: TrainingConfig,
) -> tuple[list[CtrlCICSample], BuildReport]:
    """Attach weakly-supervised highlights and recalibration weights.

    Per sample: embed context tokens and caption tokens, mean-pool the
    caption, score tokens by cosine, aggregate to words, threshold at theta
    (capped at max_prompt_words), and map token scores into unit-interval
    weights. Samples whose embeddings are degenerate are dropped and counted.
    """
    report = BuildReport()
    out: list[CtrlCICSample] = []
    for i, sample in enumerate(samples):
        caption_tokens = sample.target_caption.text.split()
        try:
            ctx_emb = provider.encode_tokens(sample.context.token_texts())
            cap_emb = provider.encode_tokens(caption_tokens)
            scores = score_context_against_caption(sample.context, ctx_emb, cap_emb)
        except DegenerateEmbedding:
            report.dropped += 1
            continue
        highlights = derive_training_highlights(
            scores.word_scores, sample.context,
            theta=config.theta, max_words=config.max_prompt_words)
        weights = normalize_to_weights(scores.token_scores, alpha=config.alpha)
        if not highlights:
            report.empty_highlight += 1
        out.append(CtrlCICSample(
            context=sample.context,
            image=sample.image,
            highlights=highlights,
            target_caption=sample.target_caption,
            sample_index=i,
            highlight_index=0,
            token_weights=weights.token_weights,
        ))
        report.emitted += 1
    return out, report


# --- synthetic verification corpus ------------------------------------------

_COLORS = ("red", "blue", "green", "yellow", "purple", "orange", "silver", "brown")
_ANIMALS = ("fox", "bird", "frog", "owl", "cat", "deer", "otter", "hare")


@dataclass(frozen=True)
class SyntheticSpec:
    num_contexts: int = 50
    facts_per_context: int = 3
    seed: int = 0
    eval_fraction: float = 0.2
    image_dim: int = 48
    include_pair_samples: bool = True  # adds two-fact samples so multi-highlight
    #                                    requests have trained behavior


def _fact_sentence(color: str, animal: str) -> str:
    return f"A {color} {animal} lives in the park."


def _fact_caption(color: str, animal: str) -> str:
    return f"a photo of the {color} {animal}"


def _pair_caption(fact_a: tuple[str, str], fact_b: tuple[str, str]) -> str:
    return f"{fact_a[0]} {fact_a[1]} with {fact_b[0]} {fact_b[1]}"


def generate_synthetic_corpus(spec: SyntheticSpec
                              ) -> tuple[list[CtrlCICSample], list[CtrlCICSample]]:
    """Build the deterministic toy corpus with a bijective highlight-to-caption
    mapping per context.

    The (color, animal) fact pool is partitioned so evaluation contexts use
    fact combinations never seen in training. Token weights are attached via
    the real relevance pipeline over a one-hot token provider.
    """
    rng = np.random.default_rng(spec.seed)
    pairs = [(c, a) for c in _COLORS for a in _ANIMALS]
    pairs = [pairs[i] for i in rng.permutation(len(pairs))]
    num_eval_ctx = max(1, round(spec.num_contexts * spec.eval_fraction))
    num_train_ctx = spec.num_contexts - num_eval_ctx
    num_eval_pairs = max(spec.facts_per_context + 1, len(pairs) // 5)
    eval_pool, train_pool = pairs[:num_eval_pairs], pairs[num_eval_pairs:]

    provider = OneHotEmbeddingProvider(dim=512)

    def pick_facts(pool: list[tuple[str, str]]) -> list[tuple[str, str]]:
        # distinct colors and animals within one context keep highlights unambiguous
        while True:
            chosen = [pool[i] for i in rng.choice(len(pool), size=spec.facts_per_context,
                                                  replace=False)]
            colors = {c for c, _ in chosen}
            animals = {a for _, a in chosen}
            if len(colors) == len(chosen) and len(animals) == len(chosen):
                return chosen

    def fact_span(context: Context, color: str, animal: str) -> HighlightSpan:
        clause = f"{color} {animal}"
        start = context.assembled_text.index(clause)
        return HighlightSpan.from_offsets(context, start, start + len(clause))

    def make_sample(context, highlight_spans, caption, image_key, index, j):
        cap_tokens = caption.split()
        scores = score_context_against_caption(
            context,
            provider.encode_tokens(context.token_texts()),
            provider.encode_tokens(cap_tokens),
        )
        weights = normalize_to_weights(scores.token_scores)
        return CtrlCICSample(
            context=context,
            image=ImageFeature(hash_feature(image_key, spec.image_dim),
                               source_id=f"synthetic:{image_key}"),
            highlights=HighlightSet.from_spans(highlight_spans),
            target_caption=CaptionText(caption, token_count=len(cap_tokens)),
            sample_index=index,
            highlight_index=j,
            token_weights=weights.token_weights,
        )

    def build_split(pool, count, title_prefix, index_base):
        samples = []
        for ci in range(count):
            facts = pick_facts(pool)
            body = " ".join(_fact_sentence(c, a) for c, a in facts)
            context = Context.build(f"{title_prefix} {ci:03d}", "Wildlife", body)
            j = 0
            for color, animal in facts:
                clause = f"{color} {animal}"
                samples.append(make_sample(
                    context, [fact_span(context, color, animal)],
                    _fact_caption(color, animal), clause, index_base + ci, j))
                j += 1
            if spec.include_pair_samples and len(facts) >= 2:
                # one rotating pair per context: enough to teach multi-highlight
                # behavior without letting pair captions dominate the corpus
                pair_choices = [(ia, ib) for ia in range(len(facts))
                                for ib in range(ia + 1, len(facts))]
                ia, ib = pair_choices[ci % len(pair_choices)]
                fa, fb = facts[ia], facts[ib]
                key = f"{fa[0]} {fa[1]} with {fb[0]} {fb[1]}"
                samples.append(make_sample(
                    context, [fact_span(context, *fa), fact_span(context, *fb)],
                    _pair_caption(fa, fb), key, index_base + ci, j))
        return samples

    train = build_split(train_pool, num_train_ctx, "Park guide", 0)
    eval_ = build_split(eval_pool, num_eval_ctx, "Reserve guide", num_train_ctx)
    return train, eval_


# --- JSONL persistence --------------------------------------------------------

_RECORD_TYPES = {"cic": CICSample, "ctrlcic": CtrlCICSample}

JSONL_SCHEMA_VERSION = 1


def write_jsonl(path: str | Path, samples: Sequence[CICSample | CtrlCICSample]) -> None:
    """One record per line, UTF-8, byte-stable for identical inputs."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            kind = "ctrlcic" if isinstance(sample, CtrlCICSample) else "cic"
            rec = {"kind": kind, "schema_version": JSONL_SCHEMA_VERSION,
                   **sample.to_record()}
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False,
                                separators=(",", ":")) + "\n")


_CONTEXT_FIELDS = ("page_title", "section_title", "body", "aux_captions",
                   "assembled_text", "tokens", "word_groups")


def _check(cond: bool, message: str, line: int, field_name: str | None = None) -> None:
    if not cond:
        raise SchemaViolation(f"line {line}: {message}", line=line, field=field_name)


def _validate_record(rec: dict, line: int) -> None:
    kind = rec.get("kind")
    _check(kind in _RECORD_TYPES, f"unknown record kind {kind!r}", line, "kind")
    version = rec.get("schema_version", JSONL_SCHEMA_VERSION)
    _check(version == JSONL_SCHEMA_VERSION,
           f"unsupported schema_version {version!r}", line, "schema_version")
    for field_name in ("context", "image", "target_caption"):
        _check(field_name in rec, f"missing field {field_name!r}", line, field_name)
    for field_name in _CONTEXT_FIELDS:
        _check(field_name in rec["context"], f"missing context field {field_name!r}",
               line, field_name)
    _check("vector" in rec["image"] and "source_id" in rec["image"],
           "image record needs vector and source_id", line, "image")
    _check("text" in rec["target_caption"], "target_caption needs text", line,
           "target_caption")
    if kind == "ctrlcic":
        for field_name in ("highlights", "sample_index", "highlight_index"):
            _check(field_name in rec, f"missing field {field_name!r}", line, field_name)
        for pair in rec["highlights"]:
            _check(isinstance(pair, list) and len(pair) == 2,
                   "highlight spans must be [start, end] pairs", line, "highlights")


def read_jsonl(path: str | Path) -> list[CICSample | CtrlCICSample]:
    """Parse and schema-validate a JSONL dataset written by :func:`write_jsonl`."""
    out: list[CICSample | CtrlCICSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"line {line_no}: invalid JSON ({exc})",
                                      line=line_no) from exc
            _validate_record(rec, line_no)
            cls = _RECORD_TYPES[rec["kind"]]
            try:
                out.append(cls.from_record(rec))
            except (KeyError, ValueError, TypeError) as exc:
                raise SchemaViolation(f"line {line_no}: {exc}", line=line_no) from exc
    return out
