import json

import numpy as np
import pytest

from ctrlcap.core import CaptionText, CICSample, Context, ImageFeature, TrainingConfig
from ctrlcap.datasets import (
    SyntheticSpec,
    build_ctrlcic_dataset,
    generate_synthetic_corpus,
    ingest_pages,
    read_jsonl,
    write_jsonl,
)
from ctrlcap.errors import SchemaViolation
from ctrlcap.modeling.providers import OneHotEmbeddingProvider


class TestIngest:
    def test_three_page_fixture(self, pages_fixture_path):
        samples, report = ingest_pages(pages_fixture_path)
        assert report.emitted == 3
        assert report.malformed == 1

        by_ref = {s.image.source_id: s for s in samples}
        assert set(by_ref) == {"img-telescope", "img-dome", "img-heron"}

        telescope = by_ref["img-telescope"]
        assert telescope.target_caption.text == "The main solar telescope at dusk"
        # the sibling image's caption is context; its own caption is not
        assert telescope.context.aux_captions == ("Dome interior with counterweights",)
        assert "Dome interior" in telescope.context.assembled_text
        assert "at dusk" not in telescope.context.assembled_text

        dome = by_ref["img-dome"]
        assert dome.context.aux_captions == ("The main solar telescope at dusk",)

        heron = by_ref["img-heron"]
        assert heron.context.aux_captions == ()
        assert heron.context.page_title == "River Delta"

    def test_deterministic_features(self, pages_fixture_path):
        a, _ = ingest_pages(pages_fixture_path)
        b, _ = ingest_pages(pages_fixture_path)
        assert a == b


class TestBuildCtrlCIC:
    def make_cic(self, body, caption):
        ctx = Context.build("", "", body)
        return CICSample(context=ctx, image=ImageFeature((1.0, 0.0), "img"),
                         target_caption=CaptionText(caption, len(caption.split())))

    def test_verbatim_word_highlighted(self):
        # one-hot cosine: "fox" in a 3-word caption scores 1/sqrt(3) > 0.3
        sample = self.make_cic("the fox den sits here", "crimson fox portrait")
        out, report = build_ctrlcic_dataset([sample], OneHotEmbeddingProvider(),
                                            TrainingConfig())
        assert report.emitted == 1
        texts = out[0].highlights.texts()
        assert "fox" in " ".join(texts)

    def test_orthogonal_caption_yields_neutral_weights(self):
        sample = self.make_cic("alpha beta gamma", "delta epsilon")
        out, report = build_ctrlcic_dataset([sample], OneHotEmbeddingProvider(),
                                            TrainingConfig())
        assert report.emitted == 1
        assert report.empty_highlight == 1
        assert len(out[0].highlights) == 0
        assert all(w == pytest.approx(0.5) for w in out[0].token_weights)

    def test_highlights_word_aligned_over_synthetic_run(self):
        train, eval_ = generate_synthetic_corpus(SyntheticSpec(num_contexts=25, seed=5))
        samples = (train + eval_)[:100]
        cic = [CICSample(s.context, s.image, s.target_caption) for s in samples]
        out, _ = build_ctrlcic_dataset(cic, OneHotEmbeddingProvider(), TrainingConfig())
        for s in out:
            boundaries = {0, len(s.context.assembled_text)}
            for j in range(s.context.num_words):
                a, b = s.context.word_char_span(j)
                boundaries.update((a, b))
            for span in s.highlights:
                span.validate_against(s.context)  # contiguity: text slices exactly
                assert span.char_start in boundaries
                assert span.char_end in boundaries

    def test_deterministic_given_inputs(self):
        sample = self.make_cic("the fox den", "a fox")
        a, _ = build_ctrlcic_dataset([sample], OneHotEmbeddingProvider(), TrainingConfig())
        b, _ = build_ctrlcic_dataset([sample], OneHotEmbeddingProvider(), TrainingConfig())
        assert a == b


class TestSyntheticCorpus:
    def test_fact_sentence_count(self):
        train, _ = generate_synthetic_corpus(SyntheticSpec(num_contexts=5, seed=0))
        singles = [s for s in train if len(s.highlights) == 1]
        ctx = singles[0].context
        assert ctx.body.count("lives in the park.") == 3

    def test_same_seed_identical(self):
        spec = SyntheticSpec(num_contexts=8, seed=4)
        assert generate_synthetic_corpus(spec) == generate_synthetic_corpus(spec)

    def test_highlight_verbatim_and_caption_vocabulary(self):
        train, eval_ = generate_synthetic_corpus(SyntheticSpec(num_contexts=10, seed=1))
        template_words = {"a", "photo", "of", "the", "with"}
        for s in train + eval_:
            highlight_words = set()
            for t in s.highlights.texts():
                assert t in s.context.assembled_text
                highlight_words.update(t.split())
            caption_words = set(s.target_caption.text.split())
            assert caption_words <= highlight_words | template_words

    def test_single_fact_mapping_bijective_per_context(self):
        train, _ = generate_synthetic_corpus(SyntheticSpec(num_contexts=10, seed=2))
        by_ctx = {}
        for s in train:
            if len(s.highlights) == 1:
                by_ctx.setdefault(s.sample_index, []).append(s)
        for group in by_ctx.values():
            highlights = [g.highlights.texts()[0] for g in group]
            captions = [g.target_caption.text for g in group]
            assert len(set(highlights)) == len(group)
            assert len(set(captions)) == len(group)

    def test_train_eval_fact_pools_disjoint(self):
        train, eval_ = generate_synthetic_corpus(SyntheticSpec(num_contexts=20, seed=3))

        def fact_pairs(samples):
            pairs = set()
            for s in samples:
                for t in s.highlights.texts():
                    pairs.add(t)
            return pairs

        assert fact_pairs(train).isdisjoint(fact_pairs(eval_))

    def test_image_disambiguates(self):
        train, _ = generate_synthetic_corpus(SyntheticSpec(num_contexts=5, seed=0))
        by_key = {}
        for s in train:
            by_key.setdefault(s.image.source_id, set()).add(s.target_caption.text)
        for captions in by_key.values():
            assert len(captions) == 1


class TestJsonl:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert read_jsonl(path) == []

    def test_round_trip(self, tmp_path, toy_corpus):
        train, _ = toy_corpus
        path = tmp_path / "corpus.jsonl"
        write_jsonl(path, train)
        assert read_jsonl(path) == list(train)

    def test_byte_stable(self, tmp_path, toy_corpus):
        train, _ = toy_corpus
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_jsonl(p1, train)
        write_jsonl(p2, train)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_field_names_field_and_line(self, tmp_path, toy_corpus):
        train, _ = toy_corpus
        path = tmp_path / "bad.jsonl"
        write_jsonl(path, train[:2])
        lines = path.read_text().splitlines()
        rec = json.loads(lines[1])
        del rec["highlights"]
        path.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(SchemaViolation) as err:
            read_jsonl(path)
        assert err.value.line == 2
        assert err.value.field == "highlights"

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(SchemaViolation) as err:
            read_jsonl(path)
        assert err.value.line == 1

    def test_future_schema_version_rejected(self, tmp_path, toy_corpus):
        train, _ = toy_corpus
        path = tmp_path / "future.jsonl"
        write_jsonl(path, train[:1])
        rec = json.loads(path.read_text())
        rec["schema_version"] = 99
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(SchemaViolation) as err:
            read_jsonl(path)
        assert err.value.field == "schema_version"

    def test_mixed_kinds_round_trip(self, tmp_path, toy_corpus):
        train, _ = toy_corpus
        cic = CICSample(train[0].context, train[0].image, train[0].target_caption)
        path = tmp_path / "mixed.jsonl"
        write_jsonl(path, [cic, train[0]])
        loaded = read_jsonl(path)
        assert isinstance(loaded[0], CICSample)
        assert loaded == [cic, train[0]]
