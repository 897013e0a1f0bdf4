#!/usr/bin/env python3
"""Regenerate the committed evaluator fixtures.

Produces, under tests/fixtures/:
- golden_eval_prompt.txt       frozen render of the comparative evaluation prompt
- judge_eval_samples.jsonl     five synthetic samples used by replay tests
- judge_candidates.json        candidate caption per sample id
- judge_transcripts/*.json     recorded transcripts with known score tables

The transcript scores are fixed so the per-metric aggregates can be recomputed
by hand in the tests.
"""

import json
import re
import shutil
from pathlib import Path

from ctrlcap.core import Context, HighlightSet
from ctrlcap.datasets import SyntheticSpec, generate_synthetic_corpus, write_jsonl
from ctrlcap.evaluator import EvalConfig, ScriptedJudgeClient, build_eval_prompt, run_evaluation

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

# per-sample (candidate, anchor) score tables, in sample order
SCORES = [
    ({"CR": 4, "HR": 5, "IC": 3, "OQ": 4}, {"CR": 4, "HR": 4, "IC": 4, "OQ": 4}),
    ({"CR": 2, "HR": 1, "IC": 4, "OQ": 2}, {"CR": 4, "HR": 5, "IC": 4, "OQ": 4}),
    ({"CR": 5, "HR": 5, "IC": 5, "OQ": 5}, {"CR": 5, "HR": 5, "IC": 5, "OQ": 5}),
    ({"CR": 3, "HR": 4, "IC": 2, "OQ": 3}, {"CR": 3, "HR": 2, "IC": 4, "OQ": 3}),
    ({"CR": 4, "HR": 2, "IC": 3, "OQ": 5}, {"CR": 2, "HR": 4, "IC": 3, "OQ": 5}),
]

RESPONSE_TEMPLATE = """[ASSISTANT1-Reasoning]:
- Relevance with Context: scripted fixture reasoning.
- Relevance with Highlight: scripted fixture reasoning.
- Consistency with Image: scripted fixture reasoning.
- Overall Quality: scripted fixture reasoning.

[ASSISTANT2-Reasoning]:
- Relevance with Context: scripted fixture reasoning.
- Relevance with Highlight: scripted fixture reasoning.
- Consistency with Image: scripted fixture reasoning.
- Overall Quality: scripted fixture reasoning.

[Comparison-Reasoning]:
Scripted comparison for fixture generation.

[ASSISTANT1-Score]:
- Relevance with Context: {a1[CR]}
- Relevance with Highlight: {a1[HR]}
- Consistency with Image: {a1[IC]}
- Overall Quality: {a1[OQ]}

[ASSISTANT2-Score]:
- Relevance with Context: {a2[CR]}
- Relevance with Highlight: {a2[HR]}
- Consistency with Image: {a2[IC]}
- Overall Quality: {a2[OQ]}
"""


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)

    # golden prompt
    context = Context.build(
        "Harbor Lighthouse", "Construction",
        "The tower was rebuilt in 1852 using local granite. "
        "Its lamp was originally fueled by whale oil.")
    highlights = HighlightSet.from_offset_pairs(
        context, [_find(context, "rebuilt in 1852"), _find(context, "whale oil")])
    golden = build_eval_prompt("img-lighthouse", context, highlights,
                               "The granite tower rebuilt in 1852.",
                               "A lighthouse lamp burning whale oil.")
    (FIXTURES / "golden_eval_prompt.txt").write_text(golden, encoding="utf-8")

    # replay samples: first five single-highlight samples of the toy corpus
    train, _ = generate_synthetic_corpus(
        SyntheticSpec(num_contexts=6, facts_per_context=3, seed=3, eval_fraction=0.17))
    samples = [s for s in train if len(s.highlights) == 1][:5]
    write_jsonl(FIXTURES / "judge_eval_samples.jsonl", samples)

    candidates = {}
    for sample in samples:
        fact = sample.highlights.texts()[0]
        candidates[f"{sample.sample_index}-{sample.highlight_index}"] = \
            f"a close view of the {fact}"
    (FIXTURES / "judge_candidates.json").write_text(
        json.dumps(candidates, indent=2, sort_keys=True), encoding="utf-8")

    # scripted judge that maps the fixed score tables onto whichever slot the
    # candidate landed in
    cursor = {"i": 0}

    def respond(prompt: str) -> str:
        idx = cursor["i"]
        cursor["i"] += 1
        cand_scores, anchor_scores = SCORES[idx]
        sample = samples[idx]
        candidate_caption = candidates[f"{sample.sample_index}-{sample.highlight_index}"]
        slot1 = re.search(r"\[ASSISTANT1 Caption\]:\n(.*)\n", prompt).group(1)
        if slot1 == candidate_caption:
            a1, a2 = cand_scores, anchor_scores
        else:
            a1, a2 = anchor_scores, cand_scores
        return RESPONSE_TEMPLATE.format(a1=a1, a2=a2)

    transcripts = FIXTURES / "judge_transcripts"
    if transcripts.exists():
        shutil.rmtree(transcripts)
    report = run_evaluation(
        samples,
        lambda s: candidates[f"{s.sample_index}-{s.highlight_index}"],
        ScriptedJudgeClient(respond),
        EvalConfig(rng_seed=17, transcript_dir=transcripts),
    )
    # strip timestamps so the fixtures are byte-stable across regenerations
    for path in sorted(transcripts.glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc.pop("timestamp", None)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")

    print(json.dumps(report, indent=2, sort_keys=True))
    print("fixtures written to", FIXTURES)


def _find(context: Context, needle: str) -> tuple[int, int]:
    start = context.assembled_text.index(needle)
    return start, start + len(needle)


if __name__ == "__main__":
    main()
