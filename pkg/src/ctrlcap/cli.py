"""Command-line surface for every pipeline stage.

Precedence: explicit flags > --config file section > built-in defaults. Every
subcommand echoes its effective configuration to stderr, writes a run manifest
next to its outputs, and is re-runnable: same inputs and seed give the same
bytes. Usage errors exit 2 (argparse); runtime errors exit 1 with an error
JSON on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .controllers import pctrl_generate, pctrl_generate_cic, rctrl_generate, rctrl_generate_cic
from .core import Context, CtrlCICSample, HighlightSet, ImageFeature, TrainingConfig
from .datasets import (
    SyntheticSpec,
    build_ctrlcic_dataset,
    generate_synthetic_corpus,
    ingest_pages,
    read_jsonl,
    write_jsonl,
)
from .errors import CtrlCapError
from .evaluator import EvalConfig, ReplayClient, RetryingClient, run_evaluation
from .metrics import MetricReport, clip_score, clip_score_sent, div_n, highlight_recall
from .modeling.providers import HashEmbeddingProvider, OneHotEmbeddingProvider
from .modeling.train import Checkpoint, train_controller, train_weight_predictor
from .errors import NoHighlightedSentence, JudgeUnavailable


def _provider(name: str):
    if name == "onehot":
        return OneHotEmbeddingProvider()
    if name == "hash":
        return HashEmbeddingProvider()
    raise CtrlCapError(f"unknown provider: {name}")


def _effective(args: argparse.Namespace, config_section: dict, defaults: dict) -> dict:
    merged = dict(defaults)
    merged.update({k: v for k, v in config_section.items() if k in defaults})
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _config_section(args: argparse.Namespace, name: str) -> dict:
    if not getattr(args, "config", None):
        return {}
    doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    return doc.get(name, {})


def _echo(effective: dict) -> None:
    print(f"[ctrlcap] effective config: {json.dumps(effective, sort_keys=True)}",
          file=sys.stderr)


def _write_manifest(output: str | Path, subcommand: str, effective: dict,
                    inputs: list[str], outputs: list[str], started: float) -> None:
    manifest = {
        "tool_version": __version__,
        "subcommand": subcommand,
        "inputs": inputs,
        "outputs": outputs,
        "config": effective,
        "config_hash": hashlib.sha256(
            json.dumps(effective, sort_keys=True).encode()).hexdigest()[:16],
        "seed": effective.get("seed"),
        "duration_seconds": round(time.time() - started, 3),
    }
    path = Path(str(output) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def _training_config(eff: dict) -> TrainingConfig:
    return TrainingConfig(
        theta=eff.get("theta", 0.3),
        alpha=eff.get("alpha", 0.1),
        max_prompt_words=eff.get("max_prompt_words", 40),
        input_token_budget=eff.get("input_budget", 512),
        output_token_budget=eff.get("output_budget", 128),
        learning_rate=eff.get("lr", 5e-5),
        weight_decay=eff.get("weight_decay", 0.01),
        batch_size=eff.get("batch_size", 12),
        total_steps=eff.get("steps", 1000),
        rng_seed=eff.get("seed", 0),
        model_dim=eff.get("dim", 48),
        separator=eff.get("separator", "<SEP>"),
    )


# --- subcommand implementations ---------------------------------------------


def cmd_ingest(args) -> int:
    defaults = {"input": None, "output": None, "image_dim": 48, "seed": 0}
    eff = _effective(args, _config_section(args, "ingest"), defaults)
    _echo(eff)
    started = time.time()
    samples, report = ingest_pages(eff["input"], image_dim=eff["image_dim"])
    write_jsonl(eff["output"], samples)
    Path(str(eff["output"]) + ".report.json").write_text(
        json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    _write_manifest(eff["output"], "ingest", eff, [str(eff["input"])],
                    [str(eff["output"])], started)
    print(json.dumps({"emitted": report.emitted, "malformed": report.malformed}))
    return 0


def cmd_build_dataset(args) -> int:
    defaults = {"input": None, "output": None, "provider": "onehot",
                "theta": 0.3, "alpha": 0.1, "max_prompt_words": 40, "seed": 0}
    eff = _effective(args, _config_section(args, "build-dataset"), defaults)
    _echo(eff)
    started = time.time()
    cic = read_jsonl(eff["input"])
    config = TrainingConfig(theta=eff["theta"], alpha=eff["alpha"],
                            max_prompt_words=eff["max_prompt_words"],
                            rng_seed=eff["seed"])
    out, report = build_ctrlcic_dataset(cic, _provider(eff["provider"]), config)
    write_jsonl(eff["output"], out)
    Path(str(eff["output"]) + ".report.json").write_text(
        json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    _write_manifest(eff["output"], "build-dataset", eff, [str(eff["input"])],
                    [str(eff["output"])], started)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_synth(args) -> int:
    defaults = {"output": ".", "contexts": 50, "facts": 3, "seed": 0,
                "image_dim": 48, "pairs": True}
    eff = _effective(args, _config_section(args, "synth"), defaults)
    _echo(eff)
    started = time.time()
    spec = SyntheticSpec(num_contexts=eff["contexts"], facts_per_context=eff["facts"],
                         seed=eff["seed"], image_dim=eff["image_dim"],
                         include_pair_samples=eff["pairs"])
    train, eval_ = generate_synthetic_corpus(spec)
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    train_path, eval_path = outdir / "train.jsonl", outdir / "eval.jsonl"
    write_jsonl(train_path, train)
    write_jsonl(eval_path, eval_)
    _write_manifest(outdir / "synth", "synth", eff, [],
                    [str(train_path), str(eval_path)], started)
    print(json.dumps({"train": len(train), "eval": len(eval_)}))
    return 0


def cmd_train(args) -> int:
    defaults = {"input": None, "checkpoint": None, "controller": "prompting",
                "steps": 1000, "lr": 5e-3, "batch_size": 16, "dim": 48,
                "seed": 0, "weight_decay": 0.01, "output_budget": None,
                "input_budget": 512, "separator": "<SEP>", "theta": 0.3,
                "alpha": 0.1, "max_prompt_words": 40}
    eff = _effective(args, _config_section(args, "train"), defaults)
    if eff["output_budget"] is None:
        eff["output_budget"] = 192 if eff["controller"] == "prompting" else 128
    _echo(eff)
    started = time.time()
    samples = [s for s in read_jsonl(eff["input"]) if isinstance(s, CtrlCICSample)]
    ckpt = train_controller(samples, eff["controller"], _training_config(eff))
    ckpt.save(eff["checkpoint"])
    _write_manifest(eff["checkpoint"], "train", eff, [str(eff["input"])],
                    [str(eff["checkpoint"])], started)
    print(json.dumps({"controller": eff["controller"], "steps": eff["steps"],
                      "first_loss": ckpt.loss_trace[0] if ckpt.loss_trace else None,
                      "final_loss": ckpt.loss_trace[-1] if ckpt.loss_trace else None}))
    return 0


def cmd_train_predictor(args) -> int:
    defaults = {"input": None, "checkpoint": None, "steps": 800, "lr": 1e-2,
                "batch_size": 16, "dim": 32, "seed": 0, "weight_decay": 0.01,
                "input_budget": 512}
    eff = _effective(args, _config_section(args, "train-predictor"), defaults)
    _echo(eff)
    started = time.time()
    samples = [s for s in read_jsonl(eff["input"]) if isinstance(s, CtrlCICSample)]
    ckpt = train_weight_predictor(samples, _training_config(eff))
    ckpt.save(eff["checkpoint"])
    _write_manifest(eff["checkpoint"], "train-predictor", eff, [str(eff["input"])],
                    [str(eff["checkpoint"])], started)
    print(json.dumps({"steps": eff["steps"],
                      "final_loss": ckpt.loss_trace[-1] if ckpt.loss_trace else None}))
    return 0


def cmd_caption(args) -> int:
    defaults = {"checkpoint": None, "predictor": None, "input": None,
                "output": None, "alpha": 0.1, "seed": 0}
    eff = _effective(args, _config_section(args, "caption"), defaults)
    _echo(eff)
    started = time.time()
    ckpt = Checkpoint.load(eff["checkpoint"])
    request = json.loads(Path(eff["input"]).read_text(encoding="utf-8"))
    context = Context.build(request["page_title"], request.get("section_title", ""),
                            request.get("body", ""), request.get("aux_captions", []))
    highlights = HighlightSet.from_offset_pairs(
        context, [tuple(p) for p in request.get("highlights", [])])
    image = ImageFeature(tuple(request["image_feature"]),
                         source_id=request.get("image_ref", "inline"))
    if ckpt.kind == "prompting":
        gen = (pctrl_generate(ckpt.model, context, image, highlights,
                              separator=ckpt.separator, seed=eff["seed"])
               if highlights else
               pctrl_generate_cic(ckpt.model, context, image,
                                  separator=ckpt.separator, seed=eff["seed"]))
    else:
        predictor = Checkpoint.load(eff["predictor"]).predictor
        gen = (rctrl_generate(ckpt.model, predictor, context, image, highlights,
                              alpha=eff["alpha"], seed=eff["seed"])
               if highlights else
               rctrl_generate_cic(ckpt.model, predictor, context, image,
                                  seed=eff["seed"]))
    result = {"caption": gen.caption.text,
              "controller": gen.controller_kind,
              "applied_highlights": gen.applied_highlights.texts(),
              "decode_params": gen.decode_params}
    if eff["output"]:
        Path(eff["output"]).write_text(json.dumps(result, indent=2, sort_keys=True),
                                       encoding="utf-8")
        _write_manifest(eff["output"], "caption", eff,
                        [str(eff["input"]), str(eff["checkpoint"])],
                        [str(eff["output"])], started)
    print(json.dumps(result, sort_keys=True))
    return 0


def _metric_eval(samples: list[CtrlCICSample], ckpt: Checkpoint,
                 predictor_ckpt: Checkpoint | None, alpha: float) -> MetricReport:
    onehot = OneHotEmbeddingProvider()

    def generate(sample, highlights):
        if ckpt.kind == "prompting":
            return pctrl_generate(ckpt.model, sample.context, sample.image, highlights,
                                  separator=ckpt.separator).caption.text
        return rctrl_generate(ckpt.model, predictor_ckpt.predictor, sample.context,
                              sample.image, highlights, alpha=alpha).caption.text

    singles = [s for s in samples if len(s.highlights) == 1]
    by_context: dict[int, list[CtrlCICSample]] = {}
    for s in singles:
        by_context.setdefault(s.sample_index, []).append(s)

    recalls, cs_sent, cs_img = [], [], []
    divs1, divs2 = [], []
    image_provider_cache: dict[int, HashEmbeddingProvider] = {}
    for s in singles:
        cap = generate(s, s.highlights)
        recalls.append(highlight_recall(cap, s.highlights))
        try:
            cs_sent.append(clip_score_sent(cap, s.context, s.highlights, onehot))
        except (NoHighlightedSentence, CtrlCapError):
            pass
        dim = s.image.dim
        prov = image_provider_cache.setdefault(dim, HashEmbeddingProvider(dim=dim))
        try:
            cs_img.append(clip_score(prov.encode_sentence(cap), np.array(s.image.vector)))
        except CtrlCapError:
            pass
    for group in by_context.values():
        if len(group) < 3:
            continue
        spans = [list(g.highlights.spans) for g in group[:3]]
        variants = [g.highlights for g in group[:3]]
        variants.append(HighlightSet.from_spans(spans[0] + spans[1]))
        variants.append(HighlightSet.from_spans(spans[1] + spans[2]))
        caps = [generate(group[0], v) for v in variants]
        divs1.append(div_n(caps, 1))
        divs2.append(div_n(caps, 2))

    mean = lambda xs: float(np.mean(xs)) if xs else 0.0
    return MetricReport(
        recall=100.0 * mean(recalls),
        div_1=100.0 * mean(divs1),
        div_2=100.0 * mean(divs2),
        clip_score=100.0 * mean(cs_img),
        clip_score_sent=100.0 * mean(cs_sent),
        num_samples=len(singles),
        num_groups=len(divs1),
    )


def cmd_eval_metrics(args) -> int:
    defaults = {"input": None, "checkpoint": None, "predictor": None,
                "output": None, "alpha": 0.1, "seed": 0}
    eff = _effective(args, _config_section(args, "eval-metrics"), defaults)
    _echo(eff)
    started = time.time()
    samples = [s for s in read_jsonl(eff["input"]) if isinstance(s, CtrlCICSample)]
    ckpt = Checkpoint.load(eff["checkpoint"])
    predictor_ckpt = Checkpoint.load(eff["predictor"]) if eff["predictor"] else None
    report = _metric_eval(samples, ckpt, predictor_ckpt, eff["alpha"])
    out = eff["output"] or (str(eff["input"]) + ".metrics.json")
    Path(out).write_text(report.to_json(), encoding="utf-8")
    Path(out).with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    _write_manifest(out, "eval-metrics", eff, [str(eff["input"])], [out], started)
    print(report.to_json())
    return 0


def cmd_eval_judge(args) -> int:
    defaults = {"input": None, "captions": None, "replay": None, "output": None,
                "seed": 0, "transcripts": None}
    eff = _effective(args, _config_section(args, "eval-judge"), defaults)
    _echo(eff)
    started = time.time()
    samples = [s for s in read_jsonl(eff["input"]) if isinstance(s, CtrlCICSample)]
    if eff["captions"]:
        table = json.loads(Path(eff["captions"]).read_text(encoding="utf-8"))
        caption_source = lambda s: table[f"{s.sample_index}-{s.highlight_index}"]
    else:
        caption_source = lambda s: s.target_caption.text
    if eff["replay"]:
        client = ReplayClient(eff["replay"])
    else:
        endpoint = os.environ.get("CTRLCAP_JUDGE_ENDPOINT")
        if not endpoint:
            raise CtrlCapError(
                "no judge configured: pass --replay or set CTRLCAP_JUDGE_ENDPOINT")
        client = RetryingClient(_HttpJudgeClient(endpoint,
                                                 os.environ.get("CTRLCAP_JUDGE_KEY")))
    report = run_evaluation(samples, caption_source, client,
                            EvalConfig(rng_seed=eff["seed"],
                                       transcript_dir=eff["transcripts"]))
    out = eff["output"] or (str(eff["input"]) + ".judge.json")
    Path(out).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    _write_manifest(out, "eval-judge", eff, [str(eff["input"])], [out], started)
    print(json.dumps(report, sort_keys=True))
    return 0


class _HttpJudgeClient:
    """Minimal JSON-over-HTTP judge client: POST {prompt, image_ref} -> {text}."""

    def __init__(self, endpoint: str, api_key: str | None = None):
        self.endpoint = endpoint
        self.api_key = api_key

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        import urllib.error
        import urllib.request

        body = json.dumps({"prompt": prompt, "image_ref": image_ref}).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=body,
                                     headers={"Content-Type": "application/json"})
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        try:
            with urllib.request.urlopen(req, timeout=60) as resp:
                return json.loads(resp.read().decode("utf-8"))["text"]
        except (urllib.error.URLError, TimeoutError, KeyError) as exc:
            raise JudgeUnavailable(str(exc)) from exc


def cmd_serve(args) -> int:
    defaults = {"service_config": None, "port": 8040, "host": "127.0.0.1"}
    eff = _effective(args, _config_section(args, "serve"), defaults)
    _echo(eff)
    from .service import serve

    serve(eff["service_config"], host=eff["host"], port=eff["port"])
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctrlcap",
                                     description="controllable contextual captioning toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, flags):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file with per-subcommand sections")
        for flag, kwargs in flags.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(fn=fn)
        return p

    add("ingest", cmd_ingest, {
        "--input": {}, "--output": {}, "--image-dim": {"type": int, "dest": "image_dim"},
        "--seed": {"type": int}})
    add("build-dataset", cmd_build_dataset, {
        "--input": {}, "--output": {}, "--provider": {},
        "--theta": {"type": float}, "--alpha": {"type": float},
        "--max-prompt-words": {"type": int, "dest": "max_prompt_words"},
        "--seed": {"type": int}})
    add("synth", cmd_synth, {
        "--output": {}, "--contexts": {"type": int}, "--facts": {"type": int},
        "--seed": {"type": int}, "--image-dim": {"type": int, "dest": "image_dim"},
        "--no-pairs": {"action": "store_false", "dest": "pairs", "default": None}})
    add("train", cmd_train, {
        "--input": {}, "--checkpoint": {}, "--controller": {},
        "--steps": {"type": int}, "--lr": {"type": float},
        "--batch-size": {"type": int, "dest": "batch_size"},
        "--dim": {"type": int}, "--seed": {"type": int},
        "--weight-decay": {"type": float, "dest": "weight_decay"},
        "--output-budget": {"type": int, "dest": "output_budget"},
        "--input-budget": {"type": int, "dest": "input_budget"},
        "--theta": {"type": float}, "--alpha": {"type": float},
        "--max-prompt-words": {"type": int, "dest": "max_prompt_words"},
        "--separator": {}})
    add("train-predictor", cmd_train_predictor, {
        "--input": {}, "--checkpoint": {}, "--steps": {"type": int},
        "--lr": {"type": float}, "--batch-size": {"type": int, "dest": "batch_size"},
        "--dim": {"type": int}, "--seed": {"type": int},
        "--weight-decay": {"type": float, "dest": "weight_decay"}})
    add("caption", cmd_caption, {
        "--checkpoint": {}, "--predictor": {}, "--input": {}, "--output": {},
        "--alpha": {"type": float}, "--seed": {"type": int}})
    add("eval-metrics", cmd_eval_metrics, {
        "--input": {}, "--checkpoint": {}, "--predictor": {}, "--output": {},
        "--alpha": {"type": float}, "--seed": {"type": int}})
    add("eval-judge", cmd_eval_judge, {
        "--input": {}, "--captions": {}, "--replay": {}, "--output": {},
        "--seed": {"type": int}, "--transcripts": {}})
    add("serve", cmd_serve, {
        "--service-config": {"dest": "service_config"}, "--port": {"type": int},
        "--host": {}})
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CtrlCapError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
