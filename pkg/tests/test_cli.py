import json
from pathlib import Path

import pytest

from ctrlcap.cli import main
from ctrlcap.datasets import read_jsonl


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSynth:
    def test_deterministic_outputs(self, tmp_path, capsys):
        d1, d2 = tmp_path / "one", tmp_path / "two"
        for d in (d1, d2):
            code, out, _ = run_cli(capsys, "synth", "--seed", "7", "--contexts", "12",
                                   "--output", str(d))
            assert code == 0
        assert (d1 / "train.jsonl").read_bytes() == (d2 / "train.jsonl").read_bytes()
        assert (d1 / "eval.jsonl").read_bytes() == (d2 / "eval.jsonl").read_bytes()

    def test_counts_reported(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "synth", "--seed", "1", "--contexts", "10",
                               "--output", str(tmp_path))
        doc = json.loads(out.strip().splitlines()[-1])
        assert doc["train"] > 0 and doc["eval"] > 0

    def test_manifest_written(self, tmp_path, capsys):
        run_cli(capsys, "synth", "--seed", "3", "--contexts", "5",
                "--output", str(tmp_path))
        manifest = json.loads((tmp_path / "synth.manifest.json").read_text())
        assert manifest["subcommand"] == "synth"
        assert manifest["seed"] == 3
        assert manifest["config_hash"]


class TestIngestAndBuild:
    def test_fixture_counts(self, tmp_path, capsys, pages_fixture_path):
        cic = tmp_path / "cic.jsonl"
        code, out, _ = run_cli(capsys, "ingest", "--input", str(pages_fixture_path),
                               "--output", str(cic))
        assert code == 0
        assert json.loads(out.strip().splitlines()[-1]) == {"emitted": 3, "malformed": 1}

        ctrl = tmp_path / "ctrl.jsonl"
        code, out, _ = run_cli(capsys, "build-dataset", "--input", str(cic),
                               "--output", str(ctrl))
        assert code == 0
        report = json.loads(out.strip().splitlines()[-1])
        assert report["emitted"] == 3
        samples = read_jsonl(ctrl)
        assert len(samples) == 3
        report_doc = json.loads(Path(str(ctrl) + ".report.json").read_text())
        assert report_doc["emitted"] == 3

    def test_config_file_overridden_by_flags(self, tmp_path, capsys, pages_fixture_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ingest": {"image_dim": 8}}))
        out_path = tmp_path / "cic.jsonl"
        code, _, err = run_cli(capsys, "ingest", "--config", str(cfg),
                               "--input", str(pages_fixture_path),
                               "--output", str(out_path), "--image-dim", "12")
        assert code == 0
        assert '"image_dim": 12' in err  # flag wins over config file
        sample = read_jsonl(out_path)[0]
        assert sample.image.dim == 12

    def test_config_file_used_when_no_flag(self, tmp_path, capsys, pages_fixture_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ingest": {"image_dim": 8}}))
        out_path = tmp_path / "cic.jsonl"
        run_cli(capsys, "ingest", "--config", str(cfg),
                "--input", str(pages_fixture_path), "--output", str(out_path))
        assert read_jsonl(out_path)[0].image.dim == 8


class TestErrors:
    def test_usage_error_exits_2(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["no-such-command"])
        assert err.value.code == 2

    def test_runtime_error_exits_1_with_json(self, capsys, tmp_path):
        code, out, err = run_cli(capsys, "ingest", "--input",
                                 str(tmp_path / "missing.json"),
                                 "--output", str(tmp_path / "out.jsonl"))
        assert code == 1
        doc = json.loads(err.strip().splitlines()[-1])
        assert "error" in doc


class TestEvalJudgeReplay:
    def test_replay_matches_hand_computed_report(self, tmp_path, capsys, fixtures_dir):
        out = tmp_path / "judge.json"
        code, stdout, _ = run_cli(
            capsys, "eval-judge",
            "--input", str(fixtures_dir / "judge_eval_samples.jsonl"),
            "--captions", str(fixtures_dir / "judge_candidates.json"),
            "--replay", str(fixtures_dir / "judge_transcripts"),
            "--seed", "17", "--output", str(out))
        assert code == 0
        report = json.loads(out.read_text())
        assert report["CR"] == pytest.approx(1.0)
        assert report["HR"] == pytest.approx(0.25 ** 0.2, abs=1e-12)
        assert report["IC"] == pytest.approx(0.375 ** 0.2, abs=1e-12)
        assert report["OQ"] == pytest.approx(0.5 ** 0.2, abs=1e-12)
        assert report["num_failures"] == 0

    def test_no_judge_configured_fails_cleanly(self, capsys, fixtures_dir, monkeypatch):
        monkeypatch.delenv("CTRLCAP_JUDGE_ENDPOINT", raising=False)
        code, _, err = run_cli(
            capsys, "eval-judge",
            "--input", str(fixtures_dir / "judge_eval_samples.jsonl"))
        assert code == 1
        assert "no judge configured" in err


class TestTrainAndCaption:
    def test_mini_train_caption_cycle(self, tmp_path, capsys):
        run_cli(capsys, "synth", "--seed", "3", "--contexts", "4",
                "--output", str(tmp_path))
        ckpt = tmp_path / "model.ckpt.json"
        code, out, _ = run_cli(capsys, "train", "--input", str(tmp_path / "train.jsonl"),
                               "--checkpoint", str(ckpt), "--controller", "prompting",
                               "--steps", "120", "--lr", "8e-3", "--dim", "24",
                               "--batch-size", "8", "--seed", "0")
        assert code == 0
        doc = json.loads(out.strip().splitlines()[-1])
        assert doc["final_loss"] < doc["first_loss"]

        samples = read_jsonl(tmp_path / "train.jsonl")
        req = tmp_path / "request.json"
        sample = samples[0]
        req.write_text(json.dumps({
            "page_title": sample.context.page_title,
            "section_title": sample.context.section_title,
            "body": sample.context.body,
            "highlights": sample.highlights.offset_pairs(),
            "image_feature": list(sample.image.vector),
        }))
        code, out, _ = run_cli(capsys, "caption", "--checkpoint", str(ckpt),
                               "--input", str(req))
        assert code == 0
        doc = json.loads(out.strip().splitlines()[-1])
        assert doc["controller"] == "prompting"
        assert isinstance(doc["caption"], str)
