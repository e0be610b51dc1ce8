import json

import pytest
import torch

from src.config import load_config
from src.constants import ALL_VARIANTS
from src.corpus import FallbackSegmenter
from src.encoder import DTYPE
from src.errors import InputError
from src.main import run
from src.pipeline import cmd_prepare, few_shot_subsample, map_ordered
from src.retriever import build_model, load_checkpoint
from src.synthetic import write_corpus_jsonl

BUDGET = 60


@pytest.fixture
def corpus(tmp_path, small_planted):
    train = write_corpus_jsonl(small_planted[:7], tmp_path / "corpus" / "train.jsonl")
    test = write_corpus_jsonl(small_planted[7:], tmp_path / "corpus" / "test.jsonl")
    return {"train": str(train), "test": str(test)}


@pytest.fixture
def write_config(tmp_path, corpus):
    def write(name="config.json", **updates):
        config = {
            "corpus": corpus,
            "backends": {"encoder_dim": 128},
            "training": {
                "k": 3,
                "k_q": 3,
                "k_f": 6,
                "learning_rate": 0.01,
                "batch_size": 4,
                "epochs": 1,
                "pair_samples_per_set": 16,
            },
            "budget": BUDGET,
            "variants": list(ALL_VARIANTS),
            "out_dir": str(tmp_path / "run"),
            "workers": 2,
        }
        for key, value in updates.items():
            if isinstance(value, dict):
                config[key] = {**config[key], **value}
            else:
                config[key] = value
        path = tmp_path / name
        path.write_text(json.dumps(config), encoding="utf-8")
        return str(path)

    return write


def _records(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def _run_all(config, out):
    for command in ("prepare", "train", "retrieve", "evaluate"):
        assert run([command, "--config", config, "--out", str(out)]) == 0


def test_commands_end_to_end(tmp_path, write_config):
    config = write_config()
    out = tmp_path / "run"
    _run_all(config, out)

    assert (out / "effective_config.json").is_file()
    assert len(_records(out / "labels_train.jsonl")) == 7
    assert len(_records(out / "segmented_test.jsonl")) == 3
    assert (out / "checkpoint.pt").is_file()
    assert (out / "checkpoint.last.pt").is_file()
    epochs = [r for r in _records(out / "training_log.jsonl") if "epoch" in r]
    assert [r["epoch"] for r in epochs] == [1]
    events = _records(out / "events.jsonl")
    assert events[0]["event"] == "prepare_start"
    assert any("variant" in e.get("metadata", {}) for e in events)
    assert any("report" in e.get("metadata", {}) for e in events)

    for variant in ALL_VARIANTS:
        plans = _records(out / f"plans_{variant}.jsonl")
        assert [p["set_id"] for p in plans] == ["planted-0007", "planted-0008", "planted-0009"]
        assert all(p["used_tokens"] <= BUDGET for p in plans)
        assert all(p["variant"] == variant for p in plans)
        assembled = _records(out / f"assembled_{variant}.jsonl")
        assert [a["set_id"] for a in assembled] == [p["set_id"] for p in plans]

    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["num_sets"] == 3
    assert set(report["methods"]) == {"model", "bm25+rake", "bm25+gold"}
    for method in report["methods"].values():
        assert set(method["precision_at"]) == {"10", "20", "50", "100"}
        assert 0.0 <= method["ndcg_at"]["3"] <= 1.0
    assert set(report["ablations"]) == set(ALL_VARIANTS)
    assert report["ablations"]["full"]["used_tokens"] <= BUDGET


def test_runs_are_byte_identical(tmp_path, write_config):
    config = write_config()
    _run_all(config, tmp_path / "a")
    _run_all(config, tmp_path / "b")

    names = ["labels_train.jsonl", "segmented_test.jsonl", "report.json"]
    names += [f"plans_{v}.jsonl" for v in ALL_VARIANTS]
    names += [f"assembled_{v}.jsonl" for v in ALL_VARIANTS]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    # checkpoints are compared by content; the archive bytes belong to the torch zip writer
    for name in ("checkpoint.pt", "checkpoint.last.pt"):
        first, first_payload = load_checkpoint(tmp_path / "a" / name)
        second, second_payload = load_checkpoint(tmp_path / "b" / name)
        assert first_payload["fingerprint"] == second_payload["fingerprint"]
        assert first_payload["epoch"] == second_payload["epoch"]
        assert first_payload["best_score"] == second_payload["best_score"]
        for key, value in first.state_dict().items():
            assert torch.equal(value, second.state_dict()[key]), f"{name}: {key}"


def test_zero_epochs_save_the_initial_model(tmp_path, write_config):
    config = write_config(training={"epochs": 0})
    out = tmp_path / "run"
    assert run(["prepare", "--config", config]) == 0
    assert run(["train", "--config", config]) == 0

    model, payload = load_checkpoint(out / "checkpoint.pt")
    initial = build_model(128, seed=0)
    assert payload["epoch"] == 0
    for name, value in initial.state_dict().items():
        assert torch.equal(value, model.state_dict()[name])


def test_resume_continues_the_training_log(tmp_path, write_config):
    out = tmp_path / "run"
    assert run(["prepare", "--config", write_config()]) == 0
    assert run(["train", "--config", write_config()]) == 0
    longer = write_config("longer.json", training={"epochs": 2})
    assert run(["train", "--config", longer, "--resume"]) == 0

    epochs = [r["epoch"] for r in _records(out / "training_log.jsonl") if "epoch" in r]
    assert epochs == [1, 2]
    _, payload = load_checkpoint(out / "checkpoint.last.pt")
    assert payload["epoch"] == 2


def test_large_budget_drops_nothing(tmp_path, write_config):
    config = write_config(budget=4096, variants=["full"])
    _run_all(config, tmp_path / "run")
    plans = _records(tmp_path / "run" / "plans_full.jsonl")
    assert all(p["dropped_edus"] == [] for p in plans)


def test_exit_codes(tmp_path, write_config, monkeypatch):
    assert run(["train", "--config", write_config()]) == 2

    missing = write_config("missing.json", corpus={"train": str(tmp_path / "nope.jsonl")})
    assert run(["prepare", "--config", missing]) == 2

    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert run(["prepare", "--config", str(broken)]) == 2

    config = write_config()
    assert run(["prepare", "--config", config]) == 0
    assert run(["train", "--config", config]) == 0
    narrow = write_config("narrow.json", backends={"encoder_dim": 64})
    assert run(["retrieve", "--config", narrow]) == 4

    monkeypatch.setattr(
        "src.trainer.total_loss", lambda rank_l, filter_l, lam: torch.tensor(float("inf"), dtype=DTYPE)
    )
    assert run(["train", "--config", config]) == 3


def test_few_shot_prepare(tmp_path, write_config):
    config = load_config(write_config(), {"few_shot": 0.3})
    assert cmd_prepare(config) == {"train": 2, "test": 3}


def test_few_shot_subsample_is_seeded():
    items = list(range(100))
    picked = few_shot_subsample(items, 0.01, seed=5)
    assert len(picked) == 1
    assert few_shot_subsample(items, 0.1, seed=5) == few_shot_subsample(items, 0.1, seed=5)
    assert few_shot_subsample(items, 0.1, seed=5) == sorted(few_shot_subsample(items, 0.1, seed=5))
    assert len(few_shot_subsample([1, 2], 0.1, seed=0)) == 1


def test_map_ordered_keeps_input_order():
    assert map_ordered(lambda x: x * x, list(range(20)), workers=4) == [x * x for x in range(20)]
    assert map_ordered(str, [3], workers=4) == ["3"]


class _ClosingSegmenter(FallbackSegmenter):
    closed = 0

    def close(self):
        type(self).closed += 1


def test_prepare_closes_the_segmenter(tmp_path, write_config, monkeypatch):
    monkeypatch.setattr(_ClosingSegmenter, "closed", 0)
    monkeypatch.setattr("src.pipeline.create_segmenter", lambda *args: _ClosingSegmenter())

    assert cmd_prepare(load_config(write_config())) == {"train": 7, "test": 3}
    assert _ClosingSegmenter.closed == 1

    missing = write_config("missing.json", corpus={"train": str(tmp_path / "nope.jsonl")})
    with pytest.raises(InputError):
        cmd_prepare(load_config(missing))
    assert _ClosingSegmenter.closed == 2
