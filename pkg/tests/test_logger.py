import json
import logging
from logging.handlers import RotatingFileHandler

from src.logger import (
    attach_training_log,
    detach_training_log,
    get_logger,
    log_epoch,
    log_event,
    setup_logging,
)


def test_training_records_go_to_the_attached_file(tmp_path):
    path = tmp_path / "logs" / "training_log.jsonl"
    attach_training_log(path)
    try:
        log_event("train_start", {"sets": 2})
        log_epoch(
            epoch=1,
            rank_loss=0.5,
            filter_loss=0.25,
            total=0.75,
            precision_at_k=1.0,
            ndcg_at_3=0.9,
            mrr_1st=1.0,
            wall_seconds=0.12345,
        )
    finally:
        detach_training_log()
    log_event("after_detach")

    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert len(records) == 2
    assert records[0]["type"] == "event"
    assert records[0]["event"] == "train_start"
    assert records[0]["metadata"] == {"sets": 2}
    assert records[1]["epoch"] == 1
    assert records[1]["wall_seconds"] == 0.123


def test_attaching_again_appends(tmp_path):
    path = tmp_path / "training_log.jsonl"
    for name in ("first", "second"):
        attach_training_log(path)
        log_event(name)
        detach_training_log()
    events = [json.loads(line)["event"] for line in path.read_text(encoding="utf-8").splitlines()]
    assert events == ["first", "second"]


def test_log_directory_gets_a_file_handler(tmp_path):
    instance = setup_logging(log_dir=tmp_path / "run")
    assert setup_logging() is instance
    get_logger("src.test").info("hello")
    handlers = [h for h in logging.getLogger().handlers if getattr(h, "_edu_retriever", False)]
    assert any(isinstance(h, RotatingFileHandler) for h in handlers)
    assert instance.log_dir == tmp_path / "run"


def test_events_reach_the_run_directory_without_a_training_log(tmp_path):
    detach_training_log()
    setup_logging(log_dir=tmp_path / "events-run")
    log_event("artifact_written", {"report": "report.json"})

    path = tmp_path / "events-run" / "events.jsonl"
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert [r["event"] for r in records] == ["artifact_written"]
    assert records[0]["metadata"] == {"report": "report.json"}
