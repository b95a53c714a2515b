import json
import logging

from app.core.config import settings
from app.core.logging_config import StructuredLogger, setup_logging


def test_study_events_are_json_lines(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "LOG_DIR", str(tmp_path))
    setup_logging(level="INFO", to_file=True)
    try:
        StructuredLogger("app.services.test").log_study_event(
            "level_completed", "mixed n=2 done", level_n=2, err_l2=0.5,
        )
        for handler in logging.getLogger("app.study").handlers:
            handler.flush()
        records = [json.loads(line) for line in (tmp_path / "studies.log").read_text().splitlines()]
    finally:
        setup_logging(level="INFO", to_file=False)
    event = records[-1]
    assert event["event_type"] == "level_completed"
    assert event["component"] == "study"
    assert event["level_n"] == 2
    assert event["message"] == "mixed n=2 done"


def test_console_only_without_files(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "LOG_DIR", str(tmp_path / "never"))
    setup_logging(to_file=False)
    assert not (tmp_path / "never").exists()
