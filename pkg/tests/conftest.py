import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from helprank.corpus import Corpus, RawReview

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def fixture_paths():
    return DATA / "reviews.jsonl", DATA / "items.jsonl"


def review(rid, user, item, stars=4, text="clean room friendly staff", useful=0, funny=0, cool=0,
           date=None):
    return RawReview(rid, user, item, stars, text, useful, funny, cool, date)


def corpus_of(*reviews):
    return Corpus(tuple(reviews))


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec if isinstance(rec, str) else json.dumps(rec))
            fh.write("\n")
    return path


# acceptance criteria report one line each; the summary hook prints them after the run
ACCEPTANCE: list[str] = []


def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
