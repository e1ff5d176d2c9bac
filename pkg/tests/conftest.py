import sys
from pathlib import Path

import pytest

from dozer.canonical import CanonicalConfig, canonicalize
from dozer.comparator import CommandSource
from dozer.kb import KnowledgeBase
from dozer.shell import extract_parameters, parse_command
from dozer.strace import parse_trace_file

DATA = Path(__file__).parent / "data"

LINEINFILE_PARAMS = {
    "dest": "/root/.profile",
    "regexp": "^.*mesg n.*$",
    "line": "tty -s && mesg n || true",
    "state": "present",
}
FILE_PARAMS = {"path": "/tmp/x", "state": "absent"}
MKDIR_RECORD_PARAMS = {"path": "/usr/src/app", "state": "directory"}

ECHO_COMMAND = "echo 'daemon off;' >> /etc/nginx/nginx.conf"


@pytest.fixture
def data_dir() -> Path:
    return DATA


def canonical_from_file(name: str, config: CanonicalConfig):
    trace, _ = parse_trace_file(DATA / name)
    return canonicalize(trace, config)


def source_from_command(text: str, trace_file: str, config: CanonicalConfig) -> CommandSource:
    execution = parse_command(text)
    params = extract_parameters(execution, config.min_groundable_len)
    return CommandSource(execution, params, canonical_from_file(trace_file, config))


def build_demo_kb(config: CanonicalConfig | None = None) -> KnowledgeBase:
    kb = KnowledgeBase(config or CanonicalConfig())
    raw_lineinfile, _ = parse_trace_file(DATA / "lineinfile_profile.strace", source="lineinfile-run")
    raw_file, _ = parse_trace_file(DATA / "file_absent.strace", source="file-run")
    raw_mkdir, _ = parse_trace_file(DATA / "mkdir_record.strace", source="file-directory-run")
    kb.ingest("lineinfile", LINEINFILE_PARAMS, raw_lineinfile, kb.config)
    kb.ingest("file", FILE_PARAMS, raw_file, kb.config)
    kb.ingest("file", MKDIR_RECORD_PARAMS, raw_mkdir, kb.config)
    return kb


@pytest.fixture
def demo_kb() -> KnowledgeBase:
    return build_demo_kb()


@pytest.fixture
def echo_source(demo_kb) -> CommandSource:
    return source_from_command(ECHO_COMMAND, "echo_append.strace", demo_kb.config)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not getattr(acceptance, "VERDICTS", None):
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria", sep="-")
    for number in range(1, 10):
        fallback = f"[acceptance] criterion {number} NOT RUN"
        terminalreporter.write_line(acceptance.VERDICTS.get(number, fallback))
