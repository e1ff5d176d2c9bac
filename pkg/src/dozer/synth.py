"""Turn a comparison result into a concrete candidate task definition.

Mapped target parameters take their values from the shell command; everything
else keeps the record's values verbatim, even when a retained value (say, a
regexp) looks out of place next to the new ones.  Judging candidates is the
validator's job, not the synthesizer's.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .comparator import CommandSource, ComparisonResult
from .kb import ExecutionRecord

RETAINED = "retained-from-record"


@dataclass(frozen=True)
class CandidateTask:
    module: str
    params: tuple[tuple[str, str], ...]
    provenance: tuple[tuple[str, str], ...]  # param name -> tag, same order
    source_record: str
    comparison_score: float


def generate(src: CommandSource, result: ComparisonResult, rec: ExecutionRecord) -> CandidateTask:
    if result.record_id != rec.id:
        raise ValueError(
            f"comparison result is for {result.record_id}, not record {rec.id}"
        )
    by_target = {t: s for s, t in result.mapping.pairs}
    params: list[tuple[str, str]] = []
    provenance: list[tuple[str, str]] = []
    for name, recorded in rec.params:
        source_name = by_target.get(name)
        if source_name is not None:
            source_param = src.params.get(source_name)
            if source_param is None:
                raise ValueError(f"mapping references unknown source param {source_name}")
            params.append((name, source_param.value))
            provenance.append((name, f"mapped-from:{source_name}"))
        else:
            params.append((name, recorded))
            provenance.append((name, RETAINED))
    return CandidateTask(
        module=rec.module,
        params=tuple(params),
        provenance=tuple(provenance),
        source_record=rec.id,
        comparison_score=result.score,
    )


def _unsafe_in_single_quotes(o: int) -> bool:
    # controls, DEL, C1 block, and every codepoint YAML treats as a line
    # break or refuses to print; those fold or break single-quoted scalars
    if o < 0x20 or o == 0x7F or 0x80 <= o <= 0x9F:
        return True
    return o in (0x2028, 0x2029, 0xFFFE, 0xFFFF) or 0xD800 <= o <= 0xDFFF


_SHORT_ESCAPES = {0x09: "\\t", 0x0A: "\\n", 0x0D: "\\r", 0x22: '\\"', 0x5C: "\\\\"}


def _double_quote(value: str) -> str:
    out = ['"']
    for c in value:
        o = ord(c)
        if o in _SHORT_ESCAPES:
            out.append(_SHORT_ESCAPES[o])
        elif not _unsafe_in_single_quotes(o):
            out.append(c)
        elif o <= 0xFF:
            out.append(f"\\x{o:02x}")
        elif o <= 0xFFFF:
            out.append(f"\\u{o:04x}")
        else:
            out.append(f"\\U{o:08x}")
    out.append('"')
    return "".join(out)


def _quote(value: str) -> str:
    if any(_unsafe_in_single_quotes(ord(c)) for c in value):
        return _double_quote(value)
    return "'" + value.replace("'", "''") + "'"


# Bare keys must not collide with YAML's boolean/null words or need escaping.
_PLAIN_KEY_RE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.-]*\Z")
_RESERVED_KEYS = frozenset(("yes", "no", "true", "false", "on", "off", "null"))


def _key(name: str) -> str:
    if _PLAIN_KEY_RE.match(name) and name.lower() not in _RESERVED_KEYS:
        return name
    return _quote(name)


def emit_yaml(task: CandidateTask) -> str:
    """Render the task as a module block with single-quoted parameters."""
    if not task.params:
        return f"{_key(task.module)}: {{}}\n"
    lines = [f"{_key(task.module)}:"]
    for name, value in task.params:
        lines.append(f"  {_key(name)}: {_quote(value)}")
    return "\n".join(lines) + "\n"
