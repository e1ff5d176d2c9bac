"""Parse strace text logs into structured syscall event sequences.

Targets the textual output of ``strace -f -v -s 65536 -o FILE -- CMD``
(decoded C-style escapes, no timestamps).  Lines that are not syscalls
(signal deliveries, exit markers, tracer chatter) are skipped and reported
as diagnostics, never as parse failures.  ``unfinished``/``resumed`` pairs
are reassembled per pid into single events.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

SYSCALL_NAME_RE = re.compile(r"[a-z_][a-z0-9_]*")

_PID_BRACKET_RE = re.compile(r"^\[pid\s+(\d+)\]\s+")
_PID_BARE_RE = re.compile(r"^(\d+)\s+")
_RESUMED_RE = re.compile(r"^<\.\.\.\s+(\S+)\s+resumed>\s?(.*)$")
_UNFINISHED_RE = re.compile(r"\s*<unfinished\s[^>]*>\s*$")
_ERRNO_RE = re.compile(r"^(E[A-Z0-9_]+)\b")
_RET_INT_RE = re.compile(r"^-?\d+")
_RET_HEX_RE = re.compile(r"^-?0[xX][0-9a-fA-F]+")


class TraceFormatError(ValueError):
    """Raised when no events at all can be parsed from nonempty input."""


# --- argument values -------------------------------------------------------


@dataclass(frozen=True)
class StringLit:
    """Quoted string with escapes decoded to raw bytes."""

    text: bytes
    truncated: bool = False


@dataclass(frozen=True)
class Number:
    value: int
    radix: str = "dec"  # dec | hex | oct


@dataclass(frozen=True)
class FlagSet:
    """Pipe-joined tokens such as ``O_WRONLY|O_APPEND``, order as written."""

    names: tuple[str, ...]


@dataclass(frozen=True)
class Struct:
    """Brace-delimited fields; positional members get an empty name."""

    fields: tuple[tuple[str, "ArgValue"], ...]
    truncated: bool = False


@dataclass(frozen=True)
class Array:
    items: tuple["ArgValue", ...]
    truncated: bool = False


@dataclass(frozen=True)
class Null:
    pass


@dataclass(frozen=True)
class Address:
    """Opaque pointer-looking token (``0x...``)."""

    text: str


@dataclass(frozen=True)
class Comment:
    """Raw text for constructs outside the grammar; never a parse failure."""

    text: str


ArgValue = StringLit | Number | FlagSet | Struct | Array | Null | Address | Comment


# --- return values ---------------------------------------------------------


@dataclass(frozen=True)
class Success:
    value: int


@dataclass(frozen=True)
class Failure:
    errno: str


@dataclass(frozen=True)
class NoReturn:
    pass


ReturnValue = Success | Failure | NoReturn


@dataclass(frozen=True)
class SyscallEvent:
    pid: int
    name: str
    args: tuple[ArgValue, ...]
    retval: ReturnValue
    seq: int


@dataclass(frozen=True)
class TraceMeta:
    capture_command: str | None = None
    timestamp: str | None = None
    source: str | None = None


@dataclass(frozen=True)
class Trace:
    events: tuple[SyscallEvent, ...]
    meta: TraceMeta = TraceMeta()


@dataclass(frozen=True)
class Diagnostic:
    line_no: int
    kind: str  # signal | exit | unparseable | dangling-unfinished | orphan-resumed
    text: str


# --- string escapes --------------------------------------------------------

_SIMPLE_ESCAPES = {
    ord("n"): 0x0A,
    ord("t"): 0x09,
    ord("r"): 0x0D,
    ord("v"): 0x0B,
    ord("f"): 0x0C,
    ord("a"): 0x07,
    ord("b"): 0x08,
}

_ESCAPE_CHARS = {0x0A: "\\n", 0x09: "\\t", 0x0D: "\\r", 0x0B: "\\v", 0x0C: "\\f"}


def decode_escapes(raw: str) -> bytes:
    """Decode the body of a quoted strace string into raw bytes."""
    data = raw.encode("latin-1")
    out = bytearray()
    i = 0
    n = len(data)
    while i < n:
        b = data[i]
        if b != 0x5C:  # backslash
            out.append(b)
            i += 1
            continue
        i += 1
        if i >= n:
            out.append(0x5C)
            break
        c = data[i]
        if c in _SIMPLE_ESCAPES:
            out.append(_SIMPLE_ESCAPES[c])
            i += 1
        elif c in (0x78, 0x58):  # x / X
            j = i + 1
            while j < n and j <= i + 2 and chr(data[j]) in "0123456789abcdefABCDEF":
                j += 1
            if j == i + 1:
                out.append(c)
                i += 1
            else:
                out.append(int(data[i + 1 : j].decode("latin-1"), 16))
                i = j
        elif 0x30 <= c <= 0x37:  # octal, up to 3 digits
            j = i
            while j < n and j < i + 3 and 0x30 <= data[j] <= 0x37:
                j += 1
            out.append(int(data[i:j].decode("latin-1"), 8) & 0xFF)
            i = j
        else:
            out.append(c)
            i += 1
    return bytes(out)


def render_string(data: bytes) -> str:
    """Render bytes in strace quoting; inverse of the string parser."""
    parts = ['"']
    for b in data:
        if b in _ESCAPE_CHARS:
            parts.append(_ESCAPE_CHARS[b])
        elif b == 0x22:
            parts.append('\\"')
        elif b == 0x5C:
            parts.append("\\\\")
        elif 0x20 <= b <= 0x7E:
            parts.append(chr(b))
        else:
            parts.append("\\%03o" % b)
    parts.append('"')
    return "".join(parts)


# --- argument scanner ------------------------------------------------------


class _Scanner:
    """Single-use cursor over one line's argument text."""

    def __init__(self, text: str, pos: int = 0):
        self.text = text
        self.pos = pos

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip_ws(self) -> None:
        while not self.eof() and self.text[self.pos] in " \t":
            self.pos += 1

    def match(self, regex: re.Pattern[str]) -> re.Match[str] | None:
        m = regex.match(self.text, self.pos)
        if m:
            self.pos = m.end()
        return m


_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|[-+]?0[xX][0-9a-fA-F]+|[-+]?\d+")
_FLAGSET_RE = re.compile(
    r"(?:[A-Za-z_][A-Za-z0-9_]*|0[xX][0-9a-fA-F]+|\d+)"
    r"(?:\|(?:[A-Za-z_][A-Za-z0-9_]*|0[xX][0-9a-fA-F]+|\d+))+"
)
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_FIELD_NAME_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_.]*)=")
_HEX_RE = re.compile(r"-?0[xX][0-9a-fA-F]+")
_INT_RE = re.compile(r"[-+]?\d+")
_COMMENT_RE = re.compile(r"/\*.*?\*/", re.S)


def _scan_string(sc: _Scanner) -> StringLit:
    # positioned at the opening quote
    assert sc.peek() == '"'
    i = sc.pos + 1
    text = sc.text
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\\":
            i += 2
            continue
        if c == '"':
            break
        i += 1
    if i >= n:  # unterminated; take the rest
        body = text[sc.pos + 1 :]
        sc.pos = n
        return StringLit(decode_escapes(body), truncated=True)
    body = text[sc.pos + 1 : i]
    sc.pos = i + 1
    truncated = text.startswith("...", sc.pos)
    if truncated:
        sc.pos += 3
    return StringLit(decode_escapes(body), truncated=truncated)


def _scan_balanced(sc: _Scanner, stop: str) -> str:
    """Consume raw text up to an unnested character in `stop`, honoring
    nesting of (), [], {} and quoted strings.  Returns the consumed text."""
    start = sc.pos
    depth = 0
    text = sc.text
    n = len(text)
    while sc.pos < n:
        c = text[sc.pos]
        if c == '"':
            _scan_string(sc)
            continue
        if c in "([{":
            depth += 1
        elif c in ")]}":
            if depth == 0 and c in stop:
                break
            depth = max(0, depth - 1)
        elif c in stop and depth == 0:
            break
        sc.pos += 1
    return text[start : sc.pos].strip()


def parse_arg_value(sc: _Scanner, stop: str = ",)") -> ArgValue:
    """Consume exactly one argument; unknown constructs degrade to Comment."""
    sc.skip_ws()
    c = sc.peek()
    if c == '"':
        value: ArgValue = _scan_string(sc)
    elif c == "[":
        value = _scan_array(sc)
    elif c == "{":
        value = _scan_struct(sc)
    elif c == "/" and sc.text.startswith("/*", sc.pos):
        m = sc.match(_COMMENT_RE)
        value = Comment(m.group() if m else _scan_balanced(sc, stop))
    else:
        value = _scan_plain(sc, stop)
    # absorb a trailing annotation comment:  0 /* SHUT_RD */
    save = sc.pos
    sc.skip_ws()
    if sc.text.startswith("/*", sc.pos):
        if not sc.match(_COMMENT_RE):
            sc.pos = save
    elif " " not in stop and sc.pos != save and not sc.eof() and sc.peek() not in stop:
        # other trailing text (e.g. "=> ...") folds the arg into a comment
        rest = _scan_balanced(sc, stop)
        value = Comment(f"{render_arg_source(value)} {rest}".strip())
    else:
        sc.pos = save
    return value


def _scan_plain(sc: _Scanner, stop: str) -> ArgValue:
    start = sc.pos
    m = _FLAGSET_RE.match(sc.text, sc.pos)
    if m:
        end = m.end()
        nxt = sc.text[end : end + 1]
        if nxt in stop or nxt in " \t" or nxt == "":
            sc.pos = end
            return FlagSet(tuple(m.group().split("|")))
    m = sc.match(_HEX_RE)
    if m:
        nxt = sc.peek()
        if nxt in stop or nxt in " \t" or nxt == "":
            return Address(m.group())
        sc.pos = start
    m = sc.match(_INT_RE)
    if m:
        nxt = sc.peek()
        if nxt in stop or nxt in " \t" or nxt == "":
            tok = m.group()
            body = tok.lstrip("+-")
            if body.startswith("0") and len(body) > 1 and all(d in "01234567" for d in body):
                return Number(int(tok, 8), "oct")
            return Number(int(tok, 10), "dec")
        sc.pos = start
    m = sc.match(_IDENT_RE)
    if m:
        nxt = sc.peek()
        if nxt in stop or nxt in " \t" or nxt == "":
            name = m.group()
            return Null() if name == "NULL" else FlagSet((name,))
        sc.pos = start
    raw = _scan_balanced(sc, stop)
    return Comment(raw)


def _scan_array(sc: _Scanner) -> Array:
    assert sc.peek() == "["
    sc.pos += 1
    items: list[ArgValue] = []
    truncated = False
    while True:
        sc.skip_ws()
        if sc.eof():
            truncated = True
            break
        if sc.peek() == "]":
            sc.pos += 1
            break
        if sc.text.startswith("...", sc.pos):
            truncated = True
            sc.pos += 3
            continue
        items.append(parse_arg_value(sc, stop=",] "))
        sc.skip_ws()
        if sc.peek() == ",":
            sc.pos += 1
    return Array(tuple(items), truncated)


def _scan_struct(sc: _Scanner) -> Struct:
    assert sc.peek() == "{"
    sc.pos += 1
    fields: list[tuple[str, ArgValue]] = []
    truncated = False
    while True:
        sc.skip_ws()
        if sc.eof():
            truncated = True
            break
        if sc.peek() == "}":
            sc.pos += 1
            break
        if sc.text.startswith("...", sc.pos):
            truncated = True
            sc.pos += 3
            sc.skip_ws()
            if sc.peek() == ",":
                sc.pos += 1
            continue
        m = sc.match(_FIELD_NAME_RE)
        if m:
            name = m.group(1)
            value = parse_arg_value(sc, stop=",}")
        else:
            name = ""
            value = Comment(_scan_balanced(sc, stop=",}"))
        fields.append((name, value))
        sc.skip_ws()
        if sc.peek() == ",":
            sc.pos += 1
    return Struct(tuple(fields), truncated)


def render_arg_source(value: ArgValue) -> str:
    """Re-render an ArgValue roughly as strace would print it."""
    if isinstance(value, StringLit):
        return render_string(value.text) + ("..." if value.truncated else "")
    if isinstance(value, Number):
        return "0%o" % value.value if value.radix == "oct" else str(value.value)
    if isinstance(value, FlagSet):
        return "|".join(value.names)
    if isinstance(value, Struct):
        inner = [f"{n}={render_arg_source(v)}" if n else render_arg_source(v) for n, v in value.fields]
        if value.truncated:
            inner.append("...")
        return "{" + ", ".join(inner) + "}"
    if isinstance(value, Array):
        inner = [render_arg_source(v) for v in value.items]
        if value.truncated:
            inner.append("...")
        return "[" + ", ".join(inner) + "]"
    if isinstance(value, Null):
        return "NULL"
    if isinstance(value, Address):
        return value.text
    return value.text  # Comment


# --- line and trace parsing ------------------------------------------------


def _parse_retval(text: str) -> ReturnValue | None:
    text = text.strip()
    if text.startswith("?"):
        return NoReturn()
    m = _RET_HEX_RE.match(text)
    if m:
        return Success(int(m.group(), 16))
    m = _RET_INT_RE.match(text)
    if not m:
        return None
    value = int(m.group())
    rest = text[m.end() :].strip()
    if value < 0:
        em = _ERRNO_RE.match(rest)
        if em:
            return Failure(em.group(1))
    return Success(value)


def _parse_complete(body: str, pid: int, seq: int) -> SyscallEvent | None:
    m = SYSCALL_NAME_RE.match(body)
    if not m or body[m.end() : m.end() + 1] != "(":
        return None
    name = m.group()
    sc = _Scanner(body, m.end() + 1)
    args: list[ArgValue] = []
    while True:
        sc.skip_ws()
        if sc.eof():
            return None  # missing ')': not a complete call
        if sc.peek() == ")":
            sc.pos += 1
            break
        args.append(parse_arg_value(sc))
        sc.skip_ws()
        if sc.peek() == ",":
            sc.pos += 1
    rest = sc.text[sc.pos :].lstrip()
    if not rest.startswith("="):
        return None
    retval = _parse_retval(rest[1:])
    if retval is None:
        return None
    return SyscallEvent(pid, name, tuple(args), retval, seq)


def _split_pid(line: str) -> tuple[int, str]:
    m = _PID_BRACKET_RE.match(line)
    if m:
        return int(m.group(1)), line[m.end() :]
    m = _PID_BARE_RE.match(line)
    if m:
        return int(m.group(1)), line[m.end() :]
    return 0, line


def parse_trace(
    data: bytes | str, source: str | None = None
) -> tuple[Trace, list[Diagnostic]]:
    """Parse a whole strace log.

    Returns the trace plus diagnostics for every skipped line.  Raises
    TraceFormatError only when nonempty input yields zero events.
    """
    if isinstance(data, bytes):
        text = data.decode("latin-1")
    else:
        text = data
    events: list[SyscallEvent] = []
    diagnostics: list[Diagnostic] = []
    pending: dict[int, tuple[int, str]] = {}  # pid -> (line_no, call prefix)
    nonblank = 0

    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        nonblank += 1
        pid, body = _split_pid(line)

        if body.startswith("--- ") and body.endswith(" ---"):
            diagnostics.append(Diagnostic(line_no, "signal", line))
            continue
        if body.startswith("+++") and body.endswith("+++"):
            diagnostics.append(Diagnostic(line_no, "exit", line))
            continue

        m = _RESUMED_RE.match(body)
        if m:
            if pid not in pending:
                diagnostics.append(Diagnostic(line_no, "orphan-resumed", line))
                continue
            start_no, prefix = pending.pop(pid)
            event = _parse_complete(prefix + m.group(2), pid, len(events))
            if event is None:
                # the start line stays accounted for even when the join fails
                diagnostics.append(Diagnostic(start_no, "dangling-unfinished", prefix))
                diagnostics.append(Diagnostic(line_no, "unparseable", line))
            else:
                events.append(event)
            continue

        um = _UNFINISHED_RE.search(body)
        if um:
            head = body[: um.start()]
            hm = SYSCALL_NAME_RE.match(head)
            if not hm or head[hm.end() : hm.end() + 1] != "(":
                # not a recognizable call start; never let it enter pending,
                # or conservation counting would drift
                diagnostics.append(Diagnostic(line_no, "unparseable", line))
                continue
            if pid in pending:
                old_no, old_prefix = pending.pop(pid)
                diagnostics.append(Diagnostic(old_no, "dangling-unfinished", old_prefix))
            pending[pid] = (line_no, head)
            continue

        event = _parse_complete(body, pid, len(events))
        if event is None:
            diagnostics.append(Diagnostic(line_no, "unparseable", line))
        else:
            events.append(event)

    for pid, (line_no, prefix) in sorted(pending.items()):
        diagnostics.append(Diagnostic(line_no, "dangling-unfinished", prefix))

    structured = any(d.kind != "unparseable" for d in diagnostics)
    if nonblank and not events and not structured:
        raise TraceFormatError(
            "no syscall events parsed from nonempty input; is this strace text?"
        )
    return Trace(tuple(events), TraceMeta(source=source)), diagnostics


def parse_trace_file(path, source: str | None = None) -> tuple[Trace, list[Diagnostic]]:
    with open(path, "rb") as fh:
        return parse_trace(fh.read(), source=source or str(path))


def parse_argument(text: str) -> ArgValue:
    """Parse a single argument from standalone text (convenience wrapper)."""
    return parse_arg_value(_Scanner(text), stop=",)")
