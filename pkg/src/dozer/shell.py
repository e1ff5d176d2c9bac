"""Parse one shell command into words, redirects, and a named parameter set.

The grammar is deliberately small: words with POSIX-style quoting, the four
redirect forms ``>``, ``>>``, ``<``, ``2>``, and leading environment
assignments.  Pipelines, lists, and substitutions are out of scope and raise
UnsupportedConstruct; migration works one concrete command at a time.
"""

from __future__ import annotations

import logging
import re
import shlex
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

_ENV_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)=(.*)\Z", re.S)
_VAR_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_UNSAFE_NAME_RE = re.compile(r"[^A-Za-z0-9_]")

_META = set("|;&()`")
_GLOB = set("*?[")


class ParseError(ValueError):
    """The command text is not a single well-formed command."""


class UnsupportedConstruct(ValueError):
    """The command uses shell features outside the supported grammar."""


@dataclass(frozen=True)
class Redirect:
    direction: str  # in | out | append | err
    target: str

    def __post_init__(self):
        if self.direction not in ("in", "out", "append", "err"):
            raise ValueError(f"unknown redirect direction: {self.direction!r}")


@dataclass(frozen=True)
class ShellExecution:
    executable: str
    argv: tuple[str, ...]
    redirects: tuple[Redirect, ...]
    env_prefix: tuple[tuple[str, str], ...]
    raw: str = field(compare=False, default="")


@dataclass(frozen=True)
class Param:
    name: str
    value: str
    groundable: bool


@dataclass(frozen=True)
class ParamSet:
    params: tuple[Param, ...]

    def get(self, name: str) -> Param | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)


@dataclass
class _Word:
    text: str
    quoted: bool
    globbed: bool


def _reject_meta(c: str, pos: int):
    if c in _META:
        raise UnsupportedConstruct(
            f"unsupported shell construct {c!r} at column {pos}; "
            "pipelines, lists, subshells, and substitutions are out of scope"
        )


def _scan_word(text: str, i: int) -> tuple[_Word, int]:
    parts: list[str] = []
    quoted = False
    globbed = False
    n = len(text)
    while i < n:
        c = text[i]
        if c in " \t\n":
            break
        if c in "<>":
            break
        _reject_meta(c, i)
        if c == "'":
            quoted = True
            end = text.find("'", i + 1)
            if end < 0:
                raise ParseError("unterminated single quote")
            parts.append(text[i + 1 : end])
            i = end + 1
        elif c == '"':
            quoted = True
            i += 1
            while True:
                if i >= n:
                    raise ParseError("unterminated double quote")
                c = text[i]
                if c == '"':
                    i += 1
                    break
                if c == "\\" and i + 1 < n and text[i + 1] in '\\"$`':
                    parts.append(text[i + 1])
                    i += 2
                elif c == "`":
                    raise UnsupportedConstruct("command substitution is out of scope")
                elif c == "$" and text.startswith("(", i + 1):
                    raise UnsupportedConstruct("command substitution is out of scope")
                elif c == "$":
                    m = _VAR_RE.match(text, i + 1)
                    if m:
                        log.warning("variable reference kept literal: $%s", m.group())
                    parts.append(c)
                    i += 1
                else:
                    parts.append(c)
                    i += 1
        elif c == "\\":
            if i + 1 >= n:
                raise ParseError("trailing backslash")
            parts.append(text[i + 1])
            i += 2
        elif c == "$":
            if text.startswith("(", i + 1):
                raise UnsupportedConstruct("command substitution is out of scope")
            m = _VAR_RE.match(text, i + 1)
            if m:
                log.warning("variable reference kept literal: $%s", m.group())
            parts.append(c)
            i += 1
        else:
            if c in _GLOB:
                globbed = True
            parts.append(c)
            i += 1
    return _Word("".join(parts), quoted, globbed), i


def _skip_ws(text: str, i: int) -> int:
    while i < len(text) and text[i] in " \t\n":
        i += 1
    return i


def parse_command(text: str) -> ShellExecution:
    """Parse a single shell command; quote removal is applied to words."""
    words: list[_Word] = []
    redirects: list[Redirect] = []
    i = 0
    n = len(text)
    while True:
        i = _skip_ws(text, i)
        if i >= n:
            break
        c = text[i]
        _reject_meta(c, i)
        direction = None
        if c in "0123456789" and text[i + 1 : i + 2] in ("<", ">"):
            fd = c
            i += 1
            c = text[i]
            direction = "in" if c == "<" else ("err" if fd == "2" else "out")
        if c == ">" or c == "<":
            if direction is None:
                direction = "in" if c == "<" else "out"
            i += 1
            if c == ">" and text.startswith(">", i):
                i += 1
                if direction == "out":
                    direction = "append"
            i = _skip_ws(text, i)
            if i >= n or text[i] in "<>":
                raise ParseError("redirect is missing its target")
            target, i = _scan_word(text, i)
            redirects.append(Redirect(direction, target.text))
            continue
        word, i = _scan_word(text, i)
        if word.text or word.quoted:
            if word.globbed:
                log.warning("glob left unexpanded: %s", word.text)
            words.append(word)

    env_prefix: list[tuple[str, str]] = []
    argv: list[str] = []
    executable = ""
    for word in words:
        if not executable:
            m = _ENV_RE.match(word.text)
            if m:
                env_prefix.append((m.group(1), m.group(2)))
                continue
            executable = word.text
            continue
        argv.append(word.text)
    if not executable:
        raise ParseError("command has no executable word")
    return ShellExecution(
        executable=executable,
        argv=tuple(argv),
        redirects=tuple(redirects),
        env_prefix=tuple(env_prefix),
        raw=text,
    )


def render_command(execution: ShellExecution) -> str:
    """Quote and join an execution back into command text."""
    parts = [f"{name}={shlex.quote(value)}" for name, value in execution.env_prefix]
    parts.append(shlex.quote(execution.executable))
    parts.extend(shlex.quote(a) for a in execution.argv)
    ops = {"in": "<", "out": ">", "append": ">>", "err": "2>"}
    for r in execution.redirects:
        parts.append(f"{ops[r.direction]} {shlex.quote(r.target)}")
    return " ".join(parts)


def extract_parameters(execution: ShellExecution, min_groundable_len: int = 3) -> ParamSet:
    """Name the command's parameters for mapping against record parameters.

    Positional words become arg1..argN; option words keep their own names;
    redirect targets and environment assignments are first-class parameters.
    groundable follows the length rule alone, so an option like "-rf" that
    does show up in execve argv stays usable for grounding.
    """
    params: list[Param] = []
    seen: set[str] = set()

    def add(name: str, value: str):
        name = _UNSAFE_NAME_RE.sub("_", name)
        if name in seen:
            return
        seen.add(name)
        params.append(Param(name, value, len(value) >= min_groundable_len))

    positional = 0
    for word in execution.argv:
        if word.startswith("--") and len(word) > 2:
            opt, eq, value = word[2:].partition("=")
            if eq:
                add(f"opt_{opt}", value)
            else:
                add(f"flag_{opt}", word)
        elif word.startswith("-") and len(word) > 1:
            add(f"flag_{word[1:]}", word)
        else:
            positional += 1
            add(f"arg{positional}", word)
    for r in execution.redirects:
        slot = {
            "in": "redirect_in_path",
            "out": "redirect_out_path",
            "append": "redirect_out_path",
            "err": "redirect_err_path",
        }[r.direction]
        add(slot, r.target)
    for name, value in execution.env_prefix:
        add(f"env_{name}", value)
    return ParamSet(tuple(params))
