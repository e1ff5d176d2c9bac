"""Turn raw traces into comparison-ready canonical traces.

Canonicalization strips the parts of a trace that vary between otherwise
identical runs: noise syscalls from the denylist, `*at` variants folded onto
their classic counterparts, file descriptors and addresses masked, and return
values collapsed to outcomes.  An optional baseline trace (a no-op run of the
same interpreter) can be subtracted to remove shared startup calls.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

from .strace import (
    Address,
    ArgValue,
    Array,
    Comment,
    Failure,
    FlagSet,
    NoReturn,
    Null,
    Number,
    StringLit,
    Struct,
    Success,
    SyscallEvent,
    Trace,
    render_string,
)

_IDENT = re.compile(r"[a-z_][a-z0-9_]*\Z")

#: runtime-startup and memory-management calls with no configuration meaning
DEFAULT_DENYLIST = frozenset(
    {
        "mmap",
        "munmap",
        "mprotect",
        "brk",
        "futex",
        "rt_sigaction",
        "rt_sigprocmask",
        "rt_sigreturn",
        "clock_gettime",
        "gettid",
        "getpid",
        "arch_prctl",
        "set_tid_address",
        "set_robust_list",
        "prlimit64",
        "getrandom",
        "sched_getaffinity",
        "exit_group",
    }
)

# at-variant -> (classic name, positions of dirfd args that must be AT_FDCWD)
_AT_FOLDS: dict[str, tuple[str, tuple[int, ...]]] = {
    "openat": ("open", (0,)),
    "unlinkat": ("unlink", (0,)),
    "mkdirat": ("mkdir", (0,)),
    "newfstatat": ("stat", (0,)),
    "fstatat": ("stat", (0,)),
    "faccessat": ("access", (0,)),
    "faccessat2": ("access", (0,)),
    "fchmodat": ("chmod", (0,)),
    "fchownat": ("chown", (0,)),
    "readlinkat": ("readlink", (0,)),
    "linkat": ("link", (0, 2)),
    "renameat": ("rename", (0, 2)),
    "renameat2": ("rename", (0, 2)),
    "symlinkat": ("symlink", (1,)),
}

# syscall -> positions of file-descriptor arguments (after folding)
_FD_POSITIONS: dict[str, tuple[int, ...]] = {
    "read": (0,),
    "write": (0,),
    "pread64": (0,),
    "pwrite64": (0,),
    "readv": (0,),
    "writev": (0,),
    "close": (0,),
    "fstat": (0,),
    "fstatfs": (0,),
    "lseek": (0,),
    "fchmod": (0,),
    "fchown": (0,),
    "ftruncate": (0,),
    "fsync": (0,),
    "fdatasync": (0,),
    "fallocate": (0,),
    "dup": (0,),
    "dup2": (0, 1),
    "dup3": (0, 1),
    "fcntl": (0,),
    "ioctl": (0,),
    "getdents64": (0,),
    "fchdir": (0,),
    "flock": (0,),
    "sendfile": (0, 1),
    "copy_file_range": (0, 2),
    "connect": (0,),
    "bind": (0,),
    "listen": (0,),
    "accept": (0,),
    "accept4": (0,),
    "sendto": (0,),
    "recvfrom": (0,),
    "sendmsg": (0,),
    "recvmsg": (0,),
    "shutdown": (0,),
    "getsockopt": (0,),
    "setsockopt": (0,),
    "getsockname": (0,),
    "epoll_ctl": (0, 2),
    # unfolded at-variants keep their dirfd visible; mask it like any fd
    "openat": (0,),
    "unlinkat": (0,),
    "mkdirat": (0,),
    "newfstatat": (0,),
    "fstatat": (0,),
    "faccessat": (0,),
    "faccessat2": (0,),
    "fchmodat": (0,),
    "fchownat": (0,),
    "readlinkat": (0,),
    "linkat": (0, 2),
    "renameat": (0, 2),
    "renameat2": (0, 2),
    "symlinkat": (1,),
}

FD_PLACEHOLDER = "<FD>"
ADDR_PLACEHOLDER = "<ADDR>"


@dataclass(frozen=True)
class CanonicalSyscall:
    name: str
    rendered_args: tuple[str, ...]
    outcome: str  # "OK" | "OK:<n>" | "ERR:<errno>" | "NORET"


@dataclass(frozen=True)
class CanonicalTrace:
    calls: tuple[CanonicalSyscall, ...]
    origin: str = ""


@dataclass(frozen=True)
class CanonicalConfig:
    denylist: frozenset[str] = DEFAULT_DENYLIST
    fold_at_variants: bool = True
    mask_fds: bool = True
    mask_addresses: bool = True
    collapse_retval: bool = True
    min_groundable_len: int = 3
    baseline: CanonicalTrace | None = None

    def __post_init__(self):
        if self.min_groundable_len < 1:
            raise ValueError("min_groundable_len must be >= 1")
        for name in self.denylist:
            if not _IDENT.match(name):
                raise ValueError(f"denylist entry is not a syscall identifier: {name!r}")


def _is_at_fdcwd(value: ArgValue) -> bool:
    return isinstance(value, FlagSet) and value.names == ("AT_FDCWD",)


def _render_value(value: ArgValue, mask_addresses: bool) -> str:
    if isinstance(value, StringLit):
        body = render_string(value.text)[1:-1]
        return body + ("..." if value.truncated else "")
    if isinstance(value, Number):
        return "0%o" % value.value if value.radix == "oct" else str(value.value)
    if isinstance(value, FlagSet):
        return "|".join(value.names)
    if isinstance(value, Null):
        return "NULL"
    if isinstance(value, Address):
        return ADDR_PLACEHOLDER if mask_addresses else value.text
    if isinstance(value, Struct):
        inner = ", ".join(
            (f"{n}=" if n else "") + _render_value(v, mask_addresses)
            for n, v in value.fields
        )
        return "{%s%s}" % (inner, ", ..." if value.truncated else "")
    if isinstance(value, Array):
        inner = ", ".join(_render_value(v, mask_addresses) for v in value.items)
        return "[%s%s]" % (inner, ", ..." if value.truncated else "")
    return value.text  # Comment keeps its raw spelling


def _render_outcome(event: SyscallEvent, collapse: bool) -> str:
    rv = event.retval
    if isinstance(rv, Failure):
        return f"ERR:{rv.errno}"
    if isinstance(rv, NoReturn):
        return "NORET"
    assert isinstance(rv, Success)
    return "OK" if collapse else f"OK:{rv.value}"


def canonicalize_event(event: SyscallEvent, config: CanonicalConfig) -> CanonicalSyscall | None:
    """Canonicalize one event; None when the denylist drops it."""
    name = event.name
    args = list(event.args)

    if config.fold_at_variants and name in _AT_FOLDS:
        classic, positions = _AT_FOLDS[name]
        if all(p < len(args) and _is_at_fdcwd(args[p]) for p in positions):
            name = classic
            args = [a for i, a in enumerate(args) if i not in positions]

    if name in config.denylist or event.name in config.denylist:
        return None

    fd_positions = _FD_POSITIONS.get(name, ()) if config.mask_fds else ()
    rendered = []
    for i, arg in enumerate(args):
        if i in fd_positions and isinstance(arg, Number):
            rendered.append(FD_PLACEHOLDER)
        else:
            rendered.append(_render_value(arg, config.mask_addresses))
    return CanonicalSyscall(name, tuple(rendered), _render_outcome(event, config.collapse_retval))


def canonicalize(trace: Trace, config: CanonicalConfig | None = None) -> CanonicalTrace:
    config = config or CanonicalConfig()
    calls = []
    for event in trace.events:
        call = canonicalize_event(event, config)
        if call is not None:
            calls.append(call)
    if config.baseline is not None:
        budget = Counter(render_key(c) for c in config.baseline.calls)
        remaining = []
        for call in calls:  # earliest occurrences are the startup ones
            key = render_key(call)
            if budget[key] > 0:
                budget[key] -= 1
            else:
                remaining.append(call)
        calls = remaining
    return CanonicalTrace(tuple(calls), origin=trace.meta.source or "")


_KEY_ESCAPES = {"\\": "\\\\", ",": "\\,", ")": "\\)"}


def _escape_key_arg(text: str) -> str:
    if text == "":
        # a lone escaped backslash-zero cannot come from any real argument,
        # so an empty arg stays distinguishable from an empty arg list
        return "\\0"
    return "".join(_KEY_ESCAPES.get(c, c) for c in text)


def render_key(call: CanonicalSyscall) -> str:
    """Exact-match key; escaping keeps distinct field triples distinct."""
    args = ",".join(_escape_key_arg(a) for a in call.rendered_args)
    return f"{call.name}({args})={call.outcome}"


def key_multiset(trace: CanonicalTrace) -> Counter[str]:
    return Counter(render_key(c) for c in trace.calls)


def name_multiset(trace: CanonicalTrace) -> Counter[str]:
    return Counter(c.name for c in trace.calls)
