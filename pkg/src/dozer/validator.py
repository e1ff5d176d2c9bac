"""Run candidates in fresh sandboxes and pick the closest filesystem delta.

Two backends share one interface: `ContainerBackend` drives an external
container runtime and diffs filesystem walks taken inside the container;
`FixtureBackend` replays deltas from files so the whole pipeline can run
on machines with no container runtime at all.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import shutil
import stat as stat_mod
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .shell import ShellExecution, render_command
from .synth import CandidateTask

VOLATILE_PATHS = ("/proc", "/sys", "/dev", "/run", "/tmp", "/var/log", "/root/.ansible")

KINDS = ("created", "deleted", "modified")

TaskSpec = "str | CandidateTask"


class BaseMismatch(ValueError):
    """Deltas from different base images are not comparable."""


class SandboxUnavailable(RuntimeError):
    """The requested backend cannot run here."""


class DeltaFormatError(ValueError):
    """A fixture delta file could not be decoded."""


@dataclass(frozen=True)
class ChangeRecord:
    path: str
    kind: str
    post_hash: str | None = None
    post_mode: str | None = None
    post_owner: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown change kind {self.kind!r}")
        if self.kind == "deleted" and (
            self.post_hash is not None
            or self.post_mode is not None
            or self.post_owner is not None
        ):
            raise ValueError("deleted records carry no post-state")


@dataclass(frozen=True)
class StateDelta:
    changes: tuple[ChangeRecord, ...]
    base_image: str
    exit_status: int = 0

    def __post_init__(self):
        ordered = tuple(sorted(self.changes, key=lambda c: c.path))
        paths = [c.path for c in ordered]
        if len(set(paths)) != len(paths):
            raise ValueError("more than one change record for a path")
        object.__setattr__(self, "changes", ordered)

    def by_path(self) -> dict[str, ChangeRecord]:
        return {c.path: c for c in self.changes}


def delta_similarity(a: StateDelta, b: StateDelta) -> float:
    """Path-keyed credit: 1 identical, 0.5 same kind, 0.25 same path only."""
    if a.base_image != b.base_image:
        raise BaseMismatch(f"{a.base_image!r} vs {b.base_image!r}")
    in_a = a.by_path()
    in_b = b.by_path()
    union = set(in_a) | set(in_b)
    if not union:
        return 1.0
    credit = 0.0
    for path in union:
        ra = in_a.get(path)
        rb = in_b.get(path)
        if ra is None or rb is None:
            continue
        if ra == rb:
            credit += 1.0
        elif ra.kind == rb.kind:
            credit += 0.5
        else:
            credit += 0.25
    return credit / len(union)


class SandboxBackend(Protocol):
    def run(self, spec: "str | CandidateTask", base: str) -> StateDelta: ...


def validate(
    src: ShellExecution,
    candidates: Sequence[CandidateTask],
    backend: SandboxBackend,
    base: str,
) -> list[tuple[CandidateTask, float]]:
    """Run everything on the same base; failed candidates sink to the bottom."""
    if not candidates:
        raise ValueError("no candidates to validate")
    src_delta = backend.run(src.raw or render_command(src), base)
    scored: list[tuple[bool, float, CandidateTask]] = []
    for cand in candidates:
        try:
            delta = backend.run(cand, base)
        except SandboxUnavailable:
            raise
        except Exception:
            scored.append((True, 0.0, cand))
            continue
        if delta.exit_status != 0:
            scored.append((True, 0.0, cand))
        else:
            scored.append((False, delta_similarity(src_delta, delta), cand))
    scored.sort(key=lambda e: (e[0], -e[1], -e[2].comparison_score, e[2].module))
    return [(cand, sim) for _, sim, cand in scored]


# --- snapshots and diffs ---------------------------------------------------


@dataclass(frozen=True)
class FsEntry:
    type: str  # f | d | l
    mode: str  # octal permission bits, no prefix
    owner: str  # uid:gid
    digest: str | None  # sha256 hex, None for directories


Snapshot = "dict[str, FsEntry]"


def is_volatile(path: str) -> bool:
    return any(path == v or path.startswith(v + "/") for v in VOLATILE_PATHS)


def parse_walk(text: str) -> dict[str, FsEntry]:
    """Decode walker output lines: path, type, mode, uid:gid, sha256 or -."""
    entries: dict[str, FsEntry] = {}
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise DeltaFormatError(f"walk line {i}: expected 5 fields, got {len(fields)}")
        path, ftype, mode, owner, digest = fields
        if is_volatile(path):
            continue
        entries[path] = FsEntry(ftype, mode, owner, None if digest == "-" else digest)
    return entries


def snapshot_tree(root: Path) -> dict[str, FsEntry]:
    """Walk a local directory as if it were a sandbox root."""
    entries: dict[str, FsEntry] = {}
    root = root.resolve()
    for p in sorted(root.rglob("*")):
        rel = "/" + p.relative_to(root).as_posix()
        if is_volatile(rel):
            continue
        st = p.lstat()
        mode = format(stat_mod.S_IMODE(st.st_mode), "o")
        owner = f"{st.st_uid}:{st.st_gid}"
        if stat_mod.S_ISLNK(st.st_mode):
            digest = hashlib.sha256(str(p.readlink()).encode()).hexdigest()
            ftype = "l"
        elif p.is_dir():
            digest = None
            ftype = "d"
        elif p.is_file():
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            ftype = "f"
        else:
            continue
        entries[rel] = FsEntry(ftype, mode, owner, digest)
    return entries


def capture_delta(
    pre: dict[str, FsEntry],
    post: dict[str, FsEntry],
    base_image: str = "",
    exit_status: int = 0,
) -> StateDelta:
    changes: list[ChangeRecord] = []
    for path in set(pre) | set(post):
        if is_volatile(path):
            continue
        before = pre.get(path)
        after = post.get(path)
        if before == after:
            continue
        if before is None:
            changes.append(
                ChangeRecord(path, "created", after.digest, after.mode, after.owner)
            )
        elif after is None:
            changes.append(ChangeRecord(path, "deleted"))
        else:
            changes.append(
                ChangeRecord(path, "modified", after.digest, after.mode, after.owner)
            )
    return StateDelta(tuple(changes), base_image, exit_status)


# --- fixture backend -------------------------------------------------------


def spec_key(spec: "str | CandidateTask") -> str:
    """Stable lookup key for a task: command text, or module plus params."""
    if isinstance(spec, str):
        return "command\t" + spec
    return "task\t" + spec.module + "\t" + json.dumps(dict(spec.params), sort_keys=True)


def _render_record(c: ChangeRecord) -> str:
    if c.kind == "deleted":
        ftype = "-"
    elif c.post_hash is None:
        ftype = "d"
    else:
        ftype = "f"
    return "\t".join(
        (c.path, c.kind, ftype, c.post_mode or "-", c.post_owner or "-", c.post_hash or "-")
    )


def save_delta(path: Path, spec: "str | CandidateTask", delta: StateDelta) -> None:
    lines = []
    if isinstance(spec, str):
        lines.append(f"!command {spec}")
    else:
        lines.append(f"!task {spec.module} {json.dumps(dict(spec.params), sort_keys=True)}")
    if delta.base_image:
        lines.append(f"!base {delta.base_image}")
    if delta.exit_status:
        lines.append(f"!exit {delta.exit_status}")
    lines.extend(_render_record(c) for c in delta.changes)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_delta(path: Path, default_base: str = "") -> tuple[str, StateDelta]:
    """Read one fixture delta file; returns (lookup key, delta)."""
    key: str | None = None
    base = default_base
    exit_status = 0
    changes: list[ChangeRecord] = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("!command "):
            key = "command\t" + line[len("!command ") :]
            continue
        if line.startswith("!task "):
            body = line[len("!task ") :]
            module, _, params_json = body.partition(" ")
            try:
                params = json.loads(params_json or "{}")
            except json.JSONDecodeError as e:
                raise DeltaFormatError(f"{path}:{i}: bad task params: {e}") from None
            key = "task\t" + module + "\t" + json.dumps(params, sort_keys=True)
            continue
        if line.startswith("!base "):
            base = line[len("!base ") :].strip()
            continue
        if line.startswith("!exit "):
            try:
                exit_status = int(line[len("!exit ") :])
            except ValueError:
                raise DeltaFormatError(f"{path}:{i}: bad exit status") from None
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise DeltaFormatError(f"{path}:{i}: expected 6 fields, got {len(fields)}")
        fpath, kind, _ftype, mode, owner, digest = fields
        if kind == "deleted":
            changes.append(ChangeRecord(fpath, "deleted"))
        else:
            changes.append(
                ChangeRecord(
                    fpath,
                    kind,
                    None if digest == "-" else digest,
                    None if mode == "-" else mode,
                    None if owner == "-" else owner,
                )
            )
    if key is None:
        raise DeltaFormatError(f"{path}: missing !command or !task line")
    try:
        return key, StateDelta(tuple(changes), base, exit_status)
    except ValueError as e:
        raise DeltaFormatError(f"{path}: {e}") from None


class FixtureBackend:
    """Pure replay of stored deltas; the test and CI sandbox."""

    name = "fixture"

    def __init__(self, base_image: str, deltas: "dict[str, StateDelta] | None" = None):
        self.base_image = base_image
        self._deltas: dict[str, StateDelta] = dict(deltas or {})

    def register(self, spec: "str | CandidateTask", delta: StateDelta) -> None:
        self._deltas[spec_key(spec)] = delta

    @classmethod
    def from_dir(cls, directory: Path, base_image: str) -> "FixtureBackend":
        backend = cls(base_image)
        directory = Path(directory)
        if not directory.is_dir():
            raise SandboxUnavailable(f"fixture directory {directory} not found")
        for file in sorted(directory.glob("*.delta")):
            key, delta = load_delta(file, default_base=base_image)
            backend._deltas[key] = delta
        return backend

    def run(self, spec: "str | CandidateTask", base: str) -> StateDelta:
        if base != self.base_image:
            raise SandboxUnavailable(
                f"fixture backend holds deltas for {self.base_image!r}, not {base!r}"
            )
        key = spec_key(spec)
        delta = self._deltas.get(key)
        if delta is None:
            raise SandboxUnavailable(f"no fixture delta recorded for {key!r}")
        if delta.base_image and delta.base_image != base:
            raise SandboxUnavailable(
                f"fixture delta for {key!r} was captured on {delta.base_image!r}"
            )
        return StateDelta(delta.changes, base, delta.exit_status)


# --- container backend -----------------------------------------------------

# One line per entry: path, type, mode, uid:gid, sha256 or -.
WALKER_SCRIPT = r"""
find / -xdev \
  \( -path /proc -o -path /sys -o -path /dev -o -path /run \
     -o -path /tmp -o -path /var/log -o -path /root/.ansible \) -prune \
  -o -print 2>/dev/null | LC_ALL=C sort | while IFS= read -r p; do
  if [ -L "$p" ]; then t=l; h=$(readlink "$p" | sha256sum | cut -d" " -f1)
  elif [ -d "$p" ]; then t=d; h=-
  elif [ -f "$p" ]; then t=f; h=$(sha256sum "$p" | cut -d" " -f1)
  else continue; fi
  printf '%s\t%s\t%s\t%s\t%s\n' "$p" "$t" "$(stat -c %a "$p")" "$(stat -c %u:%g "$p")" "$h"
done
"""


def render_runner(task: CandidateTask) -> str:
    """Shell command that applies a candidate task inside the sandbox."""
    args = " ".join(f"{k}={v}" for k, v in task.params)
    return (
        "ansible localhost -i localhost, -c local -m "
        + shlex.quote(task.module)
        + " -a "
        + shlex.quote(args)
    )


class ContainerBackend:
    """Snapshot, execute, snapshot again inside a throwaway container."""

    name = "container"

    def __init__(self, runtime: str = "docker"):
        self.runtime = runtime

    def _runtime_path(self) -> str:
        found = shutil.which(self.runtime)
        if not found:
            raise SandboxUnavailable(f"container runtime {self.runtime!r} not on PATH")
        return found

    def run(self, spec: "str | CandidateTask", base: str) -> StateDelta:
        runtime = self._runtime_path()
        command = spec if isinstance(spec, str) else render_runner(spec)
        container = subprocess.run(
            [runtime, "create", base, "sleep", "3600"],
            capture_output=True,
            text=True,
            check=True,
        ).stdout.strip()
        try:
            subprocess.run([runtime, "start", container], capture_output=True, check=True)

            def exec_sh(script: str) -> subprocess.CompletedProcess:
                return subprocess.run(
                    [runtime, "exec", container, "sh", "-c", script],
                    capture_output=True,
                    text=True,
                )

            pre = parse_walk(exec_sh(WALKER_SCRIPT).stdout)
            status = exec_sh(command).returncode
            post = parse_walk(exec_sh(WALKER_SCRIPT).stdout)
        finally:
            subprocess.run([runtime, "rm", "-f", container], capture_output=True)
        return capture_delta(pre, post, base_image=base, exit_status=status)
