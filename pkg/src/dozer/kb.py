"""Store module execution records and corpus-wide syscall statistics.

A knowledge base is a set of execution records, each pairing a configuration
module invocation (module name plus parameters) with the canonical trace of
its run.  The store keeps per-syscall occurrence counts so matching can weight
rare syscalls above ubiquitous ones.

On disk a knowledge base is a line-oriented UTF-8 file: a version header with
a digest of the canonicalization config, the config itself, then one JSON
record per line.  The format is diff-able and append-friendly.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .canonical import CanonicalConfig, CanonicalSyscall, CanonicalTrace, canonicalize, render_key
from .shell import Param, ParamSet
from .strace import Trace

FORMAT_VERSION = 1


class ConfigMismatch(ValueError):
    """Ingest used a different canonicalization config than the store."""


class FormatVersionMismatch(ValueError):
    """The file is not a knowledge base of a supported version."""


class CorruptRecord(ValueError):
    """A record line failed to decode or verify."""


@dataclass(frozen=True)
class ExecutionRecord:
    id: str
    module: str
    params: tuple[tuple[str, str], ...]
    trace: CanonicalTrace
    groundable_params: ParamSet


@dataclass(frozen=True)
class FrequencyTable:
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def distinct(self) -> int:
        return len(self.counts)


def syscall_weight(name: str, table: FrequencyTable) -> float:
    """Laplace-smoothed surprisal; unseen names get the maximum weight."""
    return math.log(
        (table.total + table.distinct + 1) / (table.counts.get(name, 0) + 1)
    )


def _params_tuple(params) -> tuple[tuple[str, str], ...]:
    items = params.items() if isinstance(params, dict) else params
    return tuple((str(k), str(v)) for k, v in items)


def _derive_groundable(params: tuple[tuple[str, str], ...], min_len: int) -> ParamSet:
    return ParamSet(tuple(Param(k, v, len(v) >= min_len) for k, v in params))


def record_id(module: str, params: tuple[tuple[str, str], ...], trace: CanonicalTrace) -> str:
    body = "\n".join(
        [module, json.dumps(list(params))] + [render_key(c) for c in trace.calls]
    )
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return f"{module}-{digest[:10]}"


def _config_payload(config: CanonicalConfig) -> dict:
    baseline = None
    if config.baseline is not None:
        baseline = {
            "origin": config.baseline.origin,
            "calls": [_call_payload(c) for c in config.baseline.calls],
        }
    return {
        "denylist": sorted(config.denylist),
        "fold_at_variants": config.fold_at_variants,
        "mask_fds": config.mask_fds,
        "mask_addresses": config.mask_addresses,
        "collapse_retval": config.collapse_retval,
        "min_groundable_len": config.min_groundable_len,
        "baseline": baseline,
    }


def _config_from_payload(obj: dict) -> CanonicalConfig:
    baseline = None
    if obj.get("baseline") is not None:
        baseline = CanonicalTrace(
            tuple(_call_from_payload(c) for c in obj["baseline"]["calls"]),
            origin=obj["baseline"].get("origin", ""),
        )
    return CanonicalConfig(
        denylist=frozenset(obj["denylist"]),
        fold_at_variants=obj["fold_at_variants"],
        mask_fds=obj["mask_fds"],
        mask_addresses=obj["mask_addresses"],
        collapse_retval=obj["collapse_retval"],
        min_groundable_len=obj["min_groundable_len"],
        baseline=baseline,
    )


def config_digest(config: CanonicalConfig) -> str:
    text = json.dumps(_config_payload(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _call_payload(call: CanonicalSyscall) -> list:
    return [call.name, list(call.rendered_args), call.outcome]


def _call_from_payload(obj) -> CanonicalSyscall:
    name, args, outcome = obj
    return CanonicalSyscall(str(name), tuple(str(a) for a in args), str(outcome))


class KnowledgeBase:
    """Immutable-once-loaded store; single writer, many readers."""

    def __init__(self, config: CanonicalConfig | None = None):
        self.config = config or CanonicalConfig()
        self._records: dict[str, ExecutionRecord] = {}
        self._counts: Counter[str] = Counter()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[ExecutionRecord, ...]:
        return tuple(self._records.values())

    def get(self, rec_id: str) -> ExecutionRecord | None:
        return self._records.get(rec_id)

    @property
    def freq_table(self) -> FrequencyTable:
        return FrequencyTable(dict(self._counts))

    def weight(self, name: str) -> float:
        return syscall_weight(name, self.freq_table)

    def ingest(self, module: str, params, raw_trace: Trace, config: CanonicalConfig) -> str:
        if not module:
            raise ValueError("module name must be nonempty")
        if config != self.config:
            raise ConfigMismatch(
                "store was created with a different canonicalization config"
            )
        trace = canonicalize(raw_trace, config)
        return self.add_canonical(module, params, trace)

    def add_canonical(self, module: str, params, trace: CanonicalTrace) -> str:
        """Ingest a trace that is already canonical (loads, fixtures)."""
        ptuple = _params_tuple(params)
        rec_id = record_id(module, ptuple, trace)
        if rec_id in self._records:
            return rec_id
        record = ExecutionRecord(
            id=rec_id,
            module=module,
            params=ptuple,
            trace=trace,
            groundable_params=_derive_groundable(ptuple, self.config.min_groundable_len),
        )
        self._records[rec_id] = record
        self._counts.update(c.name for c in trace.calls)
        return rec_id


def save(kb: KnowledgeBase, path) -> None:
    lines = [f"dozer-kb v{FORMAT_VERSION} {config_digest(kb.config)}"]
    lines.append("!config " + json.dumps(_config_payload(kb.config), sort_keys=True))
    for rec in kb.records:
        payload = {
            "id": rec.id,
            "module": rec.module,
            "params": [list(p) for p in rec.params],
            "origin": rec.trace.origin,
            "calls": [_call_payload(c) for c in rec.trace.calls],
        }
        lines.append(json.dumps(payload, sort_keys=False))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load(path) -> KnowledgeBase:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return KnowledgeBase()
    lines = text.splitlines()
    head = lines[0].split()
    if len(head) != 3 or head[0] != "dozer-kb" or not head[1].startswith("v"):
        raise FormatVersionMismatch("missing dozer-kb header")
    if head[1] != f"v{FORMAT_VERSION}":
        raise FormatVersionMismatch(f"unsupported format version {head[1]}")
    digest = head[2]

    config = CanonicalConfig()
    body_start = 1
    if len(lines) > 1 and lines[1].startswith("!config "):
        try:
            config = _config_from_payload(json.loads(lines[1][len("!config ") :]))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptRecord(f"line 2: bad config entry: {exc}") from exc
        body_start = 2
    if config_digest(config) != digest:
        raise CorruptRecord("line 1: header digest does not match stored config")

    kb = KnowledgeBase(config)
    for line_no, line in enumerate(lines[body_start:], start=body_start + 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rec_id = obj["id"]
            module = obj["module"]
            params = tuple((str(k), str(v)) for k, v in obj["params"])
            trace = CanonicalTrace(
                tuple(_call_from_payload(c) for c in obj["calls"]),
                origin=obj.get("origin", ""),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptRecord(f"line {line_no}: {exc}") from exc
        if record_id(module, params, trace) != rec_id:
            raise CorruptRecord(
                f"line {line_no}: record {rec_id} fails its integrity check"
            )
        kb.add_canonical(module, params, trace)
    return kb
