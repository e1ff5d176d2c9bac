"""Score how similar two canonical traces behave under a parameter mapping.

The pipeline: find where parameter values occur inside rendered syscall
arguments, enumerate injective mappings between source and target parameters,
rewrite both traces with slot tokens under a candidate mapping, then match
syscalls in two tiers (exact key, then name-only at a discount) weighted by
corpus surprisal.  The best mapping wins; records are ranked by score.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass

from .canonical import CanonicalSyscall, CanonicalTrace, render_key
from .kb import ExecutionRecord, FrequencyTable, KnowledgeBase, syscall_weight
from .shell import Param, ParamSet, ShellExecution

ALPHA = 0.25
ENUMERATION_CAP = 10_000
BEAM_WIDTH = 32
DEFAULT_TOP_K = 5


class EmptyKnowledgeBase(ValueError):
    """Ranking needs at least one record."""


@dataclass(frozen=True)
class Occurrence:
    param: str
    call_seq: int
    arg_index: int
    span: tuple[int, int]


@dataclass(frozen=True)
class ParameterMapping:
    pairs: tuple[tuple[str, str], ...]  # (source name, target name), sorted

    def __post_init__(self):
        sources = [s for s, _ in self.pairs]
        targets = [t for _, t in self.pairs]
        if len(set(sources)) != len(sources) or len(set(targets)) != len(targets):
            raise ValueError("mapping must be injective")
        if tuple(sorted(self.pairs)) != self.pairs:
            object.__setattr__(self, "pairs", tuple(sorted(self.pairs)))


EMPTY_MAPPING = ParameterMapping(())


@dataclass(frozen=True)
class MatchedPair:
    src_key: str
    tgt_key: str
    tier: str  # full | name
    weight: float


@dataclass(frozen=True)
class ComparisonResult:
    record_id: str
    mapping: ParameterMapping
    score: float
    matched_full: int
    matched_name_only: int
    detail: tuple[MatchedPair, ...]


@dataclass(frozen=True)
class CommandSource:
    """The shell side of a comparison: command, parameters, canonical trace."""

    execution: ShellExecution | None
    params: ParamSet
    trace: CanonicalTrace


def find_occurrences(trace: CanonicalTrace, params: ParamSet) -> list[Occurrence]:
    """Non-overlapping, leftmost full-value occurrences per argument."""
    out: list[Occurrence] = []
    for p in params.params:
        if not p.groundable or not p.value:
            continue
        for ci, call in enumerate(trace.calls):
            for ai, arg in enumerate(call.rendered_args):
                start = 0
                while True:
                    idx = arg.find(p.value, start)
                    if idx < 0:
                        break
                    out.append(Occurrence(p.name, ci, ai, (idx, idx + len(p.value))))
                    start = idx + len(p.value)
    return out


def mapping_space_size(n_sources: int, n_targets: int) -> int:
    return sum(
        math.comb(n_sources, k) * math.perm(n_targets, k)
        for k in range(min(n_sources, n_targets) + 1)
    )


def enumerate_mappings(
    src: ParamSet,
    tgt: ParamSet,
    src_context: dict[str, set[str]] | None = None,
    tgt_context: dict[str, set[str]] | None = None,
) -> list[ParameterMapping]:
    """All injective partial mappings between groundable params.

    Beyond the cap, a greedy beam keeps the search bounded; the optional
    contexts (param name -> syscall names it occurs in) order candidate pairs
    by co-occurrence so plausible pairs are explored first.
    """
    sources = [p.name for p in src.params if p.groundable]
    targets = [p.name for p in tgt.params if p.groundable]
    if mapping_space_size(len(sources), len(targets)) <= ENUMERATION_CAP:
        mappings = []
        for k in range(min(len(sources), len(targets)) + 1):
            for chosen in itertools.combinations(sources, k):
                for image in itertools.permutations(targets, k):
                    mappings.append(ParameterMapping(tuple(sorted(zip(chosen, image)))))
        return mappings
    return _beam_mappings(sources, targets, src_context or {}, tgt_context or {})


def _beam_mappings(
    sources: list[str],
    targets: list[str],
    src_context: dict[str, set[str]],
    tgt_context: dict[str, set[str]],
) -> list[ParameterMapping]:
    def cooc(s: str, t: str) -> int:
        return len(src_context.get(s, set()) & tgt_context.get(t, set()))

    ordered = sorted(
        ((s, t) for s in sources for t in targets),
        key=lambda p: (-cooc(*p), p),
    )
    results: set[tuple[tuple[str, str], ...]] = {()}
    beam: list[tuple[tuple[str, str], ...]] = [()]
    for _ in range(min(len(sources), len(targets))):
        candidates: list[tuple[int, tuple[tuple[str, str], ...]]] = []
        seen: set[tuple[tuple[str, str], ...]] = set()
        for state in beam:
            used_s = {s for s, _ in state}
            used_t = {t for _, t in state}
            for s, t in ordered:
                if s in used_s or t in used_t:
                    continue
                new = tuple(sorted(state + ((s, t),)))
                if new in seen:
                    continue
                seen.add(new)
                candidates.append((sum(cooc(a, b) for a, b in new), new))
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beam = [state for _, state in candidates[:BEAM_WIDTH]]
        results.update(beam)
    return [ParameterMapping(pairs) for pairs in sorted(results)]


def _slot_entries(
    params: ParamSet, mapping: ParameterMapping, side: str
) -> list[tuple[str, str, int]]:
    if side not in ("source", "target"):
        raise ValueError(f"side must be source or target, got {side!r}")
    by_source = dict(mapping.pairs)
    mapped_targets = {t for _, t in mapping.pairs}
    entries = []
    for p in params.params:
        if not p.groundable or not p.value:
            continue
        if side == "source":
            mapped = p.name in by_source
            token = f"<P:{by_source[p.name]}>" if mapped else f"<P:source:{p.name}>"
        else:
            mapped = p.name in mapped_targets
            token = f"<P:{p.name}>" if mapped else f"<P:target:{p.name}>"
        entries.append((p.value, token, 0 if mapped else 1))
    # longest value first; mapped params claim shared values before unmapped
    entries.sort(key=lambda e: (-len(e[0]), e[2], e[1]))
    return entries


def _substitute(arg: str, entries: list[tuple[str, str, int]]) -> str:
    claims: list[tuple[int, int, str]] = []

    def overlaps(start: int, end: int) -> bool:
        return any(start < e and s < end for s, e, _ in claims)

    for value, token, _ in entries:
        start = 0
        while True:
            idx = arg.find(value, start)
            if idx < 0:
                break
            if not overlaps(idx, idx + len(value)):
                claims.append((idx, idx + len(value), token))
                start = idx + len(value)
            else:
                start = idx + 1
    if not claims:
        return arg
    claims.sort()
    out = []
    pos = 0
    for start, end, token in claims:
        out.append(arg[pos:start])
        out.append(token)
        pos = end
    out.append(arg[pos:])
    return "".join(out)


def apply_mapping(
    trace: CanonicalTrace, params: ParamSet, mapping: ParameterMapping, side: str
) -> Counter[str]:
    """Rewrite parameter occurrences to slot tokens; return the key multiset."""
    entries = _slot_entries(params, mapping, side)
    keys: Counter[str] = Counter()
    for call in trace.calls:
        args = tuple(_substitute(a, entries) for a in call.rendered_args)
        keys[render_key(CanonicalSyscall(call.name, args, call.outcome))] += 1
    return keys


def _key_name(key: str) -> str:
    return key.split("(", 1)[0]


def match_and_score(
    src_keys: Counter[str],
    tgt_keys: Counter[str],
    table: FrequencyTable,
    alpha: float = ALPHA,
    weight_fn=None,
) -> tuple[float, tuple[MatchedPair, ...]]:
    w = weight_fn or (lambda name: syscall_weight(name, table))
    if not src_keys and not tgt_keys:
        return 0.0, ()

    detail: list[MatchedPair] = []
    matched = 0.0
    full = src_keys & tgt_keys
    for key in sorted(full):
        weight = w(_key_name(key))
        matched += weight * full[key]
        detail.extend(MatchedPair(key, key, "full", weight) for _ in range(full[key]))

    res_src = src_keys - full
    res_tgt = tgt_keys - full
    by_name_src: dict[str, list[str]] = {}
    for key in sorted(res_src.elements()):
        by_name_src.setdefault(_key_name(key), []).append(key)
    by_name_tgt: dict[str, list[str]] = {}
    for key in sorted(res_tgt.elements()):
        by_name_tgt.setdefault(_key_name(key), []).append(key)
    for name in sorted(set(by_name_src) & set(by_name_tgt)):
        weight = alpha * w(name)
        for src_key, tgt_key in zip(by_name_src[name], by_name_tgt[name]):
            matched += weight
            detail.append(MatchedPair(src_key, tgt_key, "name", weight))

    if src_keys == tgt_keys:
        return 1.0, tuple(detail)
    w_src = sum(w(_key_name(k)) * c for k, c in src_keys.items())
    w_tgt = sum(w(_key_name(k)) * c for k, c in tgt_keys.items())
    denom = w_src + w_tgt
    if denom <= 0.0:
        return 0.0, tuple(detail)
    score = 2.0 * matched / denom
    return min(1.0, max(0.0, score)), tuple(detail)


def _eligible(params: ParamSet, occurrences: list[Occurrence]) -> ParamSet:
    grounded = {o.param for o in occurrences}
    return ParamSet(tuple(p for p in params.params if p.groundable and p.name in grounded))


def _contexts(trace: CanonicalTrace, occurrences: list[Occurrence]) -> dict[str, set[str]]:
    ctx: dict[str, set[str]] = {}
    for o in occurrences:
        ctx.setdefault(o.param, set()).add(trace.calls[o.call_seq].name)
    return ctx


def compare(
    src: CommandSource,
    rec: ExecutionRecord,
    table: FrequencyTable,
    alpha: float = ALPHA,
    weight_fn=None,
) -> ComparisonResult:
    """Best-mapping comparison of a shell command trace against one record."""
    src_occ = find_occurrences(src.trace, src.params)
    tgt_occ = find_occurrences(rec.trace, rec.groundable_params)
    mappings = enumerate_mappings(
        _eligible(src.params, src_occ),
        _eligible(rec.groundable_params, tgt_occ),
        _contexts(src.trace, src_occ),
        _contexts(rec.trace, tgt_occ),
    )

    best: tuple[float, int, tuple, ParameterMapping, tuple] | None = None
    for mapping in mappings:
        src_keys = apply_mapping(src.trace, src.params, mapping, "source")
        tgt_keys = apply_mapping(rec.trace, rec.groundable_params, mapping, "target")
        score, detail = match_and_score(src_keys, tgt_keys, table, alpha, weight_fn)
        contender = (score, len(mapping.pairs), mapping.pairs, mapping, detail)
        if best is None:
            best = contender
            continue
        if score > best[0]:
            best = contender
        elif score == best[0]:
            if len(mapping.pairs) > best[1] or (
                len(mapping.pairs) == best[1] and mapping.pairs < best[2]
            ):
                best = contender
    assert best is not None  # the empty mapping is always enumerated
    score, _, _, mapping, detail = best
    return ComparisonResult(
        record_id=rec.id,
        mapping=mapping,
        score=score,
        matched_full=sum(1 for d in detail if d.tier == "full"),
        matched_name_only=sum(1 for d in detail if d.tier == "name"),
        detail=detail,
    )


def rank(
    src: CommandSource,
    kb: KnowledgeBase,
    k: int = DEFAULT_TOP_K,
    alpha: float = ALPHA,
    weight_fn=None,
) -> list[ComparisonResult]:
    if len(kb) == 0:
        raise EmptyKnowledgeBase("knowledge base has no records")
    table = kb.freq_table
    results = [compare(src, rec, table, alpha, weight_fn) for rec in kb.records]
    results.sort(key=lambda r: (-r.score, r.record_id))
    return results[: max(0, k)]
