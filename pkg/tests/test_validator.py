import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dozer.shell import parse_command
from dozer.synth import CandidateTask, RETAINED
from dozer.validator import (
    BaseMismatch,
    ChangeRecord,
    ContainerBackend,
    DeltaFormatError,
    FixtureBackend,
    FsEntry,
    SandboxUnavailable,
    StateDelta,
    capture_delta,
    delta_similarity,
    load_delta,
    parse_walk,
    render_runner,
    save_delta,
    snapshot_tree,
    spec_key,
    validate,
)

from conftest import ECHO_COMMAND

BASE = "debian:11"

H1 = "a" * 64
H2 = "b" * 64
H3 = "c" * 64


def delta(*changes: ChangeRecord, base: str = BASE, exit_status: int = 0) -> StateDelta:
    return StateDelta(tuple(changes), base, exit_status)


# --- similarity metric ---


def test_worked_example_three_quarters():
    a = delta(
        ChangeRecord("/f1", "created", H1, "644", "0:0"),
        ChangeRecord("/f2", "modified", H2, "644", "0:0"),
    )
    b = delta(
        ChangeRecord("/f1", "created", H1, "644", "0:0"),
        ChangeRecord("/f2", "modified", H3, "644", "0:0"),
    )
    assert abs(delta_similarity(a, b) - 0.75) < 1e-12


def test_identical_deltas_score_one():
    a = delta(ChangeRecord("/f1", "deleted"), ChangeRecord("/f2", "created", H1, "600", "0:0"))
    assert delta_similarity(a, a) == 1.0


def test_disjoint_paths_score_zero():
    a = delta(ChangeRecord("/f1", "created", H1, "644", "0:0"))
    b = delta(ChangeRecord("/f2", "created", H1, "644", "0:0"))
    assert delta_similarity(a, b) == 0.0


def test_both_empty_score_one():
    assert delta_similarity(delta(), delta()) == 1.0


def test_same_path_different_kind_quarter_credit():
    a = delta(ChangeRecord("/f1", "created", H1, "644", "0:0"))
    b = delta(ChangeRecord("/f1", "modified", H1, "644", "0:0"))
    assert delta_similarity(a, b) == 0.25


def test_base_mismatch_rejected():
    with pytest.raises(BaseMismatch):
        delta_similarity(delta(), delta(base="alpine:3"))


def test_deleted_record_rejects_post_state():
    with pytest.raises(ValueError):
        ChangeRecord("/f1", "deleted", post_hash=H1)
    with pytest.raises(ValueError):
        ChangeRecord("/f1", "renamed")


def test_duplicate_paths_rejected():
    with pytest.raises(ValueError):
        delta(ChangeRecord("/f1", "deleted"), ChangeRecord("/f1", "created", H1, "644", "0:0"))


def test_changes_normalized_to_path_order():
    d = delta(ChangeRecord("/z", "deleted"), ChangeRecord("/a", "deleted"))
    assert [c.path for c in d.changes] == ["/a", "/z"]


PATHS = st.sampled_from([f"/p{i}" for i in range(6)])
HASHES = st.sampled_from([None, H1, H2])


@st.composite
def change_records(draw, path=None):
    p = path if path is not None else draw(PATHS)
    kind = draw(st.sampled_from(["created", "deleted", "modified"]))
    if kind == "deleted":
        return ChangeRecord(p, "deleted")
    return ChangeRecord(
        p,
        kind,
        draw(HASHES),
        draw(st.sampled_from([None, "644", "600"])),
        draw(st.sampled_from([None, "0:0", "33:33"])),
    )


@st.composite
def state_deltas(draw):
    paths = draw(st.lists(PATHS, unique=True, max_size=5))
    return StateDelta(tuple(draw(change_records(path=p)) for p in paths), BASE)


@given(state_deltas(), state_deltas())
def test_similarity_symmetric_and_bounded(a, b):
    s = delta_similarity(a, b)
    assert s == delta_similarity(b, a)
    assert 0.0 <= s <= 1.0


@given(state_deltas(), state_deltas())
def test_similarity_one_only_for_identical(a, b):
    assert (delta_similarity(a, b) == 1.0) == (a.changes == b.changes)


# --- candidate ordering ---


def task(module: str, params: dict[str, str], score: float) -> CandidateTask:
    items = tuple(params.items())
    return CandidateTask(module, items, tuple((k, RETAINED) for k in params), f"{module}-1", score)


def example_backend() -> tuple[FixtureBackend, CandidateTask, CandidateTask]:
    nginx = ChangeRecord("/etc/nginx/nginx.conf", "modified", H1, "644", "0:0")
    good = task(
        "lineinfile",
        {"dest": "/etc/nginx/nginx.conf", "line": "daemon off;"},
        0.9,
    )
    wrong = task("file", {"path": "/usr/src/app", "state": "directory"}, 0.4)
    backend = FixtureBackend(BASE)
    backend.register(ECHO_COMMAND, delta(nginx))
    backend.register(good, delta(nginx))
    backend.register(wrong, delta(ChangeRecord("/usr/src/app", "created", None, "755", "0:0")))
    return backend, good, wrong


def test_example_deltas_select_lineinfile():
    backend, good, wrong = example_backend()
    src = parse_command(ECHO_COMMAND)
    ranked = validate(src, [wrong, good], backend, BASE)
    # shell and lineinfile touch the same path identically: 1/1; the wrong
    # candidate shares no path with the shell delta: 0/2
    assert ranked[0] == (good, 1.0)
    assert ranked[1] == (wrong, 0.0)


def test_single_identical_candidate_scores_one():
    backend, good, _ = example_backend()
    ranked = validate(parse_command(ECHO_COMMAND), [good], backend, BASE)
    assert ranked == [(good, 1.0)]


def test_all_failing_candidates_order_by_comparison_score():
    src = parse_command(ECHO_COMMAND)
    low = task("copy", {"dest": "/x"}, 0.2)
    high = task("lineinfile", {"dest": "/y"}, 0.8)
    backend = FixtureBackend(BASE)
    backend.register(ECHO_COMMAND, delta())
    backend.register(low, delta(exit_status=1))
    backend.register(high, delta(exit_status=2))
    ranked = validate(src, [low, high], backend, BASE)
    assert ranked == [(high, 0.0), (low, 0.0)]


def test_failed_candidate_ranks_below_succeeding_zero_similarity():
    src = parse_command(ECHO_COMMAND)
    # succeeds but shares no paths: similarity 0 yet still above any failure
    stranger = task("file", {"path": "/elsewhere"}, 0.1)
    crasher = task("lineinfile", {"dest": "/etc/nginx/nginx.conf"}, 0.99)
    backend = FixtureBackend(BASE)
    backend.register(ECHO_COMMAND, delta(ChangeRecord("/etc/nginx/nginx.conf", "modified", H1, "644", "0:0")))
    backend.register(stranger, delta(ChangeRecord("/elsewhere", "created", H2, "644", "0:0")))
    backend.register(crasher, delta(exit_status=1))
    ranked = validate(src, [crasher, stranger], backend, BASE)
    assert ranked == [(stranger, 0.0), (crasher, 0.0)]


def test_backend_errors_are_captured_per_candidate():
    src = parse_command(ECHO_COMMAND)
    good = task("lineinfile", {"dest": "/f"}, 0.5)
    missing = task("copy", {"dest": "/g"}, 0.9)
    backend = FixtureBackend(BASE)
    backend.register(ECHO_COMMAND, delta(ChangeRecord("/f", "modified", H1, "644", "0:0")))
    backend.register(good, delta(ChangeRecord("/f", "modified", H1, "644", "0:0")))

    class Flaky:
        def run(self, spec, base):
            if spec is missing:
                raise RuntimeError("boom")
            return backend.run(spec, base)

    ranked = validate(src, [missing, good], Flaky(), BASE)
    assert ranked == [(good, 1.0), (missing, 0.0)]


def test_validate_requires_candidates():
    backend, _, _ = example_backend()
    with pytest.raises(ValueError):
        validate(parse_command(ECHO_COMMAND), [], backend, BASE)


def test_validate_is_deterministic():
    backend, good, wrong = example_backend()
    src = parse_command(ECHO_COMMAND)
    first = validate(src, [wrong, good], backend, BASE)
    assert first == validate(src, [wrong, good], backend, BASE)


def test_tie_broken_by_comparison_score_then_module():
    src = parse_command(ECHO_COMMAND)
    rec = ChangeRecord("/f", "modified", H1, "644", "0:0")
    a = task("zz_mod", {"dest": "/f"}, 0.5)
    b = task("aa_mod", {"dest": "/f"}, 0.5)
    c = task("mm_mod", {"dest": "/f"}, 0.7)
    backend = FixtureBackend(BASE)
    backend.register(ECHO_COMMAND, delta(rec))
    for t in (a, b, c):
        backend.register(t, delta(rec))
    ranked = validate(src, [a, b, c], backend, BASE)
    assert [t.module for t, _ in ranked] == ["mm_mod", "aa_mod", "zz_mod"]


# --- snapshots and capture_delta ---


def entry(t="f", mode="644", owner="0:0", digest=H1) -> FsEntry:
    return FsEntry(t, mode, owner, digest)


def test_capture_classifies_created_deleted_modified():
    pre = {"/keep": entry(), "/gone": entry(digest=H2), "/edit": entry(digest=H1)}
    post = {"/keep": entry(), "/new": entry(digest=H3), "/edit": entry(digest=H2)}
    d = capture_delta(pre, post, BASE, 0)
    assert d.by_path()["/new"] == ChangeRecord("/new", "created", H3, "644", "0:0")
    assert d.by_path()["/gone"] == ChangeRecord("/gone", "deleted")
    assert d.by_path()["/edit"] == ChangeRecord("/edit", "modified", H2, "644", "0:0")
    assert "/keep" not in d.by_path()


def test_capture_mode_only_change_is_modified():
    pre = {"/f": entry(mode="644")}
    post = {"/f": entry(mode="600")}
    d = capture_delta(pre, post)
    assert d.changes == (ChangeRecord("/f", "modified", H1, "600", "0:0"),)


def test_capture_skips_volatile_paths():
    post = {"/tmp/x": entry(), "/var/log/syslog": entry(), "/etc/hosts": entry()}
    d = capture_delta({}, post)
    assert [c.path for c in d.changes] == ["/etc/hosts"]


@st.composite
def snapshots(draw):
    paths = draw(st.lists(st.sampled_from(["/a", "/b", "/c", "/d"]), unique=True, max_size=4))
    return {p: FsEntry("f", draw(st.sampled_from(["644", "600"])), "0:0", draw(HASHES)) for p in paths}


@given(snapshots())
def test_capture_of_identical_snapshots_is_empty(snap):
    assert capture_delta(snap, snap).changes == ()


@given(snapshots())
def test_capture_from_empty_creates_everything(snap):
    d = capture_delta({}, snap)
    assert sorted(c.path for c in d.changes) == sorted(snap)
    assert all(c.kind == "created" for c in d.changes)


def test_snapshot_tree_and_capture(tmp_path):
    (tmp_path / "etc").mkdir()
    (tmp_path / "etc" / "app.conf").write_text("one\n")
    (tmp_path / "stale").write_text("bye\n")
    pre = snapshot_tree(tmp_path)
    (tmp_path / "etc" / "app.conf").write_text("one\ntwo\n")
    (tmp_path / "stale").unlink()
    (tmp_path / "fresh").write_text("hi\n")
    os.chmod(tmp_path / "etc", 0o700)
    post = snapshot_tree(tmp_path)
    d = capture_delta(pre, post, BASE, 0)
    by = d.by_path()
    assert by["/etc/app.conf"].kind == "modified"
    assert by["/stale"] == ChangeRecord("/stale", "deleted")
    assert by["/fresh"].kind == "created"
    assert by["/etc"].kind == "modified" and by["/etc"].post_mode == "700"
    assert by["/etc"].post_hash is None
    assert len(by) == 4


def test_snapshot_tree_identity(tmp_path):
    (tmp_path / "f").write_text("x")
    (tmp_path / "lnk").symlink_to("f")
    snap = snapshot_tree(tmp_path)
    assert capture_delta(snap, snap).changes == ()
    assert snap["/lnk"].type == "l"


# --- walker output ---


def test_parse_walk_lines():
    text = f"/etc\td\t755\t0:0\t-\n/etc/hosts\tf\t644\t0:0\t{H1}\n/proc/1/stat\tf\t444\t0:0\t{H2}\n"
    walk = parse_walk(text)
    assert walk == {
        "/etc": FsEntry("d", "755", "0:0", None),
        "/etc/hosts": FsEntry("f", "644", "0:0", H1),
    }


def test_parse_walk_rejects_malformed_line():
    with pytest.raises(DeltaFormatError, match="line 2"):
        parse_walk(f"/etc\td\t755\t0:0\t-\n/bad line\n")


# --- fixture delta files ---


def test_delta_file_round_trip(tmp_path):
    d = delta(
        ChangeRecord("/f1", "created", H1, "644", "0:0"),
        ChangeRecord("/f2", "deleted"),
        ChangeRecord("/d1", "modified", None, "700", "0:0"),
        exit_status=3,
    )
    file = tmp_path / "one.delta"
    save_delta(file, ECHO_COMMAND, d)
    key, loaded = load_delta(file)
    assert key == spec_key(ECHO_COMMAND)
    assert loaded == d


def test_delta_file_task_spec_round_trip(tmp_path):
    t = task("lineinfile", {"dest": "/etc/nginx/nginx.conf", "line": "daemon off;"}, 0.9)
    file = tmp_path / "task.delta"
    save_delta(file, t, delta())
    key, loaded = load_delta(file, default_base="other")
    assert key == spec_key(t)
    assert loaded.base_image == BASE
    assert loaded.exit_status == 0


def test_delta_file_requires_spec_line(tmp_path):
    file = tmp_path / "broken.delta"
    file.write_text(f"/f1\tcreated\tf\t644\t0:0\t{H1}\n")
    with pytest.raises(DeltaFormatError, match="command"):
        load_delta(file)


def test_delta_file_rejects_bad_field_count(tmp_path):
    file = tmp_path / "broken.delta"
    file.write_text("!command x\n/f1\tcreated\n")
    with pytest.raises(DeltaFormatError, match=":2"):
        load_delta(file)


@given(records=st.lists(change_records(), max_size=5))
def test_delta_record_lines_round_trip(tmp_path_factory, records):
    unique = {}
    for r in records:
        unique[r.path] = r
    d = StateDelta(tuple(unique.values()), BASE, 0)
    file = tmp_path_factory.mktemp("deltas") / "rt.delta"
    save_delta(file, "cmd", d)
    _, loaded = load_delta(file)
    assert loaded == d


def test_fixture_backend_from_dir(tmp_path):
    d = delta(ChangeRecord("/f1", "created", H1, "644", "0:0"))
    save_delta(tmp_path / "a.delta", ECHO_COMMAND, d)
    backend = FixtureBackend.from_dir(tmp_path, BASE)
    assert backend.run(ECHO_COMMAND, BASE) == d


def test_fixture_backend_missing_dir():
    with pytest.raises(SandboxUnavailable):
        FixtureBackend.from_dir("/no/such/dir", BASE)


def test_fixture_backend_unknown_spec():
    backend = FixtureBackend(BASE)
    with pytest.raises(SandboxUnavailable, match="no fixture delta"):
        backend.run("never registered", BASE)


def test_fixture_backend_wrong_base():
    backend = FixtureBackend(BASE)
    backend.register("cmd", delta())
    with pytest.raises(SandboxUnavailable):
        backend.run("cmd", "alpine:3")


# --- container backend plumbing ---


def test_container_backend_unavailable_runtime():
    backend = ContainerBackend(runtime="no-such-container-runtime")
    with pytest.raises(SandboxUnavailable):
        backend.run("true", BASE)


def test_render_runner_quotes_params():
    t = task("lineinfile", {"dest": "/etc/x", "line": "daemon off;"}, 0.5)
    cmd = render_runner(t)
    assert cmd.startswith("ansible localhost -i localhost, -c local -m lineinfile -a ")
    assert "'dest=/etc/x line=daemon off;'" in cmd
