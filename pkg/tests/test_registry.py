"""Registry store: durability, history, state machine, integrity."""

from __future__ import annotations

import json
import multiprocessing

import pytest

from skillmine import tree as treemod
from skillmine.errors import (
    CorruptRecordError,
    IdCollisionError,
    IllegalTransitionError,
    InconsistencyError,
    InvalidStatusError,
    LockHeldError,
    RegistryError,
    UnknownSkillError,
)
from skillmine.registry import (
    LEGAL_TRANSITIONS,
    SKILL_STATUSES,
    ResourceEntry,
    SkillEntry,
    VerificationRecord,
    open_registry,
    skill_id_for,
)


def entry(skill_id="align-reads", leaf="science/genomics/alignment/short-read-alignment", **kw):
    base = dict(
        id=skill_id,
        name="Align reads",
        leaf_path=leaf,
        status="untested",
        package_path=f"skills/{skill_id}",
        smoke_target="python3 tests/smoke.py",
        provenance=["res-1"],
        created_cycle=1,
        updated_cycle=1,
        confidence="standard",
    )
    base.update(kw)
    return SkillEntry(**base)


@pytest.fixture
def registry(tmp_path):
    return open_registry(tmp_path / "library")


def test_open_empty_directory(registry):
    assert registry.skills() == []
    assert registry.resources() == []


def test_upsert_round_trips_field_for_field(tmp_path, registry):
    original = entry()
    registry.upsert_skill(original)
    reopened = open_registry(tmp_path / "library")
    assert reopened.skill("align-reads") == original


def test_upsert_appends_history_line(registry):
    registry.upsert_skill(entry())
    registry.upsert_skill(entry(status="verified"))
    assert len(registry.skills()) == 1
    assert len(registry.skill_history("align-reads")) == 2


def test_new_skill_must_start_untested(registry):
    with pytest.raises(InvalidStatusError):
        registry.upsert_skill(entry(status="verified"))


def test_id_collision_on_different_leaf(registry):
    registry.upsert_skill(entry())
    with pytest.raises(IdCollisionError):
        registry.upsert_skill(entry(leaf="science/imaging/microscopy/segmentation"))


def test_corrupt_record_names_file_and_line(tmp_path):
    root = tmp_path / "library"
    registry = open_registry(root)
    for i in range(3):
        registry.upsert_skill(entry(skill_id=f"ok-{i}"))
    skills_file = root / "skills.ndjson"
    skills_file.write_bytes(skills_file.read_bytes() + b'{"id": "trunc')
    with pytest.raises(CorruptRecordError) as excinfo:
        open_registry(root)
    assert "skills.ndjson" in str(excinfo.value)
    assert excinfo.value.line == 4


def test_durability_after_simulated_kill(tmp_path):
    root = tmp_path / "library"
    registry = open_registry(root)
    registry.upsert_skill(entry())
    # a new process-like reader sees the entry without any close/flush step
    fresh = open_registry(root)
    assert fresh.has_skill("align-reads")


# -- resources -----------------------------------------------------------------


def test_record_resource_and_dedup(registry):
    first = registry.record_resource(
        ResourceEntry(id="", kind="repository", locator="https://x/repo", leaf_paths=["a/b"])
    )
    duplicate = registry.record_resource(
        ResourceEntry(id="", kind="repository", locator="https://x/repo", leaf_paths=["a/b"])
    )
    assert first.id == duplicate.id
    assert len(registry.resources()) == 1


def test_record_resource_unions_leaves(registry):
    registry.record_resource(
        ResourceEntry(id="", kind="paper", locator="https://x/p", leaf_paths=["a/b"])
    )
    receipt = registry.record_resource(
        ResourceEntry(id="", kind="paper", locator="https://x/p", leaf_paths=["a/c"])
    )
    assert sorted(registry.resource(receipt.id).leaf_paths) == ["a/b", "a/c"]


def test_resource_kind_validated(registry):
    with pytest.raises(RegistryError):
        registry.record_resource(ResourceEntry(id="", kind="blog", locator="https://x"))


def test_paper_shaped_resource_count(registry):
    for i in range(394):
        registry.record_resource(
            ResourceEntry(id="", kind="repository", locator=f"https://x/repo-{i}", leaf_paths=["a"])
        )
    assert len(registry.resources()) == 394


# -- verification state machine ---------------------------------------------------


def test_pass_promotes_untested_to_verified(registry):
    registry.upsert_skill(entry())
    updated = registry.set_verification(
        "align-reads",
        VerificationRecord(
            skill_id="align-reads", layer="execution", outcome="pass", attempt=1, cycle=1
        ),
    )
    assert updated.status == "verified"


def test_fail_keeps_status_and_records(registry):
    registry.upsert_skill(entry())
    updated = registry.set_verification(
        "align-reads",
        VerificationRecord(
            skill_id="align-reads", layer="execution", outcome="fail", attempt=1, cycle=1
        ),
    )
    assert updated.status == "untested"
    assert len(registry.verifications("align-reads")) == 1


def test_verified_to_untested_is_illegal(registry):
    registry.upsert_skill(entry())
    registry.transition_skill("align-reads", "verified", cycle=1)
    with pytest.raises(IllegalTransitionError) as excinfo:
        registry.transition_skill("align-reads", "untested", cycle=2)
    assert excinfo.value.source == "verified"
    assert excinfo.value.target == "untested"


def test_attempts_must_be_consecutive(registry):
    registry.upsert_skill(entry())
    with pytest.raises(RegistryError):
        registry.set_verification(
            "align-reads",
            VerificationRecord(
                skill_id="align-reads", layer="execution", outcome="fail", attempt=2, cycle=1
            ),
        )


def test_unknown_skill_rejected(registry):
    with pytest.raises(UnknownSkillError):
        registry.set_verification(
            "ghost",
            VerificationRecord(skill_id="ghost", layer="execution", outcome="pass", attempt=1),
        )


def test_no_path_back_to_verified_from_terminal_states():
    reachable = {"untested"}
    frontier = ["untested"]
    while frontier:
        status = frontier.pop()
        for target in LEGAL_TRANSITIONS[status]:
            if target not in reachable:
                reachable.add(target)
                frontier.append(target)
    assert reachable == set(SKILL_STATUSES)
    for terminal in ("deprecated", "removed"):
        assert not LEGAL_TRANSITIONS[terminal]


def test_history_replay_matches_current(registry):
    registry.upsert_skill(entry())
    registry.transition_skill("align-reads", "repaired", cycle=1)
    registry.transition_skill("align-reads", "verified", cycle=2)
    registry.transition_skill("align-reads", "review", cycle=3)
    assert registry.replay_status("align-reads") == "review"
    assert registry.skill("align-reads").status == "review"


# -- stats and integrity ------------------------------------------------------------


@pytest.fixture
def tree():
    return treemod.load_tree(
        "root\n  alpha\n    one *\n    two *\n  beta\n    three *\n"
    )


def test_snapshot_stats_counts(registry, tree):
    for i, leaf in enumerate(["root/alpha/one", "root/alpha/one", "root/beta/three"]):
        registry.upsert_skill(entry(skill_id=f"s-{i}", leaf=leaf))
    registry.set_novelty_decision("s-0", "novel", 1)
    registry.set_novelty_decision("s-1", "novel", 1)
    registry.set_novelty_decision("s-2", "redundant", 1)
    stats = registry.snapshot_stats(tree)
    assert stats.skill_count == 3
    assert stats.domain_count == 2
    assert stats.novel_fraction == pytest.approx(2 / 3)


def test_snapshot_stats_rejects_missing_leaf(registry, tree):
    registry.upsert_skill(entry(skill_id="lost", leaf="root/alpha/ghost"))
    with pytest.raises(InconsistencyError):
        registry.snapshot_stats(tree)


def test_snapshot_stats_rejects_pruned_leaf_without_deprecation(registry, tree):
    registry.upsert_skill(entry(skill_id="s", leaf="root/alpha/one"))
    pruned = treemod.prune_leaf(tree, treemod.parse_path("root/alpha/one"), "stale")
    with pytest.raises(InconsistencyError):
        registry.snapshot_stats(pruned)


def test_integrity_clean_on_fresh_state(registry, tree):
    assert registry.integrity_check(tree) == []


def test_integrity_flags_verified_without_pass_record(tmp_path, tree):
    root = tmp_path / "library"
    registry = open_registry(root)
    registry.upsert_skill(entry(skill_id="sneaky", leaf="root/alpha/one"))
    registry.transition_skill("sneaky", "verified", cycle=1)
    violations = registry.integrity_check(tree)
    assert any("sneaky" in v and "passing execution" in v for v in violations)


def test_integrity_flags_unknown_tree_links(registry, tree):
    linked = treemod.link_skill(tree, treemod.parse_path("root/alpha/one"), "phantom")
    violations = registry.integrity_check(linked)
    assert any("phantom" in v for v in violations)


# -- locking ---------------------------------------------------------------------


def test_fail_fast_lock(tmp_path):
    root = tmp_path / "library"
    first = open_registry(root, lock_wait="fail")
    second = open_registry(root, lock_wait="fail")
    first.lock.acquire()
    try:
        with pytest.raises(LockHeldError):
            second.lock.acquire()
    finally:
        first.lock.release()


def test_lock_is_reentrant(tmp_path):
    registry = open_registry(tmp_path / "library")
    with registry.lock:
        with registry.lock:
            registry.upsert_skill(entry())
    assert not (tmp_path / "library" / "LOCK").exists()


def _writer_process(root: str, worker: int, count: int) -> None:
    registry = open_registry(root, lock_wait="block", lock_timeout=30.0)
    for i in range(count):
        registry.upsert_skill(
            SkillEntry(
                id=f"w{worker}-s{i}",
                name=f"skill {worker}/{i}",
                leaf_path="root/alpha/one",
                status="untested",
                package_path=f"skills/w{worker}-s{i}",
                provenance=["res-1"],
            )
        )


def test_concurrent_threads_on_one_registry_lose_no_updates(tmp_path):
    import threading

    registry = open_registry(tmp_path / "library", lock_wait="block", lock_timeout=30.0)
    errors: list[Exception] = []

    def writer(thread: int) -> None:
        try:
            for i in range(10):
                registry.upsert_skill(
                    SkillEntry(
                        id=f"t{thread}-s{i}",
                        name=f"skill {thread}/{i}",
                        leaf_path="root/alpha/one",
                        status="untested",
                        package_path=f"skills/t{thread}-s{i}",
                        provenance=["res-1"],
                    )
                )
        except Exception as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=writer, args=(t,)) for t in range(4)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    assert errors == []
    assert len(registry.skills()) == 40
    lines = (tmp_path / "library" / "skills.ndjson").read_text().splitlines()
    assert len(lines) == 40


def test_concurrent_writers_lose_no_updates(tmp_path):
    root = tmp_path / "library"
    open_registry(root)  # initialize layout
    workers, per_worker = 4, 6
    processes = [
        multiprocessing.Process(target=_writer_process, args=(str(root), w, per_worker))
        for w in range(workers)
    ]
    for proc in processes:
        proc.start()
    for proc in processes:
        proc.join(timeout=60)
        assert proc.exitcode == 0
    merged = open_registry(root)
    assert len(merged.skills()) == workers * per_worker
    lines = (root / "skills.ndjson").read_text().splitlines()
    assert len(lines) == workers * per_worker


# -- ids ------------------------------------------------------------------------


def test_skill_id_for_is_deterministic_and_collision_suffixed():
    taken: set[str] = set()
    first = skill_id_for("a/b/short-read-alignment", "BWA Align", taken)
    assert first == "short-read-alignment-bwa-align"
    taken.add(first)
    second = skill_id_for("a/b/short-read-alignment", "BWA Align", taken)
    assert second == "short-read-alignment-bwa-align-2"


def test_index_compaction_writes_sorted_views(tmp_path, tree):
    root = tmp_path / "library"
    registry = open_registry(root)
    registry.upsert_skill(entry(skill_id="zz", leaf="root/alpha/one"))
    registry.upsert_skill(entry(skill_id="aa", leaf="root/alpha/one"))
    registry.compact_index(tree)
    compacted = json.loads((root / "index" / "skills.json").read_text())
    assert [row["id"] for row in compacted] == ["aa", "zz"]
    stats = json.loads((root / "index" / "stats.json").read_text())
    assert stats["skill_count"] == 2
