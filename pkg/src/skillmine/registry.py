"""Durable, auditable store for skills, resources, and verification records.

Storage is one append-only newline-delimited JSON file per record class plus a
compacted ``index/`` rewritten only by the refresh stage. All writes go
through a single-writer lock file at the registry root and use temp-file-then-
rename so a killed process never leaves a torn record.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import tree as treemod
from .errors import (
    CorruptRecordError,
    IdCollisionError,
    IllegalTransitionError,
    InconsistencyError,
    InvalidStatusError,
    LockHeldError,
    RegistryError,
    UnknownSkillError,
)
from .util import atomic_write_text, canonical_json, dump_json_doc, slugify

SKILL_STATUSES = ("untested", "repaired", "verified", "review", "deprecated", "removed")

# verified->removed is required by novelty write-back (redundant/merge verdicts
# apply to already-verified candidates); deprecated and removed are terminal.
LEGAL_TRANSITIONS: dict[str, frozenset[str]] = {
    "untested": frozenset({"repaired", "verified", "removed"}),
    "repaired": frozenset({"verified", "removed"}),
    "verified": frozenset({"review", "deprecated", "removed"}),
    "review": frozenset({"verified", "deprecated"}),
    "deprecated": frozenset(),
    "removed": frozenset(),
}

RESOURCE_KINDS = (
    "repository",
    "paper",
    "notebook",
    "documentation",
    "api",
    "database",
    "workflow",
    "service",
)

LAYERS = ("execution", "synthetic", "system", "benchmark")
OUTCOMES = ("pass", "fail", "error")
CONFIDENCES = ("starter", "standard")

SKILLS_FILE = "skills.ndjson"
RESOURCES_FILE = "resources.ndjson"
VERIFICATIONS_FILE = "verifications.ndjson"
TREE_SNAPSHOT = "tree.snapshot"
INDEX_DIR = "index"
LOCK_FILE = "LOCK"


@dataclass
class SkillEntry:
    id: str
    name: str
    leaf_path: str
    status: str = "untested"
    package_path: str = ""
    smoke_target: str | None = None
    provenance: list[str] = field(default_factory=list)
    created_cycle: int = 0
    updated_cycle: int = 0
    confidence: str = "standard"
    novelty_decision: str | None = None
    merged_into: str | None = None

    def to_record(self) -> dict:
        record = {
            "id": self.id,
            "name": self.name,
            "leaf_path": self.leaf_path,
            "status": self.status,
            "package_path": self.package_path,
            "smoke_target": self.smoke_target,
            "provenance": list(self.provenance),
            "created_cycle": self.created_cycle,
            "updated_cycle": self.updated_cycle,
            "confidence": self.confidence,
        }
        if self.novelty_decision is not None:
            record["novelty_decision"] = self.novelty_decision
        if self.merged_into is not None:
            record["merged_into"] = self.merged_into
        return record

    @classmethod
    def from_record(cls, record: dict) -> "SkillEntry":
        return cls(
            id=record["id"],
            name=record["name"],
            leaf_path=record["leaf_path"],
            status=record["status"],
            package_path=record.get("package_path", ""),
            smoke_target=record.get("smoke_target"),
            provenance=list(record.get("provenance", [])),
            created_cycle=int(record.get("created_cycle", 0)),
            updated_cycle=int(record.get("updated_cycle", 0)),
            confidence=record.get("confidence", "standard"),
            novelty_decision=record.get("novelty_decision"),
            merged_into=record.get("merged_into"),
        )


@dataclass
class ResourceEntry:
    id: str
    kind: str
    locator: str
    leaf_paths: list[str] = field(default_factory=list)
    retrieved_cycle: int = 0
    authority_rank: int = 0

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "locator": self.locator,
            "leaf_paths": sorted(self.leaf_paths),
            "retrieved_cycle": self.retrieved_cycle,
            "authority_rank": self.authority_rank,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ResourceEntry":
        return cls(
            id=record["id"],
            kind=record["kind"],
            locator=record["locator"],
            leaf_paths=list(record.get("leaf_paths", [])),
            retrieved_cycle=int(record.get("retrieved_cycle", 0)),
            authority_rank=int(record.get("authority_rank", 0)),
        )


@dataclass
class VerificationRecord:
    skill_id: str
    layer: str
    outcome: str
    attempt: int
    report_locator: str = ""
    cycle: int = 0

    def to_record(self) -> dict:
        return {
            "skill_id": self.skill_id,
            "layer": self.layer,
            "outcome": self.outcome,
            "attempt": self.attempt,
            "report_locator": self.report_locator,
            "cycle": self.cycle,
        }

    @classmethod
    def from_record(cls, record: dict) -> "VerificationRecord":
        return cls(
            skill_id=record["skill_id"],
            layer=record["layer"],
            outcome=record["outcome"],
            attempt=int(record["attempt"]),
            report_locator=record.get("report_locator", ""),
            cycle=int(record.get("cycle", 0)),
        )


@dataclass(frozen=True)
class LibraryStats:
    skill_count: int
    verified_count: int
    domain_count: int
    subdomain_count: int
    resource_count: int
    novel_fraction: float

    def to_record(self) -> dict:
        return {
            "skill_count": self.skill_count,
            "verified_count": self.verified_count,
            "domain_count": self.domain_count,
            "subdomain_count": self.subdomain_count,
            "resource_count": self.resource_count,
            "novel_fraction": self.novel_fraction,
        }


@dataclass(frozen=True)
class Receipt:
    id: str
    created: bool
    file: str
    line: int


def resource_id_for(locator: str) -> str:
    """Stable, human-readable id derived from the locator alone."""
    from .util import sha256_hex

    tail = locator.rstrip("/").rsplit("/", 1)[-1]
    return f"res-{slugify(tail)[:32]}-{sha256_hex(locator.encode('utf-8'))[:6]}"


def skill_id_for(leaf_path: str, name: str, taken: set[str]) -> str:
    """Slug from leaf tail + short name, collision-suffixed deterministically."""
    leaf_tail = leaf_path.rsplit("/", 1)[-1]
    base = f"{slugify(leaf_tail)}-{slugify(name)}"
    if base not in taken:
        return base
    n = 2
    while f"{base}-{n}" in taken:
        n += 1
    return f"{base}-{n}"


class RegistryLock:
    """Single-writer lock: a thread-reentrant lock in process, an exclusive
    lock file across processes."""

    def __init__(self, path: Path, wait: str = "block", timeout: float = 10.0):
        if wait not in ("block", "fail"):
            raise RegistryError(f"unknown lock wait mode: {wait}")
        self.path = path
        self.wait = wait
        self.timeout = timeout
        self._depth = 0  # guarded by holding _rlock
        self._rlock = threading.RLock()

    def acquire(self) -> None:
        if self.wait == "fail":
            acquired = self._rlock.acquire(blocking=False)
        else:
            acquired = self._rlock.acquire(timeout=self.timeout)
        if not acquired:
            raise LockHeldError(f"writer lock contended in-process for {self.path}")
        if self._depth == 0:
            try:
                self._acquire_file_lock()
            except BaseException:
                self._rlock.release()
                raise
        self._depth += 1

    def _acquire_file_lock(self) -> None:
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self.wait == "fail" or time.monotonic() >= deadline:
                    raise LockHeldError(f"writer lock held at {self.path}") from None
                time.sleep(0.01)
                continue
            with os.fdopen(fd, "w") as handle:
                handle.write(str(os.getpid()))
            return

    def release(self) -> None:
        if self._depth == 0:
            return
        self._depth -= 1
        if self._depth == 0:
            try:
                self.path.unlink()
            except FileNotFoundError:
                pass
        self._rlock.release()

    def __enter__(self) -> "RegistryLock":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


class Registry:
    """In-memory view over the append-only record files."""

    def __init__(self, root: str | Path, lock_wait: str = "block", lock_timeout: float = 10.0):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / INDEX_DIR).mkdir(exist_ok=True)
        for name in (SKILLS_FILE, RESOURCES_FILE, VERIFICATIONS_FILE):
            path = self.root / name
            if not path.exists():
                path.touch()
        self.lock = RegistryLock(self.root / LOCK_FILE, wait=lock_wait, timeout=lock_timeout)
        self._skills: dict[str, SkillEntry] = {}
        self._skill_history: dict[str, list[dict]] = {}
        self._resources: dict[str, ResourceEntry] = {}
        self._locator_index: dict[str, str] = {}
        self._verifications: list[VerificationRecord] = []
        self._sizes: dict[str, int] = {}
        self._reload()

    # -- loading --------------------------------------------------------------

    def _read_records(self, name: str) -> list[dict]:
        path = self.root / name
        records: list[dict] = []
        if not path.exists():
            self._sizes[name] = 0
            return records
        data = path.read_bytes()
        self._sizes[name] = len(data)
        text = data.decode("utf-8")
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptRecordError(name, line_no, str(exc)) from None
            if not isinstance(record, dict):
                raise CorruptRecordError(name, line_no, "record is not an object")
            records.append(record)
        if text and not text.endswith("\n"):
            raise CorruptRecordError(name, text.count("\n") + 1, "truncated record (no newline)")
        return records

    def _reload(self) -> None:
        self._skills.clear()
        self._skill_history.clear()
        self._resources.clear()
        self._locator_index.clear()
        self._verifications = []
        for line_no, record in enumerate(self._read_records(SKILLS_FILE), start=1):
            try:
                entry = SkillEntry.from_record(record)
            except KeyError as exc:
                raise CorruptRecordError(SKILLS_FILE, line_no, f"missing field {exc}") from None
            self._skills[entry.id] = entry
            self._skill_history.setdefault(entry.id, []).append(record)
        for line_no, record in enumerate(self._read_records(RESOURCES_FILE), start=1):
            try:
                entry = ResourceEntry.from_record(record)
            except KeyError as exc:
                raise CorruptRecordError(RESOURCES_FILE, line_no, f"missing field {exc}") from None
            self._resources[entry.id] = entry
            self._locator_index[entry.locator] = entry.id
        for line_no, record in enumerate(self._read_records(VERIFICATIONS_FILE), start=1):
            try:
                self._verifications.append(VerificationRecord.from_record(record))
            except KeyError as exc:
                raise CorruptRecordError(
                    VERIFICATIONS_FILE, line_no, f"missing field {exc}"
                ) from None

    def _resync_if_stale(self) -> None:
        for name in (SKILLS_FILE, RESOURCES_FILE, VERIFICATIONS_FILE):
            path = self.root / name
            size = path.stat().st_size if path.exists() else 0
            if size != self._sizes.get(name, 0):
                self._reload()
                return

    def _append(self, name: str, record: dict) -> int:
        """Append one record line via read-modify-rename. Caller holds the lock."""
        path = self.root / name
        existing = path.read_bytes() if path.exists() else b""
        line = canonical_json(record) + "\n"
        payload = existing + line.encode("utf-8")
        from .util import atomic_write_bytes

        atomic_write_bytes(path, payload)
        self._sizes[name] = len(payload)
        return payload.decode("utf-8").count("\n")

    # -- accessors -------------------------------------------------------------

    def skills(self) -> list[SkillEntry]:
        return [self._skills[k] for k in sorted(self._skills)]

    def skill(self, skill_id: str) -> SkillEntry:
        entry = self._skills.get(skill_id)
        if entry is None:
            raise UnknownSkillError(f"unknown skill: {skill_id}")
        return entry

    def has_skill(self, skill_id: str) -> bool:
        return skill_id in self._skills

    def resources(self) -> list[ResourceEntry]:
        return [self._resources[k] for k in sorted(self._resources)]

    def resource(self, resource_id: str) -> ResourceEntry:
        entry = self._resources.get(resource_id)
        if entry is None:
            raise RegistryError(f"unknown resource: {resource_id}")
        return entry

    def resource_by_locator(self, locator: str) -> ResourceEntry | None:
        resource_id = self._locator_index.get(locator)
        return self._resources.get(resource_id) if resource_id else None

    def verifications(self, skill_id: str | None = None, layer: str | None = None) -> list[VerificationRecord]:
        records = self._verifications
        if skill_id is not None:
            records = [r for r in records if r.skill_id == skill_id]
        if layer is not None:
            records = [r for r in records if r.layer == layer]
        return list(records)

    def skill_history(self, skill_id: str) -> list[dict]:
        return list(self._skill_history.get(skill_id, []))

    def replay_status(self, skill_id: str) -> str:
        """Status as reproduced by replaying the skill's history lines."""
        history = self._skill_history.get(skill_id)
        if not history:
            raise UnknownSkillError(f"unknown skill: {skill_id}")
        return history[-1]["status"]

    # -- mutations ---------------------------------------------------------------

    def _validate_entry(self, entry: SkillEntry) -> None:
        if not entry.id or any(c.isspace() for c in entry.id) or entry.id != entry.id.lower():
            raise InvalidStatusError(f"invalid skill id: {entry.id!r}")
        if entry.status not in SKILL_STATUSES:
            raise InvalidStatusError(f"invalid status: {entry.status!r}")
        if entry.confidence not in CONFIDENCES:
            raise InvalidStatusError(f"invalid confidence: {entry.confidence!r}")
        if not entry.name:
            raise InvalidStatusError("skill name must be non-empty")

    def upsert_skill(self, entry: SkillEntry) -> Receipt:
        """Durable append of the full entry snapshot; one history line per call."""
        self._validate_entry(entry)
        with self.lock:
            self._resync_if_stale()
            current = self._skills.get(entry.id)
            if current is None:
                if entry.status != "untested":
                    raise InvalidStatusError(
                        f"new skill {entry.id} must enter as untested, not {entry.status}"
                    )
                created = True
            else:
                if current.leaf_path != entry.leaf_path:
                    raise IdCollisionError(
                        f"skill id {entry.id} already bound to leaf {current.leaf_path}"
                    )
                if entry.status != current.status and entry.status not in LEGAL_TRANSITIONS[current.status]:
                    raise IllegalTransitionError(entry.id, current.status, entry.status)
                created = False
            record = entry.to_record()
            line = self._append(SKILLS_FILE, record)
            self._skills[entry.id] = entry
            self._skill_history.setdefault(entry.id, []).append(record)
            return Receipt(id=entry.id, created=created, file=SKILLS_FILE, line=line)

    def record_resource(self, resource: ResourceEntry) -> Receipt:
        """Record a resource; duplicate locators collapse to one entry."""
        if resource.kind not in RESOURCE_KINDS:
            raise RegistryError(f"unknown resource kind: {resource.kind!r}")
        if not resource.locator:
            raise RegistryError("resource locator must be non-empty")
        with self.lock:
            self._resync_if_stale()
            existing = self.resource_by_locator(resource.locator)
            if existing is None:
                entry = replace(resource, id=resource.id or resource_id_for(resource.locator))
                created = True
            else:
                merged_leaves = sorted(set(existing.leaf_paths) | set(resource.leaf_paths))
                if merged_leaves == sorted(existing.leaf_paths):
                    # Nothing new to say; keep history append-only but skip noise.
                    return Receipt(id=existing.id, created=False, file=RESOURCES_FILE, line=0)
                entry = replace(existing, leaf_paths=merged_leaves)
                created = False
            line = self._append(RESOURCES_FILE, entry.to_record())
            self._resources[entry.id] = entry
            self._locator_index[entry.locator] = entry.id
            return Receipt(id=entry.id, created=created, file=RESOURCES_FILE, line=line)

    def transition_skill(self, skill_id: str, status: str, cycle: int, merged_into: str | None = None) -> SkillEntry:
        """Explicit status transition; rejects anything off the machine."""
        if status not in SKILL_STATUSES:
            raise InvalidStatusError(f"invalid status: {status!r}")
        with self.lock:
            self._resync_if_stale()
            current = self.skill(skill_id)
            if status == current.status:
                return current
            if status not in LEGAL_TRANSITIONS[current.status]:
                raise IllegalTransitionError(skill_id, current.status, status)
            entry = replace(current, status=status, updated_cycle=cycle)
            if merged_into is not None:
                entry = replace(entry, merged_into=merged_into)
            record = entry.to_record()
            self._append(SKILLS_FILE, record)
            self._skills[skill_id] = entry
            self._skill_history.setdefault(skill_id, []).append(record)
            return entry

    def relocate_skill(self, skill_id: str, new_leaf_path: str, cycle: int) -> SkillEntry:
        """Move a skill to another leaf.

        Only tree write-backs (merge and split commits) relocate skills;
        ordinary upserts treat a changed leaf_path as an id collision.
        """
        with self.lock:
            self._resync_if_stale()
            current = self.skill(skill_id)
            if current.leaf_path == new_leaf_path:
                return current
            entry = replace(current, leaf_path=new_leaf_path, updated_cycle=cycle)
            record = entry.to_record()
            self._append(SKILLS_FILE, record)
            self._skills[skill_id] = entry
            self._skill_history.setdefault(skill_id, []).append(record)
            return entry

    def set_novelty_decision(self, skill_id: str, decision: str, cycle: int) -> SkillEntry:
        with self.lock:
            self._resync_if_stale()
            current = self.skill(skill_id)
            entry = replace(current, novelty_decision=decision, updated_cycle=cycle)
            record = entry.to_record()
            self._append(SKILLS_FILE, record)
            self._skills[skill_id] = entry
            self._skill_history.setdefault(skill_id, []).append(record)
            return entry

    def set_verification(
        self, skill_id: str, record: VerificationRecord, promote: bool = True
    ) -> SkillEntry:
        """Append a verification record; a passing execution promotes by default.

        With ``promote=False`` the outcome is recorded without a status change,
        which is how the pipeline defers promotion to the refresh stage.
        """
        if record.layer not in LAYERS:
            raise RegistryError(f"unknown layer: {record.layer!r}")
        if record.outcome not in OUTCOMES:
            raise RegistryError(f"unknown outcome: {record.outcome!r}")
        with self.lock:
            self._resync_if_stale()
            current = self.skill(skill_id)
            if record.skill_id != skill_id:
                raise RegistryError("record names a different skill")
            prior = len(self.verifications(skill_id, record.layer))
            if record.attempt != prior + 1:
                raise RegistryError(
                    f"attempt {record.attempt} for {skill_id}/{record.layer} "
                    f"is not consecutive (expected {prior + 1})"
                )
            self._append(VERIFICATIONS_FILE, record.to_record())
            self._verifications.append(record)
            if (
                promote
                and record.outcome == "pass"
                and record.layer == "execution"
                and current.status in ("untested", "repaired", "review")
            ):
                return self.transition_skill(skill_id, "verified", record.cycle)
            return current

    # -- views and checks -----------------------------------------------------------

    def view(self, current_cycle: int) -> "RegistryViewAdapter":
        return RegistryViewAdapter(self, current_cycle)

    def snapshot_stats(self, tree: treemod.DomainTree) -> LibraryStats:
        for entry in self.skills():
            self._check_leaf_reference(entry, tree)
        summary = treemod.coverage_summary(tree)
        present = [e for e in self._skills.values() if e.status != "removed"]
        adjudicated = [e for e in self._skills.values() if e.novelty_decision is not None]
        novel = [e for e in adjudicated if e.novelty_decision == "novel"]
        fraction = len(novel) / len(adjudicated) if adjudicated else 0.0
        return LibraryStats(
            skill_count=len(present),
            verified_count=sum(1 for e in present if e.status == "verified"),
            domain_count=summary["domains"],
            subdomain_count=summary["subdomains"],
            resource_count=len(self._resources),
            novel_fraction=fraction,
        )

    def _check_leaf_reference(self, entry: SkillEntry, tree: treemod.DomainTree) -> None:
        path = treemod.parse_path(entry.leaf_path)
        node = tree.nodes.get(path)
        if node is None:
            raise InconsistencyError(
                f"skill {entry.id} references missing leaf {entry.leaf_path}"
            )
        if node.status == "pruned" and entry.status not in ("deprecated", "removed"):
            raise InconsistencyError(
                f"skill {entry.id} points at pruned leaf {entry.leaf_path} without deprecation"
            )

    def integrity_check(self, tree: treemod.DomainTree) -> list[str]:
        """Cross-reference and state-machine scan; violations are data."""
        violations: list[str] = []
        violations.extend(treemod.check_invariants(tree))

        for entry in self.skills():
            path = treemod.parse_path(entry.leaf_path)
            node = tree.nodes.get(path)
            if node is None:
                violations.append(f"skill {entry.id} references missing leaf {entry.leaf_path}")
            elif node.status == "pruned" and entry.status not in ("deprecated", "removed"):
                violations.append(
                    f"skill {entry.id} points at pruned leaf {entry.leaf_path} without deprecation"
                )
            history = self._skill_history.get(entry.id, [])
            if history:
                if history[0]["status"] != "untested":
                    violations.append(f"skill {entry.id} history does not start at untested")
                prev = history[0]["status"]
                for record in history[1:]:
                    status = record["status"]
                    if status != prev and status not in LEGAL_TRANSITIONS[prev]:
                        violations.append(
                            f"skill {entry.id} history contains illegal transition {prev} -> {status}"
                        )
                    prev = status
                if prev != entry.status:
                    violations.append(f"skill {entry.id} replay mismatch: {prev} != {entry.status}")
            if entry.status == "verified":
                passes = [
                    r
                    for r in self.verifications(entry.id, "execution")
                    if r.outcome == "pass"
                ]
                if not passes:
                    violations.append(f"verified skill {entry.id} has no passing execution record")

        for node in tree.nodes.values():
            for skill_id in sorted(node.linked_skills):
                if skill_id not in self._skills:
                    violations.append(
                        f"node {treemod.format_path(node.path)} links unknown skill {skill_id}"
                    )
            for resource_id in sorted(node.linked_resources):
                if resource_id not in self._resources:
                    violations.append(
                        f"node {treemod.format_path(node.path)} links unknown resource {resource_id}"
                    )

        by_key: dict[tuple[str, str], list[int]] = {}
        for record in self._verifications:
            by_key.setdefault((record.skill_id, record.layer), []).append(record.attempt)
        for (skill_id, layer), attempts in sorted(by_key.items()):
            if attempts != list(range(1, len(attempts) + 1)):
                violations.append(
                    f"attempts for {skill_id}/{layer} are not consecutive from 1: {attempts}"
                )
            if skill_id not in self._skills:
                violations.append(f"verification records reference unknown skill {skill_id}")

        return violations

    # -- refresh-owned persistence ------------------------------------------------

    def save_tree(self, tree: treemod.DomainTree) -> None:
        with self.lock:
            atomic_write_text(self.root / TREE_SNAPSHOT, dump_json_doc(treemod.tree_to_document(tree)))

    def load_tree_snapshot(self) -> treemod.DomainTree | None:
        path = self.root / TREE_SNAPSHOT
        if not path.exists():
            return None
        return treemod.tree_from_document(json.loads(path.read_text("utf-8")))

    def compact_index(self, tree: treemod.DomainTree | None = None) -> None:
        """Rewrite the compacted views. Only the refresh stage calls this."""
        with self.lock:
            index = self.root / INDEX_DIR
            atomic_write_text(
                index / "skills.json",
                dump_json_doc([e.to_record() for e in self.skills()]),
            )
            atomic_write_text(
                index / "resources.json",
                dump_json_doc([e.to_record() for e in self.resources()]),
            )
            if tree is not None:
                atomic_write_text(
                    index / "stats.json", dump_json_doc(self.snapshot_stats(tree).to_record())
                )


def open_registry(root_dir: str | Path, lock_wait: str = "block", lock_timeout: float = 10.0) -> Registry:
    """Open (or initialize) a registry directory."""
    return Registry(root_dir, lock_wait=lock_wait, lock_timeout=lock_timeout)


class RegistryViewAdapter:
    """Read-only adapter satisfying the tree module's RegistryView protocol."""

    def __init__(self, registry: Registry, current_cycle: int):
        self._registry = registry
        self.current_cycle = current_cycle

    def skill_status(self, skill_id: str) -> str | None:
        entry = self._registry._skills.get(skill_id)
        return entry.status if entry else None

    def skill_confidence(self, skill_id: str) -> str | None:
        entry = self._registry._skills.get(skill_id)
        return entry.confidence if entry else None

    def skill_activity_cycle(self, skill_id: str) -> int:
        entry = self._registry._skills.get(skill_id)
        return entry.updated_cycle if entry else 0

    def resource_activity_cycle(self, resource_id: str) -> int:
        entry = self._registry._resources.get(resource_id)
        return entry.retrieved_cycle if entry else 0
