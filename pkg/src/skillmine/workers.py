"""Parallel per-leaf workers, deterministic merge, and checkpointable campaigns.

Ownership partition: workers may write only under their leaf's
``skills/<leaf>/**`` and ``tests/<leaf>/**`` subtrees. Registry files, site
files, reports, and top-level documents are refresh-owned; a worker write
there discards the workspace. Merges apply in ascending leaf order so the
final state is independent of completion order.
"""

from __future__ import annotations

import concurrent.futures
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import tree as treemod
from .errors import (
    DigestMismatchError,
    DuplicateWorkspaceError,
    MergeCollisionError,
    SharedFileWriteError,
    WorkerError,
)
from .gateway import validate_response
from .harness import load_benchmark_cases
from .pipeline import Pipeline, leaf_key, leaf_slug_path
from .registry import VerificationRecord
from .util import (
    atomic_write_bytes,
    atomic_write_text,
    dump_json_doc,
    digest_dir,
    is_escaping_relpath,
    iter_files,
    sha256_hex,
)

WORKSPACES_DIR = "workspaces"
CAMPAIGNS_DIR = "campaigns"
MARKER_FILE = ".workspace.json"
WORKER_SCRATCH = ".worker"

# Volatile by design: excluded from state digests.
STATE_DIGEST_EXCLUDE = ("LOCK", WORKSPACES_DIR, CAMPAIGNS_DIR, "sandbox")


def leaf_owned_prefixes(leaf_path: treemod.NodePath) -> tuple[str, str]:
    slug = leaf_slug_path(leaf_path)
    return (f"skills/{slug}", f"tests/{slug}")


def is_leaf_owned(rel_path: str, leaf_path: treemod.NodePath) -> bool:
    return any(
        rel_path == prefix or rel_path.startswith(prefix + "/")
        for prefix in leaf_owned_prefixes(leaf_path)
    )


def state_digest(root: str | Path) -> str:
    """Digest of the durable library state, minus volatile scratch areas."""
    return digest_dir(Path(root), exclude=STATE_DIGEST_EXCLUDE)


@dataclass
class Workspace:
    leaf_path: treemod.NodePath
    isolated_root: Path
    base_snapshot_digest: str
    status: str = "open"  # open | collected | discarded

    def marker_path(self) -> Path:
        return self.isolated_root / MARKER_FILE


@dataclass
class ArtifactSet:
    leaf_path: treemod.NodePath
    files: list[tuple[str, str]]  # (relative path, content digest)
    stage_response: dict
    declared_shared_followups: list[dict] = field(default_factory=list)
    source_root: Path | None = None


@dataclass
class MergeResult:
    applied: list[str] = field(default_factory=list)  # leaf paths merged
    excluded: list[tuple[str, str]] = field(default_factory=list)  # (leaf, reason)
    followups: list[dict] = field(default_factory=list)
    files_written: list[str] = field(default_factory=list)


def _workspace_manifest(root: Path) -> dict[str, str]:
    manifest = {}
    for path in iter_files(root, exclude=(MARKER_FILE, WORKER_SCRATCH)):
        rel = path.relative_to(root).as_posix()
        manifest[rel] = sha256_hex(path.read_bytes())
    return manifest


def spawn_workspace(root: str | Path, tree: treemod.DomainTree, leaf_path: treemod.NodePath) -> Workspace:
    """Copy the leaf's subtrees plus a read-only shared snapshot into isolation."""
    root = Path(root)
    node = tree.node(leaf_path)
    if node.kind != "leaf" or node.status not in ("active", "review"):
        raise WorkerError(f"{treemod.format_path(leaf_path)} is not an active leaf")

    isolated = root / WORKSPACES_DIR / leaf_key(leaf_path)
    if isolated.exists():
        marker = isolated / MARKER_FILE
        if marker.exists() and json.loads(marker.read_text("utf-8")).get("status") == "open":
            raise DuplicateWorkspaceError(
                f"a workspace is already open for {treemod.format_path(leaf_path)}"
            )
        shutil.rmtree(isolated)
    isolated.mkdir(parents=True)

    for prefix in leaf_owned_prefixes(leaf_path):
        source = root / prefix
        if source.is_dir():
            shutil.copytree(source, isolated / prefix)

    shared = ("skills.ndjson", "resources.ndjson", "verifications.ndjson", "tree.snapshot")
    for name in shared:
        source = root / name
        if source.is_file():
            target = isolated / name
            shutil.copy2(source, target)
            target.chmod(0o444)
    index = root / "index"
    if index.is_dir():
        shutil.copytree(index, isolated / "index")
        for copied in (isolated / "index").rglob("*"):
            if copied.is_file():
                copied.chmod(0o444)

    manifest = _workspace_manifest(isolated)
    digest = sha256_hex(dump_json_doc(manifest).encode("utf-8"))
    workspace = Workspace(
        leaf_path=leaf_path, isolated_root=isolated, base_snapshot_digest=digest
    )
    atomic_write_text(
        workspace.marker_path(),
        dump_json_doc(
            {
                "leaf_path": treemod.format_path(leaf_path),
                "status": "open",
                "base_snapshot_digest": digest,
                "base_manifest": manifest,
            }
        ),
    )
    return workspace


def _set_status(workspace: Workspace, status: str) -> None:
    workspace.status = status
    marker = json.loads(workspace.marker_path().read_text("utf-8"))
    marker["status"] = status
    atomic_write_text(workspace.marker_path(), dump_json_doc(marker))


def discard_workspace(workspace: Workspace) -> None:
    """Crashed or conflicted workspaces are discarded, never partially merged."""
    if workspace.marker_path().exists():
        _set_status(workspace, "discarded")


def collect_leaf_artifacts(workspace: Workspace) -> ArtifactSet:
    """Diff the workspace against its base snapshot and keep leaf-owned changes."""
    if workspace.status != "open":
        raise WorkerError(f"workspace for {treemod.format_path(workspace.leaf_path)} is not open")
    marker = json.loads(workspace.marker_path().read_text("utf-8"))
    base: Mapping[str, str] = marker["base_manifest"]
    current = _workspace_manifest(workspace.isolated_root)

    changed = [rel for rel, digest in sorted(current.items()) if base.get(rel) != digest]
    offending = [rel for rel in changed if not is_leaf_owned(rel, workspace.leaf_path)]
    if offending:
        discard_workspace(workspace)
        raise SharedFileWriteError(treemod.format_path(workspace.leaf_path), offending)

    response_path = workspace.isolated_root / WORKER_SCRATCH / "response.json"
    response_fields: dict = {"repo_changes": [], "blockers": [], "next_steps": []}
    if response_path.exists():
        try:
            validated = validate_response("parallel_leaf_stage", response_path.read_text("utf-8"))
        except Exception as exc:
            discard_workspace(workspace)
            raise WorkerError(
                f"unparseable stage response for {treemod.format_path(workspace.leaf_path)}: {exc}"
            ) from None
        response_fields = dict(validated.fields)

    followups = []
    leaf_text = treemod.format_path(workspace.leaf_path)
    for kind in ("repo_changes", "blockers", "next_steps"):
        for item in response_fields.get(kind, []):
            followups.append({"leaf": leaf_text, "kind": kind, "item": item})

    artifact_set = ArtifactSet(
        leaf_path=workspace.leaf_path,
        files=[(rel, current[rel]) for rel in changed],
        stage_response=response_fields,
        declared_shared_followups=followups,
        source_root=workspace.isolated_root,
    )
    _set_status(workspace, "collected")
    return artifact_set


def merge_worker_outputs(
    root: str | Path,
    artifact_sets: Sequence[ArtifactSet],
    registry=None,
) -> MergeResult:
    """Apply conflict-free sets in ascending leaf order; exclude the rest."""
    root = Path(root)
    result = MergeResult()

    clean: list[ArtifactSet] = []
    for artifact_set in artifact_sets:
        leaf_text = treemod.format_path(artifact_set.leaf_path)
        bad = [
            rel
            for rel, _digest in artifact_set.files
            if is_escaping_relpath(rel) or not is_leaf_owned(rel, artifact_set.leaf_path)
        ]
        if bad:
            result.excluded.append((leaf_text, f"refresh-owned or escaping paths: {', '.join(bad)}"))
            continue
        clean.append(artifact_set)

    seen_paths: dict[str, str] = {}
    for artifact_set in clean:
        for rel, _digest in artifact_set.files:
            owner = seen_paths.get(rel)
            if owner is not None:
                raise MergeCollisionError(
                    f"internal invariant failure: {rel} written by both {owner} "
                    f"and {treemod.format_path(artifact_set.leaf_path)}"
                )
            seen_paths[rel] = treemod.format_path(artifact_set.leaf_path)

    ordered = sorted(clean, key=lambda s: treemod.format_path(s.leaf_path))
    lock = registry.lock if registry is not None else None
    if lock is not None:
        lock.acquire()
    try:
        for artifact_set in ordered:
            if artifact_set.source_root is None:
                raise WorkerError("artifact set has no source workspace to copy from")
            for rel, _digest in artifact_set.files:
                payload = (artifact_set.source_root / rel).read_bytes()
                atomic_write_bytes(root / rel, payload)
                result.files_written.append(rel)
            result.applied.append(treemod.format_path(artifact_set.leaf_path))
            result.followups.extend(artifact_set.declared_shared_followups)
    finally:
        if lock is not None:
            lock.release()
    return result


def run_leaf_workers(
    pipeline: Pipeline,
    leaf_paths: Sequence[treemod.NodePath],
    worker_fn: Callable[[Workspace], None],
    parallel: bool = True,
) -> tuple[MergeResult, list[tuple[str, str]]]:
    """Spawn, run, collect, and merge workers for a batch of leaves.

    Returns the merge result plus (leaf, reason) rows for workers that crashed
    or were rejected at collection.
    """
    workspaces = [spawn_workspace(pipeline.root, pipeline.tree, leaf) for leaf in leaf_paths]
    failures: list[tuple[str, str]] = []

    def execute(workspace: Workspace) -> None:
        worker_fn(workspace)

    if parallel and len(workspaces) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=len(workspaces)) as pool:
            futures = {pool.submit(execute, ws): ws for ws in workspaces}
            for future in concurrent.futures.as_completed(futures):
                workspace = futures[future]
                try:
                    future.result()
                except Exception as exc:
                    discard_workspace(workspace)
                    failures.append((treemod.format_path(workspace.leaf_path), str(exc)))
    else:
        for workspace in workspaces:
            try:
                execute(workspace)
            except Exception as exc:
                discard_workspace(workspace)
                failures.append((treemod.format_path(workspace.leaf_path), str(exc)))

    artifact_sets = []
    for workspace in workspaces:
        if workspace.status != "open":
            continue
        try:
            artifact_sets.append(collect_leaf_artifacts(workspace))
        except SharedFileWriteError as exc:
            failures.append((treemod.format_path(workspace.leaf_path), str(exc)))
        except WorkerError as exc:
            failures.append((treemod.format_path(workspace.leaf_path), str(exc)))

    result = merge_worker_outputs(pipeline.root, artifact_sets, registry=pipeline.registry)
    if result.followups:
        queued = pipeline._scratch.followups
        queued.extend(result.followups)

    for workspace in workspaces:
        shutil.rmtree(workspace.isolated_root, ignore_errors=True)
    return result, failures


def provider_leaf_worker(pipeline: Pipeline) -> Callable[[Workspace], None]:
    """The scripted worker: one parallel_leaf_stage call, then apply its files."""

    def worker(workspace: Workspace) -> None:
        leaf_text = treemod.format_path(workspace.leaf_path)
        response = pipeline.gateway.call(
            "parallel_leaf_stage",
            {
                "target_leaf": leaf_text,
                "artifact_directory": str(workspace.isolated_root),
                "repository_summary": pipeline.repository_summary(),
            },
            key=leaf_key(workspace.leaf_path),
        )
        for row in response.fields.get("files", []):
            # An escaping path would land outside the workspace where the
            # collection diff cannot see it; that worker is discarded instead.
            if is_escaping_relpath(row["path"]):
                raise WorkerError(f"worker file path escapes the workspace: {row['path']}")
            target = workspace.isolated_root / row["path"]
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(row["content"], encoding="utf-8")
        scratch = workspace.isolated_root / WORKER_SCRATCH
        scratch.mkdir(exist_ok=True)
        (scratch / "response.json").write_text(response.raw_text, encoding="utf-8")

    return worker


# -- campaigns ---------------------------------------------------------------------


@dataclass
class CampaignConfig:
    campaign_id: str
    branch_schedule: tuple[str, ...]
    cycles_per_branch: int = 1
    eval_batch_size: int | None = None
    failure_halt_limit: int | None = None
    mining_mode: str = "cycle"  # cycle | workers

    def phase_plan(self) -> list[tuple[str, str]]:
        plan: list[tuple[str, str]] = []
        for branch in self.branch_schedule:
            plan.extend(("mining", branch) for _ in range(self.cycles_per_branch))
            plan.append(("evaluation", branch))
        return plan


@dataclass
class CampaignCheckpoint:
    campaign_id: str
    completed_cycles: list[int]
    pending_skills: list[str]
    cursor: int  # completed phases
    registry_digest: str
    tree_digest: str
    cycle_index: int
    provider_counters: dict[str, int] = field(default_factory=dict)
    phases: list[dict] = field(default_factory=list)
    failures_in_row: int = 0
    config: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "campaign_id": self.campaign_id,
            "completed_cycles": self.completed_cycles,
            "pending_skills": self.pending_skills,
            "cursor": self.cursor,
            "registry_digest": self.registry_digest,
            "tree_digest": self.tree_digest,
            "cycle_index": self.cycle_index,
            "provider_counters": self.provider_counters,
            "phases": self.phases,
            "failures_in_row": self.failures_in_row,
            "config": self.config,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CampaignCheckpoint":
        return cls(**record)


@dataclass
class CampaignReport:
    campaign_id: str
    status: str  # completed | halted | interrupted
    phases: list[dict] = field(default_factory=list)
    completed_cycles: list[int] = field(default_factory=list)

    @property
    def mining_phases(self) -> list[dict]:
        return [p for p in self.phases if p["kind"].startswith("mining")]

    @property
    def evaluation_phases(self) -> list[dict]:
        return [p for p in self.phases if p["kind"] == "evaluation"]


def _tree_digest(pipeline: Pipeline) -> str:
    snapshot = pipeline.root / "tree.snapshot"
    return sha256_hex(snapshot.read_bytes()) if snapshot.exists() else ""


def checkpoint_campaign(
    pipeline: Pipeline, config: CampaignConfig, cursor: int, phases: list[dict],
    completed_cycles: list[int], failures_in_row: int,
) -> CampaignCheckpoint:
    checkpoint = CampaignCheckpoint(
        campaign_id=config.campaign_id,
        completed_cycles=list(completed_cycles),
        pending_skills=sorted(pipeline.state.pending_skills),
        cursor=cursor,
        registry_digest=state_digest(pipeline.root),
        tree_digest=_tree_digest(pipeline),
        cycle_index=pipeline.state.cycle_index,
        provider_counters=pipeline.gateway.export_counters(),
        phases=list(phases),
        failures_in_row=failures_in_row,
        config={
            "branch_schedule": list(config.branch_schedule),
            "cycles_per_branch": config.cycles_per_branch,
            "eval_batch_size": config.eval_batch_size,
            "failure_halt_limit": config.failure_halt_limit,
            "mining_mode": config.mining_mode,
        },
    )
    path = pipeline.root / CAMPAIGNS_DIR / config.campaign_id / "checkpoint.json"
    atomic_write_text(path, dump_json_doc(checkpoint.to_record()))
    return checkpoint


def load_checkpoint(pipeline: Pipeline, campaign_id: str) -> CampaignCheckpoint:
    path = pipeline.root / CAMPAIGNS_DIR / campaign_id / "checkpoint.json"
    if not path.exists():
        raise WorkerError(f"no checkpoint for campaign {campaign_id}")
    return CampaignCheckpoint.from_record(json.loads(path.read_text("utf-8")))


def _evaluation_phase(pipeline: Pipeline, batch_size: int) -> dict:
    """Batched layer-2 evaluation over pending skills."""
    from . import contracts as contractsmod
    from .harness import DEFAULT_ADVANTAGE_THRESHOLD

    pending = sorted(pipeline.state.pending_skills)
    batch = pending[:batch_size]
    outcomes: dict[str, str] = {}
    if not batch:
        return {"kind": "evaluation", "evaluated": [], "outcomes": {}, "note": "no pending skills"}

    threshold = pipeline.config.advantage_threshold or DEFAULT_ADVANTAGE_THRESHOLD
    for skill_id in batch:
        entry = pipeline.registry.skill(skill_id)
        if entry.status != "verified":
            outcomes[skill_id] = f"skipped: status={entry.status}"
            continue
        case_path = pipeline.root / entry.package_path / "tests" / "benchmark.json"
        if not case_path.exists():
            outcomes[skill_id] = "no-cases"
            continue
        cases = load_benchmark_cases(case_path)
        package = contractsmod.load_package(pipeline.root / entry.package_path)
        report = pipeline.harness.benchmark_compare(package, cases, skill_id)
        attempt = len(pipeline.registry.verifications(skill_id, "benchmark")) + 1
        pipeline.registry.set_verification(
            skill_id,
            VerificationRecord(
                skill_id=skill_id,
                layer="benchmark",
                outcome="pass" if not report.is_weak(threshold) else "fail",
                attempt=attempt,
                report_locator="",
                cycle=pipeline.state.cycle_index,
            ),
            promote=False,
        )
        if report.is_weak(threshold):
            outcome = pipeline.harness.optimize_loop(
                package,
                skill_id,
                report,
                budget=pipeline.config.optimize_attempts,
                gateway=pipeline.gateway,
                cases=cases,
                registry=pipeline.registry,
                cycle=pipeline.state.cycle_index,
                threshold=threshold,
            )
            outcomes[skill_id] = outcome.outcome
        else:
            outcomes[skill_id] = f"advantage margin={report.margin:.4f}"

    remaining = [s for s in pipeline.state.pending_skills if s not in batch]
    pipeline.state.pending_skills = tuple(remaining)
    return {"kind": "evaluation", "evaluated": batch, "outcomes": outcomes}


def _mining_phase(pipeline: Pipeline, config: CampaignConfig, branch: str) -> dict:
    if config.mining_mode == "workers":
        focus = [treemod.parse_path(p) for p in pipeline._priority_paths(branch)]
        result, failures = run_leaf_workers(
            pipeline, focus, provider_leaf_worker(pipeline), parallel=True
        )
        return {
            "kind": "mining-workers",
            "branch": branch,
            "merged": result.applied,
            "excluded": result.excluded + failures,
            "followups": len(result.followups),
        }
    report = pipeline.run_cycle(focus_branch=branch)
    return {
        "kind": "mining",
        "branch": branch,
        "cycle_index": report.cycle_index,
        "stages": [s.stage for s in report.stages],
        "skills_created": report.skills_created,
        "skills_verified": report.skills_verified,
    }


def run_campaign(
    pipeline: Pipeline,
    config: CampaignConfig,
    stop_after_phases: int | None = None,
) -> CampaignReport:
    """Alternate branch-focused mining with batched evaluation, checkpointing
    after every phase. ``stop_after_phases`` is the controlled-interruption
    hook used to exercise resume."""
    return _campaign_loop(
        pipeline,
        config,
        cursor=0,
        phases=[],
        completed_cycles=[],
        failures_in_row=0,
        stop_after_phases=stop_after_phases,
    )


def resume_campaign(
    pipeline: Pipeline, campaign_id: str, stop_after_phases: int | None = None
) -> CampaignReport:
    """Resume from the checkpoint; refuses when on-disk state has drifted."""
    checkpoint = load_checkpoint(pipeline, campaign_id)
    current_digest = state_digest(pipeline.root)
    if checkpoint.registry_digest != current_digest:
        raise DigestMismatchError(
            f"campaign {campaign_id}: registry digest mismatch "
            f"(checkpoint {checkpoint.registry_digest[:12]}, disk {current_digest[:12]})"
        )
    if checkpoint.tree_digest != _tree_digest(pipeline):
        raise DigestMismatchError(f"campaign {campaign_id}: tree snapshot digest mismatch")

    stored = checkpoint.config
    config = CampaignConfig(
        campaign_id=campaign_id,
        branch_schedule=tuple(stored["branch_schedule"]),
        cycles_per_branch=stored["cycles_per_branch"],
        eval_batch_size=stored.get("eval_batch_size"),
        failure_halt_limit=stored.get("failure_halt_limit"),
        mining_mode=stored.get("mining_mode", "cycle"),
    )
    pipeline.state.cycle_index = checkpoint.cycle_index
    pipeline.state.pending_skills = tuple(checkpoint.pending_skills)
    pipeline.gateway.import_counters(checkpoint.provider_counters)
    return _campaign_loop(
        pipeline,
        config,
        cursor=checkpoint.cursor,
        phases=list(checkpoint.phases),
        completed_cycles=list(checkpoint.completed_cycles),
        failures_in_row=checkpoint.failures_in_row,
        stop_after_phases=stop_after_phases,
    )


def _campaign_loop(
    pipeline: Pipeline,
    config: CampaignConfig,
    cursor: int,
    phases: list[dict],
    completed_cycles: list[int],
    failures_in_row: int,
    stop_after_phases: int | None,
) -> CampaignReport:
    plan = config.phase_plan()
    halt_limit = config.failure_halt_limit or pipeline.config.failure_halt_limit
    batch_size = config.eval_batch_size or pipeline.config.eval_batch_size

    while cursor < len(plan):
        kind, branch = plan[cursor]
        try:
            if kind == "mining":
                record = _mining_phase(pipeline, config, branch)
                if "cycle_index" in record:
                    completed_cycles.append(record["cycle_index"])
            else:
                record = _evaluation_phase(pipeline, batch_size)
                record["branch"] = branch
            failures_in_row = 0
        except Exception as exc:
            failures_in_row += 1
            record = {"kind": f"{kind}-failed", "branch": branch, "error": str(exc)}
            phases.append(record)
            cursor += 1
            checkpoint_campaign(pipeline, config, cursor, phases, completed_cycles, failures_in_row)
            if failures_in_row >= halt_limit:
                return CampaignReport(
                    campaign_id=config.campaign_id,
                    status="halted",
                    phases=phases,
                    completed_cycles=completed_cycles,
                )
            continue

        phases.append(record)
        cursor += 1
        checkpoint_campaign(pipeline, config, cursor, phases, completed_cycles, failures_in_row)
        if stop_after_phases is not None and cursor >= stop_after_phases:
            if cursor < len(plan):
                return CampaignReport(
                    campaign_id=config.campaign_id,
                    status="interrupted",
                    phases=phases,
                    completed_cycles=completed_cycles,
                )

    return CampaignReport(
        campaign_id=config.campaign_id,
        status="completed",
        phases=phases,
        completed_cycles=completed_cycles,
    )
