"""The cycle controller: tree_check -> resource_search -> skill_build ->
skill_test -> refresh, plus prompt-driven single-skill design.

Stages 1-4 only append to the record logs; refresh is the sole committer of
the tree snapshot, compacted indexes, and site summaries, under the writer
lock. Any stage error aborts the cycle before refresh, leaving shared state
digest-identical except for the append-only logs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from . import contracts as contractsmod
from . import novelty as noveltymod
from . import tree as treemod
from .config import EngineConfig
from .errors import (
    OutOfOrderStageError,
    PipelineError,
    RefreshAbortedError,
)
from .gateway import EffortProfile, Gateway, LiveProvider, MockProvider, StageResponse
from .harness import (
    SandboxConfig,
    SchedulerAdapter,
    SyntheticFixtures,
    ValidationHarness,
    needs_scheduler,
)
from .registry import (
    Registry,
    ResourceEntry,
    SkillEntry,
    VerificationRecord,
    open_registry,
    skill_id_for,
)
from .util import atomic_write_text, dump_json_doc, sha256_hex, slugify

STAGE_ORDER = ("tree_check", "resource_search", "skill_build", "skill_test", "refresh")

GRAVEYARD_DIR = "graveyard"
REPORTS_DIR = "reports"
SITE_STALE_MARKER = "site/.stale"


def leaf_slug_path(path: treemod.NodePath) -> str:
    return "/".join(slugify(label) for label in path)


def leaf_key(path: treemod.NodePath) -> str:
    return "--".join(slugify(label) for label in path)


@dataclass
class StageOutcome:
    stage: str
    digest: str
    duration_seconds: float
    summary: str

    def to_record(self) -> dict:
        return {
            "stage": self.stage,
            "digest": self.digest,
            "duration_seconds": self.duration_seconds,
            "summary": self.summary,
        }


@dataclass
class CycleReport:
    cycle_index: int
    stages: list[StageOutcome] = field(default_factory=list)
    skills_created: list[str] = field(default_factory=list)
    skills_verified: list[str] = field(default_factory=list)
    skills_removed: list[str] = field(default_factory=list)
    tree_edits: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    focus_branch: str | None = None

    def to_record(self) -> dict:
        return {
            "cycle_index": self.cycle_index,
            "stages": [s.to_record() for s in self.stages],
            "skills_created": self.skills_created,
            "skills_verified": self.skills_verified,
            "skills_removed": self.skills_removed,
            "tree_edits": self.tree_edits,
            "notes": self.notes,
            "focus_branch": self.focus_branch,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CycleReport":
        report = cls(cycle_index=record["cycle_index"], focus_branch=record.get("focus_branch"))
        report.stages = [
            StageOutcome(
                stage=s["stage"],
                digest=s["digest"],
                duration_seconds=s["duration_seconds"],
                summary=s["summary"],
            )
            for s in record["stages"]
        ]
        report.skills_created = list(record.get("skills_created", []))
        report.skills_verified = list(record.get("skills_verified", []))
        report.skills_removed = list(record.get("skills_removed", []))
        report.tree_edits = list(record.get("tree_edits", []))
        report.notes = list(record.get("notes", []))
        return report


@dataclass
class PipelineState:
    cycle_index: int = 1
    stage_cursor: str | None = None  # last completed stage; None means idle
    focus_leaves: tuple[str, ...] = ()
    pending_skills: tuple[str, ...] = ()
    budgets: dict = field(default_factory=dict)


@dataclass
class DesignReport:
    task_prompt: str
    skill_id: str | None
    status: str  # verified | failed
    resource_search_skipped: bool
    steps: list[str] = field(default_factory=list)
    verdict: str | None = None

    def to_record(self) -> dict:
        return {
            "task_prompt": self.task_prompt,
            "skill_id": self.skill_id,
            "status": self.status,
            "resource_search_skipped": self.resource_search_skipped,
            "steps": self.steps,
            "verdict": self.verdict,
        }


@dataclass
class _CycleScratch:
    """Per-cycle working set; cleared when the cycle completes or aborts."""

    resources: list[tuple[str, str]] = field(default_factory=list)  # (leaf, resource id)
    built: list[tuple[str, str]] = field(default_factory=list)  # (leaf, skill id)
    passed: list[str] = field(default_factory=list)
    flagged: list[tuple[str, str]] = field(default_factory=list)  # (skill id, reason)
    removed: list[tuple[str, str]] = field(default_factory=list)  # (leaf, skill id)
    untestable: list[str] = field(default_factory=list)
    proposed_edits: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    followups: list[dict] = field(default_factory=list)


class Pipeline:
    def __init__(
        self,
        config: EngineConfig,
        registry: Registry | None = None,
        tree: treemod.DomainTree | None = None,
        gateway: Gateway | None = None,
    ):
        self.config = config.validate()
        self.root = Path(config.registry_root)
        self.registry = registry or open_registry(self.root, lock_wait=config.lock_wait)
        loaded = tree or self.registry.load_tree_snapshot()
        if loaded is None:
            raise PipelineError(
                f"no tree snapshot at {self.root}; initialize the registry from a taxonomy first"
            )
        self.tree = loaded
        if gateway is None:
            if config.provider == "mock":
                provider = MockProvider(config.script_dir)
            else:
                provider = LiveProvider()
            gateway = Gateway(provider, self._effort_profile())
        self.gateway = gateway
        self.harness = ValidationHarness(
            sandbox_root=self.root / "sandbox",
            reports_root=self.root / REPORTS_DIR,
            deterministic=config.deterministic_clock,
            keep_sandboxes=config.keep_sandboxes,
        )
        self.state = PipelineState(
            budgets={
                "search_budget": config.search_budget,
                "repair_attempts": config.repair_attempts,
                "optimize_attempts": config.optimize_attempts,
            }
        )
        self._scratch = _CycleScratch()
        self._external_catalogs: dict[str, list[noveltymod.CatalogEntry]] | None = None
        self._last_verdicts: dict[str, str] = {}
        self._last_tree_edits: list[str] = []

    # -- construction ------------------------------------------------------------

    @classmethod
    def initialize(cls, config: EngineConfig, taxonomy_document: str, **kwargs) -> "Pipeline":
        """Fresh registry from a taxonomy document."""
        registry = open_registry(config.registry_root, lock_wait=config.lock_wait)
        tree = treemod.load_tree(taxonomy_document)
        registry.save_tree(tree)
        registry.compact_index(tree)
        return cls(config, registry=registry, tree=tree, **kwargs)

    # -- shared helpers ------------------------------------------------------------

    def _effort_profile(self) -> EffortProfile:
        profile = EffortProfile.default(self.config.model)
        if not self.config.efforts:
            return profile
        from .gateway import STAGE_KINDS

        assignments = dict(profile.assignments)
        for entry in self.config.efforts:
            parts = entry.split(":")
            if len(parts) != 3:
                raise PipelineError(f"effort override must be stage:model:level, got {entry!r}")
            stage, model, level = parts
            if stage not in STAGE_KINDS:
                raise PipelineError(f"effort override names unknown stage {stage!r}")
            assignments[stage] = (model, level)
        return EffortProfile(assignments=assignments)

    def repository_summary(self) -> str:
        summary = treemod.coverage_summary(self.tree)
        stats_skills = len([e for e in self.registry.skills() if e.status != "removed"])
        verified = len([e for e in self.registry.skills() if e.status == "verified"])
        return (
            f"cycle={self.state.cycle_index} skills={stats_skills} verified={verified} "
            f"resources={len(self.registry.resources())} leaves={summary['leaves']} "
            f"covered={summary['covered']}"
        )

    def _now(self) -> float:
        return 0.0 if self.config.deterministic_clock else time.monotonic()

    def _sandbox_config(self) -> SandboxConfig:
        return SandboxConfig(
            base_dir=self.harness.sandbox_root,
            timeout=self.config.smoke_timeout,
            keep=self.config.keep_sandboxes,
        )

    def external_catalogs(self) -> dict[str, list[noveltymod.CatalogEntry]]:
        if self._external_catalogs is None:
            self._external_catalogs = {
                path.stem: noveltymod.load_catalog_snapshot(path)
                for path in self.config.catalogs
            }
        return self._external_catalogs

    def _expected_stage(self) -> str:
        if self.state.stage_cursor is None:
            return STAGE_ORDER[0]
        index = STAGE_ORDER.index(self.state.stage_cursor)
        if index == len(STAGE_ORDER) - 1:
            return STAGE_ORDER[0]
        return STAGE_ORDER[index + 1]

    # -- stages ----------------------------------------------------------------------

    def run_stage(self, stage: str, focus_branch: str | None = None) -> StageOutcome:
        expected = self._expected_stage()
        if stage != expected:
            raise OutOfOrderStageError(
                f"stage {stage} requested but the next stage in order is {expected}"
            )
        started = self._now()
        runner = {
            "tree_check": self._stage_tree_check,
            "resource_search": self._stage_resource_search,
            "skill_build": self._stage_skill_build,
            "skill_test": self._stage_skill_test,
            "refresh": self._stage_refresh,
        }[stage]
        digest, summary = runner(focus_branch)
        outcome = StageOutcome(
            stage=stage,
            digest=digest,
            duration_seconds=(self._now() - started) if not self.config.deterministic_clock else 0.0,
            summary=summary,
        )
        self.state.stage_cursor = stage
        return outcome

    def _branch_key(self, focus_branch: str | None) -> str:
        return slugify(focus_branch) if focus_branch else "default"

    def _priority_paths(self, focus_branch: str | None) -> list[str]:
        view = self.registry.view(self.state.cycle_index)
        if focus_branch:
            prefix = treemod.parse_path(focus_branch)
            leaves = [
                n
                for n in self.tree.active_leaves()
                if n.path[: len(prefix)] == prefix
            ]
            scored = [treemod.score_leaf(n, view) for n in leaves]
            scored.sort(key=lambda p: (-p.score, treemod.format_path(p.path)))
            ranked = scored[: self.config.focus_k]
        else:
            ranked = treemod.prioritize_branches(self.tree, view, self.config.focus_k)
        return [treemod.format_path(p.path) for p in ranked]

    def _stage_tree_check(self, focus_branch: str | None) -> tuple[str, str]:
        context = {
            "repository_summary": self.repository_summary(),
            "objective": focus_branch or "expand under-covered leaves",
        }
        response = self.gateway.call("tree_check", context, key=self._branch_key(focus_branch))
        ranked = self._priority_paths(focus_branch)
        suggested = list(response.fields["focus_leaves"])
        ordered = [p for p in ranked if p in suggested]
        if not ordered:
            ordered = ranked[:1]
            if suggested:
                self._scratch.notes.append(
                    "focus disagreement: provider suggestions did not intersect priorities"
                )
        self.state.focus_leaves = tuple(ordered)
        self._scratch.proposed_edits = list(response.fields.get("proposed_edits", []))
        return response.digest(), f"focus={len(ordered)}"

    def _stage_resource_search(self, focus_branch: str | None) -> tuple[str, str]:
        context = {
            "repository_summary": self.repository_summary(),
            "focus_leaves": list(self.state.focus_leaves),
            "objective": "mine authoritative resources for the focus leaves",
        }
        response = self.gateway.call(
            "resource_search", context, key=self._branch_key(focus_branch)
        )
        rows = response.fields["resources"]
        by_leaf: dict[str, list[dict]] = {}
        for row in rows:
            by_leaf.setdefault(row["leaf_path"], []).append(row)

        recorded = 0
        exhausted = False
        budget = self.config.search_budget
        for leaf in sorted(by_leaf):
            offered = by_leaf[leaf]
            ranked = sorted(
                enumerate(offered), key=lambda pair: (-pair[1].get("authority_rank", 0), pair[0])
            )
            if len(ranked) > budget:
                exhausted = True
            for _idx, row in ranked[:budget]:
                receipt = self.registry.record_resource(
                    ResourceEntry(
                        id="",
                        kind=row["kind"],
                        locator=row["locator"],
                        leaf_paths=[leaf],
                        retrieved_cycle=self.state.cycle_index,
                        authority_rank=int(row.get("authority_rank", 0)),
                    )
                )
                self._scratch.resources.append((leaf, receipt.id))
                recorded += 1
        summary = f"recorded={recorded}" + (" budget-exhausted" if exhausted else "")
        return response.digest(), summary

    def _stage_skill_build(self, focus_branch: str | None) -> tuple[str, str]:
        del focus_branch
        digests: list[str] = []
        built = 0
        for leaf in self.state.focus_leaves:
            leaf_path = treemod.parse_path(leaf)
            resources = [
                self.registry.resource(rid).locator
                for l, rid in self._scratch.resources
                if l == leaf
            ]
            response = self.gateway.call(
                "skill_build",
                {
                    "target_leaf": leaf,
                    "objective": "compile executable skill packages for this leaf",
                    "resources": resources,
                },
                key=leaf_key(leaf_path),
            )
            digests.append(response.digest())
            for candidate in response.fields["candidates"][: self.config.candidate_cap]:
                if self._build_candidate(leaf, leaf_path, candidate):
                    built += 1
        digest = sha256_hex("".join(digests).encode("ascii")) if digests else sha256_hex(b"")
        return digest, f"built={built}"

    def _build_candidate(self, leaf: str, leaf_path: treemod.NodePath, candidate: dict) -> bool:
        name = candidate["name"]
        duplicate = any(
            e.leaf_path == leaf and e.name == name and e.status != "removed"
            for e in self.registry.skills()
        )
        if duplicate:
            self._scratch.notes.append(f"duplicate-candidate: {name} at {leaf}")
            return False

        contract = contractsmod.parse_contract(candidate)
        violations = contractsmod.contract_violations(contract)
        if not contract.provenance_links:
            violations.append("mined contract has empty provenance")
        if violations:
            self._scratch.notes.append(f"contract-violations: {name}: {'; '.join(violations)}")
            return False

        taken = {e.id for e in self.registry.skills()} | {sid for _l, sid in self._scratch.built}
        skill_id = skill_id_for(leaf, name, taken)
        package_rel = f"skills/{leaf_slug_path(leaf_path)}/{skill_id}"
        package = contractsmod.compile_package(
            contract, dict(candidate.get("artifacts", {})), self.root / package_rel, name=name
        )
        findings = contractsmod.lint_package(package)
        if findings:
            self._scratch.notes.append(f"lint-findings: {skill_id}: {'; '.join(findings)}")
            return False

        # Provenance links arrive as locators; map them onto recorded resource ids.
        provenance = []
        for link in contract.provenance_links:
            resource = self.registry.resource_by_locator(link)
            provenance.append(resource.id if resource else link)

        entry = SkillEntry(
            id=skill_id,
            name=name,
            leaf_path=leaf,
            status="untested",
            package_path=package_rel,
            smoke_target=contract.test_commands[0] if contract.test_commands else None,
            provenance=sorted(set(provenance)),
            created_cycle=self.state.cycle_index,
            updated_cycle=self.state.cycle_index,
            confidence="standard" if contract.test_commands else "starter",
        )
        self.registry.upsert_skill(entry)
        if not contract.test_commands:
            self._scratch.notes.append(f"missing-tests: {skill_id}")
        self._scratch.built.append((leaf, skill_id))
        return True

    def _stage_skill_test(self, focus_branch: str | None) -> tuple[str, str]:
        del focus_branch
        cycle = self.state.cycle_index
        summaries: list[str] = []
        for leaf, skill_id in self._scratch.built:
            entry = self.registry.skill(skill_id)
            package = contractsmod.load_package(self.root / entry.package_path)
            if entry.smoke_target is None:
                self._scratch.untestable.append(skill_id)
                summaries.append(f"{skill_id}:untestable")
                continue

            report = self.harness.execution_test(
                package, skill_id, self._sandbox_config(), attempt=1
            )
            self.registry.set_verification(
                skill_id,
                VerificationRecord(
                    skill_id=skill_id,
                    layer="execution",
                    outcome=report.verdict if report.verdict in ("pass", "fail") else "error",
                    attempt=1,
                    report_locator=report.report_locator,
                    cycle=cycle,
                ),
                promote=False,
            )
            if report.verdict != "pass":
                outcome = self.harness.repair_loop(
                    package,
                    skill_id,
                    report,
                    budget=self.config.repair_attempts,
                    gateway=self.gateway,
                    registry=self.registry,
                    cycle=cycle,
                    config=self._sandbox_config(),
                    promote=False,
                )
                if outcome.outcome == "removed":
                    self._scratch.removed.append((leaf, skill_id))
                    summaries.append(f"{skill_id}:removed")
                    continue
                package = contractsmod.load_package(self.root / entry.package_path)

            reason = self._layer_checks(package, skill_id)
            if reason is None:
                self._scratch.passed.append(skill_id)
                summaries.append(f"{skill_id}:pass")
            else:
                self._scratch.flagged.append((skill_id, reason))
                summaries.append(f"{skill_id}:flagged")
        digest = sha256_hex(";".join(summaries).encode("utf-8"))
        return digest, f"tested={len(self._scratch.built)}"

    def _layer_checks(self, package, skill_id: str) -> str | None:
        """Synthetic (always) and system (when applicable) checks after execution."""
        synthetic = self.harness.synthetic_test(
            package, skill_id, SyntheticFixtures(), attempt=1
        )
        if not synthetic.clean:
            if synthetic.error:
                return f"synthetic error: {synthetic.error}"
            if synthetic.stability != "stable":
                return "synthetic instability"
            if synthetic.coverage_gaps:
                return f"coverage gaps: {', '.join(synthetic.coverage_gaps)}"
            return f"missing outputs: {', '.join(synthetic.missing_outputs)}"
        if needs_scheduler(package):
            report = self.harness.system_test(package, skill_id, SchedulerAdapter(), attempt=1)
            self.registry.set_verification(
                skill_id,
                VerificationRecord(
                    skill_id=skill_id,
                    layer="system",
                    outcome=report.verdict if report.verdict in ("pass", "fail") else "error",
                    attempt=len(self.registry.verifications(skill_id, "system")) + 1,
                    report_locator=report.report_locator,
                    cycle=self.state.cycle_index,
                ),
                promote=False,
            )
            if report.verdict != "pass":
                return "system test failure"
        return None

    def _stage_refresh(self, focus_branch: str | None) -> tuple[str, str]:
        del focus_branch
        cycle = self.state.cycle_index
        scratch = self._scratch
        with self.registry.lock:
            tree = self.tree

            for leaf, resource_id in scratch.resources:
                tree = treemod.link_resource(tree, treemod.parse_path(leaf), resource_id)

            verdicts: dict[str, str] = {}
            for skill_id in sorted(scratch.passed):
                verdict = self._adjudicate(skill_id)
                tree = noveltymod.apply_verdict(tree, self.registry, verdict, cycle)
                verdicts[skill_id] = verdict.decision

            for skill_id, reason in sorted(scratch.flagged):
                noveltymod.promote_if_pending(self.registry, skill_id, cycle)
                self.registry.transition_skill(skill_id, "review", cycle)
                leaf = treemod.parse_path(self.registry.skill(skill_id).leaf_path)
                tree = treemod.link_skill(tree, leaf, skill_id)
                tree = treemod.record_verification(tree, leaf, skill_id, "fail", cycle)
                scratch.notes.append(f"review: {skill_id}: {reason}")

            for leaf, skill_id in sorted(scratch.removed):
                tree = treemod.record_verification(
                    tree, treemod.parse_path(leaf), skill_id, "fail", cycle
                )

            tree_edits: list[str] = []
            for edit in scratch.proposed_edits:
                applied = self._apply_proposed_edit(tree, edit)
                if applied is not None:
                    tree, description = applied
                    tree_edits.append(description)

            violations = self.registry.integrity_check(tree)
            if violations:
                raise RefreshAbortedError(
                    "refresh aborted by integrity violations: " + "; ".join(violations)
                )

            self.tree = tree
            self.registry.save_tree(tree)
            self.registry.compact_index(tree)
            atomic_write_text(self.root / SITE_STALE_MARKER, "stale\n")
            self._move_removed_to_graveyard()
            if scratch.followups:
                self._append_followups(scratch.followups)

            promoted = [
                s
                for s, d in sorted(verdicts.items())
                if self.registry.skill(s).status == "verified"
            ]
            self.state.pending_skills = tuple(
                sorted(set(self.state.pending_skills) | set(promoted))
            )
            self._last_verdicts = verdicts
            self._last_tree_edits = tree_edits
            digest = sha256_hex(
                dump_json_doc({"verdicts": verdicts, "edits": tree_edits}).encode("utf-8")
            )
            return digest, f"verdicts={len(verdicts)} edits={len(tree_edits)}"

    def _apply_proposed_edit(self, tree: treemod.DomainTree, edit: dict):
        """Provider-attributed tree edits from tree_check; invalid ones are skipped.

        Registry write-backs follow the refinement discipline: pruning
        deprecates or removes the leaf's skills first, merging and splitting
        relocate them to the surviving leaves.
        """
        cycle = self.state.cycle_index
        try:
            if edit.get("op") == "split":
                path = treemod.parse_path(edit["path"])
                partitions = [
                    (p["label"], list(p.get("skill_ids", []))) for p in edit["partitions"]
                ]
                tree = treemod.split_branch(tree, path, partitions)
                for label, skill_ids in partitions:
                    for skill_id in skill_ids:
                        self.registry.relocate_skill(
                            skill_id, treemod.format_path(path + (label,)), cycle
                        )
                return tree, f"split {edit['path']} into {len(partitions)} leaves"
            if edit.get("op") == "insert":
                parent = treemod.parse_path(edit["parent"])
                tree = treemod.insert_leaf(tree, parent, edit["label"])
                return tree, f"insert {edit['parent']}/{edit['label']}"
            if edit.get("op") == "prune":
                path = treemod.parse_path(edit["path"])
                self._retire_leaf_skills(tree.node(path), cycle)
                tree = treemod.prune_leaf(tree, path, reason=edit.get("reason", "provider"))
                return tree, f"prune {edit['path']}"
            if edit.get("op") == "merge":
                path_a = treemod.parse_path(edit["path_a"])
                path_b = treemod.parse_path(edit["path_b"])
                survivor = treemod.parse_path(edit["survivor"])
                absorbed = tree.node(path_a if survivor == path_b else path_b)
                tree = treemod.merge_leaves(tree, path_a, path_b, surviving_path=survivor)
                for skill_id in sorted(absorbed.linked_skills):
                    self.registry.relocate_skill(
                        skill_id, treemod.format_path(survivor), cycle
                    )
                return tree, f"merge {edit['path_a']} + {edit['path_b']} -> {edit['survivor']}"
        except Exception as exc:
            self._scratch.notes.append(f"proposed edit skipped: {exc}")
            return None
        self._scratch.notes.append(f"proposed edit skipped: unknown op {edit.get('op')!r}")
        return None

    def _retire_leaf_skills(self, node: treemod.TreeNode, cycle: int) -> None:
        """Deprecation records must exist before a prune commits."""
        for skill_id in sorted(node.linked_skills):
            status = self.registry.skill(skill_id).status
            if status in ("verified", "review"):
                self.registry.transition_skill(skill_id, "deprecated", cycle)
            elif status in ("untested", "repaired"):
                self.registry.transition_skill(skill_id, "removed", cycle)

    def _adjudicate(self, skill_id: str) -> noveltymod.NoveltyVerdict:
        entry = self.registry.skill(skill_id)
        package = contractsmod.load_package(self.root / entry.package_path)
        contract = package.contract()
        keywords = noveltymod.derive_keywords(contract)
        scope_text = noveltymod.candidate_scope_text(contract)
        try:
            scope_keywords = noveltymod.keywords_from_text(scope_text)
        except noveltymod.EmptyKeywordsError:
            scope_keywords = None

        local_entries = [
            e
            for e in noveltymod.local_catalog_entries(self.registry, self.root)
            if e.entry_ref != skill_id
        ]
        catalogs: dict[str, list[noveltymod.CatalogEntry]] = {"local": local_entries}
        catalogs.update(self.external_catalogs())
        matches = noveltymod.search_catalogs(
            catalogs,
            keywords,
            limit=self.config.novelty_match_limit,
            candidate_task_text=contract.task_scope,
            scope_keywords=scope_keywords,
            candidate_scope_text=scope_text,
        )
        provider_response: StageResponse | None = None
        if self.config.novelty_provider:
            provider_response = self.gateway.call(
                "novelty_check",
                {
                    "target_skill": skill_id,
                    "matches": [m.entry_ref for m in matches],
                },
                key=skill_id,
            )
        return noveltymod.adjudicate(contract, matches, provider_response, skill_id=skill_id)

    def _move_removed_to_graveyard(self) -> None:
        import shutil

        for entry in self.registry.skills():
            if entry.status != "removed" or not entry.package_path:
                continue
            source = self.root / entry.package_path
            if not source.exists():
                continue
            target = self.root / GRAVEYARD_DIR / entry.id
            if target.exists():
                shutil.rmtree(target)
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.move(str(source), str(target))

    def _append_followups(self, followups: list[dict]) -> None:
        from .util import canonical_json

        path = self.root / REPORTS_DIR / "followups.ndjson"
        existing = path.read_bytes() if path.exists() else b""
        lines = "".join(canonical_json(f) + "\n" for f in followups)
        from .util import atomic_write_bytes

        atomic_write_bytes(path, existing + lines.encode("utf-8"))

    # -- whole cycles --------------------------------------------------------------

    def run_cycle(self, focus_branch: str | None = None) -> CycleReport:
        if self.state.stage_cursor is not None:
            raise OutOfOrderStageError("run_cycle requires an idle pipeline")
        report = CycleReport(cycle_index=self.state.cycle_index, focus_branch=focus_branch)
        self._scratch = _CycleScratch()
        try:
            for stage in STAGE_ORDER:
                report.stages.append(self.run_stage(stage, focus_branch))
        except BaseException:
            # Abort: no shared-state commit happened (refresh raises before
            # committing); return to idle with the same cycle index.
            self.state.stage_cursor = None
            self.state.focus_leaves = ()
            self._scratch = _CycleScratch()
            raise

        report.skills_created = sorted(sid for _leaf, sid in self._scratch.built)
        report.skills_verified = [
            s for s in sorted(self._last_verdicts) if self.registry.skill(s).status == "verified"
        ]
        report.skills_removed = sorted(
            [sid for _leaf, sid in self._scratch.removed]
            + [s for s, d in self._last_verdicts.items() if d in ("redundant",)]
            + [
                s
                for s, d in self._last_verdicts.items()
                if d == "merge" and self.registry.skill(s).status == "removed"
            ]
        )
        report.tree_edits = list(self._last_tree_edits)
        report.notes = list(self._scratch.notes)

        self.state.stage_cursor = None
        self.state.focus_leaves = ()
        self.state.cycle_index += 1
        self._scratch = _CycleScratch()
        self._write_cycle_report(report)
        return report

    def refresh_state(self) -> StageOutcome:
        """Run the refresh stage by itself (stages 1-4 must be complete)."""
        return self.run_stage("refresh")

    def _write_cycle_report(self, report: CycleReport) -> None:
        path = self.root / REPORTS_DIR / "cycles" / f"cycle-{report.cycle_index:05d}.json"
        atomic_write_text(path, dump_json_doc(report.to_record()))

    def load_cycle_reports(self) -> list[CycleReport]:
        import json

        reports = []
        directory = self.root / REPORTS_DIR / "cycles"
        if directory.is_dir():
            for path in sorted(directory.glob("cycle-*.json")):
                reports.append(CycleReport.from_record(json.loads(path.read_text("utf-8"))))
        return reports

    # -- design mode -----------------------------------------------------------------

    def design_skill(self, task_prompt: str) -> DesignReport:
        """Prompt-driven synthesis of one skill through the same contract path."""
        if not task_prompt.strip():
            raise PipelineError("design_skill requires a non-empty task prompt")
        key = slugify(task_prompt)[:48]
        cycle = self.state.cycle_index
        steps: list[str] = []

        response = self.gateway.call(
            "design_skill",
            {
                "task_prompt": task_prompt,
                "repository_summary": self.repository_summary(),
            },
            key=key,
        )
        steps.append("design_skill")

        resources_used = response.fields["resources_used"]
        skipped_search = not resources_used
        provenance_ids: list[str] = []
        if skipped_search:
            steps.append("resource_search skipped: provider signaled no extra resources needed")
        else:
            for row in resources_used[: self.config.search_budget]:
                receipt = self.registry.record_resource(
                    ResourceEntry(
                        id="",
                        kind=row["kind"],
                        locator=row["locator"],
                        leaf_paths=[row["leaf_path"]],
                        retrieved_cycle=cycle,
                        authority_rank=int(row.get("authority_rank", 0)),
                    )
                )
                provenance_ids.append(receipt.id)
            steps.append(f"resource_search recorded={len(provenance_ids)}")

        contract_doc = dict(response.fields["contract"])
        if not contract_doc.get("provenance_links"):
            contract_doc["provenance_links"] = provenance_ids
        contract = contractsmod.parse_contract(contract_doc)
        name = contract_doc.get("name") or key
        leaf = response.fields.get("target_leaf") or self._default_design_leaf()
        leaf_path = treemod.parse_path(leaf)

        taken = {e.id for e in self.registry.skills()}
        skill_id = skill_id_for(leaf, name, taken)
        package_rel = f"skills/{leaf_slug_path(leaf_path)}/{skill_id}"
        package = contractsmod.compile_package(
            contract, dict(contract_doc.get("artifacts", {})), self.root / package_rel, name=name
        )
        self.registry.upsert_skill(
            SkillEntry(
                id=skill_id,
                name=name,
                leaf_path=leaf,
                status="untested",
                package_path=package_rel,
                smoke_target=contract.test_commands[0] if contract.test_commands else None,
                provenance=sorted(set(contract.provenance_links) | set(provenance_ids)),
                created_cycle=cycle,
                updated_cycle=cycle,
                confidence="standard" if contract.test_commands else "starter",
            )
        )
        steps.append(f"skill_build {skill_id}")

        report = self.harness.execution_test(package, skill_id, self._sandbox_config(), attempt=1)
        self.registry.set_verification(
            skill_id,
            VerificationRecord(
                skill_id=skill_id,
                layer="execution",
                outcome=report.verdict if report.verdict in ("pass", "fail") else "error",
                attempt=1,
                report_locator=report.report_locator,
                cycle=cycle,
            ),
            promote=False,
        )
        if report.verdict != "pass":
            outcome = self.harness.repair_loop(
                package,
                skill_id,
                report,
                budget=self.config.repair_attempts,
                gateway=self.gateway,
                registry=self.registry,
                cycle=cycle,
                config=self._sandbox_config(),
                promote=False,
            )
            steps.append(f"skill_test repair attempts={outcome.attempts}")
            if outcome.outcome == "removed":
                design = DesignReport(
                    task_prompt=task_prompt,
                    skill_id=skill_id,
                    status="failed",
                    resource_search_skipped=skipped_search,
                    steps=steps + ["skill removed after budget exhaustion"],
                )
                self._archive_design(key, design, response)
                return design
        steps.append("skill_test pass")

        # The verdict is applied through a refresh commit, the only committer.
        with self.registry.lock:
            verdict = self._adjudicate(skill_id)
            tree = noveltymod.apply_verdict(self.tree, self.registry, verdict, cycle)
            violations = self.registry.integrity_check(tree)
            if violations:
                raise RefreshAbortedError(
                    "design refresh aborted: " + "; ".join(violations)
                )
            self.tree = tree
            self.registry.save_tree(tree)
            self.registry.compact_index(tree)
            atomic_write_text(self.root / SITE_STALE_MARKER, "stale\n")
            self._move_removed_to_graveyard()
        steps.append(f"novelty_check verdict={verdict.decision}")

        status = (
            "verified" if self.registry.skill(skill_id).status == "verified" else "failed"
        )
        design = DesignReport(
            task_prompt=task_prompt,
            skill_id=skill_id,
            status=status,
            resource_search_skipped=skipped_search,
            steps=steps,
            verdict=verdict.decision,
        )
        self._archive_design(key, design, response)
        return design

    def _default_design_leaf(self) -> str:
        ranked = self._priority_paths(None)
        if not ranked:
            raise PipelineError("tree has no active leaves to attach a designed skill to")
        return ranked[0]

    def _archive_design(self, key: str, design: DesignReport, response: StageResponse) -> None:
        payload = {"report": design.to_record(), "response": dict(response.fields)}
        atomic_write_text(
            self.root / REPORTS_DIR / "design" / f"{key}.json", dump_json_doc(payload)
        )
