"""Hierarchical validation: execution, synthetic, system, and benchmark layers.

Every validation run is hermetic: commands execute in a private sandbox
directory with a scrubbed environment and a wall-clock timeout, and nothing is
written outside the sandbox and the append-only report tree. Sandboxes follow
``<base>/<skill-id>/<layer>/<attempt>/``.
"""

from __future__ import annotations

import fnmatch
import hashlib
import re
import shutil
import subprocess
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .contracts import (
    SkillPackage,
    load_package,
    resolve_smoke_target,
    tokenize_command,
)
from .errors import (
    AdapterConfigError,
    HarnessError,
    MissingFixtureError,
    NonNumericScoreError,
    NotApplicableError,
    PathEscapeError,
)
from .registry import Registry, VerificationRecord
from .util import (
    atomic_write_text,
    dump_json_doc,
    is_escaping_relpath,
    iter_files,
    normalize_output_bytes,
    sha256_hex,
)

JOB_ID_VAR = "SF_JOB_ID"
JOB_NAME_VAR = "SF_JOB_NAME"
NTASKS_VAR = "SF_NTASKS"

DEFAULT_TIMEOUT = 5.0
DEFAULT_ADVANTAGE_THRESHOLD = 0.05
DEFAULT_REPAIR_BUDGET = 3
DEFAULT_OPTIMIZE_BUDGET = 2

_BASE_ENV = {
    "PATH": "/usr/local/bin:/usr/bin:/bin",
    "LC_ALL": "C",
    "PYTHONDONTWRITEBYTECODE": "1",
    "PYTHONHASHSEED": "0",
    # Network denial is best-effort: proxies are disabled and no credentials
    # are passed through; enforcement depth is platform-dependent.
    "no_proxy": "*",
    "NO_PROXY": "*",
}


@dataclass
class SandboxConfig:
    base_dir: Path
    timeout: float = DEFAULT_TIMEOUT
    keep: bool = False
    volatile_patterns: tuple[str, ...] = ()
    extra_env: Mapping[str, str] = field(default_factory=dict)


@dataclass
class TestReport:
    skill_id: str
    layer: str
    command: str
    exit_status: int | None
    duration_seconds: float
    log_digest: str
    artifacts_digest: str
    verdict: str
    rendered_submission: str | None = None
    report_locator: str = ""

    def to_record(self) -> dict:
        record = {
            "skill_id": self.skill_id,
            "layer": self.layer,
            "command": self.command,
            "exit_status": self.exit_status,
            "duration_seconds": self.duration_seconds,
            "log_digest": self.log_digest,
            "artifacts_digest": self.artifacts_digest,
            "verdict": self.verdict,
        }
        if self.rendered_submission is not None:
            record["rendered_submission"] = self.rendered_submission
        return record


@dataclass
class SyntheticReport:
    skill_id: str
    contract_coverage: dict
    stability: str
    run_digests: tuple[str, str]
    error: str | None = None

    def to_record(self) -> dict:
        record = {
            "skill_id": self.skill_id,
            "contract_coverage": self.contract_coverage,
            "stability": self.stability,
            "run_digests": list(self.run_digests),
        }
        if self.error is not None:
            record["error"] = self.error
        return record

    @property
    def coverage_gaps(self) -> list[str]:
        inputs = self.contract_coverage.get("inputs", {})
        return sorted(name for name, state in inputs.items() if state == "ignored")

    @property
    def missing_outputs(self) -> list[str]:
        outputs = self.contract_coverage.get("outputs", {})
        return sorted(name for name, state in outputs.items() if state == "missing")

    @property
    def clean(self) -> bool:
        return (
            self.error is None
            and self.stability == "stable"
            and not self.coverage_gaps
            and not self.missing_outputs
        )


@dataclass
class BenchmarkReport:
    skill_id: str
    cases: list[tuple[str, float, float]]
    margin: float

    def to_record(self) -> dict:
        return {
            "skill_id": self.skill_id,
            "cases": [
                {"case_id": c, "with_skill_score": w, "baseline_score": b}
                for c, w, b in self.cases
            ],
            "margin": self.margin,
        }

    def is_weak(self, threshold: float = DEFAULT_ADVANTAGE_THRESHOLD) -> bool:
        return self.margin < threshold


@dataclass
class BenchmarkCase:
    case_id: str
    with_command: str
    baseline_command: str
    score_command: str
    fixtures: dict[str, str] = field(default_factory=dict)


@dataclass
class RepairOutcome:
    outcome: str  # repaired | removed
    attempts: int
    reports: list[TestReport] = field(default_factory=list)


@dataclass
class OptimizeOutcome:
    outcome: str  # optimized | review
    attempts: int
    margins: list[float] = field(default_factory=list)


@dataclass
class SyntheticFixtures:
    values: dict[str, str] = field(default_factory=dict)
    volatile_patterns: tuple[str, ...] = ()
    use_defaults: bool = True


@dataclass(frozen=True)
class SchedulerAdapter:
    """Simulated batch scheduler: renders submissions and runs them locally."""

    max_tasks: int = 8
    default_tasks: int = 1
    queue: str = "standard"

    def job_id_for(self, job_name: str) -> str:
        seed = int.from_bytes(hashlib.sha256(job_name.encode("utf-8")).digest()[:4], "big")
        return str(10000 + seed % 90000)

    def render_submission(self, job_name: str, command: str, ntasks: int) -> str:
        lines = [
            "# simulated batch submission",
            f"job-name={job_name}",
            f"ntasks={ntasks}",
            f"queue={self.queue}",
            f"command={command}",
        ]
        return "\n".join(lines) + "\n"


_SCHEDULER_HINT = re.compile(r"(^scheduler\b|slurm)", re.IGNORECASE)
_NTASKS_HINT = re.compile(r"ntasks\s*=\s*(\d+)")


def needs_scheduler(package: SkillPackage) -> bool:
    contract = package.contract()
    return any(_SCHEDULER_HINT.search(a) for a in contract.environment_assumptions)


def requested_tasks(package: SkillPackage, adapter: SchedulerAdapter) -> int:
    contract = package.contract()
    for assumption in contract.environment_assumptions:
        match = _NTASKS_HINT.search(assumption)
        if match:
            return int(match.group(1))
    return adapter.default_tasks


def _copy_package(package_root: Path, dest: Path) -> None:
    shutil.copytree(package_root, dest, dirs_exist_ok=True)


def _manifest(root: Path) -> dict[str, str]:
    return {
        p.relative_to(root).as_posix(): sha256_hex(p.read_bytes()) for p in iter_files(root)
    }


def _matches_any(rel: str, patterns: Sequence[str]) -> bool:
    return any(fnmatch.fnmatch(rel, pattern) for pattern in patterns)


class ValidationHarness:
    def __init__(
        self,
        sandbox_root: str | Path,
        reports_root: str | Path,
        deterministic: bool = True,
        keep_sandboxes: bool = False,
    ):
        self.sandbox_root = Path(sandbox_root)
        self.reports_root = Path(reports_root)
        self.deterministic = deterministic
        self.keep_sandboxes = keep_sandboxes

    # -- plumbing ---------------------------------------------------------------

    def _sandbox(self, skill_id: str, layer: str, attempt: int | str) -> Path:
        path = self.sandbox_root / skill_id / layer / str(attempt)
        if path.exists():
            shutil.rmtree(path)
        path.mkdir(parents=True)
        return path

    def _discard(self, skill_id: str) -> None:
        if self.keep_sandboxes:
            return
        target = self.sandbox_root / skill_id
        if target.exists():
            shutil.rmtree(target, ignore_errors=True)

    def _run(
        self,
        argv: list[str],
        cwd: Path,
        timeout: float,
        extra_env: Mapping[str, str] | None = None,
    ) -> tuple[int | None, bytes, float]:
        env = dict(_BASE_ENV)
        env["HOME"] = str(cwd)
        if extra_env:
            env.update(extra_env)
        start = time.monotonic()
        try:
            completed = subprocess.run(
                argv,
                cwd=cwd,
                env=env,
                capture_output=True,
                timeout=timeout,
            )
            exit_status: int | None = completed.returncode
            log = completed.stdout + completed.stderr
        except subprocess.TimeoutExpired as exc:
            exit_status = None
            log = (exc.stdout or b"") + (exc.stderr or b"") + b"\n[timeout]"
        except FileNotFoundError as exc:
            raise HarnessError(f"command not found: {exc.filename}") from None
        duration = 0.0 if self.deterministic else time.monotonic() - start
        return exit_status, log, duration

    def _write_report(self, report: TestReport, attempt: int) -> TestReport:
        rel = Path("verifications") / report.skill_id / report.layer / f"attempt-{attempt}.json"
        path = self.reports_root / rel
        report.report_locator = (Path("reports") / rel).as_posix()
        atomic_write_text(path, dump_json_doc(report.to_record()))
        return report

    def _artifacts_digest(self, sandbox: Path, volatile: Sequence[str]) -> str:
        digest = hashlib.sha256()
        for path in iter_files(sandbox):
            rel = path.relative_to(sandbox).as_posix()
            if _matches_any(rel, volatile):
                continue
            digest.update(rel.encode("utf-8"))
            digest.update(b"\x00")
            digest.update(sha256_hex(normalize_output_bytes(path.read_bytes())).encode("ascii"))
        return digest.hexdigest()

    # -- layer 1: execution -------------------------------------------------------

    def execution_test(
        self,
        package: SkillPackage,
        skill_id: str,
        config: SandboxConfig | None = None,
        attempt: int = 1,
    ) -> TestReport:
        """Run the smoke target in isolation; error is reserved for harness faults."""
        config = config or SandboxConfig(base_dir=self.sandbox_root)
        smoke = resolve_smoke_target(package, timeout=config.timeout)
        if smoke is None:
            report = TestReport(
                skill_id=skill_id,
                layer="execution",
                command="",
                exit_status=None,
                duration_seconds=0.0,
                log_digest=sha256_hex(b"[no smoke target]"),
                artifacts_digest="",
                verdict="error",
            )
            return self._write_report(report, attempt)

        sandbox = self._sandbox(skill_id, "execution", attempt)
        try:
            _copy_package(package.root_path, sandbox)
            workdir = sandbox / smoke.workdir
            exit_status, log, duration = self._run(
                smoke.argv(), workdir, smoke.timeout, config.extra_env
            )
        except HarnessError as exc:
            report = TestReport(
                skill_id=skill_id,
                layer="execution",
                command=smoke.command,
                exit_status=None,
                duration_seconds=0.0,
                log_digest=sha256_hex(str(exc).encode("utf-8")),
                artifacts_digest="",
                verdict="error",
            )
            return self._write_report(report, attempt)

        verdict = "pass" if exit_status == smoke.expected_exit else "fail"
        report = TestReport(
            skill_id=skill_id,
            layer="execution",
            command=smoke.command,
            exit_status=exit_status,
            duration_seconds=duration,
            log_digest=sha256_hex(normalize_output_bytes(log)),
            artifacts_digest=self._artifacts_digest(sandbox, config.volatile_patterns),
            verdict=verdict,
        )
        report = self._write_report(report, attempt)
        if not config.keep:
            shutil.rmtree(sandbox, ignore_errors=True)
        return report

    def repair_loop(
        self,
        package: SkillPackage,
        skill_id: str,
        failing_report: TestReport,
        budget: int,
        gateway,
        registry: Registry | None = None,
        cycle: int = 0,
        config: SandboxConfig | None = None,
        promote: bool = True,
    ) -> RepairOutcome:
        """Fix-and-retest until the smoke target passes or the budget is spent.

        The budget counts execution attempts including the initial failure, so
        budget=3 allows at most two fix/retest rounds after the first fail.
        """
        if failing_report.verdict not in ("fail", "error"):
            raise HarnessError("repair_loop requires a failing or errored report")
        if budget < 1:
            raise HarnessError("repair budget must be >= 1")
        config = config or SandboxConfig(base_dir=self.sandbox_root)

        workdir = self.sandbox_root / skill_id / "repair" / "work"
        if workdir.exists():
            shutil.rmtree(workdir)
        _copy_package(package.root_path, workdir)
        work_package = load_package(workdir)

        attempt = 1  # the failing report consumed attempt 1
        reports: list[TestReport] = [failing_report]
        last_log = f"verdict={failing_report.verdict} exit={failing_report.exit_status}"
        repaired_marked = False

        while attempt < budget:
            response = gateway.call(
                "layer1_fix",
                {
                    "target_skill": skill_id,
                    "failure_log": last_log,
                    "MODE": "cycle",
                },
                key=skill_id,
            )
            edits = response.fields["edits"]
            attempt += 1

            rejected = [e["path"] for e in edits if is_escaping_relpath(e["path"])]
            if rejected:
                # A rejected edit consumes the attempt without a rerun.
                report = TestReport(
                    skill_id=skill_id,
                    layer="execution",
                    command=failing_report.command,
                    exit_status=None,
                    duration_seconds=0.0,
                    log_digest=sha256_hex(
                        f"edit rejected (path escape): {', '.join(rejected)}".encode("utf-8")
                    ),
                    artifacts_digest="",
                    verdict="error",
                )
                report = self._write_report(report, attempt)
                reports.append(report)
                if registry is not None:
                    registry.set_verification(
                        skill_id,
                        VerificationRecord(
                            skill_id=skill_id,
                            layer="execution",
                            outcome="error",
                            attempt=attempt,
                            report_locator=report.report_locator,
                            cycle=cycle,
                        ),
                        promote=promote,
                    )
                last_log = "previous edit rejected: path escaped the package root"
                continue

            for edit in edits:
                target = workdir / edit["path"]
                atomic_write_text(target, edit["content"])
            if registry is not None and not repaired_marked:
                if registry.skill(skill_id).status == "untested":
                    registry.transition_skill(skill_id, "repaired", cycle)
                repaired_marked = True

            report = self.execution_test(work_package, skill_id, config, attempt=attempt)
            reports.append(report)
            if registry is not None:
                registry.set_verification(
                    skill_id,
                    VerificationRecord(
                        skill_id=skill_id,
                        layer="execution",
                        outcome=report.verdict if report.verdict in ("pass", "fail") else "error",
                        attempt=attempt,
                        report_locator=report.report_locator,
                        cycle=cycle,
                    ),
                    promote=promote,
                )
            if report.verdict == "pass":
                # Persist the repaired surface back into the real package.
                shutil.rmtree(package.root_path)
                shutil.copytree(workdir, package.root_path)
                self._discard(skill_id)
                return RepairOutcome(outcome="repaired", attempts=attempt, reports=reports)
            last_log = f"verdict={report.verdict} exit={report.exit_status}"

        if registry is not None:
            registry.transition_skill(skill_id, "removed", cycle)
        self._discard(skill_id)
        return RepairOutcome(outcome="removed", attempts=attempt, reports=reports)

    # -- synthetic ------------------------------------------------------------------

    def synthetic_test(
        self,
        package: SkillPackage,
        skill_id: str,
        fixtures: SyntheticFixtures | None = None,
        attempt: int = 1,
    ) -> SyntheticReport:
        """Invoke twice under fixed mock inputs; check coverage and stability."""
        fixtures = fixtures or SyntheticFixtures()
        contract = package.contract()

        command = None
        if contract.example_invocations:
            command = contract.example_invocations[0]
        elif contract.test_commands:
            command = contract.test_commands[0]
        if command is None:
            report = SyntheticReport(
                skill_id=skill_id,
                contract_coverage=self._empty_coverage(contract),
                stability="unstable",
                run_digests=("", ""),
                error="no invocation available for synthetic testing",
            )
            self._persist_synthetic(report, attempt)
            return report

        values: dict[str, str] = {}
        for item in contract.inputs:
            if item.name in fixtures.values:
                values[item.name] = fixtures.values[item.name]
            elif fixtures.use_defaults:
                values[item.name] = self._default_value(item)
            elif item.required:
                raise MissingFixtureError(f"no fixture value for required input {item.name}")

        try:
            baseline_a = self._synthetic_run(package, skill_id, command, values, fixtures, "run-1")
            baseline_b = self._synthetic_run(package, skill_id, command, values, fixtures, "run-2")
        except HarnessError as exc:
            report = SyntheticReport(
                skill_id=skill_id,
                contract_coverage=self._empty_coverage(contract),
                stability="unstable",
                run_digests=("", ""),
                error=str(exc),
            )
            self._persist_synthetic(report, attempt)
            return report

        digest_a, observed = baseline_a
        digest_b, _ = baseline_b
        stability = "stable" if digest_a == digest_b else "unstable"

        input_coverage: dict[str, str] = {}
        for item in contract.inputs:
            if not item.required:
                input_coverage[item.name] = "exercised"
                continue
            perturbed = dict(values)
            perturbed[item.name] = self._perturb(values[item.name])
            digest_p, _ = self._synthetic_run(
                package, skill_id, command, perturbed, fixtures, f"ablate-{item.name}"
            )
            input_coverage[item.name] = "ignored" if digest_p == digest_a else "exercised"

        coverage = {
            "inputs": input_coverage,
            "outputs": {
                o.name: ("observed" if observed.get(o.name) else "missing")
                for o in contract.outputs
            },
        }
        report = SyntheticReport(
            skill_id=skill_id,
            contract_coverage=coverage,
            stability=stability,
            run_digests=(digest_a, digest_b),
        )
        self._persist_synthetic(report, attempt)
        self._discard(skill_id)
        return report

    def _empty_coverage(self, contract) -> dict:
        return {
            "inputs": {i.name: "ignored" for i in contract.inputs},
            "outputs": {o.name: "missing" for o in contract.outputs},
        }

    def _persist_synthetic(self, report: SyntheticReport, attempt: int) -> None:
        rel = Path("verifications") / report.skill_id / "synthetic" / f"attempt-{attempt}.json"
        atomic_write_text(self.reports_root / rel, dump_json_doc(report.to_record()))

    @staticmethod
    def _default_value(item) -> str:
        if item.kind == "file":
            return ""
        text = f"{item.name} {item.description}".lower()
        if "numeric" in text or "number" in text:
            return "0"
        return "synthetic"

    @staticmethod
    def _perturb(value: str) -> str:
        if value.isdigit():
            return str(int(value) + 1)
        return value + "-alt" if value else "alt"

    def _synthetic_run(
        self,
        package: SkillPackage,
        skill_id: str,
        command: str,
        values: Mapping[str, str],
        fixtures: SyntheticFixtures,
        run_name: str,
    ) -> tuple[str, dict[str, bool]]:
        contract = package.contract()
        sandbox = self._sandbox(skill_id, "synthetic", run_name)
        _copy_package(package.root_path, sandbox)

        substitutions: dict[str, str] = {}
        for item in contract.inputs:
            if item.name not in values:
                continue
            if item.kind == "file":
                rel = f"inputs/{item.name}"
                atomic_write_text(sandbox / rel, values[item.name])
                substitutions[item.name] = rel
            else:
                substitutions[item.name] = values[item.name]

        rendered = command
        for name, value in substitutions.items():
            rendered = rendered.replace("{" + name + "}", value)
        argv = tokenize_command(rendered)

        before = _manifest(sandbox)
        exit_status, log, _duration = self._run(argv, sandbox, DEFAULT_TIMEOUT)
        if exit_status is None:
            raise HarnessError(f"synthetic invocation timed out: {rendered}")

        after = _manifest(sandbox)
        volatile = tuple(fixtures.volatile_patterns)
        changed: list[tuple[str, str]] = []
        for rel in sorted(after):
            if rel.startswith("inputs/") or _matches_any(rel, volatile):
                continue
            if before.get(rel) != after[rel]:
                normalized = sha256_hex(normalize_output_bytes((sandbox / rel).read_bytes()))
                changed.append((rel, normalized))

        digest = hashlib.sha256()
        digest.update(str(exit_status).encode("ascii"))
        digest.update(sha256_hex(normalize_output_bytes(log)).encode("ascii"))
        for rel, content_hash in changed:
            digest.update(rel.encode("utf-8"))
            digest.update(content_hash.encode("ascii"))

        observed: dict[str, bool] = {}
        for output in contract.outputs:
            if output.kind == "stream":
                observed[output.name] = bool(log.strip())
            else:
                observed[output.name] = (sandbox / output.name).is_file()
        return digest.hexdigest(), observed

    # -- system ---------------------------------------------------------------------

    def system_test(
        self,
        package: SkillPackage,
        skill_id: str,
        adapter: SchedulerAdapter,
        attempt: int = 1,
    ) -> TestReport:
        """Render a batch submission and execute it on the simulated backend."""
        if not isinstance(adapter, SchedulerAdapter):
            raise AdapterConfigError("system_test requires a SchedulerAdapter")
        if not needs_scheduler(package):
            raise NotApplicableError(
                f"package for {skill_id} declares no scheduler-dependent assumption"
            )
        smoke = resolve_smoke_target(package)
        if smoke is None:
            raise NotApplicableError(f"package for {skill_id} has no test command to submit")

        ntasks = requested_tasks(package, adapter)
        job_name = f"skill-{skill_id}"
        submission = adapter.render_submission(job_name, smoke.command, ntasks)

        if ntasks > adapter.max_tasks:
            report = TestReport(
                skill_id=skill_id,
                layer="system",
                command=smoke.command,
                exit_status=None,
                duration_seconds=0.0,
                log_digest=sha256_hex(
                    f"queue rejection: ntasks={ntasks} exceeds max={adapter.max_tasks}".encode()
                ),
                artifacts_digest="",
                verdict="fail",
                rendered_submission=submission,
            )
            return self._write_report(report, attempt)

        sandbox = self._sandbox(skill_id, "system", attempt)
        _copy_package(package.root_path, sandbox)
        atomic_write_text(sandbox / "submission.txt", submission)
        env = {
            JOB_ID_VAR: adapter.job_id_for(job_name),
            JOB_NAME_VAR: job_name,
            NTASKS_VAR: str(ntasks),
        }
        exit_status, log, duration = self._run(smoke.argv(), sandbox, smoke.timeout, env)
        report = TestReport(
            skill_id=skill_id,
            layer="system",
            command=smoke.command,
            exit_status=exit_status,
            duration_seconds=duration,
            log_digest=sha256_hex(normalize_output_bytes(log)),
            artifacts_digest=self._artifacts_digest(sandbox, ()),
            verdict="pass" if exit_status == smoke.expected_exit else "fail",
            rendered_submission=submission,
        )
        report = self._write_report(report, attempt)
        self._discard(skill_id)
        return report

    # -- layer 2: benchmark -------------------------------------------------------------

    def benchmark_compare(
        self,
        package: SkillPackage,
        cases: Sequence[BenchmarkCase],
        skill_id: str,
    ) -> BenchmarkReport:
        """Run with-skill and baseline arms per case and average the margin."""
        if not cases:
            raise HarnessError("benchmark_compare requires at least one case")
        seen = set()
        for case in cases:
            if case.case_id in seen:
                raise HarnessError(f"duplicate benchmark case id: {case.case_id}")
            seen.add(case.case_id)

        rows: list[tuple[str, float, float]] = []
        for case in cases:
            with_score = self._run_arm(package, skill_id, case, "with", case.with_command)
            base_score = self._run_arm(package, skill_id, case, "baseline", case.baseline_command)
            rows.append((case.case_id, with_score, base_score))

        margin = sum(w - b for _case, w, b in rows) / len(rows)
        self._discard(skill_id)
        return BenchmarkReport(skill_id=skill_id, cases=rows, margin=margin)

    def _run_arm(
        self,
        package: SkillPackage,
        skill_id: str,
        case: BenchmarkCase,
        arm: str,
        command: str,
    ) -> float:
        sandbox = self._sandbox(skill_id, "benchmark", f"{case.case_id}-{arm}")
        _copy_package(package.root_path, sandbox)
        for rel, content in case.fixtures.items():
            if is_escaping_relpath(rel):
                raise PathEscapeError(rel)
            atomic_write_text(sandbox / rel, content)

        exit_status, _log, _d = self._run(tokenize_command(command), sandbox, DEFAULT_TIMEOUT)
        if exit_status != 0:
            # A crashed arm scores zero for that arm; this is data, not an error.
            return 0.0

        score_exit, score_log, _d = self._run(
            tokenize_command(case.score_command), sandbox, DEFAULT_TIMEOUT
        )
        text = score_log.decode("utf-8", errors="replace").strip().split()
        if score_exit != 0 or not text:
            raise NonNumericScoreError(
                f"case {case.case_id} arm {arm}: scoring command produced no score"
            )
        try:
            score = float(text[0])
        except ValueError:
            raise NonNumericScoreError(
                f"case {case.case_id} arm {arm}: non-numeric score {text[0]!r}"
            ) from None
        if not 0.0 <= score <= 1.0:
            raise NonNumericScoreError(
                f"case {case.case_id} arm {arm}: score {score} outside [0, 1]"
            )
        return score

    def optimize_loop(
        self,
        package: SkillPackage,
        skill_id: str,
        weak_report: BenchmarkReport,
        budget: int,
        gateway,
        cases: Sequence[BenchmarkCase],
        registry: Registry | None = None,
        cycle: int = 0,
        threshold: float = DEFAULT_ADVANTAGE_THRESHOLD,
    ) -> OptimizeOutcome:
        """Revise and re-benchmark; exhaustion marks the skill review, not removed."""
        if weak_report.margin >= threshold:
            raise HarnessError("optimize_loop requires a weak benchmark report")
        if budget < 1:
            raise HarnessError("optimize budget must be >= 1")

        margins: list[float] = []
        for attempt in range(1, budget + 1):
            response = gateway.call(
                "layer2_optimize",
                {
                    "target_skill": skill_id,
                    "benchmark_results": f"margin={weak_report.margin:.4f}",
                },
                key=skill_id,
            )
            actions = response.fields["actions"]
            backup = self.sandbox_root / skill_id / "optimize" / f"backup-{attempt}"
            if backup.exists():
                shutil.rmtree(backup)
            shutil.copytree(package.root_path, backup)

            bad_paths = [a["path"] for a in actions if is_escaping_relpath(a["path"])]
            if bad_paths:
                margins.append(weak_report.margin)
                continue
            for action in actions:
                atomic_write_text(package.root_path / action["path"], action["content"])

            guard = self.execution_test(package, skill_id, attempt=100 + attempt)
            if guard.verdict != "pass":
                # The optimization broke the smoke surface; restore and move on.
                shutil.rmtree(package.root_path)
                shutil.copytree(backup, package.root_path)
                margins.append(weak_report.margin)
                continue

            report = self.benchmark_compare(package, cases, skill_id)
            margins.append(report.margin)
            if not report.is_weak(threshold):
                self._discard(skill_id)
                return OptimizeOutcome(outcome="optimized", attempts=attempt, margins=margins)
            weak_report = report

        if registry is not None and registry.skill(skill_id).status == "verified":
            registry.transition_skill(skill_id, "review", cycle)
        self._discard(skill_id)
        return OptimizeOutcome(outcome="review", attempts=budget, margins=margins)


def load_benchmark_cases(path: Path) -> list[BenchmarkCase]:
    """Read the external benchmark case file format."""
    import json

    try:
        document = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise HarnessError(f"unreadable benchmark case file {path}: {exc}") from None
    cases = []
    for row in document.get("cases", []):
        fixtures = dict(row.get("fixtures", {}))
        for src in row.get("fixture_paths", []):
            source = (path.parent / src).resolve()
            fixtures[Path(src).name] = source.read_text("utf-8")
        cases.append(
            BenchmarkCase(
                case_id=row["id"],
                with_command=row["with_command"],
                baseline_command=row["baseline_command"],
                score_command=row["score_command"],
                fixtures=fixtures,
            )
        )
    return cases
