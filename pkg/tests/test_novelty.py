"""Novelty review: keywords, catalog search, the decision ladder, write-back."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillmine import novelty
from skillmine import tree as treemod
from skillmine.contracts import SkillContract
from skillmine.errors import CatalogReadError, EmptyKeywordsError
from skillmine.registry import SkillEntry, VerificationRecord, open_registry


def contract(scope: str, steps: tuple[str, ...] = ()) -> SkillContract:
    return SkillContract(task_scope=scope, execution_steps=steps, provenance_links=("res-1",))


def entry(catalog_id, ref, task, scope=""):
    return novelty.CatalogEntry(
        catalog_id=catalog_id, entry_ref=ref, task_description=task, scope_summary=scope
    )


# -- keywords ---------------------------------------------------------------------


def test_derive_keywords_matches_hand_application():
    keywords = novelty.derive_keywords(contract("Annotate cell types in spatial data"))
    assert keywords.terms == (
        "annotate",
        "cell",
        "types",
        "spatial",
        "data",
        "annotate cell",
        "cell types",
        "types spatial",
        "spatial data",
    )


def test_derive_keywords_stop_words_only_is_an_error():
    with pytest.raises(EmptyKeywordsError):
        novelty.derive_keywords(contract("the and of which"))


def test_derive_keywords_deterministic():
    a = novelty.derive_keywords(contract("Align reads against a reference"))
    b = novelty.derive_keywords(contract("Align reads against a reference"))
    assert a == b


@settings(max_examples=40, deadline=None)
@given(
    words=st.lists(
        st.sampled_from(["align", "reads", "cells", "label", "the", "graph", "of", "spatial"]),
        min_size=1,
        max_size=8,
    )
)
def test_keywords_pure_and_lowercase(words):
    text = " ".join(words)
    try:
        keywords = novelty.keywords_from_text(text)
    except EmptyKeywordsError:
        assert all(w in novelty.STOP_WORDS for w in words)
        return
    assert keywords == novelty.keywords_from_text(text)
    assert all(term == term.lower() for term in keywords.terms)


# -- search ------------------------------------------------------------------------


def test_exact_match_classifies_same_task_same_scope():
    candidate = contract("Dock molecules into binding pockets", ("prepare grid then dock",))
    keywords = novelty.derive_keywords(candidate)
    catalogs = {
        "hub": [
            entry(
                "hub",
                "hub/docker",
                "Dock molecules into binding pockets",
                "prepare grid then dock",
            )
        ]
    }
    matches = novelty.search_catalogs(
        catalogs,
        keywords,
        limit=5,
        candidate_task_text=candidate.task_scope,
        candidate_scope_text="prepare grid then dock",
    )
    assert len(matches) == 1
    assert matches[0].overlap == "same_task_same_scope"


def test_same_task_different_scope():
    candidate = contract(
        "Dock molecules into binding pockets", ("enumerate torsions with genetic search",)
    )
    keywords = novelty.derive_keywords(candidate)
    catalogs = {
        "hub": [
            entry(
                "hub",
                "hub/docker",
                "Dock molecules into binding pockets",
                "grid preparation followed by pose ranking heuristics",
            )
        ]
    }
    matches = novelty.search_catalogs(
        catalogs,
        keywords,
        limit=5,
        candidate_task_text=candidate.task_scope,
        scope_keywords=novelty.keywords_from_text("enumerate torsions with genetic search"),
        candidate_scope_text="enumerate torsions with genetic search",
    )
    assert matches[0].overlap == "same_task_diff_scope"


def test_empty_catalogs_empty_matches():
    keywords = novelty.keywords_from_text("count rows")
    assert novelty.search_catalogs({}, keywords, limit=5) == []


def test_unreadable_catalog_snapshot(tmp_path):
    with pytest.raises(CatalogReadError):
        novelty.load_catalog_snapshot(tmp_path / "absent.ndjson")


def test_catalog_snapshot_round_trip(fixtures_dir):
    entries = novelty.load_catalog_snapshot(fixtures_dir / "catalog_hub.ndjson")
    assert len(entries) == 20
    assert all(e.catalog_id == "catalog_hub" for e in entries)
    assert entries[0].entry_ref.startswith("hub/")


# -- ladder -------------------------------------------------------------------------


def test_zero_matches_is_novel():
    verdict = novelty.adjudicate(contract("Brand new capability"), [], skill_id="s1")
    assert verdict.decision == "novel"


def test_same_task_same_scope_is_redundant():
    match = novelty.CatalogMatch(
        catalog_id="hub",
        entry_ref="hub/x",
        entry_task_description="t",
        entry_scope_summary="s",
        overlap="same_task_same_scope",
    )
    verdict = novelty.adjudicate(contract("t"), [match], skill_id="s1")
    assert verdict.decision == "redundant"
    assert verdict.supporting_matches == (match,)


def test_provider_downgrades_merge_to_review():
    match = novelty.CatalogMatch(
        catalog_id="hub",
        entry_ref="hub/x",
        entry_task_description="t",
        entry_scope_summary="s",
        overlap="same_task_diff_scope",
    )
    verdict = novelty.adjudicate(
        contract("t"),
        [match],
        provider_response={"decision": "review", "matches": [], "rationale": "uncertain"},
        skill_id="s1",
    )
    assert verdict.decision == "review"


def test_provider_cannot_upgrade_redundant():
    match = novelty.CatalogMatch(
        catalog_id="hub",
        entry_ref="hub/x",
        entry_task_description="t",
        entry_scope_summary="s",
        overlap="same_task_same_scope",
    )
    verdict = novelty.adjudicate(
        contract("t"),
        [match],
        provider_response={"decision": "novel", "matches": [], "rationale": "looks fresh"},
        skill_id="s1",
    )
    assert verdict.decision == "redundant"


def oracle_decision(matches) -> str:
    """Brute-force restatement of the three ladder rules."""
    if any(m.overlap == "same_task_same_scope" for m in matches):
        return "redundant"
    if any(m.overlap == "same_task_diff_scope" for m in matches):
        return "merge"
    return "novel"


@settings(max_examples=80, deadline=None)
@given(
    overlaps=st.lists(
        st.sampled_from(["same_task_same_scope", "same_task_diff_scope", "related"]), max_size=6
    )
)
def test_ladder_is_total_and_matches_oracle(overlaps):
    matches = [
        novelty.CatalogMatch(
            catalog_id="hub",
            entry_ref=f"hub/e{i}",
            entry_task_description="t",
            entry_scope_summary="s",
            overlap=overlap,
        )
        for i, overlap in enumerate(overlaps)
    ]
    verdict = novelty.adjudicate(contract("anything useful"), matches, skill_id="s1")
    assert verdict.decision == oracle_decision(matches)


# -- write-back ----------------------------------------------------------------------


@pytest.fixture
def setup(tmp_path):
    tree = treemod.load_tree("root\n  alpha\n    one *\n    two *\n")
    registry = open_registry(tmp_path / "library")
    return tree, registry


def seed_verified(registry, skill_id, leaf="root/alpha/one", provenance=("res-a",)):
    registry.upsert_skill(
        SkillEntry(
            id=skill_id,
            name=skill_id,
            leaf_path=leaf,
            status="untested",
            package_path=f"skills/{skill_id}",
            provenance=list(provenance),
        )
    )
    registry.set_verification(
        skill_id,
        VerificationRecord(skill_id=skill_id, layer="execution", outcome="pass", attempt=1, cycle=1),
    )


def verdict_for(skill_id, decision, matches=()):
    return novelty.NoveltyVerdict(
        skill_id=skill_id, decision=decision, rationale="test", supporting_matches=tuple(matches)
    )


def test_apply_novel_links_leaf_and_keeps_verified(setup):
    tree, registry = setup
    seed_verified(registry, "fresh")
    count_before = len(registry.skills())
    tree = novelty.apply_verdict(tree, registry, verdict_for("fresh", "novel"), cycle=2)
    assert registry.skill("fresh").status == "verified"
    assert "fresh" in tree.node(treemod.parse_path("root/alpha/one")).linked_skills
    assert len(registry.skills()) == count_before
    assert registry.integrity_check(tree) == []


def test_apply_novel_inserts_missing_leaf(setup):
    tree, registry = setup
    seed_verified(registry, "pioneer", leaf="root/alpha/three")
    tree = novelty.apply_verdict(tree, registry, verdict_for("pioneer", "novel"), cycle=2)
    node = tree.node(treemod.parse_path("root/alpha/three"))
    assert node.kind == "leaf"
    assert node.coverage_flag == "covered"


def test_apply_redundant_removes_skill_tree_untouched(setup):
    tree, registry = setup
    seed_verified(registry, "copycat")
    before = dict(tree.nodes)
    tree = novelty.apply_verdict(tree, registry, verdict_for("copycat", "redundant"), cycle=2)
    assert registry.skill("copycat").status == "removed"
    assert dict(tree.nodes) == before


def test_apply_merge_unions_provenance_into_local_survivor(setup):
    tree, registry = setup
    seed_verified(registry, "older", provenance=("res-old",))
    tree = novelty.apply_verdict(tree, registry, verdict_for("older", "novel"), cycle=1)
    seed_verified(registry, "newer", provenance=("res-new",))
    match = novelty.CatalogMatch(
        catalog_id="local",
        entry_ref="older",
        entry_task_description="t",
        entry_scope_summary="s",
        overlap="same_task_diff_scope",
    )
    tree = novelty.apply_verdict(tree, registry, verdict_for("newer", "merge", [match]), cycle=2)
    assert registry.skill("newer").status == "removed"
    assert registry.skill("newer").merged_into == "older"
    assert registry.skill("older").provenance == ["res-new", "res-old"]
    assert registry.integrity_check(tree) == []


def test_apply_merge_with_external_match_keeps_candidate(setup):
    tree, registry = setup
    seed_verified(registry, "keeper")
    match = novelty.CatalogMatch(
        catalog_id="hub",
        entry_ref="https://hub.example.org/twin",
        entry_task_description="t",
        entry_scope_summary="s",
        overlap="same_task_diff_scope",
    )
    tree = novelty.apply_verdict(tree, registry, verdict_for("keeper", "merge", [match]), cycle=2)
    keeper = registry.skill("keeper")
    assert keeper.status == "verified"
    recorded = registry.resource_by_locator("https://hub.example.org/twin")
    assert recorded is not None
    assert recorded.id in keeper.provenance
    assert registry.integrity_check(tree) == []


def test_apply_review_zeroes_leaf_priority(setup):
    tree, registry = setup
    seed_verified(registry, "suspect")
    tree = novelty.apply_verdict(tree, registry, verdict_for("suspect", "review"), cycle=2)
    assert registry.skill("suspect").status == "review"
    assert tree.node(treemod.parse_path("root/alpha/one")).status == "review"
