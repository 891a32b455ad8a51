"""Domain tree: parsing, structural operations, prioritization."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillmine import tree as treemod
from skillmine.errors import (
    DuplicatePathError,
    InvalidOperandError,
    OrphanParentError,
    PartitionError,
    TaxonomyParseError,
    TreeOperationError,
)


class StubView:
    """Minimal registry view for prioritization tests."""

    def __init__(self, cycle=1, statuses=None, confidences=None, activity=None):
        self.current_cycle = cycle
        self._statuses = statuses or {}
        self._confidences = confidences or {}
        self._activity = activity or {}

    def skill_status(self, skill_id):
        return self._statuses.get(skill_id)

    def skill_confidence(self, skill_id):
        return self._confidences.get(skill_id, "standard")

    def skill_activity_cycle(self, skill_id):
        return self._activity.get(skill_id, 0)

    def resource_activity_cycle(self, resource_id):
        return self._activity.get(resource_id, 0)


def p(text: str) -> treemod.NodePath:
    return treemod.parse_path(text)


# -- load_tree ----------------------------------------------------------------


def test_load_single_root_with_one_leaf():
    tree = treemod.load_tree("root\n  only-leaf *\n")
    assert len(tree.nodes) == 2
    leaf = tree.node(p("root/only-leaf"))
    assert leaf.kind == "leaf"
    assert leaf.coverage_flag == "uncovered"


def test_load_mini_taxonomy_counts(mini_taxonomy):
    tree = treemod.load_tree(mini_taxonomy)
    summary = treemod.coverage_summary(tree)
    assert summary["domains"] == 2
    assert summary["subdomains"] == 4
    assert summary["leaves"] == 6
    assert summary["uncovered"] == 6


def test_load_paper_shaped_taxonomy_counts():
    lines = ["science"]
    sub_total = 0
    for d in range(27):
        lines.append(f"  domain-{d:02d}")
        quota = 10 if d < 11 else 9
        for s in range(quota):
            sub_total += 1
            lines.append(f"    sub-{d:02d}-{s:02d}")
            lines.append(f"      leaf-{d:02d}-{s:02d} *")
    tree = treemod.load_tree("\n".join(lines) + "\n")
    summary = treemod.coverage_summary(tree)
    assert sub_total == 254
    assert summary["domains"] == 27
    assert summary["subdomains"] == 254


def test_load_rejects_child_before_parent():
    with pytest.raises(OrphanParentError):
        treemod.load_tree("root\n      too-deep *\n")


def test_load_rejects_duplicate_paths():
    with pytest.raises(DuplicatePathError):
        treemod.load_tree("root\n  a *\n  a *\n")


def test_load_rejects_multiple_roots():
    with pytest.raises(TaxonomyParseError):
        treemod.load_tree("root-a\nroot-b\n")


def test_load_rejects_children_under_leaves():
    with pytest.raises(TaxonomyParseError):
        treemod.load_tree("root\n  leafy *\n    nested *\n")


def test_load_reports_line_numbers():
    with pytest.raises(TaxonomyParseError) as excinfo:
        treemod.load_tree("root\n\tbad\n")
    assert excinfo.value.line == 2


# -- insert -------------------------------------------------------------------


@pytest.fixture
def tree(mini_taxonomy):
    return treemod.load_tree(mini_taxonomy)


def test_insert_leaf_appends_last_and_touches_nothing_else(tree):
    parent = p("science/genomics/alignment")
    before = {path: node for path, node in tree.nodes.items()}
    updated = treemod.insert_leaf(tree, parent, "pangenome-alignment")

    new_path = p("science/genomics/alignment/pangenome-alignment")
    assert updated.node(new_path).coverage_flag == "uncovered"
    assert updated.node(parent).children[-1] == new_path
    untouched = [path for path in before if path != parent]
    for path in untouched:
        assert updated.nodes[path] == before[path]


def test_insert_duplicate_leaf_rejected(tree):
    parent = p("science/genomics/alignment")
    with pytest.raises(InvalidOperandError):
        treemod.insert_leaf(tree, parent, "short-read-alignment")


def test_insert_under_leaf_rejected(tree):
    with pytest.raises(InvalidOperandError):
        treemod.insert_leaf(tree, p("science/genomics/alignment/variant-calling"), "sub")


def test_insert_then_link_verified_skill_covers_leaf(tree):
    parent = p("science/genomics/alignment")
    updated = treemod.insert_leaf(tree, parent, "new-leaf")
    leaf = p("science/genomics/alignment/new-leaf")
    assert updated.node(leaf).coverage_flag == "uncovered"
    updated = treemod.link_skill(updated, leaf, "s1")
    updated = treemod.record_verification(updated, leaf, "s1", "pass", cycle=1)
    node = updated.node(leaf)
    assert node.coverage_flag == "covered"
    assert treemod.compute_coverage(node) == "covered"


def test_coverage_partial_with_open_failure(tree):
    leaf = p("science/genomics/alignment/variant-calling")
    tree = treemod.link_skill(tree, leaf, "good")
    tree = treemod.link_skill(tree, leaf, "bad")
    tree = treemod.record_verification(tree, leaf, "good", "pass", 1)
    tree = treemod.record_verification(tree, leaf, "bad", "fail", 1)
    assert tree.node(leaf).coverage_flag == "partial"


# -- merge ---------------------------------------------------------------------


def test_merge_unions_links(tree):
    a = p("science/genomics/alignment/short-read-alignment")
    b = p("science/genomics/alignment/variant-calling")
    tree = treemod.link_skill(tree, a, "s1")
    tree = treemod.link_skill(tree, b, "s2")
    merged = treemod.merge_leaves(tree, a, b, surviving_path=b)
    assert merged.node(b).linked_skills == {"s1", "s2"}
    absorbed = merged.node(a)
    assert absorbed.status == "merged"
    assert absorbed.merged_into == b
    assert absorbed.linked_skills == frozenset()


def test_merge_self_rejected(tree):
    a = p("science/genomics/alignment/short-read-alignment")
    with pytest.raises(InvalidOperandError):
        treemod.merge_leaves(tree, a, a, surviving_path=a)


def test_merge_non_leaf_rejected(tree):
    with pytest.raises(InvalidOperandError):
        treemod.merge_leaves(
            tree,
            p("science/genomics/alignment"),
            p("science/genomics/alignment/variant-calling"),
            surviving_path=p("science/genomics/alignment"),
        )


def test_merge_already_merged_rejected(tree):
    a = p("science/genomics/alignment/short-read-alignment")
    b = p("science/genomics/alignment/variant-calling")
    c = p("science/genomics/annotation/cell-type-annotation")
    tree = treemod.merge_leaves(tree, a, b, surviving_path=b)
    with pytest.raises(InvalidOperandError):
        treemod.merge_leaves(tree, a, c, surviving_path=c)


# -- prune ----------------------------------------------------------------------


def test_prune_excludes_from_prioritization(tree):
    leaf = p("science/imaging/visualization/plot-rendering")
    tree = treemod.link_resource(tree, leaf, "r1")  # would otherwise score 3
    pruned = treemod.prune_leaf(tree, leaf, reason="stale")
    ranked = treemod.prioritize_branches(pruned, StubView(), k=10)
    assert all(entry.path != leaf for entry in ranked)


def test_prune_then_reinsert_starts_fresh(tree):
    leaf = p("science/imaging/visualization/plot-rendering")
    tree = treemod.link_skill(tree, leaf, "old-skill")
    tree = treemod.prune_leaf(tree, leaf, reason="stale")
    tree = treemod.insert_leaf(tree, leaf[:-1], "plot-rendering")
    node = tree.node(leaf)
    assert node.status == "active"
    assert node.linked_skills == frozenset()


def test_prune_twice_rejected(tree):
    leaf = p("science/imaging/visualization/plot-rendering")
    tree = treemod.prune_leaf(tree, leaf, reason="stale")
    with pytest.raises(InvalidOperandError):
        treemod.prune_leaf(tree, leaf, reason="again")


# -- split ---------------------------------------------------------------------


def test_split_partitions_exactly(tree):
    leaf = p("science/genomics/alignment/short-read-alignment")
    for skill in ("a", "b", "c"):
        tree = treemod.link_skill(tree, leaf, skill)
    split = treemod.split_branch(tree, leaf, [("solo", ["a"]), ("pair", ["b", "c"])])
    assert split.node(leaf).kind == "subdomain"
    assert split.node(leaf).linked_skills == frozenset()
    assert split.node(leaf + ("solo",)).linked_skills == {"a"}
    assert split.node(leaf + ("pair",)).linked_skills == {"b", "c"}
    before = {"a", "b", "c"}
    after = set().union(
        split.node(leaf + ("solo",)).linked_skills, split.node(leaf + ("pair",)).linked_skills
    )
    assert before == after


def test_split_missing_assignment_rejected(tree):
    leaf = p("science/genomics/alignment/short-read-alignment")
    for skill in ("a", "b", "c"):
        tree = treemod.link_skill(tree, leaf, skill)
    with pytest.raises(PartitionError):
        treemod.split_branch(tree, leaf, [("solo", ["a"]), ("pair", ["b"])])


def test_split_double_assignment_rejected(tree):
    leaf = p("science/genomics/alignment/short-read-alignment")
    tree = treemod.link_skill(tree, leaf, "a")
    with pytest.raises(PartitionError):
        treemod.split_branch(tree, leaf, [("x", ["a"]), ("y", ["a"])])


def test_split_children_recompute_coverage_independently(tree):
    leaf = p("science/genomics/alignment/short-read-alignment")
    tree = treemod.link_skill(tree, leaf, "good")
    tree = treemod.link_skill(tree, leaf, "untested")
    tree = treemod.record_verification(tree, leaf, "good", "pass", 1)
    split = treemod.split_branch(tree, leaf, [("good-side", ["good"]), ("raw-side", ["untested"])])
    good = split.node(leaf + ("good-side",))
    raw = split.node(leaf + ("raw-side",))
    assert good.coverage_flag == treemod.compute_coverage(good) == "covered"
    assert raw.coverage_flag == treemod.compute_coverage(raw) == "uncovered"


# -- prioritize -------------------------------------------------------------------


def test_prioritize_orders_by_documented_formula(tree):
    l1 = p("science/genomics/alignment/short-read-alignment")  # resources, no skills
    l2 = p("science/genomics/alignment/variant-calling")  # verified skill
    l3 = p("science/genomics/annotation/cell-type-annotation")  # repeated failures

    tree = treemod.link_resource(tree, l1, "r1")
    tree = treemod.link_resource(tree, l1, "r2")
    tree = treemod.link_resource(tree, l1, "r3")

    tree = treemod.link_skill(tree, l2, "solid")
    tree = treemod.record_verification(tree, l2, "solid", "pass", 1)

    tree = treemod.link_skill(tree, l3, "flaky")
    tree = treemod.record_verification(tree, l3, "flaky", "fail", 1)
    tree = treemod.record_verification(tree, l3, "flaky", "fail", 1)

    view = StubView(
        cycle=1,
        statuses={"solid": "verified", "flaky": "untested"},
        activity={"r1": 1, "r2": 1, "r3": 1, "solid": 1, "flaky": 1},
    )

    # Brute-force oracle: score each leaf by the documented formula.
    def oracle_score(node):
        score = 0.0
        verified = [s for s in node.linked_skills if view.skill_status(s) == "verified"]
        if node.linked_resources and not verified:
            score += 3
        fails = sum(
            1
            for _s, outcome, cycle in node.recent_verifications
            if outcome in ("fail", "error") and cycle >= view.current_cycle - 2
        )
        score += 2 * min(fails, 3)
        if node.linked_skills and all(
            view.skill_confidence(s) == "starter" for s in node.linked_skills
        ):
            score += 1
        return score

    ranked = treemod.prioritize_branches(tree, view, k=3)
    assert [entry.path for entry in ranked][:2] == [l3, l1]  # 4 > 3
    for entry in ranked:
        assert entry.score == oracle_score(tree.node(entry.path))
        if entry.score > 0:
            assert entry.reasons


def test_prioritize_zero_scores_tie_break_lexicographically(tree):
    view = StubView(cycle=1)
    ranked = treemod.prioritize_branches(tree, view, k=10)
    assert all(entry.score == 0 for entry in ranked)
    paths = [treemod.format_path(entry.path) for entry in ranked]
    assert paths == sorted(paths)
    assert all(entry.reasons == () for entry in ranked)


def test_prioritize_k_one_truncates(tree):
    view = StubView(cycle=1)
    ranked = treemod.prioritize_branches(tree, view, k=1)
    assert len(ranked) == 1


def test_prioritize_is_pure(tree):
    leaf = p("science/genomics/alignment/short-read-alignment")
    tree = treemod.link_resource(tree, leaf, "r1")
    view = StubView(cycle=2)
    first = treemod.prioritize_branches(tree, view, k=5)
    second = treemod.prioritize_branches(tree, view, k=5)
    assert first == second


def test_prioritize_review_status_zeroes_priority(tree):
    leaf = p("science/genomics/alignment/short-read-alignment")
    tree = treemod.link_resource(tree, leaf, "r1")
    hot = treemod.prioritize_branches(tree, StubView(), k=1)[0]
    assert hot.path == leaf and hot.score == 3
    cooled = treemod.set_node_status(tree, leaf, "review")
    top = treemod.prioritize_branches(cooled, StubView(), k=1)[0]
    assert top.path != leaf or top.score == 0


def test_stale_reason_after_inactivity(tree):
    view = StubView(cycle=6)
    ranked = treemod.prioritize_branches(tree, view, k=6)
    assert all(entry.score == 1 and entry.reasons == ("stale",) for entry in ranked)


def test_prioritize_requires_positive_k(tree):
    with pytest.raises(TreeOperationError):
        treemod.prioritize_branches(tree, StubView(), k=0)


# -- serialization round trip -----------------------------------------------------


def test_snapshot_round_trip(tree):
    leaf = p("science/genomics/alignment/short-read-alignment")
    tree = treemod.link_skill(tree, leaf, "s1")
    tree = treemod.record_verification(tree, leaf, "s1", "pass", 3)
    tree = treemod.merge_leaves(
        tree,
        p("science/imaging/microscopy/segmentation"),
        p("science/imaging/microscopy/deconvolution"),
        surviving_path=p("science/imaging/microscopy/segmentation"),
    )
    document = treemod.tree_to_document(tree)
    restored = treemod.tree_from_document(document)
    assert restored.nodes == dict(tree.nodes)
    assert treemod.check_invariants(restored) == []


@settings(max_examples=50, deadline=None)
@given(
    labels=st.lists(
        st.text(alphabet="abcdefgh", min_size=1, max_size=6), min_size=1, max_size=8, unique=True
    )
)
def test_insert_preserves_invariants(labels):
    tree = treemod.load_tree("root\n  seed *\n")
    parent = p("root")
    for label in labels:
        tree = treemod.insert_leaf(tree, parent, label)
    assert treemod.check_invariants(tree) == []
    assert len(tree.nodes) == 2 + len(labels)


def test_verification_history_bounded(tree):
    leaf = p("science/genomics/alignment/short-read-alignment")
    tree = treemod.link_skill(tree, leaf, "s1")
    for i in range(25):
        tree = treemod.record_verification(tree, leaf, "s1", "pass", i)
    assert len(tree.node(leaf).recent_verifications) == 10
