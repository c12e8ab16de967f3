"""Aggregation-tree construction, relations, A-matrix layout, and loaders.

The oracle here is deliberately naive: relations are recomputed from the
raw edge dictionary by set walks, and A rows are rebuilt by recursion,
so any indexing mistake in the package shows up as a disagreement.
"""

import numpy as np
import pytest

from treekern import tree as tr
from treekern.errors import (
    CycleDetected,
    DimensionMismatch,
    DisconnectedNode,
    LeafOrderMismatch,
    MultipleRoots,
    UnknownNode,
    ValidationError,
)

FIG1_PAIRS = [
    ("7", "8"), ("2", "8"), ("3", "8"),
    ("1", "7"), ("6", "7"),
    ("4", "6"), ("5", "6"),
]
FIG1_LEAVES = ["1", "2", "3", "4", "5"]


def fig1():
    return tr.build_from_parent_list(FIG1_PAIRS, FIG1_LEAVES)


# ---------------------------------------------------------------- oracle

def oracle_relations(pairs, node):
    parent = {c: p for c, p in pairs if p not in (None, "")}
    children = {}
    for c, p in parent.items():
        children.setdefault(p, []).append(c)
    an = []
    u = node
    while u in parent:
        u = parent[u]
        an.append(u)
    de = []
    stack = list(children.get(node, []))
    while stack:
        u = stack.pop()
        de.append(u)
        stack.extend(children.get(u, []))
    sib = [c for c in children.get(parent.get(node, None), []) if c != node]
    le = [d for d in de + [node] if d not in children]
    return {
        "pa": set(an[:1]),
        "an": set(an),
        "de": set(de),
        "sib": set(sib),
        "le": set(le),
    }


def oracle_a_row(pairs, leaf_order, node):
    rel = oracle_relations(pairs, node)
    row = np.zeros(len(leaf_order), dtype=int)
    for leaf in rel["le"]:
        row[leaf_order.index(leaf)] = 1
    return row


def random_tree_pairs(rng, p):
    """Recursively partition leaf columns into blocks of >= 2 children."""
    leaves = [f"x{j}" for j in range(1, p + 1)]
    pairs = []
    counter = [0]

    def grow(block):
        if len(block) == 1:
            return block[0]
        counter[0] += 1
        name = f"n{counter[0]}"
        k = int(rng.integers(2, min(4, len(block)) + 1))
        cuts = sorted(rng.choice(np.arange(1, len(block)), size=k - 1, replace=False))
        parts = np.split(np.asarray(block, dtype=object), cuts)
        for part in parts:
            child = grow(list(part))
            pairs.append((child, name))
        return name

    grow(leaves)
    return pairs, leaves


# ------------------------------------------------------- worked examples

def test_fig1_a_matrix_rows():
    t = fig1()
    assert t.node_count == 8 and t.leaf_count == 5
    assert t.names == ["1", "2", "3", "4", "5", "6", "7", "8"]
    np.testing.assert_array_equal(t.A[:5], np.eye(5, dtype=np.int8))
    np.testing.assert_array_equal(t.A[5], [0, 0, 0, 1, 1])
    np.testing.assert_array_equal(t.A[6], [1, 0, 0, 1, 1])
    np.testing.assert_array_equal(t.A[7], [1, 1, 1, 1, 1])


def test_single_leaf_identity():
    t = tr.build_from_parent_list([("x", None)], ["x"])
    assert t.node_count == 1 and t.leaf_count == 1
    np.testing.assert_array_equal(t.A, [[1]])


def test_single_child_chain_collapses():
    t = tr.build_from_parent_list([("a", "root"), ("leaf", "a")], ["leaf"])
    assert t.node_count == 2
    assert set(t.names) == {"root", "leaf"}
    np.testing.assert_array_equal(t.A, [[1], [1]])


def test_relations_node7():
    rel = fig1().relations("7")
    assert rel.le == {"1", "4", "5"}
    assert rel.sib == {"2", "3"}
    assert rel.de == {"1", "6", "4", "5"}


def test_relations_root_and_leaf():
    t = fig1()
    root = t.relations("8")
    assert root.an == frozenset() and root.sib == frozenset() and root.pa == frozenset()
    leaf = t.relations("4")
    assert leaf.pa == {"6"} and leaf.le == {"4"}


def test_relations_unknown_node():
    with pytest.raises(UnknownNode):
        fig1().relations("99")


def test_aggregate_fig1_row():
    t = fig1()
    X = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
    Xt = t.aggregate(X)
    assert Xt[0, 5] == 9 and Xt[0, 6] == 10 and Xt[0, 7] == 15
    np.testing.assert_array_equal(Xt[0, :5], X[0])


def test_aggregate_zero_and_shape_error():
    t = fig1()
    np.testing.assert_array_equal(t.aggregate(np.zeros((3, 5))), np.zeros((3, 8)))
    with pytest.raises(DimensionMismatch):
        t.aggregate(np.zeros((3, 4)))


# ------------------------------------------------------ validation errors

def test_cycle_detected():
    with pytest.raises(CycleDetected):
        tr.build_from_parent_list(
            [("a", "b"), ("b", "a"), ("leaf", "a")], ["leaf"]
        )


def test_multiple_roots():
    with pytest.raises(MultipleRoots):
        tr.build_from_parent_list([("a", "r1"), ("b", "r2")], ["a", "b"])


def test_disconnected_node():
    with pytest.raises(DisconnectedNode):
        tr.build_from_parent_list(
            [("r", None), ("a", "r"), ("b", "r"), ("c", "s")],
            ["a", "b", "c"],
        )


def test_leaf_order_mismatch():
    with pytest.raises(LeafOrderMismatch):
        tr.build_from_parent_list(FIG1_PAIRS, ["1", "2", "3", "4"])
    with pytest.raises(LeafOrderMismatch):
        tr.build_from_parent_list(FIG1_PAIRS, ["1", "2", "3", "4", "6"])


# ------------------------------------------------- randomized vs. oracle

def test_random_trees_match_oracle():
    rng = np.random.default_rng(20240817)
    for _ in range(25):
        p = int(rng.integers(2, 12))
        pairs, leaves = random_tree_pairs(rng, p)
        t = tr.build_from_parent_list(pairs, leaves)
        for nm in t.names:
            rel = t.relations(nm)
            want = oracle_relations(pairs, nm)
            assert set(rel.le) == want["le"], nm
            assert set(rel.an) == want["an"], nm
            assert set(rel.de) == want["de"], nm
            assert set(rel.sib) == want["sib"], nm
            np.testing.assert_array_equal(
                t.A[t.index[nm]], oracle_a_row(pairs, leaves, nm)
            )


def test_aggregate_linearity_and_child_sums():
    rng = np.random.default_rng(7)
    pairs, leaves = random_tree_pairs(rng, 9)
    t = tr.build_from_parent_list(pairs, leaves)
    X1 = rng.normal(size=(6, 9))
    X2 = rng.normal(size=(6, 9))
    a, b = 1.7, -0.3
    lhs = t.aggregate(a * X1 + b * X2)
    rhs = a * t.aggregate(X1) + b * t.aggregate(X2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)
    Xt = t.aggregate(X1)
    for v in range(t.node_count):
        kids = t.children_idx[v]
        if kids:
            np.testing.assert_allclose(
                Xt[:, v], Xt[:, kids].sum(axis=1), rtol=1e-12
            )
        assert t.A[v].sum() == len(t.relations(t.names[v]).le)


def test_leaf_sets_partition():
    rng = np.random.default_rng(3)
    pairs, leaves = random_tree_pairs(rng, 8)
    t = tr.build_from_parent_list(pairs, leaves)
    for v in range(t.node_count):
        kids = t.children_idx[v]
        if not kids:
            continue
        union = set()
        for c in kids:
            cols = set(np.flatnonzero(t.A[c]).tolist())
            assert not (union & cols)
            union |= cols
        assert union == set(np.flatnonzero(t.A[v]).tolist())


# ------------------------------------------------------------ augmentation

def test_augment_matrix_printed_example():
    A = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1]])
    out = tr.augment_a_matrix(A, 1)
    want = np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [1, 0, 1, 0], [0, 0, 0, 1]]
    )
    np.testing.assert_array_equal(out, want)


def test_augment_tree_fig1():
    t = fig1()
    t2 = tr.augment_with_free_variables(t, 2)
    assert t2.node_count == t.node_count + 2
    assert t2.leaf_count == t.leaf_count + 2
    old_root = t2.index["8"]
    for v in range(t.node_count):
        if v == old_root:
            np.testing.assert_array_equal(t2.A[v, 5:], [1, 1])
        else:
            np.testing.assert_array_equal(t2.A[v, 5:], [0, 0])
        np.testing.assert_array_equal(t2.A[v, :5], t.A[v])
    np.testing.assert_array_equal(t2.A[t.node_count:, 5:], np.eye(2, dtype=np.int8))
    for nm in t2.names[t.node_count:]:
        assert t2.relations(nm).pa == {"8"}


def test_augment_zero_is_identity():
    t = fig1()
    assert tr.augment_with_free_variables(t, 0) is t


# --------------------------------------------------------- matrix loader

def test_from_a_matrix_roundtrip():
    rng = np.random.default_rng(11)
    for _ in range(10):
        pairs, leaves = random_tree_pairs(rng, int(rng.integers(3, 10)))
        t = tr.build_from_parent_list(pairs, leaves)
        t2 = tr.from_a_matrix(t.names, t.A)
        assert t2.names == t.names
        np.testing.assert_array_equal(t2.A, t.A)
        np.testing.assert_array_equal(t2.parent_idx, t.parent_idx)


def test_from_a_matrix_rejects_overlap():
    A = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [0, 1, 1], [1, 1, 1]])
    with pytest.raises(ValidationError):
        tr.from_a_matrix(list("abcdef"), A)


# ------------------------------------------------------------- CSV round trip

def test_tree_csv_roundtrip_parent_list(tmp_path):
    t = fig1()
    path = tmp_path / "tree.csv"
    tr.write_tree_csv(t, path)
    t2 = tr.read_tree_csv(path)
    assert t2.names == t.names
    np.testing.assert_array_equal(t2.A, t.A)


def test_tree_csv_a_matrix_format(tmp_path):
    t = fig1()
    path = tmp_path / "amat.csv"
    header = ["node"] + t.leaf_names
    rows = [[t.names[v]] + [str(int(x)) for x in t.A[v]] for v in range(t.node_count)]
    from treekern.util import write_csv

    write_csv(path, header, rows)
    t2 = tr.read_tree_csv(path)
    assert t2.names == t.names
    np.testing.assert_array_equal(t2.A, t.A)
