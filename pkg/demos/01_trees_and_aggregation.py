"""
Aggregation trees and tree-structured features
===============================================

A tree over the observed features defines one derived feature per node: the
sum of the leaves below it.  This script builds a small custom tree and a
full binary tree, shows the node ordering conventions, and demonstrates the
leaf-to-node aggregation map and the CSV round trip.
"""

import tempfile
from pathlib import Path

import numpy as np

from treekern import build_from_parent_list, build_full_binary_tree, read_tree_csv, write_tree_csv

# ------------------------------------------------------------------
# A hand-built 5-leaf tree.  Edges are (child, parent) pairs; leaves
# are named separately so internal nodes can use any free labels.
# ------------------------------------------------------------------
pairs = [
    ("7", "8"), ("2", "8"), ("3", "8"),
    ("1", "7"), ("6", "7"),
    ("4", "6"), ("5", "6"),
]
tree = build_from_parent_list(pairs, leaf_order=["1", "2", "3", "4", "5"])

print("hand-built tree")
print("  nodes in canonical order:", tree.names)
print("  leaves:", tree.leaf_names)

# Aggregating the identity matrix exposes the leaf membership of every
# node: column v of the result is the indicator of the leaves under v.
member = tree.aggregate(np.eye(len(tree.leaf_names)))
for v, name in enumerate(tree.names):
    covered = [leaf for i, leaf in enumerate(tree.leaf_names) if member[i, v]]
    print(f"  node {name:>2} aggregates leaves {covered}")

# ------------------------------------------------------------------
# Full binary trees over p = 2^k leaves: leaves are "1".."p" and the
# internal nodes are numbered level by level from the bottom up, so
# "p+1" joins leaves 1 and 2 and the last name is the root.
# ------------------------------------------------------------------
p = 8
full = build_full_binary_tree(p)
print(f"\nfull binary tree on {p} leaves has {len(full.names)} nodes")
print("  first internal node:", full.names[p], "root:", full.names[-1])

rng = np.random.default_rng(0)
X = rng.uniform(-1.0, 1.0, size=(4, p))
X_agg = full.aggregate(X)
print("  X has", X.shape[1], "columns; aggregated features have", X_agg.shape[1])

# the root column is the total sum of each row
np.testing.assert_allclose(X_agg[:, -1], X.sum(axis=1), rtol=1e-12)
print("  root column equals the row sums: check")

# ------------------------------------------------------------------
# Trees serialize to a two-column CSV of (node, parent) rows.
# ------------------------------------------------------------------
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "tree.csv"
    write_tree_csv(full, path)
    again = read_tree_csv(path)
    assert again.names == full.names
    print("\nCSV round trip preserves the node order: check")
