"""Rooted aggregation trees over observed features.

A tree has T nodes and p leaves.  Every node v owns the set of leaves
below it, le(v), and the binary matrix A (T rows, p columns) has
A[v, j] = 1 exactly when leaf column j belongs to le(v).  Aggregated
features are X_tilde = X @ A.T, so each node's column is the sum of its
leaf columns.

Canonical node layout: leaf nodes take indices 0..p-1 in leaf_order,
internal nodes take p..T-1 in a deterministic bottom-up order (children
always before parents; among nodes whose children are all placed, the
one containing the smallest leaf column goes first).  Trees returned by
``augment_with_free_variables`` append the new leaves after the existing
nodes instead, which no consumer of the relation maps depends on.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    CycleDetected,
    DimensionMismatch,
    DisconnectedNode,
    LeafOrderMismatch,
    MultipleRoots,
    UnknownNode,
    ValidationError,
)


@dataclass(frozen=True)
class Relations:
    """Relation sets (node names) for one node: parent, ancestors,
    descendants, siblings, and leaves at or below the node."""

    pa: frozenset
    an: frozenset
    de: frozenset
    sib: frozenset
    le: frozenset


class AggregationTree:
    """Immutable rooted tree plus its leaf-membership matrix A."""

    def __init__(self, names, parent_idx, leaf_count, A):
        self.names = list(names)
        self.index = {nm: i for i, nm in enumerate(self.names)}
        if len(self.index) != len(self.names):
            raise ValidationError("duplicate node names")
        self.parent_idx = np.asarray(parent_idx, dtype=np.int64)
        self.node_count = len(self.names)
        self.leaf_count = int(leaf_count)
        self.A = np.asarray(A, dtype=np.int8)
        roots = np.flatnonzero(self.parent_idx < 0)
        if roots.size != 1:
            raise MultipleRoots(f"expected one root, found {roots.size}")
        self.root = int(roots[0])
        self.children_idx = [[] for _ in range(self.node_count)]
        for v, par in enumerate(self.parent_idx):
            if par >= 0:
                self.children_idx[par].append(v)

    # -- relation queries ----------------------------------------------

    def _require(self, name):
        if name not in self.index:
            raise UnknownNode(f"no node named {name!r}")
        return self.index[name]

    def is_leaf(self, name):
        return not self.children_idx[self._require(name)]

    def leaf_columns(self, name):
        """Column indices (into X) of the leaves under the named node."""
        return np.flatnonzero(self.A[self._require(name)])

    @property
    def leaf_names(self):
        """Leaf node names ordered by feature column."""
        out = [None] * self.leaf_count
        for v in range(self.node_count):
            if not self.children_idx[v]:
                col = int(np.flatnonzero(self.A[v])[0])
                out[col] = self.names[v]
        return out

    def relations(self, name):
        v = self._require(name)
        par = self.parent_idx[v]
        pa = frozenset() if par < 0 else frozenset({self.names[par]})
        an = set()
        u = par
        while u >= 0:
            an.add(self.names[u])
            u = self.parent_idx[u]
        de = set()
        stack = list(self.children_idx[v])
        while stack:
            u = stack.pop()
            de.add(self.names[u])
            stack.extend(self.children_idx[u])
        sib = frozenset(
            self.names[c] for c in (self.children_idx[par] if par >= 0 else []) if c != v
        )
        leaf_by_col = self.leaf_names
        le = frozenset(leaf_by_col[j] for j in np.flatnonzero(self.A[v]))
        return Relations(pa=pa, an=frozenset(an), de=frozenset(de), sib=sib, le=le)

    def aggregate(self, X):
        """Aggregated features X_tilde with one column per node."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.leaf_count:
            raise DimensionMismatch(
                f"X has {X.shape[1] if X.ndim == 2 else '?'} columns, "
                f"tree has {self.leaf_count} leaves"
            )
        return X @ self.A.T.astype(np.float64)


def _collapse_single_children(parent, children, root):
    # Remove internal non-root nodes with exactly one child; the child
    # inherits the removed node's parent.  The root is exempt so a tree
    # root -> a -> leaf canonicalizes to root -> leaf.
    removed = set()
    for node in list(parent):
        if node == root or node in removed:
            continue
        kids = children.get(node, [])
        if len(kids) != 1:
            continue
        child = kids[0]
        par = parent[node]
        parent[child] = par
        children[par] = [child if c == node else c for c in children[par]]
        removed.add(node)
        del parent[node]
        del children[node]
    return removed


def build_from_parent_list(pairs, leaf_order):
    """Build a canonical AggregationTree from (node, parent) pairs.

    ``pairs`` may declare the root explicitly with parent None (or "").
    ``leaf_order`` lists the childless nodes in feature-column order.
    Single-child internal nodes are collapsed away.
    """
    parent = {}
    declared_roots = []
    nodes = set()
    for node, par in pairs:
        node = str(node)
        nodes.add(node)
        if par is None or par == "":
            if node in parent or node in declared_roots:
                raise ValidationError(f"node {node!r} listed twice")
            declared_roots.append(node)
            continue
        par = str(par)
        nodes.add(par)
        if node in parent or node in declared_roots:
            raise ValidationError(f"node {node!r} listed with two parents")
        parent[node] = par

    parentless = [n for n in sorted(nodes) if n not in parent]
    if len(declared_roots) > 1:
        raise MultipleRoots(f"roots declared: {declared_roots}")
    if declared_roots:
        root = declared_roots[0]
        extra = [n for n in parentless if n != root]
        if extra:
            raise DisconnectedNode(f"nodes not connected to {root!r}: {extra}")
    else:
        if len(parentless) == 0:
            raise CycleDetected("no root: every node has a parent")
        if len(parentless) > 1:
            raise MultipleRoots(f"parentless nodes: {parentless}")
        root = parentless[0]

    # Walk up from every node; a repeat within one walk is a cycle.
    for start in nodes:
        seen = {start}
        u = start
        while u != root:
            u = parent.get(u)
            if u is None:
                break
            if u in seen:
                raise CycleDetected(f"cycle through {u!r}")
            seen.add(u)

    children = {n: [] for n in nodes}
    for node, par in parent.items():
        children[par].append(node)
    parent[root] = None

    leaves = [n for n in sorted(nodes) if not children[n]]
    if sorted(map(str, leaf_order)) != leaves or len(leaf_order) != len(set(leaf_order)):
        raise LeafOrderMismatch(
            f"leaf_order {list(leaf_order)} does not match childless nodes {leaves}"
        )
    leaf_order = [str(x) for x in leaf_order]

    del parent[root]
    _collapse_single_children(parent, children, root)
    parent[root] = None
    return _canonical_tree(parent, children, root, leaf_order)


def _canonical_tree(parent, children, root, leaf_order):
    col = {leaf: j for j, leaf in enumerate(leaf_order)}
    p = len(leaf_order)

    leafset = {}

    def fill(node):
        kids = children[node]
        if not kids:
            leafset[node] = frozenset({col[node]})
        else:
            acc = set()
            for c in kids:
                fill(c)
                if acc & leafset[c]:
                    raise ValidationError("overlapping child leaf sets")
                acc |= leafset[c]
            leafset[node] = frozenset(acc)

    fill(root)

    order = list(leaf_order)
    placed = set(order)
    internal = [n for n in children if children[n]]
    while len(placed) < len(children):
        ready = [
            n for n in internal
            if n not in placed and all(c in placed for c in children[n])
        ]
        if not ready:
            raise ValidationError("tree ordering failed")  # unreachable on valid trees
        ready.sort(key=lambda n: (min(leafset[n]), len(leafset[n])))
        nxt = ready[0]
        order.append(nxt)
        placed.add(nxt)

    index = {nm: i for i, nm in enumerate(order)}
    T = len(order)
    parent_idx = np.full(T, -1, dtype=np.int64)
    for nm, par in parent.items():
        if par is not None:
            parent_idx[index[nm]] = index[par]
    A = np.zeros((T, p), dtype=np.int8)
    for nm, i in index.items():
        A[i, sorted(leafset[nm])] = 1
    return AggregationTree(order, parent_idx, p, A)


def augment_a_matrix(A, c):
    """Block-diagonal augmentation [[A, 0], [0, I_c]] of a raw A matrix."""
    A = np.asarray(A)
    if c < 0:
        raise ValidationError("c must be >= 0")
    if c == 0:
        return A.copy()
    T, p = A.shape
    out = np.zeros((T + c, p + c), dtype=A.dtype)
    out[:T, :p] = A
    out[T:, p:] = np.eye(c, dtype=A.dtype)
    return out


def augment_with_free_variables(tree, c, names=None):
    """Attach c free variables as new leaves directly under the root.

    The new columns are zero in every original row except the root row,
    which covers them; among themselves the new rows are the identity.
    New nodes are appended after the existing indices.
    """
    if c < 0:
        raise ValidationError("c must be >= 0")
    if c == 0:
        return tree
    if names is None:
        names, k = [], 1
        while len(names) < c:
            cand = f"aug{k}"
            if cand not in tree.index:
                names.append(cand)
            k += 1
    else:
        names = [str(nm) for nm in names]
        if len(names) != c or any(nm in tree.index for nm in names):
            raise ValidationError("need c fresh node names")

    T, p = tree.node_count, tree.leaf_count
    A = np.zeros((T + c, p + c), dtype=np.int8)
    A[:T, :p] = tree.A
    A[T:, p:] = np.eye(c, dtype=np.int8)
    A[tree.root, p:] = 1
    parent_idx = np.concatenate(
        [tree.parent_idx, np.full(c, tree.root, dtype=np.int64)]
    )
    return AggregationTree(list(tree.names) + names, parent_idx, p + c, A)


def from_a_matrix(names, A):
    """Reconstruct a tree from node names and a dense 0/1 A matrix."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValidationError("A must be a matrix")
    if not np.isin(A, (0, 1)).all():
        raise ValidationError("A entries must be 0 or 1")
    T, p = A.shape
    names = [str(nm) for nm in names]
    if len(names) != T:
        raise ValidationError(f"{len(names)} names for {T} rows")

    sets = [frozenset(np.flatnonzero(A[v]).tolist()) for v in range(T)]
    for s in sets:
        if not s:
            raise ValidationError("empty aggregation row")

    # Leaves are the standard-basis rows; they must cover every column once.
    leaf_of_col = {}
    for v, s in enumerate(sets):
        if len(s) == 1 and int(A[v].sum()) == 1:
            j = next(iter(s))
            if j in leaf_of_col:
                raise ValidationError(f"two leaf rows for column {j}")
            leaf_of_col[j] = v
    if sorted(leaf_of_col) != list(range(p)):
        raise ValidationError("leaf rows do not cover all columns")
    leaf_order = [names[leaf_of_col[j]] for j in range(p)]

    full = frozenset(range(p))
    # Laminar family check and parent search by smallest strict superset.
    pairs = []
    for v in range(T):
        sup = None
        for u in range(T):
            if u == v:
                continue
            if sets[u] == sets[v]:
                # An equal pair is legal only as root over a single child.
                if sets[v] != full:
                    raise ValidationError("duplicate aggregation rows")
                continue
            if sets[v] < sets[u]:
                if sup is None or len(sets[u]) < len(sets[sup]):
                    sup = u
            elif not (sets[u] < sets[v] or not (sets[u] & sets[v])):
                raise ValidationError(
                    f"rows {names[u]!r} and {names[v]!r} overlap without nesting"
                )
        if sup is not None:
            pairs.append((names[v], names[sup]))
        else:
            pairs.append((names[v], None))

    # Resolve a duplicated full row: exactly one may remain parentless.
    dup_roots = [nm for nm, par in pairs if par is None]
    if len(dup_roots) == 2:
        a, b = dup_roots
        ia, ib = names.index(a), names.index(b)
        if sets[ia] == sets[ib] == full:
            # Keep the first row as root, chain the second beneath it.
            pairs = [(nm, a if (nm == b and par is None) else par) for nm, par in pairs]
    return build_from_parent_list(pairs, leaf_order)


# -- CSV interchange ---------------------------------------------------

PARENT_LIST_HEADER = ["node", "parent", "is_leaf", "leaf_index"]


def read_tree_csv(path):
    """Load a tree from either supported CSV layout.

    Parent-list layout: header ``node,parent,is_leaf,leaf_index`` with an
    empty parent on the root row and 1-based leaf_index on leaf rows.
    A-matrix layout: a ``node`` column followed by one 0/1 column per
    leaf, whose header names must match the leaf rows.
    """
    from .util import read_csv

    header, rows = read_csv(path)
    header = [h.strip() for h in header]
    if [h.lower() for h in header] == PARENT_LIST_HEADER:
        pairs = []
        declared_leaf = {}
        for ln, row in enumerate(rows, start=2):
            if len(row) != 4:
                raise ValidationError(f"{path}: row {ln}: expected 4 columns")
            node, par, is_leaf, leaf_index = (c.strip() for c in row)
            if node == "":
                raise ValidationError(f"{path}: row {ln}: empty node name")
            pairs.append((node, par if par != "" else None))
            if is_leaf not in ("0", "1"):
                raise ValidationError(f"{path}: row {ln}: is_leaf must be 0 or 1")
            if is_leaf == "1":
                if leaf_index == "":
                    raise ValidationError(f"{path}: row {ln}: leaf needs leaf_index")
                declared_leaf[node] = int(leaf_index)
            elif leaf_index != "":
                raise ValidationError(
                    f"{path}: row {ln}: internal node with leaf_index"
                )
        if sorted(declared_leaf.values()) != list(range(1, len(declared_leaf) + 1)):
            raise ValidationError(f"{path}: leaf_index values must be 1..p")
        leaf_order = sorted(declared_leaf, key=declared_leaf.get)
        tree = build_from_parent_list(pairs, leaf_order)
        return tree
    if header and header[0].lower() == "node":
        names = []
        vals = []
        for ln, row in enumerate(rows, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}: row {ln}: ragged row")
            names.append(row[0].strip())
            try:
                vals.append([int(c) for c in row[1:]])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {ln}: non-integer entry") from exc
        tree = from_a_matrix(names, np.asarray(vals))
        want = header[1:]
        if tree.leaf_names != want:
            raise LeafOrderMismatch(
                f"{path}: column names {want} do not match leaf rows {tree.leaf_names}"
            )
        return tree
    raise ValidationError(f"{path}: unrecognized tree CSV header {header}")


def write_tree_csv(tree, path):
    """Write the parent-list CSV layout."""
    from .util import write_csv

    leaf_col = {nm: j + 1 for j, nm in enumerate(tree.leaf_names)}
    rows = []
    for v, nm in enumerate(tree.names):
        par = tree.parent_idx[v]
        is_leaf = not tree.children_idx[v]
        rows.append(
            [
                nm,
                "" if par < 0 else tree.names[par],
                "1" if is_leaf else "0",
                str(leaf_col[nm]) if is_leaf else "",
            ]
        )
    write_csv(path, PARENT_LIST_HEADER, rows)
