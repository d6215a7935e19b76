"""Heterogeneous graph data model, node injection and degree statistics."""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .numerics import binary_symmetric, canonical, sym_normalize

SPLITS = ("train", "val", "test")


class GraphError(ValueError):
    """Malformed or inconsistent graph data."""


class BudgetViolation(RuntimeError):
    """An injection broke the node-count or degree budget."""


@dataclass(frozen=True)
class RelationSubgraph:
    name: str
    head: int  # node type id
    tail: int
    adj: sp.csr_matrix  # N x N, symmetric, binary

    def endpoint_types(self) -> tuple[int, int]:
        return self.head, self.tail

    def other_type(self, t: int) -> int:
        if t == self.head:
            return self.tail
        if t == self.tail:
            return self.head
        raise GraphError(f"type {t} is not an endpoint of relation {self.name!r}")


class HeteroGraph:
    """Typed nodes over a global index, per-type feature tables, per-relation adjacency.

    Treated as immutable; derived quantities (normalized adjacency, degrees)
    are cached on first use.
    """

    def __init__(
        self,
        type_names: Sequence[str],
        node_type: np.ndarray,
        features: Sequence[np.ndarray],
        relations: Sequence[RelationSubgraph],
        labels: np.ndarray,
        splits: dict[str, np.ndarray],
        target_type: int,
        num_classes: int,
        type_roles: dict[str, str] | None = None,
        validate: bool = True,
    ):
        self.type_names = tuple(type_names)
        self.node_type = np.asarray(node_type, dtype=np.int64)
        self.features = tuple(np.asarray(f, dtype=np.float64) for f in features)
        self.relations = tuple(relations)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.splits = {k: np.asarray(sorted(v), dtype=np.int64) for k, v in splits.items()}
        self.target_type = int(target_type)
        self.num_classes = int(num_classes)
        self.type_roles = dict(type_roles or {})
        self.local_index = np.zeros(self.num_nodes, dtype=np.int64)
        self._type_nodes = []
        for t in range(len(self.type_names)):
            ids = np.flatnonzero(self.node_type == t)
            self.local_index[ids] = np.arange(ids.size)
            self._type_nodes.append(ids)
        self._norm_cache: dict[int, sp.csr_matrix] = {}
        self._deg_cache: dict[int, np.ndarray] = {}
        if validate:
            self.validate()

    # -- basic accessors ---------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return int(self.node_type.size)

    @property
    def num_types(self) -> int:
        return len(self.type_names)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def type_id(self, name: str) -> int:
        try:
            return self.type_names.index(name)
        except ValueError:
            raise GraphError(f"unknown node type {name!r}") from None

    def relation_id(self, r) -> int:
        if isinstance(r, (int, np.integer)):
            if not 0 <= r < self.num_relations:
                raise GraphError(f"unknown relation {r}")
            return int(r)
        for i, rel in enumerate(self.relations):
            if rel.name == r:
                return i
        raise GraphError(f"unknown relation {r!r}")

    def nodes_of_type(self, t: int) -> np.ndarray:
        return self._type_nodes[t]

    def feature_dim(self, t: int) -> int:
        return self.features[t].shape[1]

    def feature_of(self, v: int) -> np.ndarray:
        return self.features[self.node_type[v]][self.local_index[v]]

    def normalized(self, r: int) -> sp.csr_matrix:
        if r not in self._norm_cache:
            self._norm_cache[r] = sym_normalize(self.relations[r].adj)
        return self._norm_cache[r]

    def degree(self, r: int | None = None) -> np.ndarray:
        """Row degree in relation ``r``, or summed over relations when ``r`` is None."""
        key = -1 if r is None else r
        if key not in self._deg_cache:
            if r is None:
                deg = np.zeros(self.num_nodes)
                for rel in self.relations:
                    deg += np.asarray(rel.adj.sum(axis=1)).ravel()
            else:
                deg = np.asarray(self.relations[r].adj.sum(axis=1)).ravel()
            self._deg_cache[key] = deg
        return self._deg_cache[key]

    def labeled(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        ids = self.splits[split]
        return ids, self.labels[ids]

    def feature_range(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        f = self.features[t]
        return f.min(axis=0), f.max(axis=0)

    # -- validation --------------------------------------------------------
    def validate(self) -> None:
        n = self.num_nodes
        if self.num_types + self.num_relations <= 2:
            raise GraphError("a heterogeneous graph needs |types| + |relations| > 2")
        for t, f in enumerate(self.features):
            if f.ndim != 2 or f.shape[0] != self._type_nodes[t].size:
                raise GraphError(f"feature table of {self.type_names[t]!r} has wrong row count")
            if not np.all(np.isfinite(f)):
                raise GraphError(f"non-finite features for type {self.type_names[t]!r}")
        for rel in self.relations:
            a = rel.adj
            if a.shape != (n, n):
                raise GraphError(f"relation {rel.name!r} adjacency is {a.shape}, expected {(n, n)}")
            if a.nnz:
                if (a != a.T).nnz:
                    raise GraphError(f"relation {rel.name!r} is not symmetric")
                if np.any(a.data != 1.0):
                    raise GraphError(f"relation {rel.name!r} is not binary")
                coo = a.tocoo()
                ta, tb = self.node_type[coo.row], self.node_type[coo.col]
                ok = ((ta == rel.head) & (tb == rel.tail)) | ((ta == rel.tail) & (tb == rel.head))
                if not ok.all():
                    i = int(np.flatnonzero(~ok)[0])
                    raise GraphError(
                        f"relation {rel.name!r} has edge ({coo.row[i]}, {coo.col[i]}) between wrong types"
                    )
        seen: set[int] = set()
        for name, ids in self.splits.items():
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise GraphError(f"split {name!r} references unknown nodes")
            if seen.intersection(ids.tolist()):
                raise GraphError("splits are not disjoint")
            seen.update(ids.tolist())
            if ids.size and np.any(self.labels[ids] < 0):
                raise GraphError(f"split {name!r} contains unlabeled nodes")
            if ids.size and np.any(self.node_type[ids] != self.target_type):
                raise GraphError(f"split {name!r} contains non-target nodes")
        if np.any(self.labels >= self.num_classes):
            raise GraphError("label outside class range")

    # -- copies ------------------------------------------------------------
    def with_relations(self, relations: Sequence[RelationSubgraph]) -> "HeteroGraph":
        return HeteroGraph(
            self.type_names, self.node_type, self.features, relations, self.labels,
            self.splits, self.target_type, self.num_classes, self.type_roles, validate=False,
        )

    def with_splits(self, splits: dict[str, np.ndarray]) -> "HeteroGraph":
        return HeteroGraph(
            self.type_names, self.node_type, self.features, self.relations, self.labels,
            splits, self.target_type, self.num_classes, self.type_roles, validate=False,
        )

    def with_feature_row(self, t: int, row: int, x: np.ndarray) -> "HeteroGraph":
        """Copy with one feature row replaced; structure caches are shared."""
        features = list(self.features)
        f = features[t].copy()
        f[row] = x
        features[t] = f
        out = HeteroGraph(
            self.type_names, self.node_type, features, self.relations, self.labels,
            self.splits, self.target_type, self.num_classes, self.type_roles, validate=False,
        )
        out._norm_cache = self._norm_cache
        out._deg_cache = self._deg_cache
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.type_names, self.target_type, self.num_classes)).encode())
        h.update(self.node_type.tobytes())
        for f in self.features:
            h.update(np.ascontiguousarray(f).tobytes())
        for rel in self.relations:
            h.update(repr((rel.name, rel.head, rel.tail)).encode())
            h.update(rel.adj.indptr.tobytes())
            h.update(rel.adj.indices.tobytes())
        h.update(self.labels.tobytes())
        for k in sorted(self.splits):
            h.update(k.encode())
            h.update(self.splits[k].tobytes())
        return h.hexdigest()

    def edge_sets(self) -> list[set[tuple[int, int]]]:
        out = []
        for rel in self.relations:
            coo = rel.adj.tocoo()
            out.append(set(zip(coo.row.tolist(), coo.col.tolist())))
        return out


def make_relation(name: str, head: int, tail: int, src: Iterable[int], dst: Iterable[int], n: int) -> RelationSubgraph:
    src = np.fromiter(src, dtype=np.int64)
    dst = np.fromiter(dst, dtype=np.int64)
    return RelationSubgraph(name, head, tail, binary_symmetric(src, dst, n))


# ---------------------------------------------------------------------------
# injection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InjectedNode:
    node_id: int
    node_type: int
    feature: np.ndarray
    relation: int
    neighbors: tuple[int, ...]


@dataclass
class InjectionLedger:
    base_nodes: int
    entries: list[InjectedNode] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def edge_count(self) -> int:
        return sum(len(e.neighbors) for e in self.entries)


def _pad(a: sp.csr_matrix, n_new: int) -> sp.csr_matrix:
    return sp.csr_matrix((a.data, a.indices, np.concatenate([a.indptr, np.full(n_new - a.shape[0], a.indptr[-1])])),
                         shape=(n_new, n_new))


def inject_node(
    g: HeteroGraph,
    ledger: InjectionLedger,
    relation: int,
    node_type: int,
    feature: np.ndarray,
    neighbors: Sequence[int],
    max_degree: int | None = None,
) -> HeteroGraph:
    """Append one fake node of ``node_type`` wired into ``relation``; returns the new graph.

    Original nodes and edges are never touched; the new node gets a fresh id
    ``g.num_nodes`` and one symmetric edge per neighbor.
    """
    rel = g.relations[relation]
    con_type = rel.other_type(node_type)
    feature = np.asarray(feature, dtype=np.float64).reshape(-1)
    if feature.size != g.feature_dim(node_type):
        raise GraphError(f"fake feature has dim {feature.size}, type needs {g.feature_dim(node_type)}")
    nbrs = tuple(sorted(int(v) for v in neighbors))
    if len(set(nbrs)) != len(nbrs):
        raise GraphError("duplicate neighbors")
    if max_degree is not None and len(nbrs) > max_degree:
        raise BudgetViolation(f"{len(nbrs)} neighbors exceeds degree cap {max_degree}")
    for v in nbrs:
        if not 0 <= v < ledger.base_nodes:
            raise GraphError(f"neighbor {v} is not an original node")
        if g.node_type[v] != con_type:
            raise GraphError(f"neighbor {v} has type {g.type_names[g.node_type[v]]!r}, "
                             f"expected {g.type_names[con_type]!r}")
    n = g.num_nodes
    new_id = n
    relations = []
    for i, r in enumerate(g.relations):
        adj = _pad(r.adj, n + 1)
        if i == relation and nbrs:
            idx = np.array(nbrs, dtype=np.int64)
            extra = sp.coo_matrix(
                (np.ones(2 * idx.size), (np.concatenate([idx, np.full(idx.size, new_id)]),
                                         np.concatenate([np.full(idx.size, new_id), idx]))),
                shape=(n + 1, n + 1),
            )
            adj = canonical(adj + extra)
        relations.append(RelationSubgraph(r.name, r.head, r.tail, adj))
    features = list(g.features)
    features[node_type] = np.vstack([features[node_type], feature[None, :]])
    out = HeteroGraph(
        g.type_names, np.append(g.node_type, node_type), features, relations,
        np.append(g.labels, -1), g.splits, g.target_type, g.num_classes, g.type_roles, validate=False,
    )
    ledger.entries.append(InjectedNode(new_id, node_type, feature.copy(), relation, nbrs))
    return out


def materialize(base: HeteroGraph, ledger: InjectionLedger) -> HeteroGraph:
    """Replay a ledger on top of its base graph."""
    if ledger.base_nodes != base.num_nodes:
        raise GraphError("ledger was recorded against a different base graph")
    g = base
    replay = InjectionLedger(base.num_nodes)
    for e in ledger.entries:
        g = inject_node(g, replay, e.relation, e.node_type, e.feature, e.neighbors)
    return g


def recover_ledger(base: HeteroGraph, attacked: HeteroGraph) -> InjectionLedger:
    """Rebuild the ledger of an attacked graph whose first ``base.num_nodes`` nodes are ``base``.

    Only the injected rows are read here; whether the original part is
    untouched is left to ``validate_injection``.
    """
    n = base.num_nodes
    if attacked.num_nodes < n:
        raise GraphError("attacked graph has fewer nodes than its base")
    if attacked.type_names != base.type_names or \
            [r.name for r in attacked.relations] != [r.name for r in base.relations]:
        raise GraphError("attacked graph uses different node types or relations")
    ledger = InjectionLedger(n)
    for v in range(n, attacked.num_nodes):
        t = int(attacked.node_type[v])
        wired = []
        for i, rel in enumerate(attacked.relations):
            row = rel.adj.getrow(v)
            if row.nnz:
                wired.append((i, tuple(int(u) for u in np.sort(row.indices))))
        if len(wired) > 1:
            raise BudgetViolation(f"injected node {v} is wired into several relations")
        if wired:
            r, nbrs = wired[0]
        else:
            r = next((i for i, rel in enumerate(attacked.relations) if t in rel.endpoint_types()), None)
            if r is None:
                raise GraphError(f"injected node {v} has a type that no relation touches")
            nbrs = ()
        if any(u >= n for u in nbrs):
            raise BudgetViolation("edge between two injected nodes")
        ledger.entries.append(InjectedNode(v, t, attacked.feature_of(v).copy(), r, nbrs))
    return ledger


def validate_injection(base: HeteroGraph, attacked: HeteroGraph, ledger: InjectionLedger,
                       max_nodes: int, max_degree: int) -> None:
    """Raise BudgetViolation unless ``attacked`` is a budget-valid, additive-only perturbation of ``base``."""
    n = base.num_nodes
    n_in = attacked.num_nodes - n
    if n_in != len(ledger):
        raise BudgetViolation("ledger and attacked graph disagree on injected count")
    if n_in > max_nodes:
        raise BudgetViolation(f"{n_in} injected nodes exceeds budget {max_nodes}")
    if attacked.num_relations != base.num_relations:
        raise BudgetViolation("relation set changed")
    for t in range(base.num_types):
        k = base.features[t].shape[0]
        if not np.array_equal(attacked.features[t][:k], base.features[t]):
            raise BudgetViolation("original features were modified")
    total_fake_deg = np.zeros(n_in)
    for rel_b, rel_a in zip(base.relations, attacked.relations):
        a = rel_a.adj
        if (a[:n, :n] != rel_b.adj).nnz:
            raise BudgetViolation(f"original edges of {rel_b.name!r} were modified")
        if n_in and a[n:, n:].nnz:
            raise BudgetViolation("edge between two injected nodes")
        if n_in:
            total_fake_deg += np.asarray(a[n:, :].sum(axis=1)).ravel()
    if n_in and total_fake_deg.max() > max_degree:
        raise BudgetViolation(f"injected degree {int(total_fake_deg.max())} exceeds cap {max_degree}")


def drop_relation(g: HeteroGraph, r) -> HeteroGraph:
    """Copy of ``g`` with relation ``r`` emptied."""
    rid = g.relation_id(r)
    rels = list(g.relations)
    old = rels[rid]
    rels[rid] = RelationSubgraph(old.name, old.head, old.tail, sp.csr_matrix(old.adj.shape, dtype=np.float64))
    return g.with_relations(rels)


# ---------------------------------------------------------------------------
# degree statistics
# ---------------------------------------------------------------------------

def degree_stats(g: HeteroGraph, relation: int | None = None, base_nodes: int | None = None) -> dict[str, dict[int, int]]:
    """Degree histograms split into original and injected nodes."""
    n = g.num_nodes if base_nodes is None else base_nodes
    deg = g.degree(relation).astype(np.int64)
    return {
        "original": dict(sorted(Counter(deg[:n].tolist()).items())),
        "injected": dict(sorted(Counter(deg[n:].tolist()).items())),
    }


def ks_distance(h1: dict[int, int], h2: dict[int, int]) -> float:
    """Largest gap between the empirical CDFs of two degree histograms."""
    n1, n2 = sum(h1.values()), sum(h2.values())
    if n1 == 0 or n2 == 0:
        raise ValueError("ks_distance needs nonempty histograms")
    c1 = c2 = 0
    gap = 0.0
    for d in sorted(set(h1) | set(h2)):
        c1 += h1.get(d, 0)
        c2 += h2.get(d, 0)
        gap = max(gap, abs(c1 / n1 - c2 / n2))
    return gap
