"""TSV dataset directories.

Layout (tab separated, ``#`` lines are comments)::

    nodes.tsv      node_id  type_name  f1,f2,...
    edges.tsv      src  dst  relation_name
    labels.tsv     node_id  class
    splits.tsv     node_id  train|val|test
    relations.tsv  relation_name  head_type  tail_type   (optional)
    types.tsv      type_name  role                       (optional)

Edges are read as undirected and symmetrized.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import SPLITS, GraphError, HeteroGraph, make_relation


def _rows(path: Path, ncols: int, optional: bool = False):
    if not path.exists():
        if optional:
            return None
        raise GraphError(f"missing dataset file: {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != ncols:
                raise GraphError(f"{path.name} line {lineno}: expected {ncols} columns, got {len(parts)}")
            out.append((lineno, parts))
    return out


def _int(path: Path, lineno: int, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise GraphError(f"{path.name} line {lineno}: {text!r} is not an integer") from None


def load_graph(path) -> HeteroGraph:
    root = Path(path)
    node_rows = _rows(root / "nodes.tsv", 3)
    edge_rows = _rows(root / "edges.tsv", 3)
    label_rows = _rows(root / "labels.tsv", 2)
    split_rows = _rows(root / "splits.tsv", 2)
    rel_rows = _rows(root / "relations.tsv", 3, optional=True)
    type_rows = _rows(root / "types.tsv", 2, optional=True)

    n = len(node_rows)
    type_of = np.full(n, -1, dtype=np.int64)
    raw_feat: list = [None] * n
    type_names: list[str] = []
    for lineno, (sid, tname, feats) in node_rows:
        v = _int(root / "nodes.tsv", lineno, sid)
        if not 0 <= v < n:
            raise GraphError(f"nodes.tsv line {lineno}: node id {v} outside 0..{n - 1}")
        if type_of[v] >= 0:
            raise GraphError(f"nodes.tsv line {lineno}: duplicate node id {v}")
        if tname not in type_names:
            type_names.append(tname)
        type_of[v] = type_names.index(tname)
        try:
            raw_feat[v] = [float(x) for x in feats.split(",")] if feats else []
        except ValueError:
            raise GraphError(f"nodes.tsv line {lineno}: bad feature list") from None
    # type order follows node id order
    order = []
    for v in range(n):
        if type_of[v] not in order:
            order.append(int(type_of[v]))
    remap = {old: new for new, old in enumerate(order)}
    type_names = [type_names[i] for i in order]
    type_of = np.array([remap[int(t)] for t in type_of], dtype=np.int64)

    features = []
    for t in range(len(type_names)):
        ids = np.flatnonzero(type_of == t)
        dims = {len(raw_feat[v]) for v in ids}
        if len(dims) != 1:
            raise GraphError(f"nodes of type {type_names[t]!r} have inconsistent feature dims")
        features.append(np.array([raw_feat[v] for v in ids], dtype=np.float64).reshape(ids.size, dims.pop()))

    rel_names: list[str] = []
    rel_types: dict[str, tuple[int, int]] = {}
    if rel_rows:
        for lineno, (name, head, tail) in rel_rows:
            for tn in (head, tail):
                if tn not in type_names:
                    raise GraphError(f"relations.tsv line {lineno}: unknown type {tn!r}")
            rel_names.append(name)
            rel_types[name] = (type_names.index(head), type_names.index(tail))
    src: dict[str, list[int]] = {}
    dst: dict[str, list[int]] = {}
    for lineno, (s, d, name) in edge_rows:
        a, b = _int(root / "edges.tsv", lineno, s), _int(root / "edges.tsv", lineno, d)
        for v in (a, b):
            if not 0 <= v < n:
                raise GraphError(f"edges.tsv line {lineno}: dangling node id {v}")
        if name not in rel_types:
            rel_names.append(name)
            rel_types[name] = (int(type_of[a]), int(type_of[b]))
        h, t = rel_types[name]
        if (type_of[a], type_of[b]) not in ((h, t), (t, h)):
            raise GraphError(
                f"edges.tsv line {lineno}: edge {a}-{b} joins {type_names[type_of[a]]!r} and "
                f"{type_names[type_of[b]]!r}, relation {name!r} expects "
                f"{type_names[h]!r}-{type_names[t]!r}"
            )
        src.setdefault(name, []).append(a)
        dst.setdefault(name, []).append(b)
    relations = [
        make_relation(name, *rel_types[name], src.get(name, []), dst.get(name, []), n) for name in rel_names
    ]

    labels = np.full(n, -1, dtype=np.int64)
    for lineno, (sid, cls) in label_rows:
        v = _int(root / "labels.tsv", lineno, sid)
        if not 0 <= v < n:
            raise GraphError(f"labels.tsv line {lineno}: dangling node id {v}")
        labels[v] = _int(root / "labels.tsv", lineno, cls)
        if labels[v] < 0:
            raise GraphError(f"labels.tsv line {lineno}: negative class")
    labeled_types = set(type_of[labels >= 0].tolist())
    if len(labeled_types) != 1:
        raise GraphError("labels must cover exactly one (target) node type")
    target_type = labeled_types.pop()

    splits: dict[str, list[int]] = {s: [] for s in SPLITS}
    for lineno, (sid, name) in split_rows:
        v = _int(root / "splits.tsv", lineno, sid)
        if name not in splits:
            raise GraphError(f"splits.tsv line {lineno}: unknown split {name!r}")
        if not 0 <= v < n:
            raise GraphError(f"splits.tsv line {lineno}: dangling node id {v}")
        if labels[v] < 0:
            raise GraphError(f"splits.tsv line {lineno}: node {v} has no label")
        splits[name].append(v)

    roles = {}
    if type_rows:
        for lineno, (tname, role) in type_rows:
            if tname not in type_names:
                raise GraphError(f"types.tsv line {lineno}: unknown type {tname!r}")
            roles[tname] = role
    return HeteroGraph(
        type_names, type_of, features, relations, labels,
        {k: np.array(v, dtype=np.int64) for k, v in splits.items()},
        target_type, int(labels.max()) + 1, roles,
    )


def save_graph(g: HeteroGraph, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "nodes.tsv", "w", encoding="utf-8") as fh:
        fh.write("# node_id\ttype_name\tfeatures\n")
        for v in range(g.num_nodes):
            feats = ",".join(repr(float(x)) for x in g.feature_of(v))
            fh.write(f"{v}\t{g.type_names[g.node_type[v]]}\t{feats}\n")
    with open(root / "relations.tsv", "w", encoding="utf-8") as fh:
        fh.write("# relation_name\thead_type\ttail_type\n")
        for rel in g.relations:
            fh.write(f"{rel.name}\t{g.type_names[rel.head]}\t{g.type_names[rel.tail]}\n")
    with open(root / "edges.tsv", "w", encoding="utf-8") as fh:
        fh.write("# src\tdst\trelation_name\n")
        for rel in g.relations:
            coo = rel.adj.tocoo()
            pairs = set()
            for a, b in zip(coo.row.tolist(), coo.col.tolist()):
                if rel.head != rel.tail:
                    if g.node_type[a] == rel.head:
                        pairs.add((a, b))
                elif a < b:
                    pairs.add((a, b))
            for a, b in sorted(pairs):
                fh.write(f"{a}\t{b}\t{rel.name}\n")
    with open(root / "labels.tsv", "w", encoding="utf-8") as fh:
        fh.write("# node_id\tclass\n")
        for v in np.flatnonzero(g.labels >= 0):
            fh.write(f"{v}\t{g.labels[v]}\n")
    with open(root / "splits.tsv", "w", encoding="utf-8") as fh:
        fh.write("# node_id\tsplit\n")
        for name in SPLITS:
            for v in g.splits.get(name, []):
                fh.write(f"{v}\t{name}\n")
    with open(root / "types.tsv", "w", encoding="utf-8") as fh:
        fh.write("# type_name\trole\n")
        for t in g.type_names:
            fh.write(f"{t}\t{g.type_roles.get(t, 'none')}\n")
    return root
