"""Seeded synthetic heterogeneous graphs with planted per-relation homophily."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import GraphError, HeteroGraph, make_relation


@dataclass(frozen=True)
class NodeTypeSpec:
    name: str
    count: int
    feature_dim: int
    role: str = "none"


@dataclass(frozen=True)
class RelationSpec:
    name: str
    head: str
    tail: str
    edges: int
    homophily: float


@dataclass(frozen=True)
class SyntheticSpec:
    node_types: tuple[NodeTypeSpec, ...]
    relations: tuple[RelationSpec, ...]
    num_classes: int
    target_type: str
    feature_signal: float = 1.0  # scale of class means
    feature_noise: float = 1.0  # std of per-node noise
    split_fractions: tuple[float, float, float] = (0.2, 0.2, 0.6)
    # when set, class means come from this seed so graphs of one family share feature semantics
    class_mean_seed: int | None = None
    # number of leading feature dims that carry class signal (None: all)
    informative_dims: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["node_types"] = tuple(NodeTypeSpec(**t) for t in d["node_types"])
        d["relations"] = tuple(RelationSpec(**r) for r in d["relations"])
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["node_types"] = [dict(t) for t in d["node_types"]]
        d["relations"] = [dict(r) for r in d["relations"]]
        d["split_fractions"] = list(self.split_fractions)
        return d


def standard_spec(**overrides) -> SyntheticSpec:
    """The desk-scale benchmark: 2 node types, 3 relations, 600 nodes, 3 classes."""
    base = dict(
        node_types=(
            NodeTypeSpec("paper", 300, 64, role="content"),
            NodeTypeSpec("author", 300, 64, role="attribute"),
        ),
        relations=(
            RelationSpec("writes", "paper", "author", 450, 0.95),
            RelationSpec("cites", "paper", "paper", 300, 0.70),
            RelationSpec("reviews", "paper", "author", 450, 0.50),
        ),
        num_classes=3,
        target_type="paper",
        feature_signal=0.36,
        feature_noise=1.0,
        split_fractions=(0.2, 0.2, 0.6),
        class_mean_seed=0,
        informative_dims=16,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


def _sample_edges(rng, head_ids, head_cls, tail_ids, tail_cls, count, homophily, same_type, num_classes):
    by_class = [tail_ids[tail_cls == c] for c in range(num_classes)]
    other = [tail_ids[tail_cls != c] for c in range(num_classes)]
    max_pairs = head_ids.size * tail_ids.size - (head_ids.size if same_type else 0)
    if same_type:
        max_pairs //= 2
    if count > max_pairs:
        raise GraphError(f"{count} edges requested but only {max_pairs} distinct pairs exist")
    seen: set[tuple[int, int]] = set()
    src, dst = [], []
    attempts = 0
    while len(src) < count:
        attempts += 1
        if attempts > 50 * count + 1000:
            raise GraphError("edge sampling stalled; edge count infeasible for this homophily")
        i = int(rng.integers(head_ids.size))
        a = int(head_ids[i])
        c = int(head_cls[i])
        pool = by_class[c] if rng.random() < homophily else other[c]
        if pool.size == 0:
            continue
        b = int(pool[rng.integers(pool.size)])
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        src.append(a)
        dst.append(b)
    return src, dst


def synth_generate(spec: SyntheticSpec, seed: int, return_latent: bool = False):
    """Build a graph from ``spec``; a pure function of ``(spec, seed)``.

    Every node (labeled or not) carries a latent class. Features are the class
    mean of its type plus Gaussian noise; each relation edge joins same-class
    endpoints with probability ``homophily``.
    """
    rng = np.random.default_rng(seed)
    type_names = [t.name for t in spec.node_types]
    if spec.target_type not in type_names:
        raise GraphError(f"target type {spec.target_type!r} not declared")
    counts = [t.count for t in spec.node_types]
    n = int(sum(counts))
    node_type = np.repeat(np.arange(len(counts)), counts)
    # balanced latent classes for every node, shuffled within each type
    latent = np.zeros(n, dtype=np.int64)
    features = []
    for t, ts in enumerate(spec.node_types):
        ids = np.flatnonzero(node_type == t)
        cls = np.arange(ids.size) % spec.num_classes
        rng.shuffle(cls)
        latent[ids] = cls
        mean_rng = rng if spec.class_mean_seed is None else np.random.default_rng([spec.class_mean_seed, t])
        means = spec.feature_signal * mean_rng.standard_normal((spec.num_classes, ts.feature_dim))
        if spec.informative_dims is not None:
            means[:, spec.informative_dims:] = 0.0
        noise = spec.feature_noise * rng.standard_normal((ids.size, ts.feature_dim))
        features.append(means[cls] + noise)
    relations = []
    for rs in spec.relations:
        h, t = type_names.index(rs.head), type_names.index(rs.tail)
        hid, tid = np.flatnonzero(node_type == h), np.flatnonzero(node_type == t)
        src, dst = _sample_edges(rng, hid, latent[hid], tid, latent[tid], rs.edges, rs.homophily,
                                 h == t, spec.num_classes)
        relations.append(make_relation(rs.name, h, t, src, dst, n))
    target = type_names.index(spec.target_type)
    tids = np.flatnonzero(node_type == target)
    labels = np.full(n, -1, dtype=np.int64)
    labels[tids] = latent[tids]
    perm = rng.permutation(tids)
    f_train, f_val, _ = spec.split_fractions
    n_train = int(round(f_train * tids.size))
    n_val = int(round(f_val * tids.size))
    splits = {
        "train": perm[:n_train],
        "val": perm[n_train:n_train + n_val],
        "test": perm[n_train + n_val:],
    }
    roles = {t.name: t.role for t in spec.node_types}
    g = HeteroGraph(type_names, node_type, features, relations, labels, splits, target, spec.num_classes, roles)
    return (g, latent) if return_latent else g


def same_class_fraction(g: HeteroGraph, relation: int, latent: np.ndarray) -> float:
    coo = g.relations[relation].adj.tocoo()
    return float(np.mean(latent[coo.row] == latent[coo.col])) if coo.nnz else float("nan")
