"""Target models, transfer evaluation, cross-graph adaptation and the degree probe."""
from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .attack import (
    AttackBudget,
    FakeNodeGenerator,
    FakeNodeInit,
    PerturbedGraph,
    TypeAdapter,
    edge_gradient,
    run_attack,
)
from .graph import HeteroGraph, degree_stats, drop_relation, ks_distance, make_relation
from .metrics import macro_f1, micro_f1
from .numerics import Adam, ContractError, softmax, softmax_ce_grad
from .surrogate import NumericFailure, SurrogateParams, TrainConfig, predict, train_surrogate

log = logging.getLogger(__name__)

REPORT_VERSION = 1
REPORT_KEYS = ("budget", "degree_ks", "metrics", "models", "seeds", "variants", "version")


class CompatibilityError(ValueError):
    """Frozen generators cannot be mapped onto the new graph."""


# ---------------------------------------------------------------------------
# rgcn-lite
# ---------------------------------------------------------------------------

@dataclass
class TargetConfig:
    lr: float = 1e-2
    epochs: int = 300
    patience: int = 10
    seed: int = 0
    hidden_dim: int = 16
    weight_decay: float = 1e-2
    min_epochs: int = 100


@dataclass
class RgcnParams:
    """Per-type input projection, then two layers of ``sum_r Ahat_r H W_r + H W_self + b``."""
    values: dict[str, np.ndarray]
    num_types: int
    num_relations: int

    @classmethod
    def init(cls, feature_dims, num_relations: int, hidden: int, num_classes: int, rng) -> "RgcnParams":
        def glorot(a, b):
            bound = np.sqrt(6.0 / (a + b))
            return rng.uniform(-bound, bound, size=(a, b))
        v = {}
        for t, d in enumerate(feature_dims):
            v[f"P{t}_W"] = glorot(d, hidden)
            v[f"P{t}_b"] = np.zeros(hidden)
        for layer, (a, b) in enumerate([(hidden, hidden), (hidden, num_classes)]):
            for r in range(num_relations):
                v[f"L{layer}_R{r}"] = glorot(a, b)
            v[f"L{layer}_S"] = glorot(a, b)
            v[f"L{layer}_b"] = np.zeros(b)
        return cls(v, len(feature_dims), num_relations)


def _rgcn_forward(p: RgcnParams, g: HeteroGraph):
    v = p.values
    hidden = v["P0_W"].shape[1]
    h0 = np.zeros((g.num_nodes, hidden))
    for t in range(g.num_types):
        h0[g.nodes_of_type(t)] = g.features[t] @ v[f"P{t}_W"] + v[f"P{t}_b"]
    cache = [h0]
    h = h0
    for layer in range(2):
        z = h @ v[f"L{layer}_S"] + v[f"L{layer}_b"]
        for r in range(g.num_relations):
            z = z + g.normalized(r) @ (h @ v[f"L{layer}_R{r}"])
        cache.append(z)
        h = np.maximum(z, 0.0) if layer == 0 else z
    return h, cache


def _rgcn_backward(p: RgcnParams, g: HeteroGraph, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    v = p.values
    grads = {}
    dz = dlogits
    for layer in (1, 0):
        h_in = cache[0] if layer == 0 else np.maximum(cache[1], 0.0)
        grads[f"L{layer}_S"] = h_in.T @ dz
        grads[f"L{layer}_b"] = dz.sum(axis=0)
        dh = dz @ v[f"L{layer}_S"].T
        for r in range(g.num_relations):
            adz = g.normalized(r).T @ dz
            grads[f"L{layer}_R{r}"] = h_in.T @ adz
            dh = dh + adz @ v[f"L{layer}_R{r}"].T
        dz = dh * (cache[1] > 0) if layer == 1 else dh
    for t in range(p.num_types):
        ids = g.nodes_of_type(t)
        grads[f"P{t}_W"] = g.features[t].T @ dz[ids]
        grads[f"P{t}_b"] = dz[ids].sum(axis=0)
    return grads


def rgcn_logits(p: RgcnParams, g: HeteroGraph) -> np.ndarray:
    return _rgcn_forward(p, g)[0]


def rgcn_loss_and_grads(p: RgcnParams, g: HeteroGraph, nodes, labels) -> tuple[float, dict[str, np.ndarray]]:
    logits, cache = _rgcn_forward(p, g)
    loss, dsel = softmax_ce_grad(logits[nodes], labels)
    dlogits = np.zeros_like(logits)
    np.add.at(dlogits, nodes, dsel)
    return loss, _rgcn_backward(p, g, cache, dlogits)


# ---------------------------------------------------------------------------
# target models
# ---------------------------------------------------------------------------

@dataclass
class TargetModel:
    kind: str  # "surrogate-clone" or "rgcn-lite"
    params: object
    meta: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.kind

    def predict(self, g: HeteroGraph) -> np.ndarray:
        if self.kind == "rgcn-lite":
            return softmax(rgcn_logits(self.params, g))
        return predict(self.params, g)

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.kind.encode())
        values = self.params.values if self.kind == "rgcn-lite" else self.params.flat()
        for k in sorted(values):
            h.update(k.encode())
            h.update(np.ascontiguousarray(values[k]).tobytes())
        return h.hexdigest()


def train_rgcn_lite(g: HeteroGraph, config: TargetConfig) -> TargetModel:
    """Full-batch Adam on train cross-entropy, early-stopped on validation micro-F1."""
    train_ids, y_train = g.labeled("train")
    if train_ids.size == 0:
        raise ValueError("empty train split")
    val_ids, y_val = g.labeled("val")
    rng = np.random.default_rng([config.seed, 11])
    params = RgcnParams.init([g.feature_dim(t) for t in range(g.num_types)], g.num_relations,
                             config.hidden_dim, g.num_classes, rng)
    opt = Adam(config.lr)
    best, best_key, stale, epochs_run = params, None, 0, 0
    for epoch in range(config.epochs):
        loss, grads = rgcn_loss_and_grads(params, g, train_ids, y_train)
        if not np.isfinite(loss):
            raise NumericFailure(f"rgcn-lite diverged at epoch {epoch}")
        if config.weight_decay:
            for k in grads:
                grads[k] = grads[k] + config.weight_decay * params.values[k]
        params = RgcnParams(opt.step(params.values, grads), params.num_types, params.num_relations)
        epochs_run = epoch + 1
        if epoch + 1 < config.min_epochs:
            continue
        logits = rgcn_logits(params, g)
        if val_ids.size:
            val_loss, _ = softmax_ce_grad(logits[val_ids], y_val)
            key = (micro_f1(y_val, logits[val_ids].argmax(axis=1)), -val_loss)
        else:
            key = (0.0, -loss)
        if best_key is None or key > best_key:
            best, best_key, stale = params, key, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    meta = {"seed": config.seed, "epochs_run": epochs_run,
            "best_val_micro_f1": None if best_key is None else best_key[0]}
    return TargetModel("rgcn-lite", best, meta)


def train_surrogate_clone(g: HeteroGraph, config: TrainConfig) -> TargetModel:
    params, _ = train_surrogate(g, config)
    return TargetModel("surrogate-clone", params, dict(params.meta))


def train_targets(g: HeteroGraph, kinds, seed: int, surrogate_config: TrainConfig | None = None,
                  target_config: TargetConfig | None = None) -> list[TargetModel]:
    """Targets use seeds offset from the attacker's so they are independent of its surrogate."""
    out = []
    for kind in kinds:
        if kind == "rgcn-lite":
            out.append(train_rgcn_lite(g, replace(target_config or TargetConfig(), seed=seed)))
        elif kind == "surrogate-clone":
            cfg = replace(surrogate_config or TrainConfig(), seed=seed + 1000)
            out.append(train_surrogate_clone(g, cfg))
        else:
            raise ValueError(f"unknown target model {kind!r}")
    return out


# ---------------------------------------------------------------------------
# metrics and transfer
# ---------------------------------------------------------------------------

def evaluate(model, g: HeteroGraph, split: str = "test") -> tuple[float, float]:
    """(macro-F1, micro-F1) of ``model`` on ``split``; accepts TargetModel or SurrogateParams."""
    ids, y = g.labeled(split)
    if ids.size == 0:
        raise ValueError(f"split {split!r} is empty")
    probs = model.predict(g) if isinstance(model, TargetModel) else predict(model, g)
    pred = probs[ids].argmax(axis=1)
    return macro_f1(y, pred), micro_f1(y, pred)


def _variant_metrics(model, g: HeteroGraph, split: str = "test") -> dict:
    ids, y = g.labeled(split)
    probs = model.predict(g) if isinstance(model, TargetModel) else predict(model, g)
    pred = probs[ids].argmax(axis=1)
    counts = Counter(pred.tolist())
    return {"macro_f1": macro_f1(y, pred), "micro_f1": micro_f1(y, pred),
            "label_counts": [int(counts.get(c, 0)) for c in range(g.num_classes)]}


def degree_ks(base: HeteroGraph, attacked: HeteroGraph) -> dict[str, float]:
    """KS distance between clean and attacked degree histograms of the original nodes."""
    n = base.num_nodes
    out = {}
    for r in [None, *range(base.num_relations)]:
        key = "total" if r is None else base.relations[r].name
        clean = degree_stats(base, r)["original"]
        after = degree_stats(attacked, r, base_nodes=n)["original"]
        out[key] = ks_distance(clean, after)
    return out


def transfer_attack(targets: list[TargetModel], perturbed: PerturbedGraph | None,
                    baseline: PerturbedGraph | None = None, seeds: dict | None = None,
                    budget: dict | None = None) -> dict:
    """Evaluate frozen targets on clean and perturbed graphs.

    Budget validity is checked before any metric is computed. With
    ``perturbed=None`` only clean metrics are reported.
    """
    base = perturbed.base if perturbed is not None else None
    variants: dict[str, HeteroGraph] = {}
    if perturbed is not None:
        variants["clean"] = base
        variants["attacked"] = perturbed.validate()
        if baseline is not None:
            if baseline.base is not base:
                raise ContractError("baseline was built on a different base graph")
            variants["random"] = baseline.validate()
    prints = {m.name: m.fingerprint() for m in targets}
    metrics = {}
    for m in targets:
        per = {name: _variant_metrics(m, gv) for name, gv in variants.items()}
        if len(variants) > 1:
            per["deltas"] = {name: {k: per["clean"][k] - per[name][k] for k in ("macro_f1", "micro_f1")}
                             for name in variants if name != "clean"}
        metrics[m.name] = per
    for m in targets:
        if m.fingerprint() != prints[m.name]:
            raise ContractError(f"target {m.name} was modified during evaluation")
    report = {
        "version": REPORT_VERSION,
        "models": [m.name for m in targets],
        "variants": list(variants),
        "metrics": metrics,
        "budget": budget or ({} if perturbed is None else {
            "max_nodes": perturbed.max_nodes, "K": perturbed.K, "injected": len(perturbed.ledger),
            "edges": perturbed.ledger.edge_count()}),
        "seeds": seeds or {},
        "degree_ks": {} if perturbed is None else degree_ks(base, variants["attacked"]),
    }
    return report


def clean_report(targets: list[TargetModel], g: HeteroGraph, seeds: dict | None = None) -> dict:
    metrics = {m.name: {"clean": _variant_metrics(m, g)} for m in targets}
    return {"version": REPORT_VERSION, "models": [m.name for m in targets], "variants": ["clean"],
            "metrics": metrics, "budget": {}, "seeds": seeds or {}, "degree_ks": {}}


def validate_report(report: dict) -> None:
    """Raise ContractError unless ``report`` follows the fixed report layout."""
    if tuple(sorted(report)) != REPORT_KEYS:
        raise ContractError(f"report keys {sorted(report)} differ from {list(REPORT_KEYS)}")
    if report["version"] != REPORT_VERSION:
        raise ContractError("unknown report version")
    for model in report["models"]:
        per = report["metrics"].get(model)
        if per is None:
            raise ContractError(f"missing metrics for {model}")
        for variant in report["variants"]:
            entry = per[variant]
            for key in ("macro_f1", "micro_f1"):
                if not 0.0 <= entry[key] <= 1.0:
                    raise ContractError(f"{model}/{variant}/{key} outside [0, 1]")
    for value in report["degree_ks"].values():
        if not 0.0 <= value <= 1.0:
            raise ContractError("degree KS outside [0, 1]")


# ---------------------------------------------------------------------------
# relation importance
# ---------------------------------------------------------------------------

def drop_relation_study(g: HeteroGraph, surrogate: SurrogateParams, targets: list[TargetModel],
                        split: str = "test") -> dict:
    """Micro-F1 of every model with each single relation emptied, compared against the mu ordering."""
    mu = surrogate.relation_weights()
    models = [("surrogate", surrogate)] + [(m.name, m) for m in targets]
    order = [int(r) for r in np.argsort(-mu, kind="stable")]
    out = {"mu": mu.tolist(), "relations": [rel.name for rel in g.relations], "mu_order": order, "models": {}}
    for name, model in models:
        clean = evaluate(model, g, split)[1]
        drops = [clean - evaluate(model, drop_relation(g, r), split)[1] for r in range(g.num_relations)]
        out["models"][name] = {
            "clean_micro_f1": clean,
            "drop": drops,
            "order_matches": bool(np.all(np.diff([drops[r] for r in order]) <= 0)),
            "argmax_hurts_more": bool(drops[order[0]] > drops[order[-1]]),
        }
    return out


# ---------------------------------------------------------------------------
# adaptation
# ---------------------------------------------------------------------------

def adapt_generators(generators: FakeNodeGenerator, g2: HeteroGraph, seed: int = 0,
                     allow_adapter: bool = True) -> FakeNodeGenerator:
    """Map frozen per-type generators onto the node types of ``g2`` by declared role.

    Types without a declared role fall back to matching by name. A generator
    whose feature dim differs is wrapped in a frozen random projection when
    ``allow_adapter`` is set.
    """
    rng = np.random.default_rng([seed, 5])
    nets, roles, adapters = {}, {}, {}
    for t, name in enumerate(g2.type_names):
        role = g2.type_roles.get(name, "none")
        if role != "none":
            matches = sorted(k for k, v in generators.roles.items() if v == role)
        else:
            matches = [name] if name in generators.nets else []
        if not matches:
            raise CompatibilityError(f"no frozen generator for type {name!r} (role {role!r})")
        src = matches[0]
        net = generators.nets[src]
        d_new, d_gen = g2.feature_dim(t), net.in_dim
        if d_new != d_gen:
            if not allow_adapter:
                raise CompatibilityError(
                    f"type {name!r} has feature dim {d_new}, generator {src!r} expects {d_gen}")
            into = rng.standard_normal((d_new, d_gen)) / np.sqrt(d_new)
            adapters[name] = TypeAdapter(into, np.linalg.pinv(into))
        nets[name] = net
        roles[name] = role
    return FakeNodeGenerator(nets, roles, frozen=True, source=generators.source, adapters=adapters)


def attack_drop(model, clean: HeteroGraph, attacked: HeteroGraph) -> float:
    return evaluate(model, clean)[1] - evaluate(model, attacked)[1]


def adapt_to_new_graph(generators: FakeNodeGenerator, g2: HeteroGraph, budget: AttackBudget, seed: int,
                       surrogate_config: TrainConfig | None = None, target_config: TargetConfig | None = None,
                       allow_adapter: bool = True) -> dict:
    """Retrain only the surrogate on ``g2`` and attack it with the frozen generators.

    The comparison run trains fresh generators on ``g2`` under the same seed.
    Degradation is measured on an rgcn-lite target trained on clean ``g2``.
    When ``g2`` is the graph the generators came from, the adapted run is the
    original attack itself and the report says so.
    """
    cfg = replace(surrogate_config or TrainConfig(), seed=seed)
    surrogate, _ = train_surrogate(g2, cfg)
    target = train_rgcn_lite(g2, replace(target_config or TargetConfig(), seed=seed))
    self_adapt = generators.source == g2.fingerprint()
    full = run_attack(g2, surrogate, budget, seed)
    if self_adapt:
        adapted = full
        adapters = []
    else:
        frozen = adapt_generators(generators, g2, seed, allow_adapter)
        adapted = run_attack(g2, surrogate, budget, seed, generators=frozen)
        adapters = sorted(frozen.adapters)
    drop_full = attack_drop(target, g2, full.graph)
    drop_adapted = attack_drop(target, g2, adapted.graph)
    return {
        "self_adaptation": self_adapt,
        "adapters": adapters,
        "target": target.name,
        "drop_full": drop_full,
        "drop_adapted": drop_adapted,
        "gap": abs(drop_full - drop_adapted),
        "within_3_points": abs(drop_full - drop_adapted) <= 0.03,
        "surrogate_drop_full": attack_drop(surrogate, g2, full.graph),
        "surrogate_drop_adapted": attack_drop(surrogate, g2, adapted.graph),
        "injected": len(adapted.state.ledger),
    }


# ---------------------------------------------------------------------------
# degree probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeSpec:
    degrees: tuple[int, ...] = tuple(range(1, 17))
    feature_dim: int = 8  # candidate type
    pad_dim: int = 12  # padding / injected type; >= hidden so zero alignment is solvable
    hidden_dim: int = 8
    num_classes: int = 3
    K: int | None = None  # defaults to the number of candidates


def random_probe_surrogate(spec: ProbeSpec, seed: int) -> SurrogateParams:
    rng = np.random.default_rng([seed, 13])
    p = SurrogateParams.init([spec.feature_dim, spec.pad_dim], 1, spec.num_classes, spec.hidden_dim, rng)
    p.proj_biases = [rng.standard_normal(spec.hidden_dim) * 0.1 for _ in range(2)]
    return p


def probe_graph(surrogate: SurrogateParams, spec: ProbeSpec, seed: int) -> tuple[HeteroGraph, np.ndarray]:
    """Feature-identical candidates, candidate ``i`` tied to ``degrees[i]`` padding nodes.

    Padding features are solved so their aligned representation is zero,
    which isolates the degree effect. Labels follow each candidate's own
    linearized prediction so every margin is active.
    """
    rng = np.random.default_rng([seed, 17])
    n_c = len(spec.degrees)
    n_p = int(sum(spec.degrees))
    x_c = np.tile(rng.standard_normal(spec.feature_dim), (n_c, 1))
    w_p, b_p = surrogate.proj_weights[1], surrogate.proj_biases[1]
    x_pad = np.linalg.lstsq(w_p.T, -b_p, rcond=None)[0]
    x_p = np.tile(x_pad, (n_p, 1))
    src, dst, pos = [], [], n_c
    for i, d in enumerate(spec.degrees):
        for _ in range(d):
            src.append(i)
            dst.append(pos)
            pos += 1
    n = n_c + n_p
    node_type = np.array([0] * n_c + [1] * n_p)
    rel = make_relation("link", 0, 1, src, dst, n)
    h = x_c[0] @ surrogate.proj_weights[0] + surrogate.proj_biases[0]
    label = int(np.argmax(h @ surrogate.classifier.linear_map()))
    labels = np.full(n, -1)
    labels[:n_c] = label
    g = HeteroGraph(["item", "pad"], node_type, [x_c, x_p], [rel], labels,
                    {"train": [], "val": [], "test": np.arange(n_c)}, 0, spec.num_classes,
                    {"item": "content", "pad": "attribute"})
    return g, np.arange(n_c)


def theorem1_probe(surrogate: SurrogateParams | None = None, spec: ProbeSpec = ProbeSpec(), seed: int = 0) -> dict:
    """|edge gradient| per candidate degree, its monotonicity and log-log slope against degree + 1."""
    surrogate = random_probe_surrogate(spec, seed) if surrogate is None else surrogate
    g, cands = probe_graph(surrogate, spec, seed)
    rng = np.random.default_rng([seed, 19])
    x_in = rng.standard_normal(spec.pad_dim)
    K = spec.K or len(spec.degrees)
    init = FakeNodeInit(0, 1, 0, x_in, x_in, g.features[0].mean(axis=0), cands)
    grad = edge_gradient(surrogate, g, init, x_in, K, cands, g.labels[cands])
    mag = np.abs(grad)
    deg = np.array(spec.degrees, dtype=np.float64)
    order = np.argsort(deg, kind="stable")
    d_sorted, m_sorted = deg[order], mag[order]
    tol = 1e-12 * max(1.0, float(m_sorted.max()))
    monotone = bool(np.all(np.diff(m_sorted) <= tol))
    strict_pairs = [(int(a), int(b)) for a, b in zip(d_sorted[:-1], d_sorted[1:]) if a < b]
    slope = float("nan")
    if np.unique(deg).size > 1 and np.all(mag > 0):
        slope = float(np.polyfit(np.log(deg + 1), np.log(mag), 1)[0])
    return {
        "degrees": [int(d) for d in deg],
        "magnitudes": mag.tolist(),
        "non_increasing": monotone,
        "strictly_decreasing_pairs": len(strict_pairs),
        "loglog_slope": slope,
        "predicted_slope": -1.5,
        "K": K,
    }
